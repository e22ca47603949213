//! `scfl` command-line driver.
//!
//! Exit codes: 0 on success, 2 for invalid configs or arguments, 3 when the
//! configured parameters sit in the divergent regime of the round bound,
//! 1 for anything else (I/O, calibration failure).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scfl_core::harness::{
    calibrate_gap_constants, emit_plot_data, load_config, read_targets, run_bound_sweep, run_training,
    InputFile, Manifest, PlotKind, STATUS_DIVERGENT,
};
use scfl_core::Error;

#[derive(Parser)]
#[command(name = "scfl", version, about = "Energy-aware sample-driven federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate an experiment config.
    Validate { config: PathBuf },
    /// Tabulate the global-round bound over the configured sweep axis.
    Sweep { config: PathBuf },
    /// Fit the information-usage constants c0, c1 to (k, I_glob) targets.
    Calibrate {
        config: PathBuf,
        /// CSV file with header `k,global_iterations`.
        #[arg(long)]
        targets: PathBuf,
    },
    /// Train every configured agent for every seed.
    Train { config: PathBuf },
    /// Derive plot tables from a run directory.
    PlotData {
        dir: PathBuf,
        /// reward_curve, energy_vs_pmax or iteration_sweep.
        #[arg(long)]
        kind: String,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_divergent() {
        3
    } else if err.is_validation() {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { config } => {
            let spec = load_config(&config)?;
            println!("ok: scenario `{}` (config {})", spec.scenario, spec.config_hash());
        }
        Command::Sweep { config } => {
            let spec = load_config(&config)?;
            let out = spec.output_dir();
            let rows = run_bound_sweep(&spec, &out)?;
            let divergent = rows.iter().filter(|r| r.status == STATUS_DIVERGENT).count();
            println!("wrote {} rows ({divergent} divergent) to {}", rows.len(), out.display());
        }
        Command::Calibrate { config, targets } => {
            let spec = load_config(&config)?;
            let points = read_targets(&targets)?;
            let fit = calibrate_gap_constants(&points, &spec)?;
            let out = spec.output_dir();
            std::fs::create_dir_all(&out)?;
            let json = serde_json::to_string_pretty(&fit).expect("calibration serializes");
            std::fs::write(out.join("calibration.json"), format!("{json}\n"))?;
            let manifest = Manifest::new(
                "calibrate",
                &spec,
                vec![InputFile::of(&targets, &file_label(&targets))?],
                vec!["calibration.json".into()],
            );
            manifest.write(&out.join("calibration.manifest.json"))?;
            println!("c0 = {}\nc1 = {}", fit.c0, fit.c1);
            for (p, r) in points.iter().zip(&fit.residuals) {
                println!("  k = {:>6}: target {:>10.3}, residual {:+.3e}", p.k, p.global_iterations, r);
            }
        }
        Command::Train { config } => {
            let spec = load_config(&config)?;
            let out = spec.output_dir();
            let result = run_training(&spec, &out)?;
            for s in &result.summary {
                let axis = s.axis_value.map(|v| format!(" @ {v}")).unwrap_or_default();
                println!(
                    "{}{axis}: final reward {:.3}, first {:.3}, mean energy {:.3} J ({} seeds)",
                    s.agent, s.final_reward, s.first_reward, s.mean_energy_j, s.seeds
                );
            }
            println!("wrote {} records to {}", result.records.len(), out.display());
        }
        Command::PlotData { dir, kind } => {
            let kind: PlotKind = kind.parse()?;
            for f in emit_plot_data(&dir, kind)? {
                println!("{}", dir.join(f).display());
            }
        }
    }
    Ok(())
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
