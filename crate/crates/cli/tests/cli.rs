use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scfl(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scfl"));
    cmd.args(args);
    match out {
        Some(dir) => cmd.env("SCFL_OUTPUT_DIR", dir),
        None => cmd.env_remove("SCFL_OUTPUT_DIR"),
    };
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Bundled smoke config with a few substitutions applied.
fn variant(dir: &Path, name: &str, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = fs::read_to_string(configs().join("smoke.toml")).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "missing `{from}`");
        text = text.replace(from, to);
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn bundled_configs_validate() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = scfl(&["validate", path.to_str().unwrap()], None);
            assert_eq!(code(&o), 0, "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        }
    }
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = variant(dir.path(), "unknown.toml", &[("[learning]\n", "[learning]\nbogus = 3\n")]);
    let o = scfl(&["validate", unknown.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let bad_l = variant(dir.path(), "bad_l.toml", &[("l_smooth = 100.0", "l_smooth = 10.0")]);
    let o = scfl(&["validate", bad_l.to_str().unwrap()], None);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning.l_smooth"));

    let missing = dir.path().join("nope.toml");
    assert_eq!(code(&scfl(&["validate", missing.to_str().unwrap()], None)), 2);
    assert_eq!(code(&scfl(&["plot-data", "x", "--kind", "pie"], None)), 2);
}

#[test]
fn divergent_regime_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(
        dir.path(),
        "divergent.toml",
        &[
            ("entropy_pz_nats = 5.0\n", ""),
            ("local_accuracy = 0.5", "local_accuracy = 0.9"),
        ],
    );
    let o = scfl(&["validate", path.to_str().unwrap()], None);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divergent"));
}

#[test]
fn sweep_calibrate_and_plot_respect_output_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = configs().join("fig3a_tau.toml");
    let o = scfl(&["sweep", cfg.to_str().unwrap()], Some(&out));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep.csv").exists() && out.join("manifest.json").exists());

    let targets = configs().join("targets_fig3a.csv");
    let o = scfl(
        &["calibrate", cfg.to_str().unwrap(), "--targets", targets.to_str().unwrap()],
        Some(&out),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("c1 = "));

    let o = scfl(&["plot-data", out.to_str().unwrap(), "--kind", "iteration_sweep"], None);
    assert_eq!(code(&o), 0);
    assert!(out.join("iteration_sweep.csv").exists());
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(
        dir.path(),
        "tiny.toml",
        &[
            ("seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]", "seeds = [3]"),
            ("total_steps = 20000", "total_steps = 300"),
            ("warmup_steps = 1000", "warmup_steps = 100"),
            ("episode_length = 200", "episode_length = 50"),
            ("hidden_layers = [64, 64]", "hidden_layers = [8]"),
        ],
    );
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = scfl(&["train", cfg.to_str().unwrap()], Some(&out));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for file in ["records.csv", "summary.csv", "manifest.json", "checkpoints/a2c_ei_seed3.ckpt"] {
        let a = fs::read(outputs[0].join(file)).unwrap();
        let b = fs::read(outputs[1].join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
    let o = scfl(&["plot-data", outputs[0].to_str().unwrap(), "--kind", "reward_curve"], None);
    assert_eq!(code(&o), 0);
    assert!(outputs[0].join("reward_curve_ddpg.csv").exists());
}
