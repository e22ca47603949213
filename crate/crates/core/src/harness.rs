//! Experiment plumbing: TOML configs, analytic bound sweeps, calibration of
//! the information-usage constants, seeded training runs and the CSV/JSON
//! artifacts they leave behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{train, AgentConfig, AgentKind, EpisodeRecord, Scenario};
use crate::approximator::write_checkpoint;
use crate::convergence::{global_iteration_bound, GapParams, LearningParams};
use crate::error::{Error, Result};
use crate::wireless::NetworkConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "SCFL_OUTPUT_DIR";

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "L")]
    Smoothness,
    #[serde(rename = "varrho")]
    GlobalAccuracy,
    #[serde(rename = "U")]
    Users,
    /// Maximum transmit power; training runs only.
    #[serde(rename = "p_max")]
    MaxPower,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Tau => "tau",
            SweepAxis::Smoothness => "L",
            SweepAxis::GlobalAccuracy => "varrho",
            SweepAxis::Users => "U",
            SweepAxis::MaxPower => "p_max",
        }
    }

    fn is_analytic(self) -> bool {
        self != SweepAxis::MaxPower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Largest skip count of the analytic sweep; defaults to `network.skip_max`.
    #[serde(default)]
    pub k_max: Option<u32>,
    #[serde(default = "one")]
    pub k_step: u32,
}

fn one() -> u32 {
    1
}

fn all_agents() -> Vec<AgentKind> {
    AgentKind::ALL.to_vec()
}

/// One experiment: physics, bounds, learner and bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub scenario: String,
    pub seeds: Vec<u64>,
    #[serde(default = "all_agents")]
    pub agents: Vec<AgentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub network: NetworkConfig,
    pub learning: LearningParams,
    pub gap: GapParams,
    pub agent: AgentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentSpec {
    pub fn scenario(&self) -> Scenario {
        Scenario {
            network: self.network.clone(),
            learning: self.learning.clone(),
            gap: self.gap.clone(),
            agent: self.agent.clone(),
        }
    }

    /// Copies the per-user sample count into an empty gap sample list.
    fn fill_defaults(&mut self) {
        if self.gap.sample_counts.is_empty() {
            self.gap.sample_counts = vec![self.network.samples_per_user; self.network.num_users];
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if self.scenario.trim().is_empty() {
            return Err(Error::config("scenario", "must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.agents.is_empty() {
            return Err(Error::config("agents", "at least one agent is required"));
        }
        if let Some(sweep) = &self.sweep {
            self.validate_sweep(sweep)?;
        }
        self.scenario().validate()
    }

    fn validate_sweep(&self, sweep: &SweepSpec) -> Result<()> {
        if sweep.values.is_empty() {
            return Err(Error::config("sweep.values", "at least one value is required"));
        }
        if sweep.k_step == 0 {
            return Err(Error::config("sweep.k_step", "must be >= 1"));
        }
        for &v in &sweep.values {
            let ok = v.is_finite()
                && match sweep.axis {
                    SweepAxis::Tau | SweepAxis::MaxPower => v > 0.0,
                    SweepAxis::Smoothness => v >= self.learning.mu,
                    SweepAxis::GlobalAccuracy => v > 0.0 && v <= 1.0,
                    SweepAxis::Users => v >= 1.0 && v.fract() == 0.0,
                };
            if !ok {
                return Err(Error::config(
                    "sweep.values",
                    format!("{v} is not a valid value for axis {}", sweep.axis.name()),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Output directory: the override variable, then the config, then `output/<scenario>`.
    pub fn output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("output").join(&self.scenario))
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        reason: e.to_string(),
    })?;
    spec.fill_defaults();
    spec.validate()?;
    Ok(spec)
}

/// Reads, parses and fully validates an experiment file.
pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_config(&text, &path.display().to_string())
}

/// One cell of an analytic sweep. Divergent cells keep their row with empty
/// bound columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: f64,
    pub k: u32,
    pub status: String,
    pub bound: Option<f64>,
    pub global_iterations: Option<u64>,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_DIVERGENT: &str = "divergent";

/// Evaluates the global-round bound over `k ∈ [0, k_max]` for every axis value.
pub fn sweep_table(spec: &ExperimentSpec) -> Result<Vec<SweepRow>> {
    let sweep = spec
        .sweep
        .as_ref()
        .ok_or_else(|| Error::config("sweep", "the config has no [sweep] table"))?;
    if !sweep.axis.is_analytic() {
        return Err(Error::config(
            "sweep.axis",
            format!("{} is not an analytic axis", sweep.axis.name()),
        ));
    }
    let k_max = sweep.k_max.unwrap_or(spec.network.skip_max);
    let mut rows = Vec::new();
    for &value in &sweep.values {
        let mut learning = spec.learning.clone();
        let mut tau = spec.network.sampling_interval_s;
        let mut users = spec.network.num_users;
        match sweep.axis {
            SweepAxis::Tau => tau = value,
            SweepAxis::Smoothness => learning.l_smooth = value,
            SweepAxis::GlobalAccuracy => learning.global_accuracy = value,
            SweepAxis::Users => users = value as usize,
            SweepAxis::MaxPower => unreachable!(),
        }
        for k in (0..=k_max).step_by(sweep.k_step as usize) {
            let row = match global_iteration_bound(&learning, &spec.gap, f64::from(k), tau, users) {
                Ok(bound) => SweepRow {
                    axis: sweep.axis.name().to_string(),
                    axis_value: value,
                    k,
                    status: STATUS_OK.to_string(),
                    bound: Some(bound),
                    global_iterations: Some(bound.ceil() as u64),
                },
                Err(e) if e.is_divergent() => SweepRow {
                    axis: sweep.axis.name().to_string(),
                    axis_value: value,
                    k,
                    status: STATUS_DIVERGENT.to_string(),
                    bound: None,
                    global_iterations: None,
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Writes the sweep table and its manifest into `out_dir`.
pub fn run_bound_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<SweepRow>> {
    let rows = sweep_table(spec)?;
    fs::create_dir_all(out_dir)?;
    write_csv(&out_dir.join(SWEEP_FILE), &rows)?;
    let manifest = Manifest::new("sweep", spec, vec![], vec![SWEEP_FILE.to_string()]);
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(rows)
}

/// A target `(k, I_glob)` pair for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTarget {
    pub k: f64,
    pub global_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c0: f64,
    pub c1: f64,
    /// Fitted bound minus target at each point.
    pub residuals: Vec<f64>,
}

pub fn read_targets(path: &Path) -> Result<Vec<CalibrationTarget>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Fits `(c0, c1)` so the global-round bound passes through the targets.
///
/// Each target fixes Ψ and hence the information usage `c0·e^{−c1·k·τ}`
/// exactly; the constants follow from a least-squares line through
/// `ln(usage)` against `k·τ`. The network's `τ` and `U` and the experiment's
/// learning parameters are held fixed; `entropy_pz_nats` must be given.
pub fn calibrate_gap_constants(targets: &[CalibrationTarget], spec: &ExperimentSpec) -> Result<Calibration> {
    if targets.len() < 2 {
        return Err(Error::Calibration(format!(
            "need at least two target points, got {}",
            targets.len()
        )));
    }
    let h_pz = spec.gap.entropy_pz_nats.ok_or_else(|| {
        Error::Calibration("gap.entropy_pz_nats must be set: with H = c0 the targets do not fix c0".into())
    })?;
    let p = &spec.learning;
    let users = spec.network.num_users as f64;
    let tau = spec.network.sampling_interval_s;
    let scale = 2f64.powf(spec.gap.entropy_z_bits);
    let numerator = (1.0 / p.global_accuracy).ln() * 2.0 * users * p.l_smooth * p.l_smooth * p.xi;

    let mut xs = Vec::with_capacity(targets.len());
    let mut ys = Vec::with_capacity(targets.len());
    for t in targets {
        if !(t.k >= 0.0 && t.global_iterations > 0.0 && t.global_iterations.is_finite()) {
            return Err(Error::Calibration(format!(
                "target (k={}, I={}) must have k >= 0 and I > 0",
                t.k, t.global_iterations
            )));
        }
        let denominator = numerator / t.global_iterations;
        let psi = (denominator - p.xi * p.l_smooth / users + p.local_accuracy * p.mu) / (p.xi * (p.l_smooth + 2.0));
        if psi < 0.0 {
            return Err(Error::Calibration(format!(
                "target (k={}, I={}) needs psi = {psi:.4e} < 0; the bound cannot be that large",
                t.k, t.global_iterations
            )));
        }
        let usage = h_pz - 0.5 * (psi / scale).powi(2);
        if usage <= 0.0 {
            return Err(Error::Calibration(format!(
                "target (k={}, I={}) needs information usage {usage:.4e} <= 0; \
                 raise gap.entropy_pz_nats or gap.entropy_z_bits",
                t.k, t.global_iterations
            )));
        }
        xs.push(t.k * tau);
        ys.push(usage.ln());
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Calibration("targets need at least two distinct k values".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let c0 = (ym - slope * xm).exp();
    let c1 = -slope;
    if !(c1 > 0.0 && c0 <= h_pz) {
        return Err(Error::Calibration(format!(
            "fit gives c0 = {c0:.6e}, c1 = {c1:.6e}; the targets must decrease in k \
             and need c0 <= entropy_pz_nats"
        )));
    }
    let gap = GapParams {
        c0,
        c1,
        ..spec.gap.clone()
    };
    let mut residuals = Vec::with_capacity(targets.len());
    for t in targets {
        let fitted = global_iteration_bound(p, &gap, t.k, tau, spec.network.num_users)?;
        residuals.push(fitted - t.global_iterations);
    }
    if let Some(worst) = residuals.iter().copied().map(f64::abs).reduce(f64::max) {
        if worst >= 0.5 {
            return Err(Error::Calibration(format!(
                "no exponential usage curve matches all targets: worst residual {worst:.3} rounds"
            )));
        }
    }
    Ok(Calibration { c0, c1, residuals })
}

/// Per-episode metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub agent: AgentKind,
    pub axis_value: Option<f64>,
    pub seed: u64,
    pub users: usize,
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub sampling_j: f64,
    pub computation_j: f64,
    pub transmission_j: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_budget: f64,
    pub completion_time_s: f64,
    pub global_iterations: u64,
}

impl MetricsRecord {
    fn from_episode(
        run_id: &str,
        agent: AgentKind,
        axis_value: Option<f64>,
        seed: u64,
        users: usize,
        e: &EpisodeRecord,
    ) -> Self {
        MetricsRecord {
            run_id: run_id.to_string(),
            agent,
            axis_value,
            seed,
            users,
            episode: e.episode,
            steps: e.steps,
            total_reward: e.total_reward,
            sampling_j: e.sampling_j,
            computation_j: e.computation_j,
            transmission_j: e.transmission_j,
            p1: e.p1,
            p2: e.p2,
            p_budget: e.p_budget,
            completion_time_s: e.completion_time_s,
            global_iterations: e.global_iterations,
        }
    }

    pub fn energy_j(&self) -> f64 {
        self.sampling_j + self.computation_j + self.transmission_j
    }
}

/// Seed-averaged statistics of one agent (and axis value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: AgentKind,
    pub axis_value: Option<f64>,
    pub seeds: usize,
    pub episodes: usize,
    /// Mean episode reward over every episode and seed.
    pub mean_reward: f64,
    /// Seed mean of the mean episode reward over each seed's first 10% of episodes.
    pub first_reward: f64,
    /// Same over the final 10% of episodes.
    pub final_reward: f64,
    pub mean_energy_j: f64,
    pub mean_p1: f64,
    pub mean_p2: f64,
}

/// Number of episodes in the first/final window of a run with `n` episodes.
pub fn window(n: usize) -> usize {
    (n / 10).max(1)
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Key that orders axis values deterministically.
fn axis_key(v: Option<f64>) -> Option<u64> {
    v.map(f64::to_bits)
}

/// Pure function of the records: groups by agent and axis value, then seed.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    type Group<'a> = BTreeMap<u64, Vec<&'a MetricsRecord>>;
    let mut groups: BTreeMap<(AgentKind, Option<u64>), (Option<f64>, Group)> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.agent, axis_key(r.axis_value)))
            .or_insert_with(|| (r.axis_value, BTreeMap::new()))
            .1
            .entry(r.seed)
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((agent, _), (axis_value, by_seed))| {
            let all: Vec<&MetricsRecord> = by_seed.values().flatten().copied().collect();
            let first = mean(by_seed.values().map(|eps| {
                let w = window(eps.len());
                mean(eps[..w].iter().map(|r| r.total_reward))
            }));
            let last = mean(by_seed.values().map(|eps| {
                let w = window(eps.len());
                mean(eps[eps.len() - w..].iter().map(|r| r.total_reward))
            }));
            SummaryRow {
                agent,
                axis_value,
                seeds: by_seed.len(),
                episodes: all.len(),
                mean_reward: mean(all.iter().map(|r| r.total_reward)),
                first_reward: first,
                final_reward: last,
                mean_energy_j: mean(all.iter().map(|r| r.energy_j())),
                mean_p1: mean(all.iter().map(|r| r.p1)),
                mean_p2: mean(all.iter().map(|r| r.p2)),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainingOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Scenario for one training axis value.
fn scenario_at(spec: &ExperimentSpec, axis_value: Option<f64>) -> Scenario {
    let mut s = spec.scenario();
    if let (Some(sweep), Some(v)) = (&spec.sweep, axis_value) {
        match sweep.axis {
            SweepAxis::Users => {
                s.network.num_users = v as usize;
                s.gap.sample_counts = vec![s.network.samples_per_user; v as usize];
            }
            SweepAxis::MaxPower => s.network.max_power_w = v,
            SweepAxis::Tau => s.network.sampling_interval_s = v,
            SweepAxis::Smoothness => s.learning.l_smooth = v,
            SweepAxis::GlobalAccuracy => s.learning.global_accuracy = v,
        }
    }
    s
}

pub fn run_id(agent: AgentKind, axis: Option<(SweepAxis, f64)>, seed: u64) -> String {
    match axis {
        Some((a, v)) => format!("{agent}_{}{v}_seed{seed}", a.name()),
        None => format!("{agent}_seed{seed}"),
    }
}

/// Runs every agent for every seed (and training axis value), writing
/// records, summary, checkpoints and the manifest into `out_dir`.
pub fn run_training(spec: &ExperimentSpec, out_dir: &Path) -> Result<TrainingOutput> {
    let axis_values: Vec<Option<f64>> = match &spec.sweep {
        Some(s) if matches!(s.axis, SweepAxis::Users | SweepAxis::MaxPower) => {
            s.values.iter().copied().map(Some).collect()
        }
        _ => vec![None],
    };
    let ckpt_dir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut records = Vec::new();
    let mut outputs = vec![RECORDS_FILE.to_string(), SUMMARY_FILE.to_string()];
    for &axis_value in &axis_values {
        let scenario = scenario_at(spec, axis_value);
        scenario.validate()?;
        for &agent in &spec.agents {
            for &seed in &spec.seeds {
                let axis = spec.sweep.as_ref().zip(axis_value).map(|(s, v)| (s.axis, v));
                let id = run_id(agent, axis, seed);
                let run = train(agent, &scenario, seed)?;
                records.extend(
                    run.episodes
                        .iter()
                        .map(|e| MetricsRecord::from_episode(&id, agent, axis_value, seed, scenario.network.num_users, e)),
                );
                if !run.networks.is_empty() {
                    let name = format!("checkpoints/{id}.ckpt");
                    let nets: Vec<(&str, &crate::approximator::Mlp)> =
                        run.networks.iter().map(|(n, m)| (n.as_str(), m)).collect();
                    write_checkpoint(fs::File::create(out_dir.join(&name))?, &nets)?;
                    outputs.push(name);
                }
            }
        }
    }
    let summary = summarize(&records);
    write_csv(&out_dir.join(RECORDS_FILE), &records)?;
    write_csv(&out_dir.join(SUMMARY_FILE), &summary)?;
    Manifest::new("train", spec, vec![], outputs).write(&out_dir.join(MANIFEST_FILE))?;
    Ok(TrainingOutput { records, summary })
}

/// Hash of a file that went into an artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

impl InputFile {
    pub fn of(path: &Path, label: &str) -> Result<Self> {
        Ok(InputFile {
            path: label.to_string(),
            sha256: hex::encode(Sha256::digest(fs::read(path)?)),
        })
    }
}

/// Sidecar describing how a set of artifacts was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub kind: String,
    pub scenario: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub agents: Vec<AgentKind>,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(kind: &str, spec: &ExperimentSpec, inputs: Vec<InputFile>, outputs: Vec<String>) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            scenario: spec.scenario.clone(),
            config_hash: spec.config_hash(),
            seeds: spec.seeds.clone(),
            agents: spec.agents.clone(),
            inputs,
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    RewardCurve,
    EnergyVsPmax,
    IterationSweep,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reward_curve" => Ok(PlotKind::RewardCurve),
            "energy_vs_pmax" => Ok(PlotKind::EnergyVsPmax),
            "iteration_sweep" => Ok(PlotKind::IterationSweep),
            other => Err(Error::config("kind", format!("unknown plot kind `{other}`"))),
        }
    }
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::RewardCurve => "reward_curve",
            PlotKind::EnergyVsPmax => "energy_vs_pmax",
            PlotKind::IterationSweep => "iteration_sweep",
        }
    }
}

/// Seed-averaged learning curve point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCurveRow {
    pub episode: usize,
    pub seeds: usize,
    pub mean_total_reward: f64,
    pub std_total_reward: f64,
}

/// Per-user, per-step energy split over each run's final 10% of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub agent: AgentKind,
    pub p_max_w: f64,
    pub seeds: usize,
    pub total_j: f64,
    pub transmission_j: f64,
    pub computation_j: f64,
    pub sampling_j: f64,
}

pub fn reward_curves(records: &[MetricsRecord]) -> BTreeMap<AgentKind, Vec<RewardCurveRow>> {
    let mut by_agent: BTreeMap<AgentKind, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records {
        by_agent
            .entry(r.agent)
            .or_default()
            .entry(r.episode)
            .or_default()
            .push(r.total_reward);
    }
    by_agent
        .into_iter()
        .map(|(agent, eps)| {
            let rows = eps
                .into_iter()
                .map(|(episode, v)| {
                    let m = mean(v.iter().copied());
                    let var = if v.len() > 1 {
                        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
                    } else {
                        0.0
                    };
                    RewardCurveRow {
                        episode,
                        seeds: v.len(),
                        mean_total_reward: m,
                        std_total_reward: var.sqrt(),
                    }
                })
                .collect();
            (agent, rows)
        })
        .collect()
}

pub fn energy_vs_pmax(records: &[MetricsRecord]) -> Result<Vec<EnergyRow>> {
    let mut groups: BTreeMap<(AgentKind, u64), BTreeMap<u64, Vec<&MetricsRecord>>> = BTreeMap::new();
    for r in records {
        let p = r.axis_value.ok_or_else(|| {
            Error::config("kind", "energy_vs_pmax needs records from a p_max training sweep")
        })?;
        groups
            .entry((r.agent, p.to_bits()))
            .or_default()
            .entry(r.seed)
            .or_default()
            .push(r);
    }
    let per = |r: &MetricsRecord, v: f64| v / (r.steps.max(1) * r.users.max(1)) as f64;
    Ok(groups
        .into_iter()
        .map(|((agent, bits), by_seed)| {
            let tail: Vec<&MetricsRecord> = by_seed
                .values()
                .flat_map(|eps| eps[eps.len() - window(eps.len())..].iter().copied())
                .collect();
            EnergyRow {
                agent,
                p_max_w: f64::from_bits(bits),
                seeds: by_seed.len(),
                total_j: mean(tail.iter().map(|r| per(r, r.energy_j()))),
                transmission_j: mean(tail.iter().map(|r| per(r, r.transmission_j))),
                computation_j: mean(tail.iter().map(|r| per(r, r.computation_j))),
                sampling_j: mean(tail.iter().map(|r| per(r, r.sampling_j))),
            }
        })
        .collect())
}

/// Turns the artifacts in `dir` into plot-ready tables for `kind`.
/// Returns the written file names.
pub fn emit_plot_data(dir: &Path, kind: PlotKind) -> Result<Vec<String>> {
    let run_manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let mut written = Vec::new();
    let input = match kind {
        PlotKind::RewardCurve | PlotKind::EnergyVsPmax => RECORDS_FILE,
        PlotKind::IterationSweep => SWEEP_FILE,
    };
    let input_path = dir.join(input);
    match kind {
        PlotKind::RewardCurve => {
            let records: Vec<MetricsRecord> = read_csv(&input_path)?;
            if records.is_empty() {
                return Err(Error::Domain(format!("{} holds no records", input_path.display())));
            }
            for (agent, rows) in reward_curves(&records) {
                let name = format!("reward_curve_{agent}.csv");
                write_csv(&dir.join(&name), &rows)?;
                written.push(name);
            }
        }
        PlotKind::EnergyVsPmax => {
            let records: Vec<MetricsRecord> = read_csv(&input_path)?;
            if records.is_empty() {
                return Err(Error::Domain(format!("{} holds no records", input_path.display())));
            }
            let rows = energy_vs_pmax(&records)?;
            let name = "energy_vs_pmax.csv".to_string();
            write_csv(&dir.join(&name), &rows)?;
            written.push(name);
        }
        PlotKind::IterationSweep => {
            let rows: Vec<SweepRow> = read_csv(&input_path)?;
            if rows.is_empty() {
                return Err(Error::Domain(format!("{} holds no rows", input_path.display())));
            }
            let name = "iteration_sweep.csv".to_string();
            write_csv(&dir.join(&name), &rows)?;
            written.push(name);
        }
    }
    let manifest = Manifest {
        kind: format!("plot:{}", kind.name()),
        inputs: vec![InputFile::of(&input_path, input)?],
        outputs: written.clone(),
        ..run_manifest
    };
    manifest.write(&dir.join(format!("plot_{}.manifest.json", kind.name())))?;
    Ok(written)
}
