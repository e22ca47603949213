//! Action feasibility and reward shaping.
//!
//! Explicit constraints (box bounds and the bandwidth budget) are enforced by
//! construction: bounded scalars go through a sigmoid and an affine rescale,
//! bandwidth shares through a softmax scaled by `B`. The two constraints that
//! cannot be expressed that way, the per-round deadline and the payload
//! delivery, become penalties in the reward.

use serde::{Deserialize, Serialize};

use crate::convergence::{local_iteration_bound, LearningParams};
use crate::error::{Error, Result};
use crate::wireless::{achievable_rate, round_totals, NetworkConfig, RoundTotals, UserState};

/// Which decision variables the agent controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionMode {
    /// Per-user transmit time, bandwidth, CPU frequency and power.
    PaperStrict,
    /// Additionally per-user sample skips and the global local accuracy.
    SamplingControl,
}

/// Index map of the flat action vector.
///
/// Users occupy consecutive blocks `[t, b, f, p]`; in sampling-control mode
/// these are followed by `U` skip entries and one local-accuracy entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionLayout {
    pub users: usize,
    pub mode: ActionMode,
}

impl ActionLayout {
    pub fn new(users: usize, mode: ActionMode) -> Self {
        ActionLayout { users, mode }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            ActionMode::PaperStrict => 4 * self.users,
            ActionMode::SamplingControl => 5 * self.users + 1,
        }
    }

    pub fn time(&self, u: usize) -> usize {
        4 * u
    }

    pub fn bandwidth(&self, u: usize) -> usize {
        4 * u + 1
    }

    pub fn cpu(&self, u: usize) -> usize {
        4 * u + 2
    }

    pub fn power(&self, u: usize) -> usize {
        4 * u + 3
    }

    pub fn skip(&self, u: usize) -> Option<usize> {
        (self.mode == ActionMode::SamplingControl).then_some(4 * self.users + u)
    }

    pub fn local_accuracy(&self) -> Option<usize> {
        (self.mode == ActionMode::SamplingControl).then_some(5 * self.users)
    }
}

/// Ranges every executed action must respect.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub layout: ActionLayout,
    pub max_transmit_time_s: f64,
    pub total_bandwidth_hz: f64,
    pub max_cpu_hz: f64,
    pub min_cpu_hz: f64,
    pub max_power_w: f64,
    pub skip_min: u32,
    pub skip_max: u32,
    pub local_accuracy_min: f64,
    pub local_accuracy_max: f64,
}

/// Relative floor that keeps strictly positive quantities away from zero.
pub const POSITIVE_FLOOR: f64 = 1e-6;

impl ActionSpace {
    pub fn new(cfg: &NetworkConfig, mode: ActionMode, local_accuracy_range: (f64, f64)) -> Self {
        ActionSpace {
            layout: ActionLayout::new(cfg.num_users, mode),
            max_transmit_time_s: cfg.max_round_time_s,
            total_bandwidth_hz: cfg.total_bandwidth_hz,
            max_cpu_hz: cfg.max_cpu_hz,
            min_cpu_hz: cfg.min_cpu_hz,
            max_power_w: cfg.max_power_w,
            skip_min: cfg.skip_min,
            skip_max: cfg.skip_max,
            local_accuracy_min: local_accuracy_range.0,
            local_accuracy_max: local_accuracy_range.1,
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn cpu_range(&self) -> (f64, f64) {
        ((POSITIVE_FLOOR * self.max_cpu_hz).max(self.min_cpu_hz), self.max_cpu_hz)
    }

    fn power_range(&self) -> (f64, f64) {
        (POSITIVE_FLOOR * self.max_power_w, self.max_power_w)
    }

    fn skip_range(&self) -> (f64, f64) {
        (f64::from(self.skip_min), f64::from(self.skip_max))
    }

    /// Checks every box, budget and range constraint of `action`.
    pub fn violations(&self, action: &FeasibleAction) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.layout.users;
        if action.check_len(n).is_err() {
            out.push("length".to_string());
            return out;
        }
        for u in 0..n {
            let t = action.transmit_time_s[u];
            if !(t >= 0.0 && t <= self.max_transmit_time_s) {
                out.push(format!("t[{u}]={t}"));
            }
            let f = action.cpu_hz[u];
            if !(f > 0.0 && f >= self.min_cpu_hz && f <= self.max_cpu_hz) {
                out.push(format!("f[{u}]={f}"));
            }
            let p = action.power_w[u];
            if !(p > 0.0 && p <= self.max_power_w) {
                out.push(format!("p[{u}]={p}"));
            }
            let b = action.bandwidth_hz[u];
            if !(b >= 0.0) {
                out.push(format!("b[{u}]={b}"));
            }
            if let Some(k) = action.skip(u) {
                if k < self.skip_min || k > self.skip_max {
                    out.push(format!("k[{u}]={k}"));
                }
            }
        }
        let total: f64 = action.bandwidth_hz.iter().sum();
        if total > self.total_bandwidth_hz * (1.0 + 1e-9) {
            out.push(format!("sum b={total}"));
        }
        if let Some(w) = action.local_accuracy {
            if !(w > 0.0 && w < 1.0) {
                out.push(format!("varpi={w}"));
            }
        }
        out
    }
}

/// Resource allocation satisfying every explicit constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleAction {
    pub transmit_time_s: Vec<f64>,
    pub bandwidth_hz: Vec<f64>,
    pub cpu_hz: Vec<f64>,
    pub power_w: Vec<f64>,
    pub skips: Option<Vec<u32>>,
    pub local_accuracy: Option<f64>,
}

impl FeasibleAction {
    pub fn users(&self) -> usize {
        self.cpu_hz.len()
    }

    pub fn skip(&self, u: usize) -> Option<u32> {
        self.skips.as_ref().map(|k| k[u])
    }

    pub fn mean_skip(&self) -> Option<f64> {
        self.skips
            .as_ref()
            .map(|k| k.iter().map(|&x| f64::from(x)).sum::<f64>() / k.len().max(1) as f64)
    }

    pub(crate) fn check_len(&self, users: usize) -> Result<()> {
        let lens = [
            self.transmit_time_s.len(),
            self.bandwidth_hz.len(),
            self.cpu_hz.len(),
            self.power_w.len(),
            self.skips.as_ref().map_or(users, Vec::len),
        ];
        for len in lens {
            if len != users {
                return Err(Error::Shape {
                    context: "feasible action",
                    expected: users,
                    actual: len,
                });
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-15, 1.0 - 1e-15);
    (p / (1.0 - p)).ln()
}

fn squash_scalar(x: f64, lo: f64, hi: f64) -> f64 {
    (lo + sigmoid(x) * (hi - lo)).clamp(lo, hi)
}

fn unsquash_scalar(v: f64, lo: f64, hi: f64) -> f64 {
    logit((v - lo) / (hi - lo))
}

/// Maps an unconstrained vector onto the feasible set.
pub fn squash_action(raw: &[f64], space: &ActionSpace) -> Result<FeasibleAction> {
    let layout = space.layout;
    if raw.len() != layout.dim() {
        return Err(Error::Shape {
            context: "raw action",
            expected: layout.dim(),
            actual: raw.len(),
        });
    }
    let n = layout.users;
    let (f_lo, f_hi) = space.cpu_range();
    let (p_lo, p_hi) = space.power_range();

    // softmax over the bandwidth logits
    let logits: Vec<f64> = (0..n).map(|u| raw[layout.bandwidth(u)]).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let norm: f64 = weights.iter().sum();

    let skips = (0..n)
        .filter_map(|u| layout.skip(u))
        .map(|i| {
            let (lo, hi) = space.skip_range();
            squash_scalar(raw[i], lo, hi).round() as u32
        })
        .collect::<Vec<_>>();

    Ok(FeasibleAction {
        transmit_time_s: (0..n)
            .map(|u| squash_scalar(raw[layout.time(u)], 0.0, space.max_transmit_time_s))
            .collect(),
        bandwidth_hz: weights.iter().map(|w| w / norm * space.total_bandwidth_hz).collect(),
        cpu_hz: (0..n).map(|u| squash_scalar(raw[layout.cpu(u)], f_lo, f_hi)).collect(),
        power_w: (0..n).map(|u| squash_scalar(raw[layout.power(u)], p_lo, p_hi)).collect(),
        skips: (layout.mode == ActionMode::SamplingControl).then_some(skips),
        local_accuracy: layout.local_accuracy().map(|i| {
            squash_scalar(raw[i], space.local_accuracy_min, space.local_accuracy_max)
        }),
    })
}

/// A preimage of `action` under [`squash_action`].
pub fn unsquash_action(action: &FeasibleAction, space: &ActionSpace) -> Result<Vec<f64>> {
    let layout = space.layout;
    let n = layout.users;
    action.check_len(n)?;
    let (f_lo, f_hi) = space.cpu_range();
    let (p_lo, p_hi) = space.power_range();
    let mut raw = vec![0.0; layout.dim()];
    for u in 0..n {
        raw[layout.time(u)] = unsquash_scalar(action.transmit_time_s[u], 0.0, space.max_transmit_time_s);
        raw[layout.bandwidth(u)] = (action.bandwidth_hz[u] / space.total_bandwidth_hz).ln();
        raw[layout.cpu(u)] = unsquash_scalar(action.cpu_hz[u], f_lo, f_hi);
        raw[layout.power(u)] = unsquash_scalar(action.power_w[u], p_lo, p_hi);
        if let (Some(i), Some(k)) = (layout.skip(u), action.skip(u)) {
            let (lo, hi) = space.skip_range();
            raw[i] = unsquash_scalar(f64::from(k), lo, hi);
        }
    }
    if let (Some(i), Some(w)) = (layout.local_accuracy(), action.local_accuracy) {
        raw[i] = unsquash_scalar(w, space.local_accuracy_min, space.local_accuracy_max);
    }
    Ok(raw)
}

/// Result of the naive box-clipping map used by the unconstrained baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedAction {
    /// The action actually executed, bandwidth rescaled into the budget.
    pub action: FeasibleAction,
    /// Amount by which the requested bandwidths exceeded `B`.
    pub budget_excess_hz: f64,
}

/// Clips each entry of `raw` to `[-1, 1]` and maps it linearly onto its box.
///
/// Bandwidths are boxed independently in `[0, B]`; the budget is not
/// enforced by the map, only reported, and the executed shares are scaled
/// down proportionally when the request overshoots.
pub fn clip_action(raw: &[f64], space: &ActionSpace) -> Result<ClippedAction> {
    let layout = space.layout;
    if raw.len() != layout.dim() {
        return Err(Error::Shape {
            context: "raw action",
            expected: layout.dim(),
            actual: raw.len(),
        });
    }
    let n = layout.users;
    let unit = |i: usize| (raw[i].clamp(-1.0, 1.0) + 1.0) / 2.0;
    let boxed = |i: usize, lo: f64, hi: f64| (lo + unit(i) * (hi - lo)).clamp(lo, hi);
    let (f_lo, f_hi) = space.cpu_range();
    let (p_lo, p_hi) = space.power_range();

    let requested: Vec<f64> = (0..n)
        .map(|u| unit(layout.bandwidth(u)) * space.total_bandwidth_hz)
        .collect();
    let total: f64 = requested.iter().sum();
    let budget_excess_hz = (total - space.total_bandwidth_hz).max(0.0);
    let scale = if total > space.total_bandwidth_hz {
        space.total_bandwidth_hz / total
    } else {
        1.0
    };
    let action = FeasibleAction {
        transmit_time_s: (0..n)
            .map(|u| boxed(layout.time(u), 0.0, space.max_transmit_time_s))
            .collect(),
        bandwidth_hz: requested.iter().map(|b| b * scale).collect(),
        cpu_hz: (0..n).map(|u| boxed(layout.cpu(u), f_lo, f_hi)).collect(),
        power_w: (0..n).map(|u| boxed(layout.power(u), p_lo, p_hi)).collect(),
        skips: (layout.mode == ActionMode::SamplingControl).then(|| {
            let (lo, hi) = space.skip_range();
            (0..n)
                .map(|u| boxed(layout.skip(u).unwrap(), lo, hi).round() as u32)
                .collect()
        }),
        local_accuracy: layout
            .local_accuracy()
            .map(|i| boxed(i, space.local_accuracy_min, space.local_accuracy_max)),
    };
    Ok(ClippedAction {
        action,
        budget_excess_hz,
    })
}

fn effective_accuracy(action: &FeasibleAction, learning: &LearningParams) -> f64 {
    action.local_accuracy.unwrap_or(learning.local_accuracy)
}

/// Deadline overflow: the worst user's computation plus transmission time
/// beyond `T_max-round`, using `A_u·log2(1/ϖ)/f_u` for the computation.
pub fn penalty_time(
    cfg: &NetworkConfig,
    users: &[UserState],
    action: &FeasibleAction,
    learning: &LearningParams,
) -> Result<f64> {
    action.check_len(users.len())?;
    let iterations = local_iteration_bound(&learning.with_local_accuracy(effective_accuracy(action, learning)))?;
    Ok(users
        .iter()
        .enumerate()
        .map(|(u, user)| {
            let cycles = iterations * user.cycles_per_sample * user.num_samples as f64;
            (cycles / action.cpu_hz[u] + action.transmit_time_s[u] - cfg.max_round_time_s).max(0.0)
        })
        .fold(0.0, f64::max))
}

/// Payload shortfall: the worst user's `D0 − t·r` in bits.
pub fn penalty_data(cfg: &NetworkConfig, users: &[UserState], action: &FeasibleAction) -> Result<f64> {
    action.check_len(users.len())?;
    let n0 = cfg.noise_psd_w_per_hz();
    Ok(users
        .iter()
        .enumerate()
        .map(|(u, user)| {
            let rate = achievable_rate(action.bandwidth_hz[u], user.channel_gain, action.power_w[u], n0);
            (cfg.model_size_bits - action.transmit_time_s[u] * rate).max(0.0)
        })
        .fold(0.0, f64::max))
}

/// Penalty coefficients. All must be `<= 0` so violations lower the reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    /// λ1, per second of deadline overflow.
    pub lambda_time: f64,
    /// λ2, per bit of payload shortfall.
    pub lambda_data: f64,
    /// Per Hz of bandwidth requested beyond `B` (clipping baseline only).
    #[serde(default)]
    pub lambda_budget: f64,
    /// Whether sampling energy counts towards the reward.
    #[serde(default)]
    pub reward_includes_sampling: bool,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("agent.reward.lambda_time", self.lambda_time),
            ("agent.reward.lambda_data", self.lambda_data),
            ("agent.reward.lambda_budget", self.lambda_budget),
        ] {
            if !(value.is_finite() && value <= 0.0) {
                return Err(Error::config(field, format!("must be finite and <= 0, got {value}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub energy_sum: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_budget: f64,
    pub reward: f64,
}

/// Reward of one environment step plus the round accounting it came from.
#[allow(clippy::too_many_arguments)]
pub fn step_reward(
    cfg: &NetworkConfig,
    users: &[UserState],
    action: &FeasibleAction,
    learning: &LearningParams,
    local_iterations: u32,
    weights: &RewardWeights,
    budget_excess_hz: f64,
) -> Result<(RewardTerms, RoundTotals)> {
    let totals = round_totals(cfg, users, action, local_iterations)?;
    let energy = totals.energy();
    let energy_sum = energy.computation_j
        + energy.transmission_j
        + if weights.reward_includes_sampling {
            energy.sampling_j
        } else {
            0.0
        };
    let p1 = penalty_time(cfg, users, action, learning)?;
    let p2 = penalty_data(cfg, users, action)?;
    let p_budget = budget_excess_hz.max(0.0);
    let reward = -energy_sum
        + weights.lambda_time * p1
        + weights.lambda_data * p2
        + weights.lambda_budget * p_budget;
    Ok((
        RewardTerms {
            energy_sum,
            p1,
            p2,
            p_budget,
            reward,
        },
        totals,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{reference_learning, reference_network};
    use crate::wireless::draw_users;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(users: usize, mode: ActionMode) -> ActionSpace {
        ActionSpace::new(&reference_network(users), mode, (0.05, 0.95))
    }

    fn users(n: usize) -> (NetworkConfig, Vec<UserState>) {
        let cfg = reference_network(n);
        let users = draw_users(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        (cfg, users)
    }

    #[test]
    fn zero_logits_split_bandwidth_evenly() {
        let s = space(4, ActionMode::SamplingControl);
        let a = squash_action(&vec![0.0; s.dim()], &s).unwrap();
        for b in &a.bandwidth_hz {
            assert!((b - s.total_bandwidth_hz / 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn saturated_logits_hit_the_maxima() {
        let s = space(3, ActionMode::SamplingControl);
        let a = squash_action(&vec![1e3; s.dim()], &s).unwrap();
        assert_eq!(a.power_w, vec![s.max_power_w; 3]);
        assert_eq!(a.cpu_hz, vec![s.max_cpu_hz; 3]);
        assert_eq!(a.skips, Some(vec![s.skip_max; 3]));
        let b = squash_action(&vec![-1e3; s.dim()], &s).unwrap();
        assert!(b.power_w.iter().all(|&p| p > 0.0));
        assert!(b.cpu_hz.iter().all(|&f| f > 0.0));
        assert!(s.violations(&b).is_empty());
    }

    #[test]
    fn wrong_length_is_rejected() {
        let s = space(3, ActionMode::PaperStrict);
        assert!(squash_action(&[0.0; 5], &s).is_err());
        assert!(clip_action(&[0.0; 5], &s).is_err());
    }

    #[test]
    fn clipping_reports_budget_excess() {
        let s = space(4, ActionMode::PaperStrict);
        let c = clip_action(&vec![1.0; s.dim()], &s).unwrap();
        assert!((c.budget_excess_hz - 3.0 * s.total_bandwidth_hz).abs() < 1e-3);
        let total: f64 = c.action.bandwidth_hz.iter().sum();
        assert!((total - s.total_bandwidth_hz).abs() < 1e-6);
        let c = clip_action(&vec![-1.0; s.dim()], &s).unwrap();
        assert_eq!(c.budget_excess_hz, 0.0);
    }

    fn boundary_action(cfg: &NetworkConfig, users: &[UserState], learning: &LearningParams) -> FeasibleAction {
        // Every user finishes computing exactly at the deadline minus its transmit time.
        let n = users.len();
        let iters = local_iteration_bound(learning).unwrap();
        let t = vec![1.0; n];
        let f = users
            .iter()
            .map(|u| iters * u.cycles_per_sample * u.num_samples as f64 / (cfg.max_round_time_s - 1.0))
            .collect();
        FeasibleAction {
            transmit_time_s: t,
            bandwidth_hz: vec![cfg.total_bandwidth_hz / n as f64; n],
            cpu_hz: f,
            power_w: vec![1.0; n],
            skips: None,
            local_accuracy: None,
        }
    }

    #[test]
    fn time_penalty_cases() {
        let (cfg, users) = users(3);
        let learning = reference_learning();
        let mut a = boundary_action(&cfg, &users, &learning);
        let p = penalty_time(&cfg, &users, &a, &learning).unwrap();
        assert!(p < 1e-9, "boundary gives zero penalty, got {p}");
        let slack = NetworkConfig {
            max_round_time_s: 1e6,
            ..cfg.clone()
        };
        assert_eq!(penalty_time(&slack, &users, &a, &learning).unwrap(), 0.0);
        // halving f_0 doubles its computation time; the increase equals the overflow
        let iters = local_iteration_bound(&learning).unwrap();
        let comp = iters * users[0].cycles_per_sample * users[0].num_samples as f64 / a.cpu_hz[0];
        a.cpu_hz[0] /= 2.0;
        let p = penalty_time(&cfg, &users, &a, &learning).unwrap();
        assert!((p - comp).abs() < 1e-9 * comp.max(1.0));
    }

    #[test]
    fn data_penalty_cases() {
        let (cfg, users) = users(2);
        let n0 = cfg.noise_psd_w_per_hz();
        let b = cfg.total_bandwidth_hz / 2.0;
        let rates: Vec<f64> = users.iter().map(|u| achievable_rate(b, u.channel_gain, 1.0, n0)).collect();
        let a = FeasibleAction {
            transmit_time_s: rates.iter().map(|r| cfg.model_size_bits / r).collect(),
            bandwidth_hz: vec![b; 2],
            cpu_hz: vec![1e9; 2],
            power_w: vec![1.0; 2],
            skips: None,
            local_accuracy: None,
        };
        assert!(penalty_data(&cfg, &users, &a).unwrap() < 1e-6 * cfg.model_size_bits);
        let silent = FeasibleAction {
            power_w: vec![0.0; 2],
            ..a
        };
        assert_eq!(penalty_data(&cfg, &users, &silent).unwrap(), cfg.model_size_bits);
    }

    #[test]
    fn reward_cases() {
        let (cfg, users) = users(3);
        let learning = reference_learning();
        let a = boundary_action(&cfg, &users, &learning);
        let w = RewardWeights {
            lambda_time: -10.0,
            lambda_data: -1e-6,
            lambda_budget: 0.0,
            reward_includes_sampling: false,
        };
        let (terms, totals) = step_reward(&cfg, &users, &a, &learning, 3, &w, 0.0).unwrap();
        let e = totals.energy();
        assert!((terms.energy_sum - e.computation_j - e.transmission_j).abs() < 1e-12);
        let free = RewardWeights {
            lambda_time: 0.0,
            lambda_data: 0.0,
            ..w
        };
        let (t0, _) = step_reward(&cfg, &users, &a, &learning, 3, &free, 0.0).unwrap();
        assert_eq!(t0.reward, -t0.energy_sum);
        assert!(RewardWeights { lambda_time: 1.0, ..w }.validate().is_err());
    }

    #[test]
    fn violating_action_scores_lower() {
        let (cfg, users) = users(3);
        let learning = reference_learning();
        let w = RewardWeights {
            lambda_time: -10.0,
            lambda_data: -1e-6,
            lambda_budget: 0.0,
            reward_includes_sampling: false,
        };
        let a = boundary_action(&cfg, &users, &learning);
        let (ok, _) = step_reward(&cfg, &users, &a, &learning, 3, &w, 0.0).unwrap();
        // same energy, tighter deadline
        let tight = NetworkConfig {
            max_round_time_s: cfg.max_round_time_s / 2.0,
            ..cfg.clone()
        };
        let (bad, _) = step_reward(&tight, &users, &a, &learning, 3, &w, 0.0).unwrap();
        assert_eq!(ok.energy_sum, bad.energy_sum);
        assert!(bad.p1 > 0.0);
        assert!(bad.reward < ok.reward);
    }

    proptest! {
        #[test]
        fn squashed_actions_are_feasible(raw in proptest::collection::vec(-50.0f64..50.0, 26)) {
            let s = space(5, ActionMode::SamplingControl);
            let a = squash_action(&raw, &s).unwrap();
            prop_assert!(s.violations(&a).is_empty(), "{:?}", s.violations(&a));
            let total: f64 = a.bandwidth_hz.iter().sum();
            prop_assert!((total - s.total_bandwidth_hz).abs() <= 1e-6 * s.total_bandwidth_hz);
        }

        #[test]
        fn resquashing_the_preimage_is_stable(raw in proptest::collection::vec(-8.0f64..8.0, 26)) {
            let s = space(5, ActionMode::SamplingControl);
            let a = squash_action(&raw, &s).unwrap();
            let back = squash_action(&unsquash_action(&a, &s).unwrap(), &s).unwrap();
            let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-9 * q.abs().max(1.0));
            prop_assert!(close(&a.transmit_time_s, &back.transmit_time_s));
            prop_assert!(close(&a.bandwidth_hz, &back.bandwidth_hz));
            prop_assert!(close(&a.cpu_hz, &back.cpu_hz));
            prop_assert!(close(&a.power_w, &back.power_w));
            prop_assert_eq!(&a.skips, &back.skips);
            prop_assert!((a.local_accuracy.unwrap() - back.local_accuracy.unwrap()).abs() < 1e-9);
        }
    }
}
