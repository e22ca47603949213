//! Environment adapter over the wireless model, replay memory and the
//! off-policy agents: constrained SAC (`a2c_ei`), SAC with naive clipping
//! (`sac_plain`), DDPG and a uniform random baseline.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::approximator::{Activation, GaussianPolicyOutput, Gradients, Mlp, Optimizer};
use crate::constraints::{
    clip_action, squash_action, ActionMode, ActionSpace, FeasibleAction, RewardTerms, RewardWeights,
};
use crate::convergence::{global_iterations, local_iterations, GapParams, LearningParams};
use crate::error::{Error, Result};
use crate::wireless::{draw_channel_gain, draw_users, EnergyBreakdown, NetworkConfig, UserState};

/// Largest magnitude a tanh-space action may take before `atanh`.
const TANH_EDGE: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpgConfig {
    /// Standard deviation of the Gaussian exploration noise in tanh space.
    pub exploration_std: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            exploration_std: 0.1,
        }
    }
}

fn default_activation() -> Activation {
    Activation::Softplus
}

fn default_mode() -> ActionMode {
    ActionMode::SamplingControl
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "default_mode")]
    pub mode: ActionMode,
    /// γ.
    pub discount: f64,
    /// Fixed entropy temperature α.
    pub temperature: f64,
    /// ρ in `target ← ρ·target + (1 − ρ)·online`.
    pub polyak: f64,
    pub actor_learn_rate: f64,
    pub critic_learn_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_activation")]
    pub hidden_activation: Activation,
    /// Fixed horizon in paper-strict mode.
    pub episode_length: usize,
    /// Cap on the bound-driven horizon in sampling-control mode.
    pub max_episode_length: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    /// Multiplier applied to rewards before they reach the learner.
    pub reward_scale: f64,
    pub reward: RewardWeights,
    /// Range of the learned local accuracy ϖ in sampling-control mode.
    pub local_accuracy_range: (f64, f64),
    #[serde(default)]
    pub ddpg: DdpgConfig,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("agent.{field}"), reason))
            }
        };
        check(
            (0.0..=1.0).contains(&self.discount),
            "discount",
            format!("must lie in [0, 1], got {}", self.discount),
        )?;
        check(
            self.temperature.is_finite() && self.temperature >= 0.0,
            "temperature",
            format!("must be >= 0, got {}", self.temperature),
        )?;
        check(
            (0.0..1.0).contains(&self.polyak),
            "polyak",
            format!("must lie in [0, 1), got {}", self.polyak),
        )?;
        for (name, lr) in [
            ("actor_learn_rate", self.actor_learn_rate),
            ("critic_learn_rate", self.critic_learn_rate),
        ] {
            check(lr.is_finite() && lr > 0.0, name, format!("must be > 0, got {lr}"))?;
        }
        check(self.batch_size >= 1, "batch_size", "must be >= 1".into())?;
        check(
            self.buffer_capacity >= self.batch_size,
            "buffer_capacity",
            format!("must be >= batch_size ({})", self.batch_size),
        )?;
        check(
            self.hidden_layers.iter().all(|&h| h > 0),
            "hidden_layers",
            "widths must be positive".into(),
        )?;
        check(self.episode_length >= 1, "episode_length", "must be >= 1".into())?;
        check(self.max_episode_length >= 1, "max_episode_length", "must be >= 1".into())?;
        check(self.total_steps >= 1, "total_steps", "must be >= 1".into())?;
        check(
            self.reward_scale.is_finite() && self.reward_scale > 0.0,
            "reward_scale",
            format!("must be > 0, got {}", self.reward_scale),
        )?;
        let (lo, hi) = self.local_accuracy_range;
        check(
            0.0 < lo && lo <= hi && hi < 1.0,
            "local_accuracy_range",
            format!("must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"),
        )?;
        check(
            self.ddpg.exploration_std.is_finite() && self.ddpg.exploration_std >= 0.0,
            "ddpg.exploration_std",
            format!("must be >= 0, got {}", self.ddpg.exploration_std),
        )?;
        self.reward.validate()
    }
}

/// Everything one training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: NetworkConfig,
    pub learning: LearningParams,
    pub gap: GapParams,
    pub agent: AgentConfig,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.learning.validate()?;
        self.gap.validate()?;
        self.agent.validate()?;
        if self.gap.sample_counts.len() != self.network.num_users {
            return Err(Error::config(
                "gap.sample_counts",
                format!(
                    "expected {} entries, got {}",
                    self.network.num_users,
                    self.gap.sample_counts.len()
                ),
            ));
        }
        // Worst case of the bound: fewest skips and the loosest local accuracy.
        let varpi = match self.agent.mode {
            ActionMode::PaperStrict => self.learning.local_accuracy,
            ActionMode::SamplingControl => self.agent.local_accuracy_range.1,
        };
        global_iterations(
            &self.learning.with_local_accuracy(varpi),
            &self.gap,
            f64::from(self.network.skip_min),
            self.network.sampling_interval_s,
            self.network.num_users,
        )?;
        Ok(())
    }

    pub fn action_space(&self) -> ActionSpace {
        ActionSpace::new(&self.network, self.agent.mode, self.agent.local_accuracy_range)
    }
}

/// How a raw action vector becomes an executed allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionMapping {
    /// Sigmoid/softmax squashing; every constraint holds by construction.
    Squash,
    /// Linear box clipping; the bandwidth budget is only penalized.
    Clip,
}

/// Channel gains mapped to a unit-ish scale: `(10·log10 g + a_dB) / 10`.
pub type Observation = Vec<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Unscaled reward.
    pub reward: f64,
    pub done: bool,
    pub terms: RewardTerms,
    pub energy: EnergyBreakdown,
    pub action: FeasibleAction,
    pub completion_time_s: f64,
    /// Global rounds implied by this step's sampling and accuracy choice.
    pub global_iterations: u64,
}

pub struct Env {
    network: NetworkConfig,
    learning: LearningParams,
    gap: GapParams,
    weights: RewardWeights,
    space: ActionSpace,
    mapping: ActionMapping,
    fixed_horizon: usize,
    max_horizon: usize,
    users: Vec<UserState>,
    steps: usize,
    rng: ChaCha8Rng,
}

impl Env {
    pub fn new(scenario: &Scenario, mapping: ActionMapping, rng: ChaCha8Rng) -> Self {
        Env {
            network: scenario.network.clone(),
            learning: scenario.learning.clone(),
            gap: scenario.gap.clone(),
            weights: scenario.agent.reward,
            space: scenario.action_space(),
            mapping,
            fixed_horizon: scenario.agent.episode_length,
            max_horizon: scenario.agent.max_episode_length,
            users: Vec::new(),
            steps: 0,
            rng,
        }
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn action_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn observation_dim(&self) -> usize {
        self.network.num_users
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    fn observe(&self) -> Observation {
        self.users
            .iter()
            .map(|u| (10.0 * u.channel_gain.log10() + self.network.pathloss_a_db) / 10.0)
            .collect()
    }

    /// Redraws positions, CPU constants and gains.
    pub fn reset(&mut self) -> Result<Observation> {
        self.users = draw_users(&self.network, &mut self.rng)?;
        self.steps = 0;
        Ok(self.observe())
    }

    pub fn step(&mut self, raw: &[f64]) -> Result<StepOutcome> {
        if self.users.is_empty() {
            return Err(Error::Domain("step called before reset".into()));
        }
        let (action, budget_excess) = match self.mapping {
            ActionMapping::Squash => (squash_action(raw, &self.space)?, 0.0),
            ActionMapping::Clip => {
                let c = clip_action(raw, &self.space)?;
                (c.action, c.budget_excess_hz)
            }
        };
        let varpi = action.local_accuracy.unwrap_or(self.learning.local_accuracy);
        let learning = self.learning.with_local_accuracy(varpi);
        let iters = local_iterations(&learning)?;
        let (terms, totals) = crate::constraints::step_reward(
            &self.network,
            &self.users,
            &action,
            &learning,
            iters,
            &self.weights,
            budget_excess,
        )?;
        let mean_skip = action.mean_skip().unwrap_or(f64::from(self.network.skip_min));
        let rounds = global_iterations(
            &learning,
            &self.gap,
            mean_skip,
            self.network.sampling_interval_s,
            self.network.num_users,
        )?;
        self.steps += 1;
        let horizon = match self.space.layout.mode {
            ActionMode::PaperStrict => self.fixed_horizon,
            ActionMode::SamplingControl => (rounds as usize).clamp(1, self.max_horizon),
        };
        let done = self.steps >= horizon;
        for u in &mut self.users {
            u.channel_gain =
                draw_channel_gain(&self.network, u.distance_km, self.network.shadow_sigma_db, &mut self.rng)?;
        }
        Ok(StepOutcome {
            observation: self.observe(),
            reward: terms.reward,
            done,
            terms,
            energy: totals.energy(),
            completion_time_s: totals.max_completion_time(),
            action,
            global_iterations: rounds,
        })
    }
}

/// One stored experience. `action` is the tanh-space vector seen by critics.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Bounded FIFO with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

/// Column-stacked sample of transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub observations: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_observations: Array2<f64>,
    pub dones: Array1<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Domain("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            items: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Domain(format!(
                "cannot sample {batch} from {} transitions",
                self.items.len()
            )));
        }
        Ok((0..batch).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        let first = &self.items[idx[0]];
        let (od, ad) = (first.observation.len(), first.action.len());
        let mut b = Batch {
            observations: Array2::zeros((batch, od)),
            actions: Array2::zeros((batch, ad)),
            rewards: Array1::zeros(batch),
            next_observations: Array2::zeros((batch, od)),
            dones: Array1::zeros(batch),
        };
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.items[i];
            b.observations.row_mut(row).assign(&ArrayView1::from(&t.observation));
            b.actions.row_mut(row).assign(&ArrayView1::from(&t.action));
            b.next_observations
                .row_mut(row)
                .assign(&ArrayView1::from(&t.next_observation));
            b.rewards[row] = t.reward;
            b.dones[row] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(b)
    }
}

/// `y = r + γ(1 − done)·(min(q1, q2) − α·log π)`.
pub fn sac_target(reward: f64, done: bool, gamma: f64, q1: f64, q2: f64, alpha: f64, log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * (q1.min(q2) - alpha * log_prob)
    }
}

/// `target ← ρ·target + (1 − ρ)·online`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, rho: f64) -> Result<()> {
    target.polyak_from(online, rho)
}

fn critic_input(obs: ArrayView2<f64>, act: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs, act]).expect("matching row counts")
}

fn q_column(critic: &Mlp, input: &Array2<f64>) -> Result<(crate::approximator::ForwardCache, Array1<f64>)> {
    let cache = critic.forward_batch(input.view())?;
    let q = cache.output().column(0).to_owned();
    Ok((cache, q))
}

/// Mean squared Bellman error of one critic and its parameter gradient.
pub fn critic_loss(
    critic: &Mlp,
    observations: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: ArrayView1<f64>,
) -> Result<(f64, Gradients)> {
    let n = observations.nrows() as f64;
    let (cache, q) = q_column(critic, &critic_input(observations, actions))?;
    let diff = &q - &targets;
    let loss = diff.dot(&diff) / n;
    let upstream = (diff * (2.0 / n)).insert_axis(Axis(1));
    let (grads, _) = critic.backward_batch(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// Actor objective `mean(α·log π(ã|s) − min_j Q_j(s, ã))` for fixed
/// reparameterization noise, with its gradient w.r.t. the actor parameters.
pub fn actor_loss(
    actor: &Mlp,
    critics: [&Mlp; 2],
    observations: ArrayView2<f64>,
    noise: Array2<f64>,
    alpha: f64,
) -> Result<(f64, Gradients)> {
    let rows = observations.nrows();
    let n = rows as f64;
    let cache = actor.forward_batch(observations)?;
    let sample = GaussianPolicyOutput::from_head(cache.output().view(), noise)?;
    let input = critic_input(observations, sample.action.view());
    let (c0, q0) = q_column(critics[0], &input)?;
    let (c1, q1) = q_column(critics[1], &input)?;
    let obs_dim = observations.ncols();
    let mut grad_action = Array2::zeros(sample.action.raw_dim());
    let mut loss = 0.0;
    let mut up0 = Array2::zeros((rows, 1));
    let mut up1 = Array2::zeros((rows, 1));
    for i in 0..rows {
        let qmin = if q0[i] <= q1[i] {
            up0[[i, 0]] = -1.0 / n;
            q0[i]
        } else {
            up1[[i, 0]] = -1.0 / n;
            q1[i]
        };
        loss += alpha * sample.log_prob[i] - qmin;
    }
    for (critic, cache, up) in [(critics[0], &c0, &up0), (critics[1], &c1, &up1)] {
        let (_, gx) = critic.backward_batch(cache, up.view())?;
        grad_action += &gx.slice(s![.., obs_dim..]);
    }
    let grad_logp = Array1::from_elem(rows, alpha / n);
    let head_grad = sample.backward(grad_action.view(), grad_logp.view());
    let (grads, _) = actor.backward_batch(&cache, head_grad.view())?;
    Ok((loss / n, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn network_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

/// Soft actor-critic with twin critics and fixed temperature.
pub struct SacAgent {
    pub actor: Mlp,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    actor_opt: Optimizer,
    critic_opts: [Optimizer; 2],
    alpha: f64,
    gamma: f64,
    polyak: f64,
    action_dim: usize,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        let act = cfg.hidden_activation;
        let actor = Mlp::new(
            &network_sizes(obs_dim, &cfg.hidden_layers, 2 * action_dim),
            act,
            Activation::Identity,
            rng,
        )?;
        let critic_sizes = network_sizes(obs_dim + action_dim, &cfg.hidden_layers, 1);
        let critics = [
            Mlp::new(&critic_sizes, act, Activation::Identity, rng)?,
            Mlp::new(&critic_sizes, act, Activation::Identity, rng)?,
        ];
        let targets = critics.clone();
        Ok(SacAgent {
            actor_opt: Optimizer::adam(cfg.actor_learn_rate, &actor),
            critic_opts: [
                Optimizer::adam(cfg.critic_learn_rate, &critics[0]),
                Optimizer::adam(cfg.critic_learn_rate, &critics[1]),
            ],
            actor,
            critics,
            targets,
            alpha: cfg.temperature,
            gamma: cfg.discount,
            polyak: cfg.polyak,
            action_dim,
        })
    }

    /// Samples `(a, u)` with `a = tanh(u)` for one observation.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
        let head = self.actor.forward_batch(ArrayView2::from_shape((1, obs.len()), obs).expect("row"))?;
        let sample = crate::approximator::sample_squashed_gaussian(head.output().view(), rng)?;
        Ok((sample.action.row(0).to_vec(), sample.pre_squash.row(0).to_vec()))
    }

    /// Soft Bellman targets for a batch, with fresh next-state actions.
    pub fn targets_for<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Result<Array1<f64>> {
        let rows = batch.rewards.len();
        let head = self.actor.forward_batch(batch.next_observations.view())?;
        let next = GaussianPolicyOutput::from_head(head.output().view(), standard_normal(rows, self.action_dim, rng))?;
        let input = critic_input(batch.next_observations.view(), next.action.view());
        let (_, q0) = q_column(&self.targets[0], &input)?;
        let (_, q1) = q_column(&self.targets[1], &input)?;
        Ok(Array1::from_shape_fn(rows, |i| {
            sac_target(
                batch.rewards[i],
                batch.dones[i] > 0.5,
                self.gamma,
                q0[i],
                q1[i],
                self.alpha,
                next.log_prob[i],
            )
        }))
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let y = self.targets_for(batch, rng)?;
        let mut critic_total = 0.0;
        for j in 0..2 {
            let (loss, grads) = critic_loss(&self.critics[j], batch.observations.view(), batch.actions.view(), y.view())?;
            self.critic_opts[j].step(&mut self.critics[j], &grads)?;
            critic_total += loss;
        }
        let noise = standard_normal(batch.rewards.len(), self.action_dim, rng);
        let (actor_total, grads) = actor_loss(
            &self.actor,
            [&self.critics[0], &self.critics[1]],
            batch.observations.view(),
            noise,
            self.alpha,
        )?;
        self.actor_opt.step(&mut self.actor, &grads)?;
        for j in 0..2 {
            polyak_update(&mut self.targets[j], &self.critics[j], self.polyak)?;
        }
        Ok(UpdateStats {
            critic_loss: critic_total / 2.0,
            actor_loss: actor_total,
        })
    }
}

/// Deterministic actor with a tanh output and a single critic.
pub struct DdpgAgent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    gamma: f64,
    polyak: f64,
    noise_std: f64,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, cfg: &AgentConfig, rng: &mut R) -> Result<Self> {
        let act = cfg.hidden_activation;
        let actor = Mlp::new(&network_sizes(obs_dim, &cfg.hidden_layers, action_dim), act, Activation::Tanh, rng)?;
        let critic = Mlp::new(
            &network_sizes(obs_dim + action_dim, &cfg.hidden_layers, 1),
            act,
            Activation::Identity,
            rng,
        )?;
        Ok(DdpgAgent {
            actor_opt: Optimizer::adam(cfg.actor_learn_rate, &actor),
            critic_opt: Optimizer::adam(cfg.critic_learn_rate, &critic),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            gamma: cfg.discount,
            polyak: cfg.polyak,
            noise_std: cfg.ddpg.exploration_std,
        })
    }

    /// Noisy action in tanh space, kept strictly inside `(-1, 1)`.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mu = self.actor.forward(obs)?;
        Ok(mu
            .into_iter()
            .map(|m| {
                let e: f64 = StandardNormal.sample(rng);
                (m + self.noise_std * e).clamp(-TANH_EDGE, TANH_EDGE)
            })
            .collect())
    }

    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let rows = batch.rewards.len();
        let n = rows as f64;
        let next_act = self.target_actor.forward_batch(batch.next_observations.view())?;
        let (_, q_next) = q_column(
            &self.target_critic,
            &critic_input(batch.next_observations.view(), next_act.output().view()),
        )?;
        let y = Array1::from_shape_fn(rows, |i| {
            batch.rewards[i] + self.gamma * (1.0 - batch.dones[i]) * q_next[i]
        });
        let (critic_loss, grads) = critic_loss(&self.critic, batch.observations.view(), batch.actions.view(), y.view())?;
        self.critic_opt.step(&mut self.critic, &grads)?;

        let cache = self.actor.forward_batch(batch.observations.view())?;
        let (qc, q) = q_column(&self.critic, &critic_input(batch.observations.view(), cache.output().view()))?;
        let up = Array2::from_elem((rows, 1), -1.0 / n);
        let (_, gx) = self.critic.backward_batch(&qc, up.view())?;
        let ga = gx.slice(s![.., batch.observations.ncols()..]).to_owned();
        let (actor_grads, _) = self.actor.backward_batch(&cache, ga.view())?;
        self.actor_opt.step(&mut self.actor, &actor_grads)?;
        polyak_update(&mut self.target_actor, &self.actor, self.polyak)?;
        polyak_update(&mut self.target_critic, &self.critic, self.polyak)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss: -q.mean().unwrap_or(0.0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    A2cEi,
    SacPlain,
    Ddpg,
    Random,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::A2cEi, AgentKind::SacPlain, AgentKind::Ddpg, AgentKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::A2cEi => "a2c_ei",
            AgentKind::SacPlain => "sac_plain",
            AgentKind::Ddpg => "ddpg",
            AgentKind::Random => "random",
        }
    }

    fn mapping(self) -> ActionMapping {
        match self {
            AgentKind::SacPlain => ActionMapping::Clip,
            _ => ActionMapping::Squash,
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("agent kind", format!("unknown agent `{s}`")))
    }
}

/// Per-episode learning-curve entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub sampling_j: f64,
    pub computation_j: f64,
    pub transmission_j: f64,
    pub p1: f64,
    pub p2: f64,
    pub p_budget: f64,
    /// Mean over steps of the slowest user's completion time.
    pub completion_time_s: f64,
    /// Global rounds implied by the last step of the episode.
    pub global_iterations: u64,
}

impl EpisodeRecord {
    pub fn mean_reward(&self) -> f64 {
        self.total_reward / self.steps.max(1) as f64
    }
}

#[derive(Debug)]
pub struct TrainingRun {
    pub kind: AgentKind,
    pub seed: u64,
    pub episodes: Vec<EpisodeRecord>,
    /// Learned networks, named for the checkpoint file.
    pub networks: Vec<(String, Mlp)>,
}

/// Independent child stream of `seed` for one component.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const STREAM_CHANNEL: u64 = 1;
pub const STREAM_POLICY: u64 = 2;
pub const STREAM_BUFFER: u64 = 3;
pub const STREAM_INIT: u64 = 4;

enum Learner {
    Sac(Box<SacAgent>),
    Ddpg(Box<DdpgAgent>),
    Random,
}

/// Runs `total_steps` environment steps for one agent and seed.
pub fn train(kind: AgentKind, scenario: &Scenario, seed: u64) -> Result<TrainingRun> {
    scenario.validate()?;
    let cfg = &scenario.agent;
    let mut env = Env::new(scenario, kind.mapping(), component_rng(seed, STREAM_CHANNEL));
    let mut policy_rng = component_rng(seed, STREAM_POLICY);
    let mut buffer_rng = component_rng(seed, STREAM_BUFFER);
    let mut init_rng = component_rng(seed, STREAM_INIT);
    let (od, ad) = (env.observation_dim(), env.action_dim());
    let mut learner = match kind {
        AgentKind::A2cEi | AgentKind::SacPlain => Learner::Sac(Box::new(SacAgent::new(od, ad, cfg, &mut init_rng)?)),
        AgentKind::Ddpg => Learner::Ddpg(Box::new(DdpgAgent::new(od, ad, cfg, &mut init_rng)?)),
        AgentKind::Random => Learner::Random,
    };
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity)?;
    let mut episodes = Vec::new();
    let mut obs = env.reset()?;
    let mut current = EpisodeRecord {
        episode: 0,
        steps: 0,
        total_reward: 0.0,
        sampling_j: 0.0,
        computation_j: 0.0,
        transmission_j: 0.0,
        p1: 0.0,
        p2: 0.0,
        p_budget: 0.0,
        completion_time_s: 0.0,
        global_iterations: 0,
    };

    for step in 0..cfg.total_steps {
        let warm = step < cfg.warmup_steps || matches!(learner, Learner::Random);
        // `a` lives in (-1, 1) and feeds the critics; `raw` feeds the environment.
        let (a, raw) = if warm {
            let a: Vec<f64> = (0..ad).map(|_| policy_rng.random_range(-TANH_EDGE..TANH_EDGE)).collect();
            let raw = to_raw(kind, &a, None);
            (a, raw)
        } else {
            match &learner {
                Learner::Sac(agent) => {
                    let (a, u) = agent.act(&obs, &mut policy_rng)?;
                    let raw = to_raw(kind, &a, Some(&u));
                    (a, raw)
                }
                Learner::Ddpg(agent) => {
                    let a = agent.act(&obs, &mut policy_rng)?;
                    let raw = to_raw(kind, &a, None);
                    (a, raw)
                }
                Learner::Random => unreachable!("random agent is always warm"),
            }
        };
        let out = env.step(&raw)?;
        if !out.reward.is_finite() {
            return Err(Error::Domain(format!("non-finite reward at step {step}")));
        }
        current.steps += 1;
        current.total_reward += out.reward;
        current.sampling_j += out.energy.sampling_j;
        current.computation_j += out.energy.computation_j;
        current.transmission_j += out.energy.transmission_j;
        current.p1 += out.terms.p1;
        current.p2 += out.terms.p2;
        current.p_budget += out.terms.p_budget;
        current.completion_time_s += out.completion_time_s;
        current.global_iterations = out.global_iterations;

        if !matches!(learner, Learner::Random) {
            buffer.push(Transition {
                observation: obs,
                action: a,
                reward: out.reward * cfg.reward_scale,
                next_observation: out.observation.clone(),
                done: out.done,
            });
        }
        obs = out.observation;

        if step + 1 >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            match &mut learner {
                Learner::Sac(agent) => {
                    let batch = buffer.sample(cfg.batch_size, &mut buffer_rng)?;
                    agent.update(&batch, &mut policy_rng)?;
                }
                Learner::Ddpg(agent) => {
                    let batch = buffer.sample(cfg.batch_size, &mut buffer_rng)?;
                    agent.update(&batch)?;
                }
                Learner::Random => {}
            }
        }

        if out.done {
            let n = current.steps as f64;
            current.completion_time_s /= n;
            let next_index = current.episode + 1;
            episodes.push(std::mem::replace(
                &mut current,
                EpisodeRecord {
                    episode: next_index,
                    steps: 0,
                    total_reward: 0.0,
                    sampling_j: 0.0,
                    computation_j: 0.0,
                    transmission_j: 0.0,
                    p1: 0.0,
                    p2: 0.0,
                    p_budget: 0.0,
                    completion_time_s: 0.0,
                    global_iterations: 0,
                },
            ));
            obs = env.reset()?;
        }
    }

    let networks = match learner {
        Learner::Sac(agent) => vec![
            ("actor".to_string(), agent.actor),
            ("critic_1".to_string(), agent.critics[0].clone()),
            ("critic_2".to_string(), agent.critics[1].clone()),
        ],
        Learner::Ddpg(agent) => vec![("actor".to_string(), agent.actor), ("critic".to_string(), agent.critic)],
        Learner::Random => Vec::new(),
    };
    Ok(TrainingRun {
        kind,
        seed,
        episodes,
        networks,
    })
}

/// Environment input for a tanh-space action.
///
/// The squashing map applies `sigmoid(x)` to box entries, and
/// `sigmoid(2·atanh a) = (1 + a)/2`, so `x = 2·atanh a` makes every box entry
/// affine in `a`. Clipping consumes `a` directly.
fn to_raw(kind: AgentKind, a: &[f64], pre_squash: Option<&[f64]>) -> Vec<f64> {
    match (kind, pre_squash) {
        (AgentKind::SacPlain, _) => a.to_vec(),
        (_, Some(u)) => u.iter().map(|u| 2.0 * u).collect(),
        (_, None) => a.iter().map(|&a| 2.0 * a.clamp(-TANH_EDGE, TANH_EDGE).atanh()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{reference_scenario};
    use crate::wireless::round_totals;

    fn small_scenario() -> Scenario {
        let mut s = reference_scenario(2);
        s.agent.hidden_layers = vec![8];
        s.agent.total_steps = 300;
        s.agent.warmup_steps = 50;
        s.agent.batch_size = 16;
        s.agent.episode_length = 20;
        s
    }

    #[test]
    fn reset_is_seeded_and_sized() {
        let s = small_scenario();
        let mut a = Env::new(&s, ActionMapping::Squash, component_rng(3, STREAM_CHANNEL));
        let mut b = Env::new(&s, ActionMapping::Squash, component_rng(3, STREAM_CHANNEL));
        let oa = a.reset().unwrap();
        assert_eq!(oa, b.reset().unwrap());
        assert_eq!(oa.len(), 2);
        assert!(a.users().iter().all(|u| u.channel_gain > 0.0));
    }

    #[test]
    fn step_info_matches_recomputation() {
        let s = small_scenario();
        let mut env = Env::new(&s, ActionMapping::Squash, component_rng(5, STREAM_CHANNEL));
        env.reset().unwrap();
        let users = env.users().to_vec();
        let raw: Vec<f64> = (0..env.action_dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = env.step(&raw).unwrap();
        let action = squash_action(&raw, env.action_space()).unwrap();
        assert_eq!(out.action, action);
        let iters = local_iterations(&s.learning).unwrap();
        let totals = round_totals(&s.network, &users, &action, iters).unwrap();
        let e = totals.energy();
        assert_eq!(out.energy, e);
        assert!((out.terms.energy_sum - (e.computation_j + e.transmission_j)).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_rewards() {
        let s = small_scenario();
        let run = |seed| {
            let mut env = Env::new(&s, ActionMapping::Squash, component_rng(seed, STREAM_CHANNEL));
            env.reset().unwrap();
            (0..5)
                .map(|i| env.step(&vec![0.1 * i as f64; env.action_dim()]).unwrap().reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn done_flags_partition_fixed_horizon() {
        let s = small_scenario();
        let mut env = Env::new(&s, ActionMapping::Squash, component_rng(1, STREAM_CHANNEL));
        env.reset().unwrap();
        let mut dones = Vec::new();
        for _ in 0..60 {
            let out = env.step(&vec![0.0; env.action_dim()]).unwrap();
            dones.push(out.done);
            if out.done {
                env.reset().unwrap();
            }
        }
        let ends: Vec<usize> = dones.iter().enumerate().filter(|(_, d)| **d).map(|(i, _)| i).collect();
        assert_eq!(ends, vec![19, 39, 59]);
    }

    #[test]
    fn sampling_control_horizon_follows_bound() {
        let mut s = small_scenario();
        s.agent.mode = ActionMode::SamplingControl;
        s.agent.max_episode_length = 100_000;
        let mut env = Env::new(&s, ActionMapping::Squash, component_rng(1, STREAM_CHANNEL));
        env.reset().unwrap();
        let raw = vec![0.0; env.action_dim()];
        let first = env.step(&raw).unwrap();
        let action = first.action.clone();
        let varpi = action.local_accuracy.unwrap();
        let expected = global_iterations(
            &s.learning.with_local_accuracy(varpi),
            &s.gap,
            action.mean_skip().unwrap(),
            s.network.sampling_interval_s,
            2,
        )
        .unwrap();
        assert_eq!(first.global_iterations, expected);
        let mut steps = 1;
        let mut done = first.done;
        while !done {
            done = env.step(&raw).unwrap().done;
            steps += 1;
        }
        assert_eq!(steps as u64, expected);
    }

    #[test]
    fn replay_buffer_is_bounded_fifo() {
        let mut b = ReplayBuffer::new(3).unwrap();
        let t = |r: f64| Transition {
            observation: vec![r],
            action: vec![r],
            reward: r,
            next_observation: vec![r],
            done: false,
        };
        let mut rng = component_rng(0, STREAM_BUFFER);
        assert!(b.sample(1, &mut rng).is_err());
        for i in 0..5 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        let mut rewards: Vec<f64> = b.items.iter().map(|x| x.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
        assert!(b.sample(4, &mut rng).is_err());
        assert_eq!(b.sample(3, &mut rng).unwrap().rewards.len(), 3);
    }

    #[test]
    fn replay_sampling_is_uniform() {
        let n = 10;
        let mut b = ReplayBuffer::new(n).unwrap();
        for i in 0..n {
            b.push(Transition {
                observation: vec![],
                action: vec![],
                reward: i as f64,
                next_observation: vec![],
                done: false,
            });
        }
        let mut rng = component_rng(7, STREAM_BUFFER);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for _ in 0..draws / n {
            for i in b.sample_indices(n, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom, 99.9% quantile
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }

    #[test]
    fn sac_target_edges() {
        assert_eq!(sac_target(1.5, true, 0.9, 10.0, 20.0, 0.2, -3.0), 1.5);
        assert_eq!(sac_target(1.5, false, 0.0, 10.0, 20.0, 0.2, -3.0), 1.5);
        assert!((sac_target(1.0, false, 0.5, 4.0, 2.0, 0.5, 2.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn batched_targets_match_scripted_recomputation() {
        let s = small_scenario();
        let mut rng = component_rng(11, STREAM_INIT);
        let agent = SacAgent::new(2, 8, &s.agent, &mut rng).unwrap();
        let rows = 5;
        let batch = Batch {
            observations: standard_normal(rows, 2, &mut rng),
            actions: standard_normal(rows, 8, &mut rng).mapv(f64::tanh),
            rewards: Array1::from_shape_fn(rows, |i| i as f64 - 2.0),
            next_observations: standard_normal(rows, 2, &mut rng),
            dones: Array1::from_shape_fn(rows, |i| if i == 3 { 1.0 } else { 0.0 }),
        };
        let mut r1 = component_rng(12, STREAM_POLICY);
        let y = agent.targets_for(&batch, &mut r1).unwrap();
        let mut r2 = component_rng(12, STREAM_POLICY);
        let noise = standard_normal(rows, 8, &mut r2);
        for i in 0..rows {
            let obs = batch.next_observations.row(i).to_vec();
            let head = agent.actor.forward(&obs).unwrap();
            let (mut a, mut logp) = (Vec::new(), 0.0);
            for j in 0..8 {
                let ls = head[8 + j].clamp(-20.0, 2.0);
                let u = head[j] + ls.exp() * noise[[i, j]];
                a.push(u.tanh());
                let gauss = -0.5 * noise[[i, j]].powi(2) - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
                logp += gauss - (1.0 - u.tanh().powi(2)).ln();
            }
            let x: Vec<f64> = obs.iter().chain(&a).copied().collect();
            let q0 = agent.targets[0].forward(&x).unwrap()[0];
            let q1 = agent.targets[1].forward(&x).unwrap()[0];
            let expect = if batch.dones[i] > 0.5 {
                batch.rewards[i]
            } else {
                batch.rewards[i] + 0.9 * (q0.min(q1) - 0.01 * logp)
            };
            assert!((y[i] - expect).abs() <= 1e-10 * expect.abs().max(1.0), "{} vs {expect}", y[i]);
        }
    }

    #[test]
    fn perfect_critic_has_zero_gradient() {
        let mut rng = component_rng(2, STREAM_INIT);
        let critic = Mlp::new(&[3, 6, 1], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let obs = standard_normal(4, 2, &mut rng);
        let act = standard_normal(4, 1, &mut rng);
        let q = critic.forward_batch(critic_input(obs.view(), act.view()).view()).unwrap();
        let y = q.output().column(0).to_owned();
        let (loss, grads) = critic_loss(&critic, obs.view(), act.view(), y.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flatten().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn actor_gradient_matches_finite_differences_on_toy_net() {
        let mut rng = component_rng(4, STREAM_INIT);
        let mut actor = Mlp::new(&[2, 5, 16], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let c0 = Mlp::new(&[10, 5, 1], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let c1 = Mlp::new(&[10, 5, 1], Activation::Softplus, Activation::Identity, &mut rng).unwrap();
        let obs = standard_normal(3, 2, &mut rng);
        let noise = standard_normal(3, 8, &mut rng);
        let (_, grads) = actor_loss(&actor, [&c0, &c1], obs.view(), noise.clone(), 0.2).unwrap();
        let analytic = grads.flatten();
        let theta = actor.flatten();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            actor.set_flat(&p).unwrap();
            let lp = actor_loss(&actor, [&c0, &c1], obs.view(), noise.clone(), 0.2).unwrap().0;
            p[i] -= 2.0 * h;
            actor.set_flat(&p).unwrap();
            let lm = actor_loss(&actor, [&c0, &c1], obs.view(), noise.clone(), 0.2).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-6 + 1e-4 * fd.abs(), "param {i}: {fd} vs {}", analytic[i]);
        }
    }

    #[test]
    fn polyak_geometric_approach() {
        let ones = Mlp::from_layers(
            vec![crate::approximator::Dense {
                weights: Array2::from_elem((1, 1), 1.0),
                bias: Array1::from_elem(1, 1.0),
            }],
            vec![Activation::Identity],
        )
        .unwrap();
        let mut target = ones.clone();
        target.set_flat(&[0.0, 0.0]).unwrap();
        for _ in 0..100 {
            polyak_update(&mut target, &ones, 0.995).unwrap();
        }
        let expected = 1.0 - 0.995f64.powi(100);
        assert!(target.flatten().iter().all(|v| (v - expected).abs() < 1e-12));
    }

    #[test]
    fn executed_actions_are_feasible_for_every_agent() {
        let s = small_scenario();
        for kind in [AgentKind::A2cEi, AgentKind::Ddpg, AgentKind::Random] {
            let mut env = Env::new(&s, kind.mapping(), component_rng(1, STREAM_CHANNEL));
            env.reset().unwrap();
            let mut rng = component_rng(1, STREAM_POLICY);
            for _ in 0..200 {
                let a: Vec<f64> = (0..env.action_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let out = env.step(&to_raw(kind, &a, None)).unwrap();
                assert!(env.action_space().violations(&out.action).is_empty());
                let total: f64 = out.action.bandwidth_hz.iter().sum();
                assert!((total - s.network.total_bandwidth_hz).abs() <= 1e-6 * s.network.total_bandwidth_hz);
            }
        }
    }

    #[test]
    fn training_is_reproducible_and_sized() {
        let s = small_scenario();
        for kind in AgentKind::ALL {
            let a = train(kind, &s, 21).unwrap();
            let b = train(kind, &s, 21).unwrap();
            assert_eq!(a.episodes, b.episodes, "{kind}");
            assert_eq!(a.episodes.len(), 300 / 20);
            assert!(a.episodes.iter().all(|e| e.steps == 20 && e.total_reward.is_finite()));
        }
    }

    #[test]
    fn random_agent_has_no_trend() {
        let mut s = small_scenario();
        s.agent.total_steps = 100 * 20;
        let run = train(AgentKind::Random, &s, 8).unwrap();
        let r: Vec<f64> = run.episodes.iter().map(EpisodeRecord::mean_reward).collect();
        let n = r.len() as f64;
        let xm = (n - 1.0) / 2.0;
        let ym = r.iter().sum::<f64>() / n;
        let sxx: f64 = (0..r.len()).map(|i| (i as f64 - xm).powi(2)).sum();
        let sxy: f64 = r.iter().enumerate().map(|(i, y)| (i as f64 - xm) * (y - ym)).sum();
        let slope = sxy / sxx;
        let resid: f64 = r
            .iter()
            .enumerate()
            .map(|(i, y)| (y - ym - slope * (i as f64 - xm)).powi(2))
            .sum::<f64>()
            / (n - 2.0);
        let se = (resid / sxx).sqrt();
        assert!((slope / se).abs() < 3.5, "t = {}", slope / se);
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut s = small_scenario();
        s.agent.polyak = 1.0;
        assert!(s.validate().is_err());
        let mut s = small_scenario();
        s.agent.reward.lambda_time = 1.0;
        assert!(s.validate().is_err());
        let mut s = small_scenario();
        s.agent.discount = 1.5;
        assert!(s.validate().is_err());
        assert_eq!("ddpg".parse::<AgentKind>().unwrap(), AgentKind::Ddpg);
        assert!("a2c".parse::<AgentKind>().is_err());
    }
}
