//! Reference scenario builders.
//!
//! Network values: 1 km cell, 128.1 + 37.6·log10(d) path loss, 8 dB
//! shadowing, −174 dBm/Hz noise, 20 MHz, κ = 1e-28, 28 MB model, up to 100
//! skipped samples. The per-round deadline, sample energy and local dataset
//! size are set so that every energy term matters at U = 5.

use crate::agents::{AgentConfig, DdpgConfig, Scenario};
use crate::approximator::Activation;
use crate::constraints::{ActionMode, RewardWeights};
use crate::convergence::{GapParams, LearningParams};
use crate::wireless::NetworkConfig;

/// 28 MB uplink payload.
pub const MODEL_SIZE_BITS: f64 = 28.0 * 8.0 * 1e6;

/// Information-usage constants fitted so that, at `τ = 0.01 s` and `U = 10`,
/// the global bound falls from 1000 rounds at k = 0 to 100 rounds at k = 100.
pub const REFERENCE_C0: f64 = 4.952_970_821_411_266;
pub const REFERENCE_C1: f64 = 1.652_046_222_816_999;

pub fn reference_network(num_users: usize) -> NetworkConfig {
    NetworkConfig {
        num_users,
        total_bandwidth_hz: 20e6,
        noise_psd_dbm_per_hz: -174.0,
        cell_radius_km: 1.0,
        min_distance_km: 0.05,
        shadow_sigma_db: 8.0,
        pathloss_a_db: 128.1,
        pathloss_b_db: 37.6,
        model_size_bits: MODEL_SIZE_BITS,
        max_round_time_s: 30.0,
        max_cpu_hz: 2e9,
        min_cpu_hz: 1e8,
        max_power_w: 10.0,
        skip_min: 0,
        skip_max: 100,
        kappa: 1e-28,
        sample_energy_j: 0.05,
        sampling_interval_s: 0.01,
        cycles_per_sample_min: 1e4,
        cycles_per_sample_max: 3e4,
        samples_per_user: 100_000,
    }
}

pub fn reference_learning() -> LearningParams {
    LearningParams {
        l_smooth: 100.0,
        mu: 100.0,
        xi: 1.0,
        step_size: 0.005,
        local_accuracy: 0.5,
        global_accuracy: 0.1,
    }
}

pub fn reference_gap(num_users: usize) -> GapParams {
    GapParams {
        c0: REFERENCE_C0,
        c1: REFERENCE_C1,
        sigma2: 1.0,
        entropy_z_bits: 4.0,
        entropy_pz_nats: Some(5.0),
        sample_counts: vec![100_000; num_users],
    }
}

pub fn reference_agent() -> AgentConfig {
    AgentConfig {
        mode: ActionMode::PaperStrict,
        discount: 0.9,
        temperature: 0.01,
        polyak: 0.995,
        actor_learn_rate: 3e-3,
        critic_learn_rate: 3e-3,
        batch_size: 64,
        buffer_capacity: 100_000,
        hidden_layers: vec![64, 64],
        hidden_activation: Activation::Softplus,
        episode_length: 200,
        max_episode_length: 2000,
        total_steps: 20_000,
        warmup_steps: 1000,
        reward_scale: 0.01,
        reward: RewardWeights {
            lambda_time: -10.0,
            lambda_data: -1e-5,
            lambda_budget: -1e-5,
            reward_includes_sampling: false,
        },
        local_accuracy_range: (0.05, 0.95),
        ddpg: DdpgConfig::default(),
    }
}

/// The reference learning scenario with `num_users` users.
pub fn reference_scenario(num_users: usize) -> Scenario {
    Scenario {
        network: reference_network(num_users),
        learning: reference_learning(),
        gap: reference_gap(num_users),
        agent: reference_agent(),
    }
}
