//! Physical-layer and device models for one FL round.
//!
//! Everything here is SI: Hz, W, J, s, bits. The only non-SI quantity in the
//! configuration is the noise density, given in dBm/Hz and converted once by
//! [`NetworkConfig::noise_psd_w_per_hz`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constraints::FeasibleAction;
use crate::error::{Error, Result};

/// Static parameters of the cell and of the user devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub num_users: usize,
    pub total_bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub cell_radius_km: f64,
    /// Exclusion radius around the base station.
    #[serde(default = "default_min_distance")]
    pub min_distance_km: f64,
    pub shadow_sigma_db: f64,
    pub pathloss_a_db: f64,
    pub pathloss_b_db: f64,
    /// Uplink payload D0 (local model size).
    pub model_size_bits: f64,
    /// Per-round deadline T_max-round.
    pub max_round_time_s: f64,
    pub max_cpu_hz: f64,
    /// Lowest CPU frequency an allocation may pick; 0 means a tiny positive floor.
    #[serde(default)]
    pub min_cpu_hz: f64,
    pub max_power_w: f64,
    pub skip_min: u32,
    pub skip_max: u32,
    /// Effective switched capacitance of the device CPUs.
    pub kappa: f64,
    /// Energy drawn by the sensor per sampling opportunity.
    pub sample_energy_j: f64,
    /// Minimum time between two consecutive sensor readings.
    pub sampling_interval_s: f64,
    pub cycles_per_sample_min: f64,
    pub cycles_per_sample_max: f64,
    pub samples_per_user: u64,
}

fn default_min_distance() -> f64 {
    0.05
}

impl NetworkConfig {
    pub fn noise_psd_w_per_hz(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_per_hz)
    }

    pub fn path_loss_db(&self, distance_km: f64) -> Result<f64> {
        path_loss_db(self.pathloss_a_db, self.pathloss_b_db, distance_km)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("network.total_bandwidth_hz", self.total_bandwidth_hz),
            ("network.cell_radius_km", self.cell_radius_km),
            ("network.min_distance_km", self.min_distance_km),
            ("network.model_size_bits", self.model_size_bits),
            ("network.max_round_time_s", self.max_round_time_s),
            ("network.max_cpu_hz", self.max_cpu_hz),
            ("network.max_power_w", self.max_power_w),
            ("network.kappa", self.kappa),
            ("network.sampling_interval_s", self.sampling_interval_s),
            ("network.cycles_per_sample_min", self.cycles_per_sample_min),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        if self.num_users == 0 {
            return Err(Error::config("network.num_users", "must be >= 1"));
        }
        if self.min_distance_km >= self.cell_radius_km {
            return Err(Error::config(
                "network.min_distance_km",
                "must be smaller than cell_radius_km",
            ));
        }
        if !(self.shadow_sigma_db.is_finite() && self.shadow_sigma_db >= 0.0) {
            return Err(Error::config("network.shadow_sigma_db", "must be >= 0"));
        }
        if !(self.sample_energy_j.is_finite() && self.sample_energy_j >= 0.0) {
            return Err(Error::config("network.sample_energy_j", "must be >= 0"));
        }
        if self.skip_min > self.skip_max {
            return Err(Error::config("network.skip_min", "must not exceed skip_max"));
        }
        if self.skip_max == 0 {
            return Err(Error::config("network.skip_max", "must be > 0"));
        }
        if self.cycles_per_sample_max < self.cycles_per_sample_min {
            return Err(Error::config(
                "network.cycles_per_sample_max",
                "must be >= cycles_per_sample_min",
            ));
        }
        if !(self.min_cpu_hz >= 0.0 && self.min_cpu_hz < self.max_cpu_hz) {
            return Err(Error::config("network.min_cpu_hz", "must lie in [0, max_cpu_hz)"));
        }
        if self.samples_per_user == 0 {
            return Err(Error::config("network.samples_per_user", "must be >= 1"));
        }
        if !self.noise_psd_dbm_per_hz.is_finite() {
            return Err(Error::config("network.noise_psd_dbm_per_hz", "must be finite"));
        }
        Ok(())
    }
}

/// Per-user dynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub distance_km: f64,
    /// Linear power gain g_u.
    pub channel_gain: f64,
    pub cycles_per_sample: f64,
    pub num_samples: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub sampling_j: f64,
    pub computation_j: f64,
    pub transmission_j: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.sampling_j + self.computation_j + self.transmission_j
    }
}

impl std::ops::Add for EnergyBreakdown {
    type Output = EnergyBreakdown;

    fn add(self, rhs: Self) -> Self {
        EnergyBreakdown {
            sampling_j: self.sampling_j + rhs.sampling_j,
            computation_j: self.computation_j + rhs.computation_j,
            transmission_j: self.transmission_j + rhs.transmission_j,
        }
    }
}

impl std::iter::Sum for EnergyBreakdown {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(EnergyBreakdown::default(), |acc, e| acc + e)
    }
}

/// Per-user energies and completion times of one global round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTotals {
    pub per_user: Vec<EnergyBreakdown>,
    pub completion_time_s: Vec<f64>,
}

impl RoundTotals {
    pub fn energy(&self) -> EnergyBreakdown {
        self.per_user.iter().copied().sum()
    }

    pub fn max_completion_time(&self) -> f64 {
        self.completion_time_s.iter().copied().fold(0.0, f64::max)
    }

    /// Energy of all users over `global_iterations` identical rounds.
    pub fn training_energy(&self, global_iterations: u64) -> f64 {
        global_iterations as f64 * self.energy().total()
    }

    /// Per-user completion time over `global_iterations` identical rounds.
    pub fn training_completion_time(&self, global_iterations: u64) -> Vec<f64> {
        self.completion_time_s
            .iter()
            .map(|t| global_iterations as f64 * t)
            .collect()
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Log-distance path loss `a + b·log10(d)` with `d` in km.
pub fn path_loss_db(a_db: f64, b_db: f64, distance_km: f64) -> Result<f64> {
    if !(distance_km.is_finite() && distance_km > 0.0) {
        return Err(Error::Domain(format!(
            "path loss needs a positive distance, got {distance_km} km"
        )));
    }
    Ok(a_db + b_db * distance_km.log10())
}

/// Linear channel gain with log-normal shadowing of `shadow_sigma_db`.
pub fn draw_channel_gain<R: Rng + ?Sized>(
    cfg: &NetworkConfig,
    distance_km: f64,
    shadow_sigma_db: f64,
    rng: &mut R,
) -> Result<f64> {
    let loss = cfg.path_loss_db(distance_km)?;
    if !(shadow_sigma_db.is_finite() && shadow_sigma_db >= 0.0) {
        return Err(Error::Domain(format!(
            "shadowing deviation must be >= 0, got {shadow_sigma_db}"
        )));
    }
    let shadow = if shadow_sigma_db > 0.0 {
        Normal::new(0.0, shadow_sigma_db)
            .map_err(|e| Error::Domain(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(10f64.powf(-(loss + shadow) / 10.0))
}

/// Area-uniform position in the annulus `[min_distance, radius]`.
pub fn draw_distance<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> f64 {
    let r0 = cfg.min_distance_km;
    let r1 = cfg.cell_radius_km;
    let u: f64 = rng.random();
    (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt()
}

/// Fresh user population: positions, gains and CPU constants.
pub fn draw_users<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Vec<UserState>> {
    (0..cfg.num_users)
        .map(|_| {
            let distance_km = draw_distance(cfg, rng);
            let channel_gain = draw_channel_gain(cfg, distance_km, cfg.shadow_sigma_db, rng)?;
            let cycles_per_sample = if cfg.cycles_per_sample_max > cfg.cycles_per_sample_min {
                rng.random_range(cfg.cycles_per_sample_min..cfg.cycles_per_sample_max)
            } else {
                cfg.cycles_per_sample_min
            };
            Ok(UserState {
                distance_km,
                channel_gain,
                cycles_per_sample,
                num_samples: cfg.samples_per_user,
            })
        })
        .collect()
}

/// Shannon rate over `bandwidth_hz`. Zero bandwidth yields zero rate.
pub fn achievable_rate(bandwidth_hz: f64, gain: f64, power_w: f64, noise_psd: f64) -> f64 {
    if bandwidth_hz <= 0.0 {
        return 0.0;
    }
    bandwidth_hz * (1.0 + gain * power_w / (noise_psd * bandwidth_hz)).log2()
}

pub fn sampling_energy(skips: u32, sample_energy_j: f64) -> f64 {
    f64::from(skips) * sample_energy_j
}

/// Time and energy of `local_iterations` passes over the local dataset.
pub fn local_computation(
    local_iterations: u32,
    cycles_per_sample: f64,
    num_samples: u64,
    cpu_hz: f64,
    kappa: f64,
) -> Result<(f64, f64)> {
    if !(cpu_hz > 0.0) {
        return Err(Error::Domain(format!("CPU frequency must be > 0, got {cpu_hz}")));
    }
    let cycles = f64::from(local_iterations) * cycles_per_sample * num_samples as f64;
    Ok((cycles / cpu_hz, kappa * cycles * cpu_hz * cpu_hz))
}

pub fn transmission_energy(power_w: f64, transmit_time_s: f64) -> f64 {
    power_w * transmit_time_s
}

/// Energies and completion time of every user for one round under `action`.
///
/// Sampling energy uses the action's per-user skip counts, or `skip_min`
/// when the action does not control sampling.
pub fn round_totals(
    cfg: &NetworkConfig,
    users: &[UserState],
    action: &FeasibleAction,
    local_iterations: u32,
) -> Result<RoundTotals> {
    let n = users.len();
    action.check_len(n)?;
    let mut per_user = Vec::with_capacity(n);
    let mut completion_time_s = Vec::with_capacity(n);
    for (u, user) in users.iter().enumerate() {
        let (t_comp, e_comp) = local_computation(
            local_iterations,
            user.cycles_per_sample,
            user.num_samples,
            action.cpu_hz[u],
            cfg.kappa,
        )?;
        let skips = action.skip(u).unwrap_or(cfg.skip_min);
        per_user.push(EnergyBreakdown {
            sampling_j: sampling_energy(skips, cfg.sample_energy_j),
            computation_j: e_comp,
            transmission_j: transmission_energy(action.power_w[u], action.transmit_time_s[u]),
        });
        completion_time_s.push(t_comp + action.transmit_time_s[u]);
    }
    Ok(RoundTotals {
        per_user,
        completion_time_s,
    })
}
