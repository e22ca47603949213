//! Generalization-gap model and the analytic iteration bounds.
//!
//! The sampling process enters the convergence analysis through the
//! information usage between ideally and actually sampled data, which decays
//! exponentially with the time `k·τ` between two recorded samples. That decay
//! feeds the gap statement Ψ, and Ψ sets the per-round contraction of the
//! global loss gap and therefore the number of global rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic constants of the federated optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningParams {
    /// Smoothness constant L.
    pub l_smooth: f64,
    /// Strong-convexity constant μ.
    pub mu: f64,
    /// Aggregation coefficient ξ of the local surrogate problem.
    pub xi: f64,
    /// Local gradient step δ.
    pub step_size: f64,
    /// Local accuracy ϖ.
    pub local_accuracy: f64,
    /// Global accuracy ϱ.
    pub global_accuracy: f64,
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::config("learning.mu", "must be > 0"));
        }
        if !(self.l_smooth.is_finite() && self.l_smooth >= self.mu) {
            return Err(Error::config(
                "learning.l_smooth",
                format!("must satisfy L >= mu (L={}, mu={})", self.l_smooth, self.mu),
            ));
        }
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(Error::config("learning.xi", "must be > 0"));
        }
        if !(self.local_accuracy > 0.0 && self.local_accuracy < 1.0) {
            return Err(Error::config("learning.local_accuracy", "must lie in (0, 1)"));
        }
        if !(self.global_accuracy > 0.0 && self.global_accuracy < 1.0) {
            return Err(Error::config("learning.global_accuracy", "must lie in (0, 1)"));
        }
        if !(self.step_size.is_finite() && self.local_rate() > 0.0) {
            return Err(Error::config(
                "learning.step_size",
                format!(
                    "(2 - L*delta)*delta*mu must be > 0, got {}",
                    self.local_rate()
                ),
            ));
        }
        Ok(())
    }

    /// `(2 − Lδ)·δ·μ`, the per-iteration rate of the local solver.
    pub fn local_rate(&self) -> f64 {
        (2.0 - self.l_smooth * self.step_size) * self.step_size * self.mu
    }

    pub fn with_local_accuracy(&self, local_accuracy: f64) -> Self {
        LearningParams {
            local_accuracy,
            ..self.clone()
        }
    }
}

fn one_bit() -> f64 {
    1.0
}

/// Constants of the generalization-gap model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapParams {
    /// Information-usage scale c0 (nats).
    pub c0: f64,
    /// Decay rate c1 (1/s).
    pub c1: f64,
    /// Loss variance σ².
    pub sigma2: f64,
    /// Dataset entropy H(Z), in bits.
    #[serde(default = "one_bit")]
    pub entropy_z_bits: f64,
    /// Entropy H(p(z|Z)) in nats. Defaults to `c0`, which makes Ψ vanish at k = 0.
    #[serde(default)]
    pub entropy_pz_nats: Option<f64>,
    /// Per-user sample counts m_u. Filled from the network when empty.
    #[serde(default)]
    pub sample_counts: Vec<u64>,
}

impl GapParams {
    pub fn entropy_pz(&self) -> f64 {
        self.entropy_pz_nats.unwrap_or(self.c0)
    }

    pub fn total_samples(&self) -> u64 {
        self.sample_counts.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(Error::config("gap.c0", "must be > 0"));
        }
        if !(self.c1.is_finite() && self.c1 > 0.0) {
            return Err(Error::config("gap.c1", "must be > 0"));
        }
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::config("gap.sigma2", "must be > 0"));
        }
        if !self.entropy_z_bits.is_finite() {
            return Err(Error::config("gap.entropy_z_bits", "must be finite"));
        }
        let h = self.entropy_pz();
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::config("gap.entropy_pz_nats", "must be >= 0"));
        }
        if h < self.c0 {
            return Err(Error::config(
                "gap.entropy_pz_nats",
                format!("must be >= c0 so that psi is real at k = 0 (H={h}, c0={})", self.c0),
            ));
        }
        Ok(())
    }
}

/// Modelled information usage `c0·exp(−c1·k·τ)`.
pub fn information_usage(c0: f64, c1: f64, skips: f64, tau: f64) -> f64 {
    c0 * (-c1 * skips * tau).exp()
}

/// Local generalization-gap bound `sqrt(2σ²/m_u)·sqrt(c0)·exp(−c1·k·τ/2)`.
pub fn local_gap_bound(gap: &GapParams, user: usize, skips: f64, tau: f64) -> Result<f64> {
    let m_u = *gap.sample_counts.get(user).ok_or(Error::Shape {
        context: "local_gap_bound user index",
        expected: gap.sample_counts.len(),
        actual: user,
    })?;
    if m_u == 0 {
        return Err(Error::Domain(format!("user {user} has no samples")));
    }
    Ok((2.0 * gap.sigma2 / m_u as f64).sqrt() * gap.c0.sqrt() * (-gap.c1 * skips * tau / 2.0).exp())
}

/// Global gap bound: the per-user bounds summed over all users.
pub fn global_gap_bound(gap: &GapParams, per_user: &[(f64, f64)]) -> Result<f64> {
    if per_user.is_empty() {
        return Err(Error::Domain("global gap needs at least one user".into()));
    }
    if per_user.len() != gap.sample_counts.len() {
        return Err(Error::Shape {
            context: "global_gap_bound users",
            expected: gap.sample_counts.len(),
            actual: per_user.len(),
        });
    }
    per_user
        .iter()
        .enumerate()
        .map(|(u, &(k, tau))| local_gap_bound(gap, u, k, tau))
        .sum()
}

/// Gap statement `Ψ = 2^{H(Z)}·sqrt(2·[H(p(z|Z)) − I])`.
pub fn psi(gap: &GapParams, skips: f64, tau: f64) -> Result<f64> {
    let info = information_usage(gap.c0, gap.c1, skips, tau);
    let h = gap.entropy_pz();
    let radicand = h - info;
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "entropy H(p(z|Z))={h} is below the information usage {info}"
        )));
    }
    Ok(2f64.powf(gap.entropy_z_bits) * (2.0 * radicand).sqrt())
}

/// Real-valued local iteration bound `2/((2−Lδ)δμ)·log2(1/ϖ)`.
pub fn local_iteration_bound(params: &LearningParams) -> Result<f64> {
    let rate = params.local_rate();
    if !(rate > 0.0) {
        return Err(Error::config(
            "learning.step_size",
            format!("(2 - L*delta)*delta*mu must be > 0, got {rate}"),
        ));
    }
    if !(params.local_accuracy > 0.0 && params.local_accuracy <= 1.0) {
        return Err(Error::Domain(format!(
            "local accuracy must lie in (0, 1], got {}",
            params.local_accuracy
        )));
    }
    Ok(2.0 / rate * (1.0 / params.local_accuracy).log2())
}

/// Local iterations I_u, rounded up and at least one.
pub fn local_iterations(params: &LearningParams) -> Result<u32> {
    let bound = local_iteration_bound(params)?;
    Ok((bound.ceil() as u32).max(1))
}

/// `ξ(L+2)Ψ + ξL/U − ϖμ`; must be positive for the bound to hold.
pub fn contraction_denominator(params: &LearningParams, psi: f64, users: usize) -> Result<f64> {
    if users == 0 {
        return Err(Error::Domain("number of users must be >= 1".into()));
    }
    let LearningParams {
        l_smooth: l,
        mu,
        xi,
        local_accuracy: varpi,
        ..
    } = *params;
    let denominator = xi * (l + 2.0) * psi + xi * l / users as f64 - varpi * mu;
    if !(denominator > 0.0) {
        return Err(Error::Divergent {
            denominator,
            xi,
            l_smooth: l,
            psi,
            users,
            local_accuracy: varpi,
            mu,
        });
    }
    Ok(denominator)
}

/// Real-valued global iteration bound
/// `ln(1/ϱ)·2UL²ξ / [ξ(L+2)Ψ + ξL/U − ϖμ]`.
pub fn global_iteration_bound(
    params: &LearningParams,
    gap: &GapParams,
    skips: f64,
    tau: f64,
    users: usize,
) -> Result<f64> {
    let varrho = params.global_accuracy;
    if !(varrho > 0.0 && varrho <= 1.0) {
        return Err(Error::Domain(format!(
            "global accuracy must lie in (0, 1], got {varrho}"
        )));
    }
    let psi = psi(gap, skips, tau)?;
    let denominator = contraction_denominator(params, psi, users)?;
    let l = params.l_smooth;
    Ok((1.0 / varrho).ln() * 2.0 * users as f64 * l * l * params.xi / denominator)
}

/// Global rounds I_glob, the ceiling of [`global_iteration_bound`].
pub fn global_iterations(
    params: &LearningParams,
    gap: &GapParams,
    skips: f64,
    tau: f64,
    users: usize,
) -> Result<u64> {
    let bound = global_iteration_bound(params, gap, skips, tau, users)?;
    Ok(bound.ceil() as u64)
}

/// Per-round contraction `1 − denominator/(2UL²ξ)` of the loss gap.
pub fn contraction_factor(
    params: &LearningParams,
    gap: &GapParams,
    skips: f64,
    tau: f64,
    users: usize,
) -> Result<f64> {
    let psi = psi(gap, skips, tau)?;
    let denominator = contraction_denominator(params, psi, users)?;
    let l = params.l_smooth;
    let factor = 1.0 - denominator / (2.0 * users as f64 * l * l * params.xi);
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Domain(format!(
            "contraction factor {factor} outside (0, 1): the per-round decrease exceeds the gap"
        )));
    }
    Ok(factor)
}
