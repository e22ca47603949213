//! Property suites over the bound, accounting and environment invariants.

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use scfl_core::agents::{component_rng, ActionMapping, Env, STREAM_CHANNEL};
use scfl_core::constraints::{squash_action, ActionMode, ActionSpace};
use scfl_core::convergence::{
    contraction_factor, global_iterations, information_usage, local_gap_bound, psi, GapParams, LearningParams,
};
use scfl_core::presets::{reference_network, reference_scenario};
use scfl_core::wireless::{draw_distance, draw_users, round_totals};

fn gap(c0: f64, c1: f64, headroom: f64, hz: f64, m: u64) -> GapParams {
    GapParams {
        c0,
        c1,
        sigma2: 1.0,
        entropy_z_bits: hz,
        entropy_pz_nats: Some(c0 + headroom),
        sample_counts: vec![m],
    }
}

fn learning(l: f64, mu_frac: f64, varpi: f64, varrho: f64) -> LearningParams {
    LearningParams {
        l_smooth: l,
        mu: mu_frac * l,
        xi: 1.0,
        step_size: 1.0 / l,
        local_accuracy: varpi,
        global_accuracy: varrho,
    }
}

proptest! {
    #[test]
    fn psi_is_nonnegative_and_zero_only_at_full_usage(
        c0 in 0.1f64..10.0, c1 in 0.1f64..5.0, headroom in 0.0f64..3.0, k in 0.0f64..100.0, tau in 0.001f64..0.1,
    ) {
        let g = gap(c0, c1, headroom, 1.0, 1000);
        let v = psi(&g, k, tau).unwrap();
        prop_assert!(v >= 0.0);
        let usage = information_usage(c0, c1, k, tau);
        if v == 0.0 {
            prop_assert!((usage - g.entropy_pz()).abs() <= 1e-12 * usage.max(1.0));
        }
    }

    #[test]
    fn local_gap_scales_as_inverse_sqrt_samples(m in 1u64..1_000_000, k in 0.0f64..100.0) {
        let small = local_gap_bound(&gap(2.0, 1.0, 1.0, 1.0, m), 0, k, 0.01).unwrap();
        let large = local_gap_bound(&gap(2.0, 1.0, 1.0, 1.0, 4 * m), 0, k, 0.01).unwrap();
        prop_assert!((small / large - 2.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_reaches_global_accuracy_within_the_bound(
        l in 50.0f64..200.0, mu_frac in 0.1f64..1.0, varpi in 0.01f64..0.9, varrho in 0.001f64..0.9,
        users in 1usize..200, k in 0.0f64..100.0, headroom in 0.01f64..3.0,
    ) {
        let p = learning(l, mu_frac, varpi, varrho);
        let g = gap(3.0, 1.5, headroom, 2.0, 1000);
        match (contraction_factor(&p, &g, k, 0.01, users), global_iterations(&p, &g, k, 0.01, users)) {
            (Ok(rho), Ok(n)) => {
                prop_assert!(rho > 0.0 && rho < 1.0);
                prop_assert!(rho.powf(n as f64) <= varrho * (1.0 + 1e-12));
            }
            (Err(a), Err(b)) => prop_assert!(a.is_divergent() && b.is_divergent()),
            // Shrinkage larger than the whole gap: the factor leaves (0, 1).
            (Err(a), Ok(_)) => prop_assert!(!a.is_divergent()),
            (Ok(rho), Err(e)) => prop_assert!(false, "factor {rho} but bound failed: {e}"),
        }
    }

    #[test]
    fn round_energy_is_the_sum_of_user_terms(seed in 0u64..1000, users in 1usize..10) {
        let cfg = reference_network(users);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = draw_users(&cfg, &mut rng).unwrap();
        let space = ActionSpace::new(&cfg, ActionMode::PaperStrict, (0.05, 0.95));
        let raw: Vec<f64> = (0..space.dim()).map(|i| ((seed + i as u64) as f64 * 0.7).sin() * 3.0).collect();
        let action = squash_action(&raw, &space).unwrap();
        let totals = round_totals(&cfg, &state, &action, 3).unwrap();
        let e = totals.energy();
        let by_user: f64 = totals.per_user.iter().map(|b| b.total()).sum();
        assert_relative_eq!(e.total(), by_user, max_relative = 1e-12);
        assert_relative_eq!(totals.training_energy(17), 17.0 * e.total(), max_relative = 1e-12);
        prop_assert!(totals.per_user.iter().all(|b| b.sampling_j >= 0.0 && b.computation_j >= 0.0 && b.transmission_j >= 0.0));
    }
}

/// Kolmogorov-Smirnov distance between a sample and a reference CDF.
fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn reset_gains_follow_path_loss_with_lognormal_shadowing() {
    let scenario = reference_scenario(4);
    let cfg = &scenario.network;
    let mut env = Env::new(&scenario, ActionMapping::Squash, component_rng(11, STREAM_CHANNEL));
    let mut shadow = Vec::new();
    for _ in 0..2500 {
        env.reset().unwrap();
        for u in env.users() {
            let loss = cfg.path_loss_db(u.distance_km).unwrap();
            shadow.push(-10.0 * u.channel_gain.log10() - loss);
        }
    }
    let reference = Normal::new(0.0, cfg.shadow_sigma_db).unwrap();
    let d = ks_distance(shadow.clone(), |x| reference.cdf(x));
    // 1% critical value of the one-sample KS statistic.
    let critical = 1.63 / (shadow.len() as f64).sqrt();
    assert!(d < critical, "KS distance {d} >= {critical}");
}

#[test]
fn distances_are_area_uniform_on_the_annulus() {
    let cfg = reference_network(1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (r0, r1) = (cfg.min_distance_km, cfg.cell_radius_km);
    let sample: Vec<f64> = (0..20_000).map(|_| draw_distance(&cfg, &mut rng)).collect();
    let d = ks_distance(sample.clone(), |r| ((r * r - r0 * r0) / (r1 * r1 - r0 * r0)).clamp(0.0, 1.0));
    assert!(d < 1.63 / (sample.len() as f64).sqrt(), "KS distance {d}");
    let mean = sample.iter().sum::<f64>() / sample.len() as f64;
    let expected = 2.0 / 3.0 * (r1.powi(3) - r0.powi(3)) / (r1 * r1 - r0 * r0);
    assert_relative_eq!(mean, expected, max_relative = 0.01);
}
