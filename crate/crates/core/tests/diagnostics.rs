mod common;

use std::sync::Arc;

use common::load_fixture;
use pomdp_lab::diagnostics::{
    contraction_profile, obs_visitation, pseudo_inverse, state_visitation, truncated_pomdp, underexplored_set,
    zlow_set, z_visitation,
};
use pomdp_lab::fixtures::random_zpolicy;
use pomdp_lab::margin::{observability_margin, observability_margin_with, MarginMode};
use pomdp_lab::policy::GeneralPolicy;
use pomdp_lab::seed::SeedSpec;
use pomdp_lab::simulator::{empirical_value, rollout_batch};
use pomdp_lab::{PomdpModel, ZSpace};
use rand::Rng;

fn random_policies(model: &PomdpModel, seed: u64, n: usize) -> Vec<Arc<GeneralPolicy>> {
    let mut rng = SeedSpec::new(seed, "diag", 0).stream("policies");
    let space = ZSpace::new(1, model.n_actions(), model.base_obs()).unwrap();
    (0..n)
        .map(|_| Arc::new(GeneralPolicy::atom(random_zpolicy(&mut rng, space, model.horizon))))
        .collect()
}

#[test]
fn obs_visitation_is_emission_of_state_visitation() {
    let model = load_fixture("noisy_s3.json");
    for pi in random_policies(&model, 1, 5) {
        for h in 2..=model.horizon {
            let d_s = state_visitation(&model, &pi, h).unwrap();
            let d_o = obs_visitation(&model, &pi, h).unwrap();
            for (x, y) in model.emit(h, &d_s).iter().zip(&d_o) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn truncation_only_removes_mass() {
    for name in ["micro_c.json", "noisy_s3.json"] {
        let model = load_fixture(name);
        let explore = random_policies(&model, 2, model.horizon);
        let bar = truncated_pomdp(&model, &explore, 0.2, model.horizon, 1).unwrap();
        let sink = model.sink_state().unwrap();
        for pi in random_policies(&model, 3, 10) {
            let mut last_sink = 0.0;
            for h in 1..=model.horizon {
                let d = state_visitation(&model, &pi, h).unwrap();
                let dbar = state_visitation(&bar, &pi, h).unwrap();
                for s in 0..model.base_states() {
                    assert!(dbar[s] <= d[s] + 1e-10, "{name} h={h} s={s}");
                }
                assert!(dbar[sink] >= last_sink - 1e-12);
                last_sink = dbar[sink];
            }
        }
    }
}

#[test]
fn truncated_states_stay_above_threshold_when_reached() {
    let model = load_fixture("noisy_s3.json");
    let l = 1;
    let phi = 0.15;
    let explore = random_policies(&model, 4, model.horizon);
    let bar = truncated_pomdp(&model, &explore, phi, model.horizon, l).unwrap();
    for hh in (l + 1)..=model.horizon {
        let t = hh - l;
        let d = state_visitation(&bar, &explore[hh - 1], t).unwrap();
        for s in 0..model.base_states() {
            assert!(d[s] == 0.0 || d[s] >= phi - 1e-12, "h''={hh} s={s}: {}", d[s]);
        }
    }
}

#[test]
fn low_sets_are_thresholds() {
    let model = load_fixture("micro_c.json");
    let pi = GeneralPolicy::UniformRandom;
    let und = underexplored_set(&model, &pi, 0.4, 3).unwrap();
    let d = state_visitation(&model, &pi, 3).unwrap();
    for s in 0..model.base_states() {
        assert_eq!(und.contains(&s), d[s] < 0.4);
    }
    let zlow = zlow_set(&model, &pi, 0.05, 3, 1).unwrap();
    let dz = z_visitation(&model, &pi, 3, 1).unwrap();
    let space = ZSpace::new(1, model.n_actions(), model.base_obs()).unwrap();
    for z in space.windows_at(3) {
        assert_eq!(zlow.contains(&z), dz.get(&z).copied().unwrap_or(0.0) <= 0.05);
    }
}

#[test]
fn pseudo_inverse_norm_is_bounded_by_margin() {
    for name in ["micro_a.json", "micro_b.json", "noisy_s3.json", "contraction_s3.json"] {
        let model = load_fixture(name);
        let s = model.base_states();
        for h in 2..=model.horizon {
            let gamma = observability_margin(&model, h).unwrap().gamma;
            let ob: Vec<Vec<f64>> = model.emission_matrix(h)[..model.base_obs()]
                .iter()
                .map(|r| r[..s].to_vec())
                .collect();
            let pinv = pseudo_inverse(&ob);
            let norm = (0..pinv.ncols())
                .map(|j| (0..pinv.nrows()).map(|i| pinv[(i, j)].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            assert!(norm <= (s as f64).sqrt() / gamma + 1e-9, "{name} h={h}: {norm}");
        }
    }
}

#[test]
fn margin_is_sound_and_attained() {
    let model = load_fixture("micro_b.json");
    let mut rng = SeedSpec::new(9, "margin", 0).stream("x");
    let s = model.base_states();
    for h in 2..=model.horizon {
        let m = observability_margin(&model, h).unwrap();
        let ob = model.emission_matrix(h);
        let apply = |x: &[f64]| -> f64 {
            ob.iter().map(|row| row[..s].iter().zip(x).map(|(a, b)| a * b).sum::<f64>().abs()).sum()
        };
        let w = m.witness.clone().unwrap();
        assert!((w.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((apply(&w) - m.gamma).abs() < 1e-7);
        for _ in 0..500 {
            let mut x: Vec<f64> = (0..s).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mean = x.iter().sum::<f64>() / s as f64;
            x.iter_mut().for_each(|v| *v -= mean);
            let n1: f64 = x.iter().map(|v| v.abs()).sum();
            assert!(apply(&x) >= m.gamma * n1 - 1e-9);
        }
        let lower = observability_margin_with(&model, h, MarginMode::SpectralLowerBound).unwrap();
        assert!(lower.gamma <= m.gamma + 1e-12);
    }
}

#[test]
fn contraction_error_shrinks_with_window() {
    let model = load_fixture("contraction_s3.json");
    let profile = contraction_profile(&model, &GeneralPolicy::UniformRandom, &model.b1, 8, &[1, 2, 4, 6], 2000, 1).unwrap();
    for w in profile.windows(2) {
        let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        assert!(w[1].mean_error <= w[0].mean_error + slack, "{profile:?}");
    }
    assert!(profile[3].mean_error <= profile[1].mean_error);
}

#[test]
fn simulated_value_agrees_with_exact_value() {
    let model = load_fixture("noisy_s3.json");
    let pi = random_policies(&model, 5, 1).remove(0);
    let exact = pomdp_lab::diagnostics::exact_policy_value(&model, &pi).unwrap();
    let n = 40_000;
    let mc = empirical_value(&model, &pi, n, 1, "mc").unwrap();
    // rewards are in [0, 1], so H - 1 bounds the per-episode spread
    let se = (model.horizon - 1) as f64 / (n as f64).sqrt();
    assert!((mc - exact).abs() <= 4.0 * se, "{mc} vs {exact}");
    let sink = model.sink_state().unwrap();
    for t in rollout_batch(&model, &pi, 200, 2, "sinks").unwrap() {
        assert!(t.states.iter().all(|&s| s != sink));
        assert!(t.observations.iter().all(|&o| o < model.base_obs()));
    }
}
