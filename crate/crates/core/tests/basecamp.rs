mod common;

use std::sync::Arc;

use common::load_fixture;
use pomdp_lab::basecamp::{learn, learn_traced, theoretical_params, HyperParams};
use pomdp_lab::policy::GeneralPolicy;
use pomdp_lab::simulator::{Environment, SimulatedEnv};
use pomdp_lab::Error;

fn small_params() -> HyperParams {
    let mut p = HyperParams::practical(1, 500, 20, 3, 0.1, 0.1);
    p.eval_episodes = Some(300);
    p
}

#[test]
fn sample_accounting_matches_environment() {
    let model = Arc::new(load_fixture("micro_c.json"));
    let env = SimulatedEnv::new(model.clone());
    let params = small_params();
    let (report, trace) = learn_traced(&env, &params, 4).unwrap();
    let h = model.horizon as u64;
    assert_eq!(report.samples.estimation_episodes, 3 * h * 500);
    assert_eq!(report.samples.evaluation_episodes, 3 * 300);
    assert_eq!(report.samples.total_episodes, env.episodes());
    assert_eq!(report.iterations.len(), 3);
    assert!((1..=3).contains(&report.best_iteration));
    let best = report.iterations[report.best_iteration - 1].candidate_value;
    assert!(report.iterations.iter().all(|r| r.candidate_value <= best));
    assert_eq!(trace.averaged.len(), 3);
    for p in &trace.averaged[0] {
        match &**p {
            GeneralPolicy::Mixture { children, .. } => {
                assert_eq!(children.len(), 1);
                assert_eq!(*children[0], GeneralPolicy::UniformRandom);
            }
            other => assert_eq!(*other, GeneralPolicy::UniformRandom),
        }
    }
}

#[test]
fn averaged_policies_grow_by_one_component_per_iteration() {
    let model = Arc::new(load_fixture("micro_c.json"));
    let env = SimulatedEnv::new(model.clone());
    let (_, trace) = learn_traced(&env, &small_params(), 5).unwrap();
    for (k, per_step) in trace.averaged.iter().enumerate().skip(1) {
        for (h, avg) in per_step.iter().enumerate() {
            match &**avg {
                GeneralPolicy::Mixture { weights, children } => {
                    assert_eq!(children.len(), k + 1);
                    assert!(weights.iter().all(|w| (w - 1.0 / (k + 1) as f64).abs() < 1e-12));
                    assert_eq!(children[k], trace.mixed[k - 1][h]);
                }
                other => panic!("iteration {}: expected a mixture, got {other:?}", k + 1),
            }
        }
    }
    // the tail mixture at step h averages spanner policies h..=H
    for (h, mixed) in trace.mixed[0].iter().enumerate() {
        match &**mixed {
            GeneralPolicy::Mixture { children, .. } => assert_eq!(children.len(), model.horizon - h),
            other => panic!("expected a mixture, got {other:?}"),
        }
    }
}

#[test]
fn learning_is_reproducible() {
    let model = Arc::new(load_fixture("micro_c.json"));
    let a = learn(&SimulatedEnv::new(model.clone()), &small_params(), 9).unwrap();
    let b = learn(&SimulatedEnv::new(model.clone()), &small_params(), 9).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn theoretical_scale_is_refused() {
    let model = Arc::new(load_fixture("micro_c.json"));
    let params = theoretical_params(0.1, 0.1, 0.5, 2, 2, 3, 4, 1.0);
    let err = learn(&SimulatedEnv::new(model), &params, 0).unwrap_err();
    assert!(matches!(err, Error::DeskScale(_) | Error::InvalidParams(_)), "{err}");
}
