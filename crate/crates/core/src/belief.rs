//! Belief states: exact filtering and windowed approximate beliefs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::History;
use crate::model::PomdpModel;

/// Normalizers below this are treated as zero-probability events.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

/// A distribution over the sink-extended state set at a given step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub step: usize,
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn new(step: usize, probs: Vec<f64>) -> Self {
        Belief { step, probs }
    }

    /// All mass on the sink state: the value used whenever a belief is
    /// undefined.
    pub fn sink(model: &PomdpModel, step: usize) -> Self {
        let mut probs = vec![0.0; model.n_states()];
        let sink = model
            .sink_state()
            .expect("belief computations require a sink-extended model");
        probs[sink] = 1.0;
        Belief { step, probs }
    }

    pub fn initial(model: &PomdpModel) -> Self {
        Belief {
            step: 1,
            probs: model.b1.clone(),
        }
    }

    pub fn l1_distance(&self, other: &Belief) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

/// Bayes update `U_h(b; a, o)`: propagate through `T_h(a)`, weight by
/// `Ob_{h+1}(o | ·)` and normalize. Returns the sink belief when the
/// observation has zero probability.
pub fn belief_update(model: &PomdpModel, belief: &Belief, action: usize, obs: usize) -> Result<Belief> {
    let h = belief.step;
    model.check_step(h, 1, model.horizon.saturating_sub(1), "belief_update")?;
    if action >= model.n_actions() {
        return Err(Error::Index(format!("action {action}")));
    }
    if obs >= model.n_obs() {
        return Err(Error::Index(format!("observation {obs}")));
    }
    if belief.probs.len() != model.n_states() {
        return Err(Error::Index(format!(
            "belief has {} entries, model has {} states",
            belief.probs.len(),
            model.n_states()
        )));
    }
    let predicted = model.propagate(h, action, &belief.probs);
    let mut post: Vec<f64> = predicted
        .iter()
        .enumerate()
        .map(|(s, p)| model.ob(h + 1, obs, s) * p)
        .collect();
    let z: f64 = post.iter().sum();
    if !(z > NORMALIZER_FLOOR) {
        return Ok(Belief::sink(model, h + 1));
    }
    post.iter_mut().for_each(|p| *p /= z);
    Ok(Belief::new(h + 1, post))
}

/// Exact belief `b_h` after the given history, by chained updates from `b1`.
pub fn exact_belief(model: &PomdpModel, history: &History) -> Result<Belief> {
    if history.step() > model.horizon {
        return Err(Error::Index(format!(
            "history reaches step {} beyond horizon {}",
            history.step(),
            model.horizon
        )));
    }
    let mut b = Belief::initial(model);
    for (a, o) in history.pairs() {
        b = belief_update(model, &b, a, o)?;
    }
    Ok(b)
}

/// Approximate belief `b̂_h(window; prior)`.
///
/// `window` lists `(a_t, o_{t+1})` pairs ending at step `h`; only the last
/// `min(L, h - 1)` pairs are used. When `h - L > 1` the update chain starts
/// from `prior` at step `h - L`, otherwise from `b1` at step 1, in which case
/// the result is the exact belief.
pub fn approx_belief(
    model: &PomdpModel,
    prior: &[f64],
    window: &[(usize, usize)],
    h: usize,
    l: usize,
) -> Result<Belief> {
    model.check_step(h, 1, model.horizon, "approx_belief")?;
    let used = l.min(h - 1);
    if window.len() < used {
        return Err(Error::Index(format!(
            "window has {} pairs, step {h} with L = {l} needs {used}",
            window.len()
        )));
    }
    let start_step = h - used;
    let mut b = if start_step > 1 {
        if prior.len() != model.n_states() {
            return Err(Error::Index(format!(
                "prior has {} entries, model has {} states",
                prior.len(),
                model.n_states()
            )));
        }
        Belief::new(start_step, prior.to_vec())
    } else {
        Belief::initial(model)
    };
    for &(a, o) in &window[window.len() - used..] {
        b = belief_update(model, &b, a, o)?;
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extend_with_sinks, ModelFile};

    fn model(
        s: usize,
        horizon: usize,
        t: Vec<Vec<Vec<f64>>>,
        ob: Vec<Vec<f64>>,
        b1: Vec<f64>,
    ) -> PomdpModel {
        let o = ob.len();
        let file = ModelFile {
            format_version: 1,
            horizon,
            states: (0..s).map(|i| format!("s{i}")).collect(),
            actions: (0..t.len()).map(|i| format!("a{i}")).collect(),
            observations: (0..o).map(|i| format!("o{i}")).collect(),
            b1,
            transitions: vec![t; horizon - 1],
            emissions: vec![ob; horizon - 1],
            rewards: vec![vec![0.0; o]; horizon - 1],
        };
        extend_with_sinks(&PomdpModel::from_file_unchecked(file)).unwrap()
    }

    fn identity(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn identity_observations_give_point_mass() {
        let t = vec![vec![vec![1.0 / 3.0; 3]; 3]];
        let m = model(3, 3, t, identity(3), vec![0.2, 0.3, 0.5]);
        let b = Belief::new(1, vec![0.2, 0.3, 0.5, 0.0]);
        for o in 0..3 {
            let post = belief_update(&m, &b, 0, o).unwrap();
            let mut expect = vec![0.0; 4];
            expect[o] = 1.0;
            assert_eq!(post.probs, expect);
            assert_eq!(post.step, 2);
        }
    }

    #[test]
    fn uniform_everything_stays_uniform() {
        let t = vec![vec![vec![0.5; 2]; 2]];
        let ob = vec![vec![0.5; 2]; 2];
        let m = model(2, 2, t, ob, vec![0.5, 0.5]);
        let post = belief_update(&m, &Belief::initial(&m), 0, 1).unwrap();
        assert!((post.probs[0] - 0.5).abs() < 1e-15);
        assert!((post.probs[1] - 0.5).abs() < 1e-15);
        assert_eq!(post.probs[2], 0.0);
    }

    #[test]
    fn two_state_update_matches_hand_evaluation() {
        // T_1(a) = I, Ob_2 = [[0.9, 0.2], [0.1, 0.8]], observe o = 1.
        let m = model(
            2,
            2,
            vec![identity(2)],
            vec![vec![0.9, 0.2], vec![0.1, 0.8]],
            vec![0.5, 0.5],
        );
        let post = belief_update(&m, &Belief::initial(&m), 0, 1).unwrap();
        // numerators: 0.1 * 0.5 = 0.05 and 0.8 * 0.5 = 0.4, normalizer 0.45
        let expect0 = 0.05 / 0.45;
        let expect1 = 0.4 / 0.45;
        assert!((post.probs[0] - expect0).abs() < 1e-15);
        assert!((post.probs[1] - expect1).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_observation_goes_to_sink() {
        let m = model(2, 2, vec![identity(2)], identity(2), vec![1.0, 0.0]);
        let post = belief_update(&m, &Belief::initial(&m), 0, 1).unwrap();
        assert_eq!(post.probs, vec![0.0, 0.0, 1.0]);
        // the sink observation itself is only explained by the sink state
        let post = belief_update(&m, &Belief::initial(&m), 0, 2).unwrap();
        assert_eq!(post.probs, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn exact_belief_base_case_and_deterministic_chain() {
        // shift chain s -> s+1 mod 3 with identity observations
        let shift: Vec<Vec<f64>> = (0..3)
            .map(|next| (0..3).map(|cur| if next == (cur + 1) % 3 { 1.0 } else { 0.0 }).collect())
            .collect();
        let m = model(3, 4, vec![shift], identity(3), vec![1.0, 0.0, 0.0]);
        assert_eq!(exact_belief(&m, &History::new()).unwrap().probs, m.b1);
        let hist = History::from_pairs(&[(0, 1), (0, 2), (0, 0)]);
        let b = exact_belief(&m, &hist).unwrap();
        assert_eq!(b.step, 4);
        assert_eq!(b.probs, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn approx_belief_base_case_and_clipping() {
        let t = vec![vec![vec![0.6, 0.3], vec![0.4, 0.7]]];
        let ob = vec![vec![0.8, 0.25], vec![0.2, 0.75]];
        let m = model(2, 5, t, ob, vec![0.9, 0.1]);
        let prior = vec![0.3, 0.7, 0.0];
        let pairs = [(0, 1), (0, 0), (0, 1)];
        // L = 0 at h > 1 returns the prior untouched
        let b = approx_belief(&m, &prior, &pairs, 4, 0).unwrap();
        assert_eq!(b.probs, prior);
        // L >= h - 1 reproduces the exact belief
        let exact = exact_belief(&m, &History::from_pairs(&pairs)).unwrap();
        for l in [3, 4, 10] {
            let b = approx_belief(&m, &prior, &pairs, 4, l).unwrap();
            assert_eq!(b, exact);
        }
    }

    #[test]
    fn approx_belief_equals_chained_updates_from_prior() {
        let t = vec![
            vec![vec![0.5, 0.2, 0.1], vec![0.3, 0.5, 0.2], vec![0.2, 0.3, 0.7]],
        ];
        let ob = vec![vec![0.7, 0.1, 0.2], vec![0.2, 0.6, 0.3], vec![0.1, 0.3, 0.5]];
        let m = model(3, 6, t, ob, vec![1.0, 0.0, 0.0]);
        let uniform = vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0];
        let pairs = [(0, 2), (0, 0), (0, 1), (0, 1)];
        let b = approx_belief(&m, &uniform, &pairs, 5, 2).unwrap();
        let start = Belief::new(3, uniform.clone());
        let chained = belief_update(&m, &belief_update(&m, &start, 0, 1).unwrap(), 0, 1).unwrap();
        assert_eq!(b.step, 5);
        for (x, y) in b.probs.iter().zip(&chained.probs) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn short_window_is_rejected() {
        let m = model(2, 5, vec![identity(2)], identity(2), vec![0.5, 0.5]);
        assert!(approx_belief(&m, &[0.5, 0.5, 0.0], &[(0, 1)], 4, 2).is_err());
    }
}
