//! Exact analysis oracles on the true model: joint (state, window)
//! occupancies, visitation distributions, policy values, the optimal value,
//! the belief-seeded Z-MDP `M̃`, truncated models, threshold sets,
//! pseudoinverse latent estimates and belief-contraction profiles.
//!
//! Everything here reads latent quantities and is meant for tests and
//! reports, never for the learner.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{approx_belief, exact_belief, Belief, NORMALIZER_FLOOR};
use crate::error::{Error, Result};
use crate::model::PomdpModel;
use crate::policy::{ActionChoice, GeneralPolicy, Resolved, ZPolicy, EXPANSION_LIMIT};
use crate::seed::SeedSpec;
use crate::simulator::rollout;
use crate::zmdp::{self, TabularZMdp, ZRow};
use crate::zstate::{ZSpace, ZState};

/// Largest `(A·O)^H` accepted by [`exact_optimal_value`].
pub const MAX_HISTORIES: f64 = 1e6;

/// Per-step probability of `(latent state, window)` under a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct JointOccupancy {
    pub space: ZSpace,
    /// `steps[h - 1]`.
    pub steps: Vec<BTreeMap<(usize, ZState), f64>>,
}

impl JointOccupancy {
    pub fn state_marginal(&self, model: &PomdpModel, h: usize) -> Vec<f64> {
        let mut d = vec![0.0; model.n_states()];
        for (&(s, _), &m) in &self.steps[h - 1] {
            d[s] += m;
        }
        d
    }

    /// Marginal over windows narrowed to width `l`.
    pub fn window_marginal(&self, h: usize, l: usize) -> BTreeMap<ZState, f64> {
        let mut d = BTreeMap::new();
        for (&(_, z), &m) in &self.steps[h - 1] {
            *d.entry(self.space.suffix(z, l)).or_insert(0.0) += m;
        }
        d
    }
}

fn choice_weights(choice: ActionChoice, n_actions: usize) -> Vec<(usize, f64)> {
    match choice {
        ActionChoice::Fixed(a) => vec![(a, 1.0)],
        ActionChoice::Uniform => (0..n_actions).map(|a| (a, 1.0 / n_actions as f64)).collect(),
    }
}

fn joint_resolved(model: &PomdpModel, resolved: &Resolved, space: &ZSpace) -> Vec<BTreeMap<(usize, ZState), f64>> {
    let mut steps = Vec::with_capacity(model.horizon);
    let mut current = BTreeMap::new();
    for (s, &p) in model.b1.iter().enumerate() {
        if p > 0.0 {
            current.insert((s, space.initial()), p);
        }
    }
    for h in 1..model.horizon {
        let mut next: BTreeMap<(usize, ZState), f64> = BTreeMap::new();
        for (&(s, z), &m) in &current {
            for (a, pa) in choice_weights(resolved.choice(h, z, space), model.n_actions()) {
                for s2 in 0..model.n_states() {
                    let pt = model.t(h, a, s2, s);
                    if pt == 0.0 {
                        continue;
                    }
                    for o in 0..model.n_obs() {
                        let po = model.ob(h + 1, o, s2);
                        if po > 0.0 {
                            *next.entry((s2, space.advance(z, a, o))).or_insert(0.0) += m * pa * pt * po;
                        }
                    }
                }
            }
        }
        steps.push(current);
        current = next;
    }
    steps.push(current);
    steps
}

/// Exact joint occupancy with windows of width `max(policy window, window)`.
pub fn joint_occupancy(model: &PomdpModel, policy: &GeneralPolicy, window: usize) -> Result<JointOccupancy> {
    let width = policy.max_window().max(window);
    let space = ZSpace::new(width, model.n_actions(), model.base_obs())?;
    let mut steps: Vec<BTreeMap<(usize, ZState), f64>> = vec![BTreeMap::new(); model.horizon];
    for (w, resolved) in policy.resolutions(EXPANSION_LIMIT)? {
        for (acc, step) in steps.iter_mut().zip(joint_resolved(model, &resolved, &space)) {
            for (k, m) in step {
                *acc.entry(k).or_insert(0.0) += w * m;
            }
        }
    }
    Ok(JointOccupancy { space, steps })
}

/// `d_{S,h}` for every step, `out[h - 1]`.
pub fn state_visitations(model: &PomdpModel, policy: &GeneralPolicy) -> Result<Vec<Vec<f64>>> {
    let occ = joint_occupancy(model, policy, 0)?;
    Ok((1..=model.horizon).map(|h| occ.state_marginal(model, h)).collect())
}

pub fn state_visitation(model: &PomdpModel, policy: &GeneralPolicy, h: usize) -> Result<Vec<f64>> {
    model.check_step(h, 1, model.horizon, "state_visitation")?;
    Ok(state_visitations(model, policy)?.swap_remove(h - 1))
}

/// `d_{O,h} = Ob_h d_{S,h}`; the zero vector at step 1.
pub fn obs_visitation(model: &PomdpModel, policy: &GeneralPolicy, h: usize) -> Result<Vec<f64>> {
    let d = state_visitation(model, policy, h)?;
    if h == 1 {
        return Ok(vec![0.0; model.n_obs()]);
    }
    Ok(model.emit(h, &d))
}

/// `d_{Z,h}` over canonical windows of width `l`.
pub fn z_visitation(model: &PomdpModel, policy: &GeneralPolicy, h: usize, l: usize) -> Result<BTreeMap<ZState, f64>> {
    model.check_step(h, 1, model.horizon, "z_visitation")?;
    Ok(joint_occupancy(model, policy, l)?.window_marginal(h, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitationKind {
    State,
    Observation,
    ZState { window: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Visitation {
    Vector(Vec<f64>),
    Windows(BTreeMap<ZState, f64>),
}

pub fn visitation(model: &PomdpModel, policy: &GeneralPolicy, h: usize, kind: VisitationKind) -> Result<Visitation> {
    Ok(match kind {
        VisitationKind::State => Visitation::Vector(state_visitation(model, policy, h)?),
        VisitationKind::Observation => Visitation::Vector(obs_visitation(model, policy, h)?),
        VisitationKind::ZState { window } => Visitation::Windows(z_visitation(model, policy, h, window)?),
    })
}

/// Exact `V_1^π = E[Σ_{h=2}^H R_h(o_h)]`.
pub fn exact_policy_value(model: &PomdpModel, policy: &GeneralPolicy) -> Result<f64> {
    let ds = state_visitations(model, policy)?;
    let mut value = 0.0;
    for h in 2..=model.horizon {
        let d_o = model.emit(h, &ds[h - 1]);
        value += d_o.iter().enumerate().map(|(o, p)| p * model.reward(h, o)).sum::<f64>();
    }
    Ok(value)
}

/// Optimal value over all history-dependent policies, by backward
/// induction on exact beliefs. The maximizer is returned as a Z-policy
/// whose window covers the whole history.
pub fn exact_optimal_value(model: &PomdpModel) -> Result<(f64, ZPolicy)> {
    let horizon = model.horizon;
    let histories = ((model.n_actions() * model.base_obs()) as f64).powi(horizon as i32);
    if histories > MAX_HISTORIES {
        return Err(Error::DeskScale(format!(
            "(A·O)^H = {histories:.3e} exceeds {MAX_HISTORIES:.0e} histories"
        )));
    }
    let space = ZSpace::new(horizon.saturating_sub(1), model.n_actions(), model.base_obs())?;
    let mut policy = ZPolicy::new(space, horizon);
    let b1 = Belief::initial(model);
    let v = optimal_from(model, &space, &mut policy, &b1, space.initial());
    Ok((v, policy))
}

fn optimal_from(model: &PomdpModel, space: &ZSpace, policy: &mut ZPolicy, b: &Belief, z: ZState) -> f64 {
    let h = b.step;
    if h >= model.horizon {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_a = 0;
    for a in 0..model.n_actions() {
        let pred = model.propagate(h, a, &b.probs);
        let mut q = 0.0;
        for o in 0..model.n_obs() {
            let joint: Vec<f64> = pred
                .iter()
                .enumerate()
                .map(|(s, p)| model.ob(h + 1, o, s) * p)
                .collect();
            let p_o: f64 = joint.iter().sum();
            if !(p_o > NORMALIZER_FLOOR) {
                continue;
            }
            let post = Belief::new(h + 1, joint.iter().map(|x| x / p_o).collect());
            q += p_o * (model.reward(h + 1, o) + optimal_from(model, space, policy, &post, space.advance(z, a, o)));
        }
        if q > best {
            best = q;
            best_a = a;
        }
    }
    policy.set(h, z, best_a);
    best
}

/// The belief-seeded Z-MDP `M̃` for exploration policies `π^{1:H}`
/// (`policies[h - 1] = π^h`). Reward-free.
pub fn tilde_mdp(model: &PomdpModel, policies: &[Arc<GeneralPolicy>], l: usize) -> Result<TabularZMdp> {
    let horizon = model.horizon;
    if policies.len() != horizon {
        return Err(Error::InvalidParams(format!(
            "expected {horizon} policies, got {}",
            policies.len()
        )));
    }
    let space = ZSpace::new(l, model.n_actions(), model.base_obs())?;
    let mut out = TabularZMdp::new(space, horizon);
    for h in 1..horizon {
        let prior = if h > l + 1 {
            state_visitation(model, &policies[h - 1], h - l)?
        } else {
            model.b1.clone()
        };
        for z in space.windows_at(h) {
            let b = approx_belief(model, &prior, &space.pairs(z), h, l)?;
            let next = (0..model.n_actions())
                .map(|a| Some(model.emit(h + 1, &model.propagate(h, a, &b.probs))))
                .collect();
            out.rows[h - 1].insert(
                z,
                ZRow {
                    rewards: vec![0.0; model.n_actions()],
                    next,
                },
            );
        }
    }
    Ok(out)
}

/// States with `d_{S,h}(s) < φ` (sink excluded).
pub fn underexplored_set(model: &PomdpModel, policy: &GeneralPolicy, phi: f64, h: usize) -> Result<BTreeSet<usize>> {
    let d = state_visitation(model, policy, h)?;
    Ok((0..model.base_states()).filter(|&s| d[s] < phi).collect())
}

/// Windows of `Z` at step `h` with `d_{Z,h}(z) <= ζ`, unvisited ones
/// included.
pub fn zlow_set(
    model: &PomdpModel,
    policy: &GeneralPolicy,
    zeta: f64,
    h: usize,
    l: usize,
) -> Result<BTreeSet<ZState>> {
    let d = z_visitation(model, policy, h, l)?;
    let space = ZSpace::new(l, model.n_actions(), model.base_obs())?;
    Ok(space
        .windows_at(h)
        .into_iter()
        .filter(|z| d.get(z).copied().unwrap_or(0.0) <= zeta)
        .collect())
}

/// Truncation `P̄_{φ,H'}`: for `H'' = L+1..=H'`, states underexplored at
/// step `t = H'' - L` under `π^{H''}` in the current truncation lose all
/// inbound mass at step `t - 1` to the sink (at `t = 1`, their initial
/// mass).
pub fn truncated_pomdp(
    model: &PomdpModel,
    policies: &[Arc<GeneralPolicy>],
    phi: f64,
    h_prime: usize,
    l: usize,
) -> Result<PomdpModel> {
    if h_prime > model.horizon || policies.len() < h_prime {
        return Err(Error::InvalidParams(format!(
            "truncation horizon {h_prime} needs H' <= H and one policy per step"
        )));
    }
    let sink = model
        .sink_state()
        .ok_or_else(|| Error::InvalidModel("truncation requires a sink-extended model".into()))?;
    let mut bar = model.clone();
    for hh in (l + 1)..=h_prime {
        let t = hh - l;
        let d = state_visitation(&bar, &policies[hh - 1], t)?;
        let und: Vec<usize> = (0..bar.base_states()).filter(|&s| d[s] < phi).collect();
        if t == 1 {
            for &s in &und {
                let m = std::mem::take(&mut bar.b1[s]);
                bar.b1[sink] += m;
            }
            continue;
        }
        for table in bar.transitions[t - 2].iter_mut() {
            for cur in 0..model.n_states() {
                for &s in &und {
                    let m = std::mem::take(&mut table[s][cur]);
                    table[sink][cur] += m;
                }
            }
        }
    }
    Ok(bar)
}

/// Moore–Penrose pseudoinverse, singular values below `1e-10 σ_max`
/// treated as zero.
pub fn pseudo_inverse(m: &[Vec<f64>]) -> DMatrix<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, |r| r.len());
    let a = DMatrix::from_fn(rows, cols, |i, j| m[i][j]);
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    svd.pseudo_inverse(1e-10 * sigma_max)
        .expect("non-negative threshold")
}

/// Formal latent distribution `Ob_t† d_{O,t}` from a Z-MDP's observation
/// visitation at step `t`; `ob` is the sink-extended `Ob_t`.
pub fn latent_estimate(zmdp: &TabularZMdp, policy: &GeneralPolicy, t: usize, ob: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = zmdp::obs_visitation(zmdp, policy, t)?;
    if ob.len() != d.len() {
        return Err(Error::Index(format!(
            "Ob has {} rows, visitation has {} entries",
            ob.len(),
            d.len()
        )));
    }
    let pinv = pseudo_inverse(ob);
    Ok((0..pinv.nrows())
        .map(|s| (0..pinv.ncols()).map(|o| pinv[(s, o)] * d[o]).sum())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionPoint {
    pub window: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of `E‖b_h − b̂_h(·; prior)‖₁` for each window length,
/// sharing the same `n` trajectories across windows.
pub fn contraction_profile(
    model: &PomdpModel,
    policy: &GeneralPolicy,
    prior: &[f64],
    h: usize,
    windows: &[usize],
    n: u64,
    master: u64,
) -> Result<Vec<ContractionPoint>> {
    model.check_step(h, 1, model.horizon, "contraction_profile")?;
    if n < 2 {
        return Err(Error::InvalidParams("contraction_profile needs n >= 2".into()));
    }
    let errors: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let t = rollout(model, policy, &SeedSpec::new(master, "contraction", i))?;
            let history = t.observed().history().prefix(h);
            let exact = exact_belief(model, &history)?;
            let pairs: Vec<(usize, usize)> = history.pairs().collect();
            windows
                .iter()
                .map(|&l| Ok(approx_belief(model, prior, &pairs, h, l)?.l1_distance(&exact)))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(windows
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let xs: Vec<f64> = errors.iter().map(|e| e[j]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            ContractionPoint {
                window: l,
                mean_error: mean,
                std_error: (var / n as f64).sqrt(),
            }
        })
        .collect())
}
