//! Independent oracles for integration and acceptance tests. Everything here
//! works on raw model tables by enumerating state paths and histories, and
//! shares no code with the library's recursions.

#![allow(dead_code)]

use std::path::PathBuf;

use pomdp_lab::model::ModelFile;
use pomdp_lab::policy::GeneralPolicy;
use pomdp_lab::zmdp::TabularZMdp;
use pomdp_lab::zstate::{ZSpace, ZState};
use pomdp_lab::{History, PomdpModel, ZPolicy};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

pub fn load_fixture(name: &str) -> PomdpModel {
    PomdpModel::load(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub const MICRO_FIXTURES: [&str; 3] = ["micro_a.json", "micro_b.json", "micro_c.json"];

/// Policies the brute-force oracle can run.
pub enum Pol<'a> {
    Det(&'a ZPolicy),
    Uniform,
}

impl Pol<'_> {
    fn probs(&self, n_actions: usize, pairs: &[(usize, usize)]) -> Vec<f64> {
        match self {
            Pol::Uniform => vec![1.0 / n_actions as f64; n_actions],
            Pol::Det(p) => {
                let a = p.act_on_history(&History::from_pairs(pairs));
                (0..n_actions).map(|b| if a == b { 1.0 } else { 0.0 }).collect()
            }
        }
    }

    pub fn general(&self) -> GeneralPolicy {
        match self {
            Pol::Uniform => GeneralPolicy::UniformRandom,
            Pol::Det(p) => GeneralPolicy::atom((*p).clone()),
        }
    }
}

/// Brute-force enumerator over the base (sink-free) tables.
pub struct Brute {
    pub f: ModelFile,
}

impl Brute {
    pub fn new(model: &PomdpModel) -> Self {
        Brute { f: model.to_file() }
    }

    pub fn s(&self) -> usize {
        self.f.states.len()
    }

    pub fn a(&self) -> usize {
        self.f.actions.len()
    }

    pub fn o(&self) -> usize {
        self.f.observations.len()
    }

    pub fn horizon(&self) -> usize {
        self.f.horizon
    }

    fn t(&self, step: usize, a: usize, next: usize, cur: usize) -> f64 {
        self.f.transitions[step - 1][a][next][cur]
    }

    fn ob(&self, step: usize, o: usize, s: usize) -> f64 {
        self.f.emissions[step - 2][o][s]
    }

    fn r(&self, step: usize, o: usize) -> f64 {
        self.f.rewards[step - 2][o]
    }

    /// Visits every (state path, history) pair up to step `h` with positive
    /// probability under `pol`, passing its probability.
    pub fn paths(&self, pol: &Pol, h: usize, visit: &mut dyn FnMut(f64, &[usize], &[(usize, usize)])) {
        let mut states = vec![];
        let mut pairs = vec![];
        for s in 0..self.s() {
            if self.f.b1[s] > 0.0 {
                states.push(s);
                self.extend(pol, h, self.f.b1[s], &mut states, &mut pairs, visit);
                states.pop();
            }
        }
    }

    fn extend(
        &self,
        pol: &Pol,
        h: usize,
        p: f64,
        states: &mut Vec<usize>,
        pairs: &mut Vec<(usize, usize)>,
        visit: &mut dyn FnMut(f64, &[usize], &[(usize, usize)]),
    ) {
        let t = states.len();
        if t == h {
            visit(p, states, pairs);
            return;
        }
        let cur = states[t - 1];
        let probs = pol.probs(self.a(), pairs);
        for a in 0..self.a() {
            if probs[a] == 0.0 {
                continue;
            }
            for next in 0..self.s() {
                let pt = self.t(t, a, next, cur);
                if pt == 0.0 {
                    continue;
                }
                for o in 0..self.o() {
                    let po = self.ob(t + 1, o, next);
                    if po == 0.0 {
                        continue;
                    }
                    states.push(next);
                    pairs.push((a, o));
                    self.extend(pol, h, p * probs[a] * pt * po, states, pairs, visit);
                    pairs.pop();
                    states.pop();
                }
            }
        }
    }

    /// `P(s_h = s, o_{2:h} | a_{1:h-1})` by summing over state paths.
    pub fn joint(&self, pairs: &[(usize, usize)]) -> Vec<f64> {
        let h = pairs.len() + 1;
        let mut out = vec![0.0; self.s()];
        let mut path = vec![0; h];
        self.joint_rec(pairs, 0, 1.0, &mut path, &mut out);
        out
    }

    fn joint_rec(&self, pairs: &[(usize, usize)], depth: usize, p: f64, path: &mut Vec<usize>, out: &mut [f64]) {
        let h = pairs.len() + 1;
        for s in 0..self.s() {
            let w = if depth == 0 {
                self.f.b1[s]
            } else {
                let (a, o) = pairs[depth - 1];
                self.t(depth, a, s, path[depth - 1]) * self.ob(depth + 1, o, s)
            };
            if w == 0.0 {
                continue;
            }
            path[depth] = s;
            if depth + 1 == h {
                out[s] += p * w;
            } else {
                self.joint_rec(pairs, depth + 1, p * w, path, out);
            }
        }
    }

    /// Posterior over base states, or `None` for a zero-probability history.
    pub fn belief(&self, pairs: &[(usize, usize)]) -> Option<Vec<f64>> {
        let j = self.joint(pairs);
        let z: f64 = j.iter().sum();
        (z > 0.0).then(|| j.iter().map(|x| x / z).collect())
    }

    pub fn state_visitation(&self, pol: &Pol, h: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.s()];
        self.paths(pol, h, &mut |p, states, _| d[states[h - 1]] += p);
        d
    }

    pub fn obs_visitation(&self, pol: &Pol, h: usize) -> Vec<f64> {
        let mut d = vec![0.0; self.o()];
        if h >= 2 {
            self.paths(pol, h, &mut |p, _, pairs| d[pairs[h - 2].1] += p);
        }
        d
    }

    pub fn z_visitation(&self, pol: &Pol, h: usize, space: &ZSpace) -> std::collections::BTreeMap<ZState, f64> {
        let mut d = std::collections::BTreeMap::new();
        self.paths(pol, h, &mut |p, _, pairs| {
            *d.entry(space.canonical(&History::from_pairs(pairs))).or_insert(0.0) += p;
        });
        d
    }

    pub fn value(&self, pol: &Pol) -> f64 {
        let mut v = 0.0;
        let horizon = self.horizon();
        self.paths(pol, horizon, &mut |p, _, pairs| {
            let total: f64 = pairs.iter().enumerate().map(|(i, &(_, o))| self.r(i + 2, o)).sum();
            v += p * total;
        });
        v
    }

    /// Optimal value over history-dependent policies, by recursion over
    /// histories with path-sum likelihoods.
    pub fn optimal_value(&self) -> f64 {
        self.optimal_from(&mut vec![])
    }

    fn optimal_from(&self, pairs: &mut Vec<(usize, usize)>) -> f64 {
        if pairs.len() + 1 == self.horizon() {
            return 0.0;
        }
        let base: f64 = self.joint(pairs).iter().sum();
        let mut best = f64::NEG_INFINITY;
        for a in 0..self.a() {
            let mut q = 0.0;
            for o in 0..self.o() {
                pairs.push((a, o));
                let p: f64 = self.joint(pairs).iter().sum::<f64>() / base;
                if p > 0.0 {
                    q += p * (self.r(pairs.len() + 1, o) + self.optimal_from(pairs));
                }
                pairs.pop();
            }
            best = best.max(q);
        }
        best
    }

    /// Every history of length `h - 1`.
    pub fn histories(&self, h: usize) -> Vec<Vec<(usize, usize)>> {
        let mut out = vec![vec![]];
        for _ in 1..h {
            out = out
                .into_iter()
                .flat_map(|p| {
                    (0..self.a()).flat_map(move |a| {
                        let p = p.clone();
                        (0..self.o()).map(move |o| {
                            let mut q = p.clone();
                            q.push((a, o));
                            q
                        })
                    })
                })
                .collect();
        }
        out
    }
}

/// Value of a deterministic Z-policy on a Z-MDP by forward recursion over
/// windows. Sink observations end reward collection.
pub fn zmdp_policy_value(zmdp: &TabularZMdp, policy: &ZPolicy) -> f64 {
    fn rec(zmdp: &TabularZMdp, policy: &ZPolicy, h: usize, z: ZState) -> f64 {
        let a = policy.action(h, z);
        let mut v = zmdp.reward(h, z, a);
        if h < zmdp.horizon {
            for (o, p) in zmdp.next_obs(h, z, a).into_iter().enumerate() {
                if p > 0.0 && o != zmdp.space.sink_obs() {
                    v += p * rec(zmdp, policy, h + 1, zmdp.space.advance(z, a, o));
                }
            }
        }
        v
    }
    rec(zmdp, policy, 1, zmdp.space.initial())
}

/// All deterministic Z-policies that differ on steps `1..=last`; later
/// steps play action 0.
pub fn enumerate_zpolicies(space: ZSpace, horizon: usize, last: usize) -> Vec<ZPolicy> {
    let slots: Vec<(usize, ZState)> = (1..=last)
        .flat_map(|h| space.windows_at(h).into_iter().map(move |z| (h, z)))
        .collect();
    let a = space.n_actions as u64;
    let total = a.pow(slots.len() as u32);
    (0..total)
        .map(|mut code| {
            let mut p = ZPolicy::new(space, horizon);
            for &(h, z) in &slots {
                p.set(h, z, (code % a) as usize);
                code /= a;
            }
            p
        })
        .collect()
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
