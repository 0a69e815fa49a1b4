//! Z-structured tabular MDPs over windows, with exact planning and
//! visitation computations.
//!
//! From window `z` at step `h`, action `a` yields a next observation `o'`
//! and the successor window `advance(z, a, o')`, so a row stores only the
//! distribution over `o'`. Rows that are absent, explicitly diverted, or
//! belong to a window containing the sink observation send all mass to the
//! sink observation and pay no reward.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FORMAT_VERSION;
use crate::policy::{ActionChoice, GeneralPolicy, Resolved, ZPolicy, EXPANSION_LIMIT};
use crate::zstate::{ZSpace, ZState};

/// Row tolerance for stored next-observation distributions.
pub const ROW_TOL: f64 = 1e-10;

/// Per-`(h, z)` data: a reward for each action and, for `h < H`, a
/// next-observation distribution over `Ō` for each action (`None` diverts
/// to the sink).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZRow {
    pub rewards: Vec<f64>,
    pub next: Vec<Option<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularZMdp {
    pub format_version: u32,
    pub space: ZSpace,
    pub horizon: usize,
    /// `rows[h - 1]` for `h ∈ 1..=H`.
    #[serde(with = "crate::zstate::step_tables")]
    pub rows: Vec<BTreeMap<ZState, ZRow>>,
}

/// `V_h(z)` for `h ∈ 1..=H` over the non-sink windows of each step.
pub type ValueFunction = Vec<BTreeMap<ZState, f64>>;

/// Per-step window occupancy, `occupancy[h - 1]`.
pub type Occupancy = Vec<BTreeMap<ZState, f64>>;

impl TabularZMdp {
    pub fn new(space: ZSpace, horizon: usize) -> Self {
        TabularZMdp {
            format_version: FORMAT_VERSION,
            space,
            horizon,
            rows: vec![BTreeMap::new(); horizon],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.space.n_actions
    }

    /// `|Ō| = O + 1`.
    pub fn n_obs_ext(&self) -> usize {
        self.space.n_obs + 1
    }

    pub fn row(&self, h: usize, z: ZState) -> Option<&ZRow> {
        self.rows.get(h - 1)?.get(&z)
    }

    pub fn reward(&self, h: usize, z: ZState, a: usize) -> f64 {
        if self.space.is_sink(z) {
            return 0.0;
        }
        self.row(h, z).map_or(0.0, |r| r.rewards[a])
    }

    /// Next-observation distribution over `Ō` for `h < H`.
    pub fn next_obs(&self, h: usize, z: ZState, a: usize) -> Vec<f64> {
        if !self.space.is_sink(z) {
            if let Some(Some(p)) = self.row(h, z).and_then(|r| r.next.get(a)) {
                return p.clone();
            }
        }
        let mut p = vec![0.0; self.n_obs_ext()];
        p[self.space.sink_obs()] = 1.0;
        p
    }

    /// Whether `(h, z, a)` has an explicit, non-diverted row.
    pub fn is_estimated(&self, h: usize, z: ZState, a: usize) -> bool {
        !self.space.is_sink(z)
            && matches!(self.row(h, z).and_then(|r| r.next.get(a)), Some(Some(_)))
    }

    /// Fraction of `(h, z, a)` with `h < H`, `z ∈ Z` that divert to the
    /// sink.
    pub fn diverted_fraction(&self) -> f64 {
        let mut total = 0usize;
        let mut diverted = 0usize;
        for h in 1..self.horizon {
            for z in self.space.windows_at(h) {
                for a in 0..self.n_actions() {
                    total += 1;
                    if !self.is_estimated(h, z, a) {
                        diverted += 1;
                    }
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            diverted as f64 / total as f64
        }
    }

    /// Checks shapes, stochasticity, and that sink windows carry no rows.
    pub fn check(&self) -> Result<()> {
        if self.rows.len() != self.horizon {
            return Err(Error::InvalidModel("Z-MDP row table length differs from horizon".into()));
        }
        for (i, table) in self.rows.iter().enumerate() {
            let h = i + 1;
            for (&z, row) in table {
                let at = || format!("Z-MDP row h={h} z={}", self.space.display(z));
                if z.0 >= self.space.size() {
                    return Err(Error::InvalidModel(format!("{}: index out of range", at())));
                }
                if self.space.is_sink(z) {
                    return Err(Error::InvalidModel(format!("{}: sink window has a row", at())));
                }
                if row.rewards.len() != self.n_actions() {
                    return Err(Error::InvalidModel(format!("{}: reward length", at())));
                }
                let expect = if h < self.horizon { self.n_actions() } else { 0 };
                if row.next.len() != expect {
                    return Err(Error::InvalidModel(format!("{}: transition length", at())));
                }
                for p in row.next.iter().flatten() {
                    if p.len() != self.n_obs_ext() || p.iter().any(|&x| !(x >= 0.0)) {
                        return Err(Error::InvalidModel(format!("{}: bad distribution", at())));
                    }
                    if (p.iter().sum::<f64>() - 1.0).abs() > ROW_TOL {
                        return Err(Error::InvalidModel(format!("{}: row does not sum to 1", at())));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: TabularZMdp = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Dump(format!("unsupported format_version {}", m.format_version)));
        }
        m.check()?;
        Ok(m)
    }
}

/// Backward induction over `h = last..=1` with a generic reward.
/// `sink_value[h]` is the value-to-go of any window that has absorbed into
/// the sink at step `h` (index `last + 1` must exist).
fn backward(
    zmdp: &TabularZMdp,
    last: usize,
    reward: impl Fn(usize, ZState, usize) -> f64,
    sink_value: &[f64],
) -> (ZPolicy, ValueFunction) {
    let space = zmdp.space;
    let sink = space.sink_obs();
    let mut policy = ZPolicy::new(space, zmdp.horizon);
    let mut values: ValueFunction = vec![BTreeMap::new(); zmdp.horizon];
    for h in (1..=last).rev() {
        let mut v_h = BTreeMap::new();
        for z in space.windows_at(h) {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            for a in 0..zmdp.n_actions() {
                let mut q = reward(h, z, a);
                if h < last {
                    let p = zmdp.next_obs(h, z, a);
                    for (o, &po) in p.iter().enumerate() {
                        if po == 0.0 {
                            continue;
                        }
                        let cont = if o == sink {
                            sink_value[h + 1]
                        } else {
                            values[h][&space.advance(z, a, o)]
                        };
                        q += po * cont;
                    }
                }
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            policy.set(h, z, best_a);
            v_h.insert(z, best);
        }
        values[h - 1] = v_h;
    }
    (policy, values)
}

/// Optimal deterministic Z-policy by backward induction, lowest action
/// index on ties. Returns the value function over non-sink windows.
pub fn dp_optimal(zmdp: &TabularZMdp) -> (ZPolicy, ValueFunction) {
    let zeros = vec![0.0; zmdp.horizon + 2];
    backward(zmdp, zmdp.horizon, |h, z, a| zmdp.reward(h, z, a), &zeros)
}

/// Optimal value from the initial window.
pub fn optimal_value(values: &ValueFunction, space: &ZSpace) -> f64 {
    values[0][&space.initial()]
}

/// Maximizes `⟨r, d_{O,h-L}⟩` over deterministic Z-policies, where `L` is
/// the Z-MDP's window and `r` ranges over `Ō`. Returns the maximizer and
/// the optimum.
pub fn linear_opt(zmdp: &TabularZMdp, r: &[f64], h: usize) -> Result<(ZPolicy, f64)> {
    let l = zmdp.space.window;
    if h <= l || h > zmdp.horizon {
        return Err(Error::Index(format!("linear_opt: step {h} needs L < h <= H (L = {l})")));
    }
    if r.len() != zmdp.n_obs_ext() {
        return Err(Error::Index(format!("linear_opt: direction has {} entries", r.len())));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteOracle);
    }
    let target = h - l;
    let space = zmdp.space;
    let sink = space.sink_obs();
    let sink_value: Vec<f64> = (0..=target + 1)
        .map(|step| if step <= target { r[sink] } else { 0.0 })
        .collect();
    let reward = |step: usize, z: ZState, _a: usize| {
        if step == target {
            space.last_obs(z).map_or(0.0, |o| r[o])
        } else {
            0.0
        }
    };
    let (policy, values) = backward(zmdp, target, reward, &sink_value);
    let value = optimal_value(&values, &space);
    Ok((policy, value))
}

fn action_weights(choice: ActionChoice, n_actions: usize) -> Vec<(usize, f64)> {
    match choice {
        ActionChoice::Fixed(a) => vec![(a, 1.0)],
        ActionChoice::Uniform => (0..n_actions).map(|a| (a, 1.0 / n_actions as f64)).collect(),
    }
}

fn check_windows(policy: &GeneralPolicy, space: &ZSpace) -> Result<()> {
    if policy.max_window() > space.window {
        return Err(Error::InvalidPolicy(format!(
            "policy reads {} slots, Z-MDP windows hold {}",
            policy.max_window(),
            space.window
        )));
    }
    Ok(())
}

/// Window occupancy of one deterministic resolution, plus its value.
fn forward_resolved(zmdp: &TabularZMdp, resolved: &Resolved) -> (Occupancy, f64) {
    let space = zmdp.space;
    let mut occ: Occupancy = Vec::with_capacity(zmdp.horizon);
    let mut current = BTreeMap::new();
    current.insert(space.initial(), 1.0);
    let mut value = 0.0;
    for h in 1..=zmdp.horizon {
        let mut next: BTreeMap<ZState, f64> = BTreeMap::new();
        for (&z, &mass) in &current {
            for (a, pa) in action_weights(resolved.choice(h, z, &space), zmdp.n_actions()) {
                value += mass * pa * zmdp.reward(h, z, a);
                if h < zmdp.horizon {
                    for (o, po) in zmdp.next_obs(h, z, a).into_iter().enumerate() {
                        if po > 0.0 {
                            *next.entry(space.advance(z, a, o)).or_insert(0.0) += mass * pa * po;
                        }
                    }
                }
            }
        }
        occ.push(current);
        current = next;
    }
    (occ, value)
}

/// Exact window occupancy of a general policy, mixing over resolutions.
pub fn occupancy(zmdp: &TabularZMdp, policy: &GeneralPolicy) -> Result<Occupancy> {
    Ok(occupancy_and_value(zmdp, policy)?.0)
}

fn occupancy_and_value(zmdp: &TabularZMdp, policy: &GeneralPolicy) -> Result<(Occupancy, f64)> {
    check_windows(policy, &zmdp.space)?;
    let mut total: Occupancy = vec![BTreeMap::new(); zmdp.horizon];
    let mut value = 0.0;
    for (w, resolved) in policy.resolutions(EXPANSION_LIMIT)? {
        let (occ, v) = forward_resolved(zmdp, &resolved);
        value += w * v;
        for (acc, step) in total.iter_mut().zip(occ) {
            for (z, m) in step {
                *acc.entry(z).or_insert(0.0) += w * m;
            }
        }
    }
    Ok((total, value))
}

/// Observation visitation `d_{O,h}` over `Ō`: the law of the window's final
/// observation. At step 1 no observation exists and the vector is zero.
pub fn obs_visitation(zmdp: &TabularZMdp, policy: &GeneralPolicy, h: usize) -> Result<Vec<f64>> {
    if h == 0 || h > zmdp.horizon {
        return Err(Error::Index(format!("obs_visitation: step {h}")));
    }
    let occ = occupancy(zmdp, policy)?;
    Ok(obs_marginal(zmdp, &occ[h - 1]))
}

pub(crate) fn obs_marginal(zmdp: &TabularZMdp, step: &BTreeMap<ZState, f64>) -> Vec<f64> {
    let mut d = vec![0.0; zmdp.n_obs_ext()];
    for (&z, &m) in step {
        if let Some(o) = zmdp.space.last_obs(z) {
            d[o] += m;
        }
    }
    d
}

/// Exact expected total reward of a general policy on the Z-MDP.
pub fn policy_value(zmdp: &TabularZMdp, policy: &GeneralPolicy) -> Result<f64> {
    Ok(occupancy_and_value(zmdp, policy)?.1)
}
