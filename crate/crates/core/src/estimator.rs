//! Empirical Z-MDP estimation from hat-policy trajectories.
//!
//! For every step `h` a fresh batch of `N0` episodes is drawn under
//! `hat_policy(π^h, h, L)`, and transitions out of step `h` are counted by
//! canonical window. Rows with at least `N1` samples become normalized
//! counts; all others divert to the sink observation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{hat_policy, GeneralPolicy};
use crate::simulator::{DumpRecord, Environment, TrajectoryDump};
use crate::zmdp::{TabularZMdp, ZRow};
use crate::zstate::{ZSpace, ZState};

/// Visit counts gathered for one step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    /// `(z_h, a_h) → (o_{h+1} → count)`; empty at step `H`.
    pub transitions: BTreeMap<(ZState, usize), BTreeMap<usize, u64>>,
    /// Visits of `z_h`, used for the step-`H` reward rows.
    pub windows: BTreeMap<ZState, u64>,
    /// First observed `R_h(o_h)` per window (0 at step 1).
    pub rewards: BTreeMap<ZState, f64>,
}

impl CountTable {
    pub fn total(&self, z: ZState, a: usize) -> u64 {
        self.transitions
            .get(&(z, a))
            .map_or(0, |c| c.values().sum())
    }
}

/// Sampling tag for step `h`.
pub fn step_tag(prefix: &str, h: usize) -> String {
    format!("{prefix}/h{h}")
}

/// Draws `n0` episodes per step under the hat-policies and records them.
pub fn sample(
    env: &dyn Environment,
    l: usize,
    n0: u64,
    policies: &[Arc<GeneralPolicy>],
    master: u64,
    prefix: &str,
) -> Result<TrajectoryDump> {
    let horizon = env.horizon();
    if policies.len() != horizon {
        return Err(Error::InvalidParams(format!(
            "expected {horizon} policies, got {}",
            policies.len()
        )));
    }
    let mut dump = TrajectoryDump::new(horizon, env.n_actions(), env.n_obs());
    for h in 1..=horizon {
        let hat = hat_policy(&policies[h - 1], h, l);
        for t in env.run(&hat, n0, master, &step_tag(prefix, h))? {
            dump.records.push(DumpRecord::new(Some(h), &t));
        }
    }
    Ok(dump)
}

/// Counts the step-`h` records of a dump.
pub fn count_step(dump: &TrajectoryDump, space: &ZSpace, h: usize) -> CountTable {
    let horizon = dump.header.horizon;
    let mut table = CountTable::default();
    for r in dump.records.iter().filter(|r| r.step == Some(h)) {
        let z = space.canonical_pairs(
            r.actions[..h - 1]
                .iter()
                .copied()
                .zip(r.observations[..h - 1].iter().copied()),
        );
        *table.windows.entry(z).or_insert(0) += 1;
        table
            .rewards
            .entry(z)
            .or_insert(if h >= 2 { r.rewards[h - 2] } else { 0.0 });
        if h < horizon {
            let a = r.actions[h - 1];
            let o = r.observations[h - 1];
            *table
                .transitions
                .entry((z, a))
                .or_default()
                .entry(o)
                .or_insert(0) += 1;
        }
    }
    table
}

/// Builds the empirical Z-MDP from a dump whose records carry their step.
pub fn approx_mdp_from_dump(dump: &TrajectoryDump, l: usize, n0: u64, n1: u64) -> Result<TabularZMdp> {
    if n1 > n0 {
        return Err(Error::InvalidParams(format!("N1 = {n1} exceeds N0 = {n0}")));
    }
    let header = &dump.header;
    let horizon = header.horizon;
    if l >= horizon {
        return Err(Error::InvalidParams(format!("L = {l} must be below H = {horizon}")));
    }
    let space = ZSpace::new(l, header.n_actions, header.n_obs)?;
    let mut per_step = vec![0u64; horizon + 1];
    for r in &dump.records {
        match r.step {
            Some(h) if (1..=horizon).contains(&h) => per_step[h] += 1,
            _ => return Err(Error::Dump("record without a valid step".into())),
        }
    }
    if let Some(h) = (1..=horizon).find(|&h| per_step[h] > n0) {
        return Err(Error::Dump(format!(
            "step {h} has {} episodes, more than N0 = {n0}",
            per_step[h]
        )));
    }

    let n_actions = header.n_actions;
    let n_ext = header.n_obs + 1;
    let mut zmdp = TabularZMdp::new(space, horizon);
    for h in 1..=horizon {
        let table = count_step(dump, &space, h);
        let rows = &mut zmdp.rows[h - 1];
        if h == horizon {
            for (&z, &visits) in &table.windows {
                if visits >= n1 && !space.is_sink(z) {
                    rows.insert(
                        z,
                        ZRow {
                            rewards: vec![table.rewards[&z]; n_actions],
                            next: vec![],
                        },
                    );
                }
            }
            continue;
        }
        for (&z, _) in &table.windows {
            if space.is_sink(z) {
                continue;
            }
            let mut row = ZRow {
                rewards: vec![0.0; n_actions],
                next: vec![None; n_actions],
            };
            let mut any = false;
            for a in 0..n_actions {
                let Some(counts) = table.transitions.get(&(z, a)) else {
                    continue;
                };
                let total: u64 = counts.values().sum();
                if total == 0 || total < n1 {
                    continue;
                }
                let mut p = vec![0.0; n_ext];
                for (&o, &c) in counts {
                    p[o] = c as f64 / total as f64;
                }
                row.next[a] = Some(p);
                row.rewards[a] = table.rewards[&z];
                any = true;
            }
            if any {
                rows.insert(z, row);
            }
        }
    }
    Ok(zmdp)
}

/// Samples and estimates in one call; also returns the dump.
pub fn approx_mdp(
    env: &dyn Environment,
    l: usize,
    n0: u64,
    n1: u64,
    policies: &[Arc<GeneralPolicy>],
    master: u64,
    prefix: &str,
) -> Result<(TabularZMdp, TrajectoryDump)> {
    if n1 > n0 {
        return Err(Error::InvalidParams(format!("N1 = {n1} exceeds N0 = {n0}")));
    }
    if l >= env.horizon() {
        return Err(Error::InvalidParams(format!(
            "L = {l} must be below H = {}",
            env.horizon()
        )));
    }
    let dump = sample(env, l, n0, policies, master, prefix)?;
    let zmdp = approx_mdp_from_dump(&dump, l, n0, n1)?;
    Ok((zmdp, dump))
}
