//! Episodic simulation of a [`PomdpModel`] under a general policy.
//!
//! Each episode draws from three streams derived from its [`SeedSpec`]:
//! `env` for latent dynamics and emissions, `mixture` for resolving the
//! policy's mixture nodes, and `actions` for uniform action draws.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::History;
use crate::model::{PomdpModel, FORMAT_VERSION};
use crate::policy::{begin_episode, GeneralPolicy};
use crate::sampling::categorical;
use crate::seed::SeedSpec;

/// Full episode record, latent states included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: SeedSpec,
    /// `a_1..a_{H-1}`.
    pub actions: Vec<usize>,
    /// `o_2..o_H`.
    pub observations: Vec<usize>,
    /// `r_2..r_H` with `r_h = R_h(o_h)`.
    pub rewards: Vec<f64>,
    /// `s_1..s_H`.
    pub states: Vec<usize>,
}

/// What a learner may see of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedTrajectory {
    pub seed: SeedSpec,
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn observed(&self) -> ObservedTrajectory {
        ObservedTrajectory {
            seed: self.seed.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            rewards: self.rewards.clone(),
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

impl ObservedTrajectory {
    pub fn history(&self) -> History {
        History {
            actions: self.actions.clone(),
            observations: self.observations.clone(),
        }
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

pub fn rollout(model: &PomdpModel, policy: &GeneralPolicy, seed: &SeedSpec) -> Result<Trajectory> {
    let mut env = seed.stream("env");
    let mut mixture = seed.stream("mixture");
    let mut exec = begin_episode(policy, model.n_actions(), &mut mixture, seed.stream("actions"))?;

    let horizon = model.horizon;
    let mut states = Vec::with_capacity(horizon);
    let mut history = History::new();
    let mut rewards = Vec::with_capacity(horizon.saturating_sub(1));

    let mut s = categorical(&mut env, &model.b1);
    states.push(s);
    for h in 1..horizon {
        let a = exec.act(&history);
        if a >= model.n_actions() {
            return Err(Error::InvalidPolicy(format!("action {a} out of range at step {h}")));
        }
        let column: Vec<f64> = (0..model.n_states()).map(|next| model.t(h, a, next, s)).collect();
        s = categorical(&mut env, &column);
        let emission: Vec<f64> = (0..model.n_obs()).map(|o| model.ob(h + 1, o, s)).collect();
        let o = categorical(&mut env, &emission);
        states.push(s);
        rewards.push(model.reward(h + 1, o));
        history.push(a, o);
    }
    Ok(Trajectory {
        seed: seed.clone(),
        actions: history.actions,
        observations: history.observations,
        rewards,
        states,
    })
}

/// Episodes `0..n` with seeds `(master, tag, i)`, returned in index order
/// regardless of how the current rayon pool schedules them.
pub fn rollout_batch(
    model: &PomdpModel,
    policy: &GeneralPolicy,
    n: u64,
    master: u64,
    tag: &str,
) -> Result<Vec<Trajectory>> {
    (0..n)
        .into_par_iter()
        .map(|i| rollout(model, policy, &SeedSpec::new(master, tag, i)))
        .collect()
}

/// Mean total reward over `n` episodes. Summation is in episode order.
pub fn empirical_value(model: &PomdpModel, policy: &GeneralPolicy, n: u64, master: u64, tag: &str) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParams("empirical_value needs n >= 1".into()));
    }
    let totals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| rollout(model, policy, &SeedSpec::new(master, tag, i)).map(|t| t.total_reward()))
        .collect::<Result<_>>()?;
    Ok(totals.iter().sum::<f64>() / n as f64)
}

/// Rollout-only access to an environment. Nothing here reveals latent
/// states.
pub trait Environment: Sync {
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Non-sink observation count.
    fn n_obs(&self) -> usize;
    /// Runs episodes `0..n` of `(master, tag)`.
    fn run(&self, policy: &GeneralPolicy, n: u64, master: u64, tag: &str) -> Result<Vec<ObservedTrajectory>>;
    /// Episodes served so far.
    fn episodes(&self) -> u64;
}

/// An [`Environment`] backed by a simulated model.
pub struct SimulatedEnv {
    model: Arc<PomdpModel>,
    counter: AtomicU64,
}

impl SimulatedEnv {
    pub fn new(model: Arc<PomdpModel>) -> Self {
        SimulatedEnv {
            model,
            counter: AtomicU64::new(0),
        }
    }
}

impl Environment for SimulatedEnv {
    fn horizon(&self) -> usize {
        self.model.horizon
    }

    fn n_actions(&self) -> usize {
        self.model.n_actions()
    }

    fn n_obs(&self) -> usize {
        self.model.base_obs()
    }

    fn run(&self, policy: &GeneralPolicy, n: u64, master: u64, tag: &str) -> Result<Vec<ObservedTrajectory>> {
        let out = rollout_batch(&self.model, policy, n, master, tag)?
            .iter()
            .map(Trajectory::observed)
            .collect();
        self.counter.fetch_add(n, Ordering::Relaxed);
        Ok(out)
    }

    fn episodes(&self) -> u64 {
        self.counter.load(Ordering::Relaxed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub horizon: usize,
    pub n_actions: usize,
    pub n_obs: usize,
}

/// One dumped episode. `step` names the estimation step the episode was
/// drawn for, when the dump comes from an estimator run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<usize>,
    pub seed: SeedSpec,
    pub actions: Vec<usize>,
    pub observations: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl DumpRecord {
    pub fn new(step: Option<usize>, t: &ObservedTrajectory) -> Self {
        DumpRecord {
            step,
            seed: t.seed.clone(),
            actions: t.actions.clone(),
            observations: t.observations.clone(),
            rewards: t.rewards.clone(),
        }
    }

    pub fn trajectory(&self) -> ObservedTrajectory {
        ObservedTrajectory {
            seed: self.seed.clone(),
            actions: self.actions.clone(),
            observations: self.observations.clone(),
            rewards: self.rewards.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDump {
    pub header: DumpHeader,
    pub records: Vec<DumpRecord>,
}

impl TrajectoryDump {
    pub fn new(horizon: usize, n_actions: usize, n_obs: usize) -> Self {
        TrajectoryDump {
            header: DumpHeader {
                format_version: FORMAT_VERSION,
                horizon,
                n_actions,
                n_obs,
            },
            records: Vec::new(),
        }
    }

    /// JSON lines: the header, then one record per episode.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        writeln!(out)?;
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Dump("missing header".into()))??;
        let header: DumpHeader = serde_json::from_str(&header_line)
            .map_err(|e| Error::Dump(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Dump(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: DumpRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Dump(format!("record {i}: {e}")))?;
            let len = header.horizon.saturating_sub(1);
            if r.actions.len() != len || r.observations.len() != len || r.rewards.len() != len {
                return Err(Error::Dump(format!("record {i}: lengths do not match horizon")));
            }
            if r.actions.iter().any(|&a| a >= header.n_actions)
                || r.observations.iter().any(|&o| o > header.n_obs)
            {
                return Err(Error::Dump(format!("record {i}: symbol out of range")));
            }
            records.push(r);
        }
        Ok(TrajectoryDump { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extend_with_sinks, ModelFile};

    fn deterministic() -> PomdpModel {
        // two states that swap every step, identity observations
        let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let file = ModelFile {
            format_version: 1,
            horizon: 4,
            states: vec!["x".into(), "y".into()],
            actions: vec!["a".into(), "b".into()],
            observations: vec!["ox".into(), "oy".into()],
            b1: vec![1.0, 0.0],
            transitions: vec![vec![swap.clone(), swap]; 3],
            emissions: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 3],
            rewards: vec![vec![0.0, 1.0]; 3],
        };
        extend_with_sinks(&PomdpModel::from_file_unchecked(file)).unwrap()
    }

    #[test]
    fn deterministic_model_ignores_seed() {
        let m = deterministic();
        let a = rollout(&m, &GeneralPolicy::UniformRandom, &SeedSpec::new(1, "t", 0)).unwrap();
        for i in 1..20 {
            let b = rollout(&m, &GeneralPolicy::UniformRandom, &SeedSpec::new(9, "u", i)).unwrap();
            assert_eq!(a.states, b.states);
            assert_eq!(a.observations, b.observations);
            assert_eq!(a.rewards, b.rewards);
        }
        assert_eq!(a.states, vec![0, 1, 0, 1]);
        assert_eq!(a.rewards, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = deterministic();
        let s = SeedSpec::new(3, "t", 5);
        assert_eq!(
            rollout(&m, &GeneralPolicy::UniformRandom, &s).unwrap(),
            rollout(&m, &GeneralPolicy::UniformRandom, &s).unwrap()
        );
    }

    #[test]
    fn singleton_batch_equals_rollout() {
        let m = deterministic();
        let batch = rollout_batch(&m, &GeneralPolicy::UniformRandom, 1, 4, "b").unwrap();
        let single = rollout(&m, &GeneralPolicy::UniformRandom, &SeedSpec::new(4, "b", 0)).unwrap();
        assert_eq!(batch, vec![single]);
    }

    #[test]
    fn empirical_value_of_deterministic_model() {
        let m = deterministic();
        assert_eq!(empirical_value(&m, &GeneralPolicy::UniformRandom, 1, 0, "v").unwrap(), 2.0);
    }

    #[test]
    fn env_counts_episodes() {
        let env = SimulatedEnv::new(Arc::new(deterministic()));
        env.run(&GeneralPolicy::UniformRandom, 7, 0, "a").unwrap();
        env.run(&GeneralPolicy::UniformRandom, 3, 0, "b").unwrap();
        assert_eq!(env.episodes(), 10);
    }

    #[test]
    fn dump_round_trip() {
        let m = deterministic();
        let mut dump = TrajectoryDump::new(m.horizon, m.n_actions(), m.base_obs());
        for t in rollout_batch(&m, &GeneralPolicy::UniformRandom, 5, 1, "d").unwrap() {
            dump.records.push(DumpRecord::new(Some(2), &t.observed()));
        }
        let mut buf = Vec::new();
        dump.write_to(&mut buf).unwrap();
        let back = TrajectoryDump::read_from(&buf[..]).unwrap();
        assert_eq!(back, dump);
        assert!(TrajectoryDump::read_from(&b""[..]).is_err());
    }
}
