//! Policy algebra: deterministic window policies and the general (mixture)
//! policies built from them.
//!
//! A general policy is executed by first resolving every mixture node with
//! one categorical draw per episode, then following the resolved component;
//! uniform-action nodes draw a fresh action at each step.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::History;
use crate::zstate::{ZSpace, ZState};

/// Weight-sum tolerance for mixture nodes.
pub const WEIGHT_TOL: f64 = 1e-12;

/// Default cap on the number of deterministic resolutions an exact
/// computation will expand.
pub const EXPANSION_LIMIT: usize = 4096;

/// Deterministic Markov policy over windows: `π_h : Z̄ → A`.
///
/// Windows absent from a step's table map to action 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZPolicy {
    pub space: ZSpace,
    pub horizon: usize,
    /// `tables[h - 1]` for `h ∈ 1..=H`. The step-`H` action has no effect on
    /// the environment but is read by Z-MDP rewards.
    #[serde(with = "crate::zstate::step_tables")]
    pub tables: Vec<BTreeMap<ZState, usize>>,
}

impl ZPolicy {
    pub fn new(space: ZSpace, horizon: usize) -> Self {
        ZPolicy {
            space,
            horizon,
            tables: vec![BTreeMap::new(); horizon],
        }
    }

    pub fn action(&self, h: usize, z: ZState) -> usize {
        self.tables
            .get(h - 1)
            .and_then(|t| t.get(&z))
            .copied()
            .unwrap_or(0)
    }

    pub fn set(&mut self, h: usize, z: ZState, action: usize) {
        self.tables[h - 1].insert(z, action);
    }

    pub fn act_on_history(&self, history: &History) -> usize {
        self.action(history.step(), self.space.canonical(history))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneralPolicy {
    Atom {
        policy: Arc<ZPolicy>,
    },
    Mixture {
        weights: Vec<f64>,
        children: Vec<Arc<GeneralPolicy>>,
    },
    /// Plays `base` strictly before step `cutoff`, uniform actions from
    /// step `cutoff` on.
    PrefixThenUniform {
        base: Arc<GeneralPolicy>,
        cutoff: usize,
    },
    UniformRandom,
}

impl GeneralPolicy {
    pub fn atom(policy: ZPolicy) -> Self {
        GeneralPolicy::Atom {
            policy: Arc::new(policy),
        }
    }

    pub fn mixture(components: Vec<(f64, GeneralPolicy)>) -> Result<Self> {
        let (weights, children): (Vec<f64>, Vec<GeneralPolicy>) = components.into_iter().unzip();
        let policy = GeneralPolicy::Mixture {
            weights,
            children: children.into_iter().map(Arc::new).collect(),
        };
        policy.check()?;
        Ok(policy)
    }

    /// Uniform mixture over shared components.
    pub fn uniform_mixture(children: Vec<Arc<GeneralPolicy>>) -> Result<Self> {
        if children.is_empty() {
            return Err(Error::InvalidPolicy("empty mixture".into()));
        }
        let w = 1.0 / children.len() as f64;
        Ok(GeneralPolicy::Mixture {
            weights: vec![w; children.len()],
            children,
        })
    }

    /// Checks mixture weights throughout the tree.
    pub fn check(&self) -> Result<()> {
        match self {
            GeneralPolicy::Mixture { weights, children } => {
                if weights.is_empty() || weights.len() != children.len() {
                    return Err(Error::InvalidPolicy("mixture weights and children differ".into()));
                }
                if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                    return Err(Error::InvalidPolicy("negative mixture weight".into()));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > WEIGHT_TOL {
                    return Err(Error::InvalidPolicy(format!("mixture weights sum to {sum}")));
                }
                children.iter().try_for_each(|c| c.check())
            }
            GeneralPolicy::PrefixThenUniform { base, .. } => base.check(),
            _ => Ok(()),
        }
    }

    /// Expands the tree into weighted deterministic resolutions. Nested
    /// mixtures multiply their weights; fails past `limit` components.
    pub fn resolutions(&self, limit: usize) -> Result<Vec<(f64, Resolved)>> {
        let out = match self {
            GeneralPolicy::Atom { policy } => vec![(1.0, Resolved::Atom(policy.clone()))],
            GeneralPolicy::UniformRandom => vec![(1.0, Resolved::Uniform)],
            GeneralPolicy::PrefixThenUniform { base, cutoff } => base
                .resolutions(limit)?
                .into_iter()
                .map(|(w, r)| {
                    (
                        w,
                        Resolved::Prefix {
                            base: Box::new(r),
                            cutoff: *cutoff,
                        },
                    )
                })
                .collect(),
            GeneralPolicy::Mixture { weights, children } => {
                let mut out = Vec::new();
                for (w, child) in weights.iter().zip(children) {
                    if *w == 0.0 {
                        continue;
                    }
                    for (cw, r) in child.resolutions(limit)? {
                        out.push((w * cw, r));
                        if out.len() > limit {
                            return Err(Error::ExpansionLimit { limit });
                        }
                    }
                }
                out
            }
        };
        if out.len() > limit {
            return Err(Error::ExpansionLimit { limit });
        }
        Ok(out)
    }

    /// Collapses nested mixtures into a single mixture level. Induces the
    /// same trajectory distribution.
    pub fn flatten(&self) -> GeneralPolicy {
        match self {
            GeneralPolicy::Mixture { weights, children } => {
                let mut flat_w = Vec::new();
                let mut flat_c = Vec::new();
                for (w, child) in weights.iter().zip(children) {
                    match child.flatten() {
                        GeneralPolicy::Mixture {
                            weights: cw,
                            children: cc,
                        } => {
                            flat_w.extend(cw.iter().map(|x| w * x));
                            flat_c.extend(cc);
                        }
                        other => {
                            flat_w.push(*w);
                            flat_c.push(Arc::new(other));
                        }
                    }
                }
                GeneralPolicy::Mixture {
                    weights: flat_w,
                    children: flat_c,
                }
            }
            GeneralPolicy::PrefixThenUniform { base, cutoff } => GeneralPolicy::PrefixThenUniform {
                base: Arc::new(base.flatten()),
                cutoff: *cutoff,
            },
            other => other.clone(),
        }
    }

    /// Largest window read by any atom in the tree.
    pub fn max_window(&self) -> usize {
        match self {
            GeneralPolicy::Atom { policy } => policy.space.window,
            GeneralPolicy::Mixture { children, .. } => {
                children.iter().map(|c| c.max_window()).max().unwrap_or(0)
            }
            GeneralPolicy::PrefixThenUniform { base, .. } => base.max_window(),
            GeneralPolicy::UniformRandom => 0,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let doc = PolicyFile {
            format_version: crate::model::FORMAT_VERSION,
            policy: self.clone(),
        };
        std::fs::write(path, serde_json::to_string(&doc)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let doc: PolicyFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        doc.policy.check()?;
        Ok(doc.policy)
    }
}

/// Serialized policy with a format stamp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    pub policy: GeneralPolicy,
}

/// A general policy with every mixture node resolved.
#[derive(Clone, Debug, PartialEq)]
pub enum Resolved {
    Atom(Arc<ZPolicy>),
    Prefix { base: Box<Resolved>, cutoff: usize },
    Uniform,
}

/// What a resolved policy does at a given step and window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionChoice {
    Fixed(usize),
    Uniform,
}

impl Resolved {
    /// Action rule at step `h` given a window `z` from `space`, whose width
    /// must cover every atom's window.
    pub fn choice(&self, h: usize, z: ZState, space: &ZSpace) -> ActionChoice {
        match self {
            Resolved::Uniform => ActionChoice::Uniform,
            Resolved::Prefix { base, cutoff } => {
                if h >= *cutoff {
                    ActionChoice::Uniform
                } else {
                    base.choice(h, z, space)
                }
            }
            Resolved::Atom(p) => {
                debug_assert!(p.space.window <= space.window);
                ActionChoice::Fixed(p.action(h, space.suffix(z, p.space.window)))
            }
        }
    }

    fn act(&self, history: &History, rng: &mut ChaCha12Rng, n_actions: usize) -> usize {
        match self {
            Resolved::Uniform => rng.gen_range(0..n_actions),
            Resolved::Prefix { base, cutoff } => {
                if history.step() >= *cutoff {
                    rng.gen_range(0..n_actions)
                } else {
                    base.act(history, rng, n_actions)
                }
            }
            Resolved::Atom(p) => p.act_on_history(history),
        }
    }
}

/// One episode's worth of policy state.
pub struct PolicyExecution {
    resolved: Resolved,
    actions_rng: ChaCha12Rng,
    n_actions: usize,
}

/// Resolves all mixture nodes with draws from `mixture_rng`; uniform
/// actions later come from `actions_rng`.
pub fn begin_episode(
    policy: &GeneralPolicy,
    n_actions: usize,
    mixture_rng: &mut ChaCha12Rng,
    actions_rng: ChaCha12Rng,
) -> Result<PolicyExecution> {
    Ok(PolicyExecution {
        resolved: resolve(policy, mixture_rng)?,
        actions_rng,
        n_actions,
    })
}

fn resolve(policy: &GeneralPolicy, rng: &mut ChaCha12Rng) -> Result<Resolved> {
    Ok(match policy {
        GeneralPolicy::Atom { policy } => Resolved::Atom(policy.clone()),
        GeneralPolicy::UniformRandom => Resolved::Uniform,
        GeneralPolicy::PrefixThenUniform { base, cutoff } => Resolved::Prefix {
            base: Box::new(resolve(base, rng)?),
            cutoff: *cutoff,
        },
        GeneralPolicy::Mixture { weights, children } => {
            if weights.len() != children.len() || weights.is_empty() {
                return Err(Error::InvalidPolicy("malformed mixture".into()));
            }
            let u: f64 = rng.gen();
            let i = crate::sampling::inverse_cdf(weights, u)
                .ok_or_else(|| Error::InvalidPolicy("mixture weights are all zero".into()))?;
            resolve(&children[i], rng)?
        }
    })
}

impl PolicyExecution {
    pub fn resolved(&self) -> &Resolved {
        &self.resolved
    }

    /// Action at step `h = history.step()`.
    pub fn act(&mut self, history: &History) -> usize {
        self.resolved
            .act(history, &mut self.actions_rng, self.n_actions)
    }
}

/// Follows `pi` for the first `max(h - L - 1, 0)` steps, then uniform.
pub fn hat_policy(pi: &Arc<GeneralPolicy>, h: usize, l: usize) -> GeneralPolicy {
    let prefix = h.saturating_sub(l + 1);
    GeneralPolicy::PrefixThenUniform {
        base: pi.clone(),
        cutoff: prefix + 1,
    }
}

/// `(1 / (H - h + 1)) Σ_{h' >= h} π^{h'}` over the given tail.
pub fn tail_average(tail: &[Arc<GeneralPolicy>]) -> Result<GeneralPolicy> {
    GeneralPolicy::uniform_mixture(tail.to_vec())
}

/// `(1 / k) Σ_{k' <= k} π^{k'}` over the policies gathered so far.
pub fn running_average(history: &[Arc<GeneralPolicy>]) -> Result<GeneralPolicy> {
    GeneralPolicy::uniform_mixture(history.to_vec())
}
