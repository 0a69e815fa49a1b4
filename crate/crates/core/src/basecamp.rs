//! The policy-cover learning loop: estimate an empirical Z-MDP from the
//! current exploration policies, build barycentric-spanner exploration
//! policies on it, mix them in, repeat `K` times, then evaluate the optimal
//! policy of every estimated Z-MDP on fresh episodes and keep the best.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::approx_mdp;
use crate::model::FORMAT_VERSION;
use crate::policy::{running_average, tail_average, GeneralPolicy, ZPolicy};
use crate::simulator::Environment;
use crate::spanner::bary_spanner_policy;
use crate::zmdp::{dp_optimal, optimal_value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsMode {
    Theoretical,
    Practical,
}

/// Analysis constants that only exist in theoretical mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub epsilon: f64,
    pub phi: f64,
    pub theta: f64,
    pub zeta: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub p: f64,
    pub c_star: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub mode: ParamsMode,
    /// Window length `L`.
    pub window: usize,
    /// Episodes per step per iteration. Theoretical values can exceed any
    /// integer type, hence `f64`.
    pub n0: f64,
    /// Count threshold for estimated rows.
    pub n1: f64,
    /// Iterations `K`.
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Overrides the evaluation episode count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_episodes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisParams>,
}

impl HyperParams {
    pub fn practical(window: usize, n0: u64, n1: u64, iterations: usize, alpha: f64, beta: f64) -> Self {
        HyperParams {
            mode: ParamsMode::Practical,
            window,
            n0: n0 as f64,
            n1: n1 as f64,
            iterations,
            alpha,
            beta,
            eval_episodes: None,
            analysis: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta = {} must lie in (0, 1)", self.beta));
        }
        if self.window < 1 {
            return bad("L must be at least 1".into());
        }
        if self.iterations < 1 {
            return bad("K must be at least 1".into());
        }
        if self.n0.is_infinite() || self.n1.is_infinite() {
            return Err(Error::DeskScale(format!("N0 = {}, N1 = {} overflow", self.n0, self.n1)));
        }
        if !(self.n1 >= 0.0) || !(self.n0 >= 1.0) || self.n1 > self.n0 {
            return bad(format!("need 0 <= N1 <= N0 and N0 >= 1 (N0 = {}, N1 = {})", self.n0, self.n1));
        }
        if self.n0.fract() != 0.0 || self.n1.fract() != 0.0 {
            return bad("N0 and N1 must be integers".into());
        }
        if self.eval_episodes == Some(0) {
            return bad("evaluation episode count must be positive".into());
        }
        Ok(())
    }

    /// `⌈100 H² ln(K/β) / α²⌉` unless overridden.
    pub fn eval_count(&self, horizon: usize) -> f64 {
        match self.eval_episodes {
            Some(n) => n as f64,
            None => {
                let h = horizon as f64;
                (100.0 * h * h * (self.iterations as f64 / self.beta).ln() / (self.alpha * self.alpha)).ceil()
            }
        }
    }
}

/// Every hyperparameter formula evaluated literally, with ceilings on the
/// integer-valued ones.
#[allow(clippy::too_many_arguments)]
pub fn theoretical_params(
    alpha: f64,
    beta: f64,
    gamma: f64,
    s: usize,
    a: usize,
    o: usize,
    h: usize,
    c_star: f64,
) -> HyperParams {
    let (sf, af, of, hf) = (s as f64, a as f64, o as f64, h as f64);
    let epsilon = alpha * gamma / (of.powi(2) * hf.powi(5) * sf.powf(1.5) * c_star.powi(2));
    let phi = gamma * epsilon / (c_star * hf.powi(5) * sf.powf(3.5) * of.powi(2));
    let log_inv = (1.0 / (epsilon * phi)).ln();
    let first = log_inv * ((1.0 / phi).ln() / epsilon).ln() / gamma.powi(2);
    let second = log_inv / gamma.powi(4);
    let window = (c_star * first.min(second)).ceil();
    let lf = window;
    let theta = epsilon;
    let zeta = (epsilon.ln() + phi.ln() - 2.0 * lf * af.ln() - lf * of.ln()).exp();
    let delta = c_star * of.powi(2) * hf.powi(3) * sf.sqrt() / gamma * epsilon;
    let delta_prime = delta / 2.0;
    let iterations = 2 * h * s;
    let p = beta / (2.0 * iterations as f64);
    let n1 = (c_star * lf * af.powf(lf + 1.0) * of.powf(lf) * (af * of / p).ln() / theta.powi(2)).ceil();
    let n0 = (c_star * n1 * af * lf * (of * af / p).ln() / zeta).ceil();
    HyperParams {
        mode: ParamsMode::Theoretical,
        window: if window.is_finite() && window < usize::MAX as f64 { window as usize } else { usize::MAX },
        n0,
        n1,
        iterations,
        alpha,
        beta,
        eval_episodes: None,
        analysis: Some(AnalysisParams {
            epsilon,
            phi,
            theta,
            zeta,
            delta,
            delta_prime,
            p,
            c_star,
        }),
    }
}

/// Lowest-index argmax. NaN never wins.
pub fn select_best(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::InvalidParams("no candidates to select from".into()));
    }
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index `k`.
    pub iteration: usize,
    /// Spanner rank for each step `h = 1..=H` (0 where play is uniform).
    pub spanner_ranks: Vec<usize>,
    pub diverted_fraction: f64,
    /// Optimal value of the estimated Z-MDP.
    pub model_value: f64,
    /// Mean reward of that optimal policy on fresh episodes.
    pub candidate_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCounters {
    pub estimation_episodes: u64,
    pub evaluation_episodes: u64,
    pub total_episodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub format_version: u32,
    pub seed: u64,
    pub params: HyperParams,
    pub horizon: usize,
    pub iterations: Vec<IterationRecord>,
    /// 1-based index of the selected iteration.
    pub best_iteration: usize,
    pub policy: ZPolicy,
    pub samples: SampleCounters,
    /// Not serialized, so reports from identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Policies built along the way, for structural inspection.
#[derive(Clone, Debug, Default)]
pub struct LearnTrace {
    /// `averaged[k - 1][h - 1] = π̄^{k,h}`.
    pub averaged: Vec<Vec<Arc<GeneralPolicy>>>,
    /// `spanner[k - 1][h - 1] = π^{k+1,h,0}`.
    pub spanner: Vec<Vec<Arc<GeneralPolicy>>>,
    /// `mixed[k - 1][h - 1] = π^{k+1,h}`.
    pub mixed: Vec<Vec<Arc<GeneralPolicy>>>,
}

pub fn learn(env: &dyn Environment, params: &HyperParams, seed: u64) -> Result<LearnReport> {
    Ok(learn_traced(env, params, seed)?.0)
}

pub fn learn_traced(env: &dyn Environment, params: &HyperParams, seed: u64) -> Result<(LearnReport, LearnTrace)> {
    let start = Instant::now();
    params.validate()?;
    let horizon = env.horizon();
    let l = params.window;
    if horizon <= l {
        if params.mode == ParamsMode::Theoretical {
            return Err(Error::DeskScale(format!("theoretical L = {l} reaches the horizon H = {horizon}")));
        }
        return Err(Error::InvalidParams(format!("need H > L (H = {horizon}, L = {l})")));
    }
    let episode_cap = 1e12;
    let n_eval = params.eval_count(horizon);
    if params.n0 > episode_cap || n_eval > episode_cap {
        return Err(Error::DeskScale(format!(
            "N0 = {:.3e} and evaluation count {:.3e} must stay below {episode_cap:.0e}",
            params.n0, n_eval
        )));
    }
    let (n0, n1, n_eval) = (params.n0 as u64, params.n1 as u64, n_eval as u64);

    let mut gathered: Vec<Vec<Arc<GeneralPolicy>>> = vec![vec![Arc::new(GeneralPolicy::UniformRandom)]; horizon];
    let mut trace = LearnTrace::default();
    let mut records = Vec::with_capacity(params.iterations);
    let mut candidates = Vec::with_capacity(params.iterations);
    for k in 1..=params.iterations {
        let averaged: Vec<Arc<GeneralPolicy>> = gathered
            .iter()
            .map(|ps| running_average(ps).map(Arc::new))
            .collect::<Result<_>>()?;
        let (mhat, _) = approx_mdp(env, l, n0, n1, &averaged, seed, &format!("iter{k}/estimate"))?;

        let spans: Vec<(GeneralPolicy, usize)> = (1..=horizon)
            .into_par_iter()
            .map(|h| bary_spanner_policy(&mhat, h))
            .collect::<Result<_>>()?;
        let ranks = spans.iter().map(|(_, r)| *r).collect();
        let spanner: Vec<Arc<GeneralPolicy>> = spans.into_iter().map(|(p, _)| Arc::new(p)).collect();
        let mixed: Vec<Arc<GeneralPolicy>> = (1..=horizon)
            .map(|h| tail_average(&spanner[h - 1..]).map(Arc::new))
            .collect::<Result<_>>()?;
        for (g, m) in gathered.iter_mut().zip(&mixed) {
            g.push(m.clone());
        }

        let (pi_star, values) = dp_optimal(&mhat);
        records.push(IterationRecord {
            iteration: k,
            spanner_ranks: ranks,
            diverted_fraction: mhat.diverted_fraction(),
            model_value: optimal_value(&values, &mhat.space),
            candidate_value: f64::NAN,
        });
        candidates.push(pi_star);
        trace.averaged.push(averaged);
        trace.spanner.push(spanner);
        trace.mixed.push(mixed);
    }

    for (record, pi) in records.iter_mut().zip(&candidates) {
        let policy = GeneralPolicy::atom(pi.clone());
        let runs = env.run(&policy, n_eval, seed, &format!("iter{}/evaluate", record.iteration))?;
        record.candidate_value = runs.iter().map(|t| t.total_reward()).sum::<f64>() / n_eval as f64;
    }
    let values: Vec<f64> = records.iter().map(|r| r.candidate_value).collect();
    let best = select_best(&values)?;

    let k = params.iterations as u64;
    let estimation = k * horizon as u64 * n0;
    let evaluation = k * n_eval;
    let report = LearnReport {
        format_version: FORMAT_VERSION,
        seed,
        params: params.clone(),
        horizon,
        iterations: records,
        best_iteration: best + 1,
        policy: candidates.swap_remove(best),
        samples: SampleCounters {
            estimation_episodes: estimation,
            evaluation_episodes: evaluation,
            total_episodes: estimation + evaluation,
        },
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok((report, trace))
}
