//! Observability margin `γ_h = min ‖Ob_h x‖₁ / ‖x‖₁` over sum-zero `x ≠ 0`.
//!
//! Every sum-zero `x` with `‖x‖₁ = 1` splits as `p − q` with `p, q ≥ 0`
//! of mass 1/2 each and disjoint supports. Enumerating the bipartitions of
//! the non-sink states (fixing state 0 on the positive side, since `x` and
//! `−x` have the same ratio) and solving one LP per bipartition gives the
//! margin exactly.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PomdpModel;

/// Largest state count for which the exact margin is computed.
pub const MAX_EXACT_STATES: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginMode {
    /// Bipartition LP enumeration; exact, requires `S <= 12`.
    Exact,
    /// `σ_min(Ob_h) / √S`, a certified lower bound for any `S`.
    SpectralLowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub step: usize,
    pub gamma: f64,
    /// Minimizing sum-zero vector with `‖x‖₁ = 1` (exact mode only).
    pub witness: Option<Vec<f64>>,
    pub mode: MarginMode,
}

pub fn observability_margin(model: &PomdpModel, h: usize) -> Result<Margin> {
    observability_margin_with(model, h, MarginMode::Exact)
}

pub fn observability_margin_with(model: &PomdpModel, h: usize, mode: MarginMode) -> Result<Margin> {
    model.check_step(h, 2, model.horizon, "observability_margin")?;
    let s = model.base_states();
    let ob = model.emission_matrix(h);
    match mode {
        MarginMode::Exact => {
            if s > MAX_EXACT_STATES {
                return Err(Error::DeskScale(format!(
                    "margin requires desk-scale S (S = {s} > {MAX_EXACT_STATES}); use the spectral lower bound"
                )));
            }
            let (gamma, witness) = exact_margin(ob, s)?;
            Ok(Margin {
                step: h,
                gamma,
                witness: Some(witness),
                mode,
            })
        }
        MarginMode::SpectralLowerBound => {
            let rows = ob.len();
            let m = DMatrix::from_fn(rows, s, |i, j| ob[i][j]);
            let sv = m.singular_values();
            let smallest = if rows < s {
                0.0
            } else {
                sv.iter().copied().fold(f64::INFINITY, f64::min)
            };
            Ok(Margin {
                step: h,
                gamma: (smallest / (s as f64).sqrt()).min(1.0),
                witness: None,
                mode,
            })
        }
    }
}

/// Minimum margin over all steps `2..=H`.
pub fn min_margin(model: &PomdpModel) -> Result<f64> {
    let mut best = 1.0f64;
    for h in 2..=model.horizon {
        best = best.min(observability_margin(model, h)?.gamma);
    }
    Ok(best)
}

fn exact_margin(ob: &[Vec<f64>], s: usize) -> Result<(f64, Vec<f64>)> {
    if s < 2 {
        // no nonzero sum-zero vectors exist; the ratio is vacuously 1
        return Ok((1.0, vec![0.0; s]));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    // bit i of `mask` places state i + 1 on the positive side
    for mask in 0u32..(1 << (s - 1)) {
        let positive: Vec<bool> = (0..s)
            .map(|i| i == 0 || (mask >> (i - 1)) & 1 == 1)
            .collect();
        if positive.iter().all(|&p| p) {
            continue;
        }
        let (value, x) = bipartition_lp(ob, &positive)?;
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, x));
        }
    }
    let (gamma, x) = best.expect("at least one bipartition");
    Ok((gamma.clamp(0.0, 1.0), x))
}

/// `min ‖Ob (p − q)‖₁` with `p` on the positive side, `q` on the negative
/// side, each of mass 1/2. The ℓ1 objective is split with auxiliary
/// variables `t_o ≥ ±(Ob x)_o`.
fn bipartition_lp(ob: &[Vec<f64>], positive: &[bool]) -> Result<(f64, Vec<f64>)> {
    let s = positive.len();
    let mut problem = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = (0..s).map(|_| problem.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let sign = |i: usize| if positive[i] { 1.0 } else { -1.0 };

    for row in ob {
        if row[..s].iter().all(|&v| v == 0.0) {
            continue;
        }
        let t = problem.add_var(1.0, (0.0, f64::INFINITY));
        let mut upper = vec![(t, 1.0)];
        let mut lower = vec![(t, 1.0)];
        for i in 0..s {
            if row[i] != 0.0 {
                upper.push((vars[i], -sign(i) * row[i]));
                lower.push((vars[i], sign(i) * row[i]));
            }
        }
        problem.add_constraint(&upper[..], ComparisonOp::Ge, 0.0);
        problem.add_constraint(&lower[..], ComparisonOp::Ge, 0.0);
    }
    let pos: Vec<_> = (0..s).filter(|&i| positive[i]).map(|i| (vars[i], 1.0)).collect();
    let neg: Vec<_> = (0..s).filter(|&i| !positive[i]).map(|i| (vars[i], 1.0)).collect();
    problem.add_constraint(&pos[..], ComparisonOp::Eq, 0.5);
    problem.add_constraint(&neg[..], ComparisonOp::Eq, 0.5);

    let solution = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
    let x: Vec<f64> = (0..s).map(|i| sign(i) * solution[vars[i]]).collect();
    Ok((solution.objective(), x))
}
