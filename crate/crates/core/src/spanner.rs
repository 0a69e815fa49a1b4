//! Approximate barycentric spanners via determinant swaps over a linear
//! optimization oracle.
//!
//! The achievable set may not span the ambient space (unreachable
//! observations, for instance), so the search first discovers its rank `k`
//! and an orthonormal basis `U` of its span, then runs the swap algorithm
//! on `k × k` matrices of embedded points `U x`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{GeneralPolicy, ZPolicy};
use crate::zmdp::{self, TabularZMdp};

/// Relative residual under which a vector counts as inside a span.
pub const RANK_TOL: f64 = 1e-9;

/// A point returned by the oracle: the maximizer and its vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpannerPoint<P> {
    pub policy: P,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpannerResult<P> {
    pub points: Vec<SpannerPoint<P>>,
    /// `k × d` orthonormal rows spanning the achievable set.
    pub embedding: Vec<Vec<f64>>,
    pub lambda: f64,
    pub dim: usize,
    /// Oracle invocations used.
    pub calls: usize,
    /// `log |det|` after Phase 1 and after each accepted swap.
    pub log_det_trace: Vec<f64>,
}

impl<P> SpannerResult<P> {
    pub fn rank(&self) -> usize {
        self.points.len()
    }

    pub fn embed(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.embedding.len(),
            self.embedding.iter().map(|u| dot(u, x)),
        )
    }

    fn matrix(&self) -> DMatrix<f64> {
        let k = self.rank();
        let mut m = DMatrix::zeros(k, k);
        for (j, p) in self.points.iter().enumerate() {
            m.set_column(j, &self.embed(&p.vector));
        }
        m
    }

    /// Coefficients of `x` against the spanner points, and the residual of
    /// `x` outside the spanned subspace.
    pub fn coefficients(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let k = self.rank();
        if k == 0 {
            return (vec![], norm(x));
        }
        let y = self.embed(x);
        let back: Vec<f64> = (0..x.len())
            .map(|i| (0..k).map(|r| self.embedding[r][i] * y[r]).sum())
            .collect();
        let residual = norm(&x.iter().zip(&back).map(|(a, b)| a - b).collect::<Vec<_>>());
        let coeffs = self
            .matrix()
            .lu()
            .solve(&y)
            .map(|c| c.iter().copied().collect())
            .unwrap_or_else(|| vec![f64::NAN; k]);
        (coeffs, residual)
    }

    pub fn smallest_singular_value(&self) -> f64 {
        if self.rank() == 0 {
            return 0.0;
        }
        self.matrix()
            .singular_values()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn largest_singular_value(&self) -> f64 {
        self.matrix().singular_values().iter().copied().fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Residual of `x` after projecting out the orthonormal `basis`.
fn residual(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut r = x.to_vec();
    // two passes of modified Gram-Schmidt for stability
    for _ in 0..2 {
        for u in basis {
            let c = dot(u, &r);
            r.iter_mut().zip(u).for_each(|(ri, ui)| *ri -= c * ui);
        }
    }
    r
}

fn in_span(basis: &[Vec<f64>], x: &[f64]) -> bool {
    norm(&residual(basis, x)) <= RANK_TOL * (1.0 + norm(x))
}

/// Unit vector orthogonal to `basis`, taken from the standard basis.
fn complement_direction(basis: &[Vec<f64>], dim: usize) -> Option<Vec<f64>> {
    let mut best: Option<Vec<f64>> = None;
    let mut best_norm = 0.0;
    for i in 0..dim {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        let r = residual(basis, &e);
        let n = norm(&r);
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = Some(r);
        }
    }
    let r = best?;
    (best_norm > 1e-6).then(|| r.iter().map(|v| v / best_norm).collect())
}

struct CountingOracle<'a, P> {
    inner: &'a mut dyn FnMut(&[f64]) -> Result<(P, Vec<f64>)>,
    calls: usize,
}

impl<P> CountingOracle<'_, P> {
    /// Maximizer of `⟨r, ·⟩` and its value.
    fn call(&mut self, r: &[f64]) -> Result<(P, Vec<f64>, f64)> {
        self.calls += 1;
        let (p, v) = (self.inner)(r)?;
        let val = dot(r, &v);
        if !val.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteOracle);
        }
        Ok((p, v, val))
    }

    /// Better of the maximizers of `r` and `-r` by `|⟨r, ·⟩|`.
    fn call_signed(&mut self, r: &[f64]) -> Result<(P, Vec<f64>, f64)> {
        let (p_pos, v_pos, val_pos) = self.call(r)?;
        let neg: Vec<f64> = r.iter().map(|x| -x).collect();
        let (p_neg, v_neg, val_neg) = self.call(&neg)?;
        // ⟨r, v_neg⟩ = -val_neg
        if val_pos.abs() >= val_neg.abs() {
            Ok((p_pos, v_pos, val_pos))
        } else {
            Ok((p_neg, v_neg, -val_neg))
        }
    }
}

fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().abs().ln()
}

/// `λ`-approximate barycentric spanner of the oracle's achievable set in
/// `R^dim`. The oracle maps a direction `r` to a maximizer of `⟨r, x⟩` and
/// its vector `x`.
pub fn barycentric_spanner<P: Clone>(
    oracle: &mut dyn FnMut(&[f64]) -> Result<(P, Vec<f64>)>,
    dim: usize,
    lambda: f64,
) -> Result<SpannerResult<P>> {
    if !(lambda > 1.0) {
        return Err(Error::InvalidParams(format!("spanner needs lambda > 1, got {lambda}")));
    }
    let mut oracle = CountingOracle {
        inner: oracle,
        calls: 0,
    };

    // Phase 0: rank discovery. Each round probes one direction orthogonal
    // to both the span found so far and the certified-null directions.
    let mut span: Vec<Vec<f64>> = Vec::new();
    let mut found: Vec<SpannerPoint<P>> = Vec::new();
    let mut null: Vec<Vec<f64>> = Vec::new();
    while span.len() + null.len() < dim {
        let probe_basis: Vec<Vec<f64>> = span.iter().chain(&null).cloned().collect();
        let Some(w) = complement_direction(&probe_basis, dim) else {
            break;
        };
        let mut added = false;
        for sign in [1.0, -1.0] {
            let dir: Vec<f64> = w.iter().map(|x| sign * x).collect();
            let (p, v, _) = oracle.call(&dir)?;
            if !in_span(&span, &v) {
                let r = residual(&span, &v);
                let n = norm(&r);
                span.push(r.iter().map(|x| x / n).collect());
                found.push(SpannerPoint {
                    policy: p,
                    vector: v,
                });
                added = true;
                break;
            }
        }
        if !added {
            null.push(w);
        }
    }

    let k = span.len();
    let mut result = SpannerResult {
        points: found,
        embedding: span,
        lambda,
        dim,
        calls: 0,
        log_det_trace: vec![],
    };
    if k == 0 {
        result.calls = oracle.calls;
        return Ok(result);
    }

    // Phase 1: for each column, install the oracle point maximizing the
    // determinant with the other columns fixed.
    let mut m = result.matrix();
    for i in 0..k {
        let inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Lp("spanner matrix became singular".into()))?;
        let dir = ambient_direction(&result.embedding, &inv, i, dim);
        let (p, v, val) = oracle.call_signed(&dir)?;
        if val.abs() > 1.0 + 1e-12 {
            result.points[i] = SpannerPoint {
                policy: p,
                vector: v,
            };
            m = result.matrix();
        }
    }
    let mut log_det = log_abs_det(&m);
    result.log_det_trace.push(log_det);

    // Phase 2: swap while some replacement grows |det| by more than λ.
    loop {
        let mut swapped = false;
        for i in 0..k {
            let inv = m
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Lp("spanner matrix became singular".into()))?;
            let dir = ambient_direction(&result.embedding, &inv, i, dim);
            let (p, v, val) = oracle.call_signed(&dir)?;
            if val.abs() > lambda {
                result.points[i] = SpannerPoint {
                    policy: p,
                    vector: v,
                };
                m = result.matrix();
                let next = log_abs_det(&m);
                assert!(
                    next > log_det + lambda.ln() - 1e-9,
                    "determinant swap failed to grow |det| by lambda"
                );
                log_det = next;
                result.log_det_trace.push(log_det);
                swapped = true;
                break;
            }
        }
        if !swapped {
            break;
        }
    }
    result.calls = oracle.calls;
    Ok(result)
}

/// `Uᵀ (row i of M⁻¹)`: the ambient direction whose inner product with `x`
/// is the factor by which replacing column `i` with `x` scales `det M`.
fn ambient_direction(embedding: &[Vec<f64>], inv: &DMatrix<f64>, i: usize, dim: usize) -> Vec<f64> {
    let mut dir = vec![0.0; dim];
    for (r, u) in embedding.iter().enumerate() {
        let c = inv[(i, r)];
        dir.iter_mut().zip(u).for_each(|(d, ui)| *d += c * ui);
    }
    dir
}

/// Result of checking points against a spanner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpannerCheck {
    pub points: usize,
    pub max_coefficient: f64,
    pub within_bound: bool,
    /// Points lying outside the spanned subspace.
    pub span_violations: usize,
    pub bound: f64,
}

/// Solves every point against the spanner and reports the largest
/// coefficient magnitude.
pub fn verify_spanner<P>(points: &[Vec<f64>], spanner: &SpannerResult<P>, bound: f64) -> SpannerCheck {
    let mut max_coefficient: f64 = 0.0;
    let mut span_violations = 0;
    for x in points {
        let (c, res) = spanner.coefficients(x);
        if res > RANK_TOL * (1.0 + norm(x)) * 10.0 {
            span_violations += 1;
        }
        for v in c {
            max_coefficient = max_coefficient.max(if v.is_nan() { f64::INFINITY } else { v.abs() });
        }
    }
    SpannerCheck {
        points: points.len(),
        max_coefficient,
        within_bound: span_violations == 0 && max_coefficient <= bound + 1e-6,
        span_violations,
        bound,
    }
}

/// Spanner of `{d_{O,h-L}^π : π ∈ Π_Z}` on a Z-MDP, with `λ = 2`.
pub fn zmdp_spanner(zmdp: &TabularZMdp, h: usize) -> Result<SpannerResult<ZPolicy>> {
    let target = h - zmdp.space.window;
    let mut oracle = |r: &[f64]| -> Result<(ZPolicy, Vec<f64>)> {
        let (pi, _) = zmdp::linear_opt(zmdp, r, h)?;
        let v = zmdp::obs_visitation(zmdp, &GeneralPolicy::atom(pi.clone()), target)?;
        Ok((pi, v))
    };
    barycentric_spanner(&mut oracle, zmdp.n_obs_ext(), 2.0)
}

/// Exploration policy for step `h`: a uniform mixture over spanner
/// policies, padded to `max(k, O)` components with the first policy.
/// Uniform play when `h <= L` or the achievable set is `{0}`. Also returns
/// the spanner rank.
pub fn bary_spanner_policy(zmdp: &TabularZMdp, h: usize) -> Result<(GeneralPolicy, usize)> {
    if h <= zmdp.space.window {
        return Ok((GeneralPolicy::UniformRandom, 0));
    }
    let spanner = zmdp_spanner(zmdp, h)?;
    let k = spanner.rank();
    if k == 0 {
        return Ok((GeneralPolicy::UniformRandom, 0));
    }
    let atoms: Vec<Arc<GeneralPolicy>> = spanner
        .points
        .iter()
        .map(|p| Arc::new(GeneralPolicy::atom(p.policy.clone())))
        .collect();
    let mut children = atoms.clone();
    while children.len() < zmdp.space.n_obs {
        children.push(atoms[0].clone());
    }
    Ok((GeneralPolicy::uniform_mixture(children)?, k))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_set_oracle(set: Vec<Vec<f64>>) -> impl FnMut(&[f64]) -> Result<(usize, Vec<f64>)> {
        move |r: &[f64]| {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for (i, x) in set.iter().enumerate() {
                let v = dot(r, x);
                if v > best_val {
                    best_val = v;
                    best = i;
                }
            }
            Ok((best, set[best].clone()))
        }
    }

    #[test]
    fn standard_basis_spans_itself() {
        let set: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let mut oracle = finite_set_oracle(set.clone());
        let s = barycentric_spanner(&mut oracle, 4, 2.0).unwrap();
        assert_eq!(s.rank(), 4);
        let mut chosen: Vec<usize> = s.points.iter().map(|p| p.policy).collect();
        chosen.sort();
        assert_eq!(chosen, vec![0, 1, 2, 3]);
        let check = verify_spanner(&set, &s, 1.0);
        assert!(check.within_bound, "{check:?}");
    }

    #[test]
    fn single_point_has_rank_one() {
        let v = vec![0.2, 0.5, 0.3];
        let mut oracle = finite_set_oracle(vec![v.clone()]);
        let s = barycentric_spanner(&mut oracle, 3, 2.0).unwrap();
        assert_eq!(s.rank(), 1);
        let (c, res) = s.coefficients(&v);
        assert!((c[0] - 1.0).abs() < 1e-12 && res < 1e-12);
    }

    #[test]
    fn zero_set_gives_empty_spanner() {
        let mut oracle = finite_set_oracle(vec![vec![0.0; 3]]);
        let s = barycentric_spanner(&mut oracle, 3, 2.0).unwrap();
        assert_eq!(s.rank(), 0);
        assert_eq!(s.calls, 6);
    }

    #[test]
    fn members_and_zero_have_trivial_coefficients() {
        let set = vec![vec![1.0, 0.0, 0.0], vec![0.5, 0.5, 0.0], vec![0.0, 0.3, 0.7]];
        let mut oracle = finite_set_oracle(set.clone());
        let s = barycentric_spanner(&mut oracle, 3, 2.0).unwrap();
        for (i, p) in s.points.iter().enumerate() {
            let (c, _) = s.coefficients(&p.vector);
            for (j, v) in c.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-9);
            }
        }
        let (c, _) = s.coefficients(&[0.0; 3]);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lambda_must_exceed_one() {
        let mut oracle = finite_set_oracle(vec![vec![1.0]]);
        assert!(barycentric_spanner(&mut oracle, 1, 1.0).is_err());
    }

    #[test]
    fn non_finite_oracle_is_an_error() {
        let mut oracle = |_: &[f64]| -> Result<(usize, Vec<f64>)> { Ok((0, vec![f64::NAN, 0.0])) };
        assert!(matches!(
            barycentric_spanner(&mut oracle, 2, 2.0),
            Err(Error::NonFiniteOracle)
        ));
    }
}
