//! Categorical sampling by inverse CDF.

use rand::Rng;

/// Smallest index `i` with `u < w_0 + … + w_i`, accumulating in index
/// order. When rounding leaves `u` above the total, falls back to the last
/// positive-weight index. `None` if every weight is zero.
pub fn inverse_cdf(weights: &[f64], u: f64) -> Option<usize> {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc && w > 0.0 {
            return Some(i);
        }
    }
    weights.iter().rposition(|&w| w > 0.0)
}

/// Draws an index from `weights` (assumed to sum to one).
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    inverse_cdf(weights, u).expect("categorical over an all-zero row")
}
