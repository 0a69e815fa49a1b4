//! Random model, Z-MDP and policy generators used by the CLI's `gen`
//! command and by tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::margin::min_margin;
use crate::model::{ModelFile, PomdpModel, FORMAT_VERSION};
use crate::zmdp::{TabularZMdp, ZRow};
use crate::zstate::ZSpace;
use crate::ZPolicy;

/// Rejection attempts allowed to the random generator.
pub const REJECTION_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    NoisyPermutation,
    Random,
}

/// Random probability vector of length `n`. `sharpness > 1` concentrates
/// the mass.
pub fn random_distribution(rng: &mut impl Rng, n: usize, sharpness: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powf(sharpness) + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// Column-stochastic `rows × cols` matrix, stored `[row][col]`.
fn random_columns(rng: &mut impl Rng, rows: usize, cols: usize, sharpness: f64) -> Vec<Vec<f64>> {
    let columns: Vec<Vec<f64>> = (0..cols).map(|_| random_distribution(rng, rows, sharpness)).collect();
    (0..rows).map(|r| (0..cols).map(|c| columns[c][r]).collect()).collect()
}

fn random_skeleton(rng: &mut impl Rng, s: usize, a: usize, o: usize, h: usize) -> ModelFile {
    ModelFile {
        format_version: FORMAT_VERSION,
        horizon: h,
        states: labels("s", s),
        actions: labels("a", a),
        observations: labels("o", o),
        b1: random_distribution(rng, s, 1.0),
        transitions: (1..h)
            .map(|_| (0..a).map(|_| random_columns(rng, s, s, 2.0)).collect())
            .collect(),
        emissions: vec![],
        rewards: (1..h)
            .map(|_| (0..o).map(|_| (rng.gen::<f64>() * 1000.0).round() / 1000.0).collect())
            .collect(),
    }
}

/// `Ob = (1 − η) P + η/O` with `P` a random injection of states into
/// observations and `η = 1 − γ`, giving margin exactly `γ`.
pub fn noisy_permutation(rng: &mut impl Rng, s: usize, a: usize, o: usize, h: usize, gamma: f64) -> Result<PomdpModel> {
    check_shape(s, a, o, h, gamma)?;
    if o < s {
        return Err(Error::InvalidParams(format!(
            "noisy-permutation needs O >= S (O = {o}, S = {s})"
        )));
    }
    let mut file = random_skeleton(rng, s, a, o, h);
    let eta = 1.0 - gamma;
    file.emissions = (2..=h)
        .map(|_| {
            let mut targets: Vec<usize> = (0..o).collect();
            targets.shuffle(rng);
            (0..o)
                .map(|obs| {
                    (0..s)
                        .map(|st| (1.0 - eta) * f64::from(u8::from(targets[st] == obs)) + eta / o as f64)
                        .collect()
                })
                .collect()
        })
        .collect();
    PomdpModel::from_file(file)
}

/// Random emissions, resampled until every step has margin `>= γ`.
pub fn random_observable(rng: &mut impl Rng, s: usize, a: usize, o: usize, h: usize, gamma: f64) -> Result<PomdpModel> {
    check_shape(s, a, o, h, gamma)?;
    let base = random_skeleton(rng, s, a, o, h);
    for _ in 0..REJECTION_BUDGET {
        let mut file = base.clone();
        file.emissions = (2..=h).map(|_| random_columns(rng, o, s, 4.0)).collect();
        let model = PomdpModel::from_file(file)?;
        if min_margin(&model)? >= gamma {
            return Ok(model);
        }
    }
    Err(Error::RejectionBudget(REJECTION_BUDGET))
}

pub fn generate(
    rng: &mut impl Rng,
    structure: Structure,
    s: usize,
    a: usize,
    o: usize,
    h: usize,
    gamma: f64,
) -> Result<PomdpModel> {
    match structure {
        Structure::NoisyPermutation => noisy_permutation(rng, s, a, o, h, gamma),
        Structure::Random => random_observable(rng, s, a, o, h, gamma),
    }
}

fn check_shape(s: usize, a: usize, o: usize, h: usize, gamma: f64) -> Result<()> {
    if s == 0 || a == 0 || o == 0 || h < 2 {
        return Err(Error::InvalidParams("need S, A, O >= 1 and H >= 2".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidParams(format!("gamma = {gamma} must lie in (0, 1]")));
    }
    Ok(())
}

/// Fully observable MDP written as a POMDP: `O = S`, `Ob = I`.
pub fn identity_observation(rng: &mut impl Rng, s: usize, a: usize, h: usize) -> Result<PomdpModel> {
    let mut file = random_skeleton(rng, s, a, s, h);
    let eye: Vec<Vec<f64>> = (0..s)
        .map(|i| (0..s).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    file.emissions = vec![eye; h - 1];
    PomdpModel::from_file(file)
}

/// Random Z-structured MDP over windows of width `l`. Each next-observation
/// row drops every observation independently with probability `sparsity`
/// (keeping at least one), so some observations may be unreachable.
pub fn random_zmdp(rng: &mut ChaCha12Rng, l: usize, a: usize, o: usize, h: usize, sparsity: f64) -> Result<TabularZMdp> {
    let space = ZSpace::new(l, a, o)?;
    let mut m = TabularZMdp::new(space, h);
    for step in 1..=h {
        for z in space.windows_at(step) {
            let rewards = (0..a).map(|_| rng.gen::<f64>()).collect();
            let next = if step < h {
                (0..a)
                    .map(|_| {
                        let mut p = random_distribution(rng, o, 1.0);
                        let keep = rng.gen_range(0..o);
                        for (i, x) in p.iter_mut().enumerate() {
                            if i != keep && rng.gen::<f64>() < sparsity {
                                *x = 0.0;
                            }
                        }
                        let t: f64 = p.iter().sum();
                        let mut p: Vec<f64> = p.iter().map(|x| x / t).collect();
                        p.push(0.0);
                        Some(p)
                    })
                    .collect()
            } else {
                vec![]
            };
            m.rows[step - 1].insert(z, ZRow { rewards, next });
        }
    }
    Ok(m)
}

/// Uniformly random deterministic Z-policy on the non-sink windows.
pub fn random_zpolicy(rng: &mut impl Rng, space: ZSpace, horizon: usize) -> ZPolicy {
    let mut p = ZPolicy::new(space, horizon);
    for h in 1..=horizon {
        for z in space.windows_at(h) {
            p.set(h, z, rng.gen_range(0..space.n_actions));
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margin::observability_margin;
    use crate::model::validate_model;
    use crate::seed::SeedSpec;

    fn rng() -> ChaCha12Rng {
        SeedSpec::new(11, "fixtures", 0).stream("gen")
    }

    #[test]
    fn noisy_permutation_hits_target_margin() {
        let mut r = rng();
        for gamma in [1.0, 0.7, 0.3] {
            let m = noisy_permutation(&mut r, 3, 2, 4, 4, gamma).unwrap();
            assert!(validate_model(&m).pass);
            for h in 2..=4 {
                assert!((observability_margin(&m, h).unwrap().gamma - gamma).abs() < 1e-9);
            }
        }
        assert!(noisy_permutation(&mut r, 3, 2, 2, 4, 0.5).is_err());
    }

    #[test]
    fn random_mode_respects_margin() {
        let mut r = rng();
        let m = random_observable(&mut r, 3, 2, 3, 3, 0.3).unwrap();
        assert!(min_margin(&m).unwrap() >= 0.3);
    }

    #[test]
    fn random_zmdp_is_valid() {
        let mut r = rng();
        let m = random_zmdp(&mut r, 1, 2, 3, 4, 0.3).unwrap();
        m.check().unwrap();
    }
}
