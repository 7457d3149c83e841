//! Exhaustive inference on tiny instances.
//!
//! Every function here scans weight-`k` vectors explicitly and refuses to run
//! once `C(n, k)` exceeds [`ENUMERATION_LIMIT`]. Only individuals outside all
//! negative tests can be infected in a consistent vector, so the scan runs
//! over that pool and checks coverage of the positive tests with bit masks.

use std::collections::HashMap;
use std::ops::ControlFlow;

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{check_len, Error, Result};
use crate::instance::{disguised_sets, evaluate_tests, Design, InfectionVector, ResultVector};

pub const ENUMERATION_LIMIT: u128 = 10_000_000;

/// `C(n, k)`, or `u128::MAX` once the running product overflows.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn check_enumerable(n: usize, k: usize) -> Result<()> {
    let candidates = binomial(n, k);
    if candidates > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            candidates,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Calls `visit` on every `k`-subset of `pool` in lexicographic order of
/// positions, stopping early on `Break`.
fn for_each_subset<B>(pool: &[usize], k: usize, mut visit: impl FnMut(&[usize]) -> ControlFlow<B>) -> Option<B> {
    let p = pool.len();
    if k > p {
        return None;
    }
    let mut pos: Vec<usize> = (0..k).collect();
    let mut chosen: Vec<usize> = pos.iter().map(|&i| pool[i]).collect();
    loop {
        if let ControlFlow::Break(b) = visit(&chosen) {
            return Some(b);
        }
        let i = (0..k).rev().find(|&i| pos[i] < p - k + i)?;
        pos[i] += 1;
        for j in i + 1..k {
            pos[j] = pos[j - 1] + 1;
        }
        for j in i..k {
            chosen[j] = pool[pos[j]];
        }
    }
}

/// Positive tests as bit masks over the individuals that avoid every
/// negative test.
struct Coverage {
    words: usize,
    pool: Vec<usize>,
    positives: Vec<Vec<u64>>,
    /// A positive test with no eligible member: nothing is consistent.
    hopeless: bool,
}

impl Coverage {
    fn new(design: &Design, results: &ResultVector) -> Result<Self> {
        check_len(design.m(), results.len())?;
        let n = design.n();
        let mut eligible = vec![true; n];
        for a in (0..design.m()).filter(|&a| !results.get(a)) {
            for &x in design.members(a) {
                eligible[x as usize] = false;
            }
        }
        let words = n.div_ceil(64).max(1);
        let mut hopeless = false;
        let positives = (0..design.m())
            .filter(|&a| results.get(a))
            .map(|a| {
                let mut mask = vec![0u64; words];
                for &x in design.members(a) {
                    let x = x as usize;
                    if eligible[x] {
                        mask[x / 64] |= 1 << (x % 64);
                    }
                }
                hopeless |= mask.iter().all(|&w| w == 0);
                mask
            })
            .collect();
        let pool = (0..n).filter(|&x| eligible[x]).collect();
        Ok(Self {
            words,
            pool,
            positives,
            hopeless,
        })
    }

    fn scan<B>(&self, k: usize, mut visit: impl FnMut(&[usize]) -> ControlFlow<B>) -> Option<B> {
        if self.hopeless {
            return None;
        }
        let mut cand = vec![0u64; self.words];
        for_each_subset(&self.pool, k, |subset| {
            cand.iter_mut().for_each(|w| *w = 0);
            for &x in subset {
                cand[x / 64] |= 1 << (x % 64);
            }
            let covered = self
                .positives
                .iter()
                .all(|mask| mask.iter().zip(&cand).any(|(m, c)| m & c != 0));
            if covered {
                visit(subset)
            } else {
                ControlFlow::Continue(())
            }
        })
    }
}

/// The weight-`k` vectors consistent with a result vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SatisfyingSet {
    /// `Z_k`.
    pub count: u64,
    /// The first `cap` consistent vectors in lexicographic order of their
    /// supports.
    pub vectors: Vec<InfectionVector>,
}

impl SatisfyingSet {
    pub fn truncated(&self) -> bool {
        (self.vectors.len() as u64) < self.count
    }
}

pub fn enumerate_satisfying(design: &Design, results: &ResultVector, k: usize, cap: usize) -> Result<SatisfyingSet> {
    check_enumerable(design.n(), k)?;
    let cov = Coverage::new(design, results)?;
    let n = design.n();
    let mut count = 0u64;
    let mut vectors = Vec::new();
    cov.scan::<()>(k, |subset| {
        count += 1;
        if vectors.len() < cap {
            vectors.push(InfectionVector::from_indices(n, subset).expect("subset of 0..n"));
        }
        ControlFlow::Continue(())
    });
    Ok(SatisfyingSet { count, vectors })
}

/// `Z_k ≥ max(1, |V0+|·|V1+|)` for the results produced by `sigma`.
pub fn zk_bound_check(design: &Design, sigma: &InfectionVector) -> Result<bool> {
    let results = evaluate_tests(design, sigma)?;
    let z = enumerate_satisfying(design, &results, sigma.weight(), 0)?.count;
    let sets = disguised_sets(design, sigma)?;
    let swaps = (sets.v0plus.len() as u64) * (sets.v1plus.len() as u64);
    Ok(z >= swaps.max(1))
}

/// A uniform draw from the consistent weight-`k` vectors: one pass counts
/// them, a second returns the one at a uniform rank.
pub fn posterior_sample<R: Rng + ?Sized>(
    design: &Design,
    results: &ResultVector,
    k: usize,
    rng: &mut R,
) -> Result<InfectionVector> {
    check_enumerable(design.n(), k)?;
    let cov = Coverage::new(design, results)?;
    let mut count = 0u64;
    cov.scan::<()>(k, |_| {
        count += 1;
        ControlFlow::Continue(())
    });
    if count == 0 {
        return Err(Error::NoConsistentVector { max_weight: k });
    }
    let mut rank = rng.random_range(0..count);
    let support = cov
        .scan(k, |subset| {
            if rank == 0 {
                ControlFlow::Break(subset.to_vec())
            } else {
                rank -= 1;
                ControlFlow::Continue(())
            }
        })
        .expect("second pass sees the same vectors");
    InfectionVector::from_indices(design.n(), &support)
}

/// Posterior inclusion probability of every individual under the uniform
/// distribution on consistent weight-`k` vectors.
pub fn posterior_marginals(design: &Design, results: &ResultVector, k: usize) -> Result<Vec<f64>> {
    check_enumerable(design.n(), k)?;
    let cov = Coverage::new(design, results)?;
    let mut hits = vec![0u64; design.n()];
    let mut count = 0u64;
    cov.scan::<()>(k, |subset| {
        count += 1;
        subset.iter().for_each(|&x| hits[x] += 1);
        ControlFlow::Continue(())
    });
    if count == 0 {
        return Err(Error::NoConsistentVector { max_weight: k });
    }
    Ok(hits.into_iter().map(|h| h as f64 / count as f64).collect())
}

/// A minimum-weight consistent vector of weight at most `max_weight`, the
/// one with the lexicographically smallest support among ties.
pub fn ml_decode(design: &Design, results: &ResultVector, max_weight: usize) -> Result<InfectionVector> {
    let cov = Coverage::new(design, results)?;
    let budget = (0..=max_weight.min(cov.pool.len()))
        .map(|w| binomial(cov.pool.len(), w))
        .fold(0u128, u128::saturating_add);
    if budget > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            candidates: budget,
            limit: ENUMERATION_LIMIT,
        });
    }
    for w in 0..=max_weight {
        if let Some(support) = cov.scan(w, |subset| ControlFlow::Break(subset.to_vec())) {
            return InfectionVector::from_indices(design.n(), &support);
        }
    }
    Err(Error::NoConsistentVector { max_weight })
}

/// Empirical frequencies of repeated [`posterior_sample`] draws against
/// the uniform distribution on all consistent vectors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformityCheck {
    pub support_size: u64,
    pub draws: usize,
    /// Draw counts, indexed like the lexicographic list of consistent vectors.
    pub counts: Vec<u64>,
    pub chi_square: f64,
    pub p_value: f64,
}

/// Largest consistent set [`posterior_uniformity`] will tabulate.
pub const UNIFORMITY_LIMIT: usize = 10_000;

pub fn posterior_uniformity<R: Rng + ?Sized>(
    design: &Design,
    results: &ResultVector,
    k: usize,
    draws: usize,
    rng: &mut R,
) -> Result<UniformityCheck> {
    let set = enumerate_satisfying(design, results, k, UNIFORMITY_LIMIT)?;
    if set.truncated() {
        return Err(Error::TooLarge {
            candidates: set.count as u128,
            limit: UNIFORMITY_LIMIT as u128,
        });
    }
    if set.count == 0 {
        return Err(Error::NoConsistentVector { max_weight: k });
    }
    let index: HashMap<Vec<usize>, usize> = set.vectors.iter().enumerate().map(|(i, v)| (v.support(), i)).collect();
    let mut counts = vec![0u64; set.vectors.len()];
    for _ in 0..draws {
        let draw = posterior_sample(design, results, k, rng)?;
        counts[index[&draw.support()]] += 1;
    }
    let expected = draws as f64 / counts.len() as f64;
    let chi_square: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p_value = if counts.len() < 2 {
        1.0
    } else {
        ChiSquared::new((counts.len() - 1) as f64)
            .expect("positive degrees of freedom")
            .sf(chi_square)
    };
    Ok(UniformityCheck {
        support_size: set.count,
        draws,
        counts,
        chi_square,
        p_value,
    })
}

/// A random instance on at most `max_n` individuals: a Δ-out, Bernoulli or
/// free-form design with up to ten tests and a uniformly drawn σ of random
/// weight at most 5.
pub fn random_tiny_instance<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> Result<(Design, InfectionVector)> {
    let n = rng.random_range(2..=max_n.max(2));
    let m = rng.random_range(1..=10);
    let design = match rng.random_range(0..3) {
        0 => {
            let delta = rng.random_range(1..=m);
            crate::designs::build_delta_out(n, m, delta, rng)?
        }
        1 => {
            let p = rng.random_range(0.05..0.6);
            crate::designs::build_bernoulli(n, m, p, rng)?
        }
        _ => {
            let tests = (0..m)
                .map(|_| (0..n).filter(|_| rng.random_bool(0.3)).collect())
                .collect();
            Design::from_tests(n, tests)?
        }
    };
    let k = rng.random_range(0..=n.min(5));
    let sigma = crate::instance::sample_sigma(n, k, rng)?;
    Ok((design, sigma))
}
