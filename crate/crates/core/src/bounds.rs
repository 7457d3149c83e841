//! Test-count thresholds, KL divergence and the score weights of the
//! spatially coupled decoder. All logarithms are natural.

use std::f64::consts::{E, LN_2};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::infected_count;

/// `q ln(q/p) + (1-q) ln((1-q)/(1-p))` with `0 ln 0 = 0`.
pub fn kl(q: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("q = {q} must lie in [0, 1]")));
    }
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    Ok(term(q, p) + term(1.0 - q, 1.0 - p))
}

/// θ where the two branches of `m_inf` meet: ln2 / (1 + ln2).
pub fn theta_crossover() -> f64 {
    LN_2 / (1.0 + LN_2)
}

/// Named thresholds, usable as the reference of a test-count grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bound {
    #[serde(rename = "m_adapt", alias = "adapt")]
    Adapt,
    #[default]
    #[serde(rename = "m_inf", alias = "inf")]
    Inf,
    #[serde(rename = "m_alg", alias = "alg")]
    Alg,
    #[serde(rename = "m_dd_bernoulli", alias = "dd_bernoulli")]
    DdBernoulli,
    #[serde(rename = "m_bl", alias = "bl")]
    Bl,
    #[serde(rename = "m_mt", alias = "mt")]
    Mt,
}

impl Bound {
    pub const ALL: [Bound; 6] = [
        Bound::Adapt,
        Bound::Inf,
        Bound::Alg,
        Bound::DdBernoulli,
        Bound::Bl,
        Bound::Mt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Bound::Adapt => "m_adapt",
            Bound::Inf => "m_inf",
            Bound::Alg => "m_alg",
            Bound::DdBernoulli => "m_dd_bernoulli",
            Bound::Bl => "m_bl",
            Bound::Mt => "m_mt",
        }
    }

    /// The constant `c(θ)` in `c(θ) n^θ ln n`.
    pub fn coefficient(self, theta: f64) -> f64 {
        let ln2sq = LN_2 * LN_2;
        match self {
            Bound::Adapt => (1.0 - theta) / LN_2,
            Bound::Inf => (theta / ln2sq).max((1.0 - theta) / LN_2),
            Bound::Alg => theta.max(1.0 - theta) / ln2sq,
            Bound::DdBernoulli => E * theta.max(1.0 - theta),
            Bound::Bl => 4.0,
            Bound::Mt => (1.0 - theta) / ln2sq,
        }
    }

    pub fn value(self, n: usize, theta: f64) -> f64 {
        let n = n as f64;
        self.coefficient(theta) * n.powf(theta) * n.ln()
    }
}

impl std::str::FromStr for Bound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.strip_prefix("m_").unwrap_or(s);
        Bound::ALL
            .into_iter()
            .find(|b| &b.name()[2..] == t)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown bound {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTable {
    pub n: usize,
    pub theta: f64,
    pub k: usize,
    pub m_adapt: f64,
    pub m_inf: f64,
    pub m_alg: f64,
    pub m_dd_bernoulli: f64,
    pub m_bl: f64,
    pub m_mt: f64,
    pub counting_lb: u64,
}

pub fn bound_table(n: usize, theta: f64) -> Result<BoundTable> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("θ = {theta} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n={n} too small; need n >= 2")));
    }
    let k = infected_count(n, theta);
    Ok(BoundTable {
        n,
        theta,
        k,
        m_adapt: Bound::Adapt.value(n, theta),
        m_inf: Bound::Inf.value(n, theta),
        m_alg: Bound::Alg.value(n, theta),
        m_dd_bernoulli: Bound::DdBernoulli.value(n, theta),
        m_bl: Bound::Bl.value(n, theta),
        m_mt: Bound::Mt.value(n, theta),
        counting_lb: counting_lower_bound(n, k)?,
    })
}

const EXACT_BINOMIAL_LIMIT: usize = 10_000;

fn binomial_exact(n: usize, k: usize) -> BigUint {
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= BigUint::from(n - i);
        acc /= BigUint::from(i + 1);
    }
    acc
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    let (n, k) = (n as f64, k as f64);
    libm::lgamma(n + 1.0) - libm::lgamma(k + 1.0) - libm::lgamma(n - k + 1.0)
}

/// `⌈log₂ C(n, k)⌉`, exact for `n ≤ 10^4`.
pub fn counting_lower_bound(n: usize, k: usize) -> Result<u64> {
    if k > n {
        return Err(Error::InvalidParameter(format!("k={k} exceeds n={n}")));
    }
    if k == 0 || k == n {
        return Ok(0);
    }
    if n <= EXACT_BINOMIAL_LIMIT {
        // ⌈log₂ c⌉ is the bit length of c - 1
        let c = binomial_exact(n, k) - 1u32;
        Ok(c.bits())
    } else {
        Ok((ln_binomial(n, k) / LN_2).ceil() as u64)
    }
}

/// The pair `(z_j, p_j) = ((1-2ζ) 2^{j/s-1}, 2^{j/s}-1)`: the anchor the
/// infected score is compared against and the unexplained-test probability
/// of a disguised healthy individual.
fn anchors(s: usize, zeta: f64, j: usize) -> (f64, f64) {
    let t = j as f64 / s as f64;
    ((1.0 - 2.0 * zeta) * (t - 1.0).exp2(), t.exp2() - 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpivWeights {
    pub s: usize,
    pub zeta: f64,
    /// `w[j-1]` is the weight of compartment offset `j`, `1 ≤ j < s`.
    pub w: Vec<f64>,
}

impl SpivWeights {
    pub fn get(&self, j: usize) -> f64 {
        self.w[j - 1]
    }

    /// Mean score of an infected individual, `(Δ/s) Σ_j 2^{j/s-1} w_j`.
    pub fn score_mean(&self, delta: usize) -> f64 {
        let s = self.s as f64;
        let sum: f64 = self
            .w
            .iter()
            .enumerate()
            .map(|(i, w)| ((i + 1) as f64 / s - 1.0).exp2() * w)
            .sum();
        delta as f64 / s * sum
    }

    /// `(1-ζ)` times [`score_mean`](Self::score_mean).
    pub fn threshold(&self, delta: usize) -> f64 {
        (1.0 - self.zeta) * self.score_mean(delta)
    }
}

/// `w_j = logit(z_j) - logit(p_j)`, i.e.
/// `ln[(1-2ζ)2^{j/s-1}(2-2^{j/s}) / ((1-(1-2ζ)2^{j/s-1})(2^{j/s}-1))]`.
pub fn spiv_weights(s: usize, zeta: f64) -> Result<SpivWeights> {
    if s < 2 {
        return Err(Error::InvalidParameter(format!(
            "coupling width s={s} must be at least 2"
        )));
    }
    if !(zeta > 0.0 && zeta < 0.5) {
        return Err(Error::InvalidParameter(format!("ζ = {zeta} must lie in (0, 1/2)")));
    }
    let w = (1..s)
        .map(|j| {
            let (z, p) = anchors(s, zeta, j);
            if z < p {
                return Err(Error::Infeasible { j, lhs: z, rhs: p });
            }
            Ok((z * (1.0 - p) / ((1.0 - z) * p)).ln())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpivWeights { s, zeta, w })
}

pub fn spiv_threshold(delta: usize, s: usize, zeta: f64) -> Result<f64> {
    Ok(spiv_weights(s, zeta)?.threshold(delta))
}

/// `(1/s) Σ_{j<s} KL(z_j ‖ p_j)`, the optimum of the constrained rate
/// problem; tends to `1 - ln 2` as `s → ∞` with `ζ = 1/s²`.
pub fn rate_m(s: usize, zeta: f64) -> Result<f64> {
    if s < 2 {
        return Err(Error::InvalidParameter(format!(
            "coupling width s={s} must be at least 2"
        )));
    }
    let mut total = 0.0;
    for j in 1..s {
        let (z, p) = anchors(s, zeta, j);
        if z < p {
            return Err(Error::Infeasible { j, lhs: z, rhs: p });
        }
        total += kl(z, p)?;
    }
    Ok(total / s as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_examples() {
        assert_eq!(kl(0.5, 0.5).unwrap(), 0.0);
        assert!((kl(1.0, 0.3).unwrap() - (1.0f64 / 0.3).ln()).abs() < 1e-15);
        // 0.5 ln 2 + 0.5 ln(2/3)
        assert!((kl(0.5, 0.25).unwrap() - 0.143_841_036_225_890_3).abs() < 1e-12);
        assert!(kl(0.5, 0.0).is_err());
        assert!(kl(0.5, 1.0).is_err());
        assert!(kl(1.5, 0.5).is_err());
    }

    #[test]
    fn kl_nonnegative_on_grid() {
        for i in 0..=20 {
            for j in 1..20 {
                let (q, p) = (i as f64 / 20.0, j as f64 / 20.0);
                let v = kl(q, p).unwrap();
                if i == j {
                    assert!(v.abs() < 1e-15);
                } else {
                    assert!(v > 0.0, "kl({q}, {p}) = {v}");
                }
            }
        }
    }

    #[test]
    fn bound_examples() {
        let t = bound_table(10_000, 0.5).unwrap();
        // 0.5/ln2 · 100 · ln 10^4
        assert!((t.m_adapt - 664.385_618_977_472_4).abs() < 1e-9);
        assert!(t.m_adapt <= t.m_inf && t.m_inf <= t.m_alg);
        let t = bound_table(10_000, 0.3).unwrap();
        assert!((t.m_inf - t.m_adapt).abs() < 1e-12);
        // 0.7/ln2 · 10^{1.2} · ln 10^4
        assert!((t.m_inf - 147.415).abs() < 0.01, "{}", t.m_inf);
        assert!(bound_table(10, 1.0).is_err());
        assert!(bound_table(1, 0.5).is_err());
    }

    #[test]
    fn bound_names_parse() {
        for b in Bound::ALL {
            assert_eq!(b.name().parse::<Bound>().unwrap(), b);
        }
        assert_eq!("inf".parse::<Bound>().unwrap(), Bound::Inf);
        assert!("m_nope".parse::<Bound>().is_err());
    }

    #[test]
    fn counting_examples() {
        assert_eq!(counting_lower_bound(10, 2).unwrap(), 6);
        assert_eq!(counting_lower_bound(64, 1).unwrap(), 6);
        assert_eq!(counting_lower_bound(65, 1).unwrap(), 7);
        assert_eq!(counting_lower_bound(9, 9).unwrap(), 0);
        assert_eq!(counting_lower_bound(9, 0).unwrap(), 0);
        assert!(counting_lower_bound(3, 4).is_err());
    }

    #[test]
    fn counting_exact_and_lgamma_agree_near_cutoff() {
        let exact = counting_lower_bound(10_000, 100).unwrap();
        let approx = (ln_binomial(10_000, 100) / LN_2).ceil() as u64;
        assert_eq!(exact, approx);
    }

    #[test]
    fn counting_tracks_m_adapt() {
        // C(n,k) ≤ (en/k)^k caps the ratio at about 1 + 1/((1-θ) ln n), which
        // only slowly approaches 1.
        let mut prev = f64::INFINITY;
        for n in [1_000usize, 10_000, 100_000, 1_000_000] {
            let t = bound_table(n, 0.5).unwrap();
            let ratio = t.counting_lb as f64 / t.m_adapt;
            let k = t.k as f64;
            let ceiling = (k * (std::f64::consts::E * n as f64 / k).log2()).ceil() / t.m_adapt;
            assert!(ratio > 1.0 && ratio <= ceiling, "n={n}: ratio {ratio} vs {ceiling}");
            assert!(ratio < prev);
            prev = ratio;
        }
    }

    #[test]
    fn weights_example() {
        let w = spiv_weights(3, 1.0 / 9.0).unwrap();
        let oracle = |j: f64| {
            let a = (7.0 / 9.0) * 2f64.powf(j / 3.0 - 1.0) * (2.0 - 2f64.powf(j / 3.0));
            let b = (1.0 - (7.0 / 9.0) * 2f64.powf(j / 3.0 - 1.0)) * (2f64.powf(j / 3.0) - 1.0);
            (a / b).ln()
        };
        assert!((w.get(1) - oracle(1.0)).abs() < 1e-12);
        assert!((w.get(2) - oracle(2.0)).abs() < 1e-12);
        assert!((w.get(1) - 1.00625).abs() < 5e-5, "{}", w.get(1));
        assert!((w.get(2) - 0.125).abs() < 5e-4, "{}", w.get(2));
        let direct = 4.0 * (2f64.powf(-2.0 / 3.0) * oracle(1.0) + 2f64.powf(-1.0 / 3.0) * oracle(2.0));
        assert!((w.score_mean(12) - direct).abs() < 1e-12);
        assert!((w.score_mean(12) - 2.93234).abs() < 5e-5, "{}", w.score_mean(12));
        let th = spiv_threshold(12, 3, 1.0 / 9.0).unwrap();
        assert!((th - 2.607).abs() < 5e-4, "{th}");
        assert!(th < w.score_mean(12));
    }

    #[test]
    fn weights_reject_bad_input() {
        assert!(spiv_weights(1, 0.1).is_err());
        assert!(spiv_weights(3, 0.0).is_err());
        // a large slack pushes (1-2ζ)2^{j/s-1} below 2^{j/s}-1
        assert!(matches!(spiv_weights(3, 0.3), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn rate_small_s_matches_term_sum() {
        let z = 1.0 / 9.0;
        let t1 = kl((1.0 - 2.0 * z) * 2f64.powf(-2.0 / 3.0), 2f64.powf(1.0 / 3.0) - 1.0).unwrap();
        let t2 = kl((1.0 - 2.0 * z) * 2f64.powf(-1.0 / 3.0), 2f64.powf(2.0 / 3.0) - 1.0).unwrap();
        assert!((rate_m(3, z).unwrap() - (t1 + t2) / 3.0).abs() < 1e-14);
    }
}
