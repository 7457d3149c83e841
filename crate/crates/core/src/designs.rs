//! Random test design constructors.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{infected_count, Design, ScLayout};

/// Pushes `amount` distinct uniform values from `lo..lo + len`, sorted, onto
/// the end of `out`.
fn sample_distinct<R: Rng + ?Sized>(rng: &mut R, lo: usize, len: usize, amount: usize, out: &mut Vec<u32>) {
    debug_assert!(amount <= len);
    let start = out.len();
    if amount * 2 <= len {
        while out.len() - start < amount {
            let v = (lo + rng.random_range(0..len)) as u32;
            if let Err(p) = out[start..].binary_search(&v) {
                out.insert(start + p, v);
            }
        }
    } else {
        out.extend(
            rand::seq::index::sample(rng, len, amount)
                .into_iter()
                .map(|i| (lo + i) as u32),
        );
        out[start..].sort_unstable();
    }
}

/// Optional replacements for the asymptotic parameter formulas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScOverrides {
    pub ell: Option<usize>,
    pub s: Option<usize>,
    pub delta: Option<usize>,
    pub f0_size: Option<usize>,
    pub seed_degree: Option<usize>,
}

/// Parameters of a spatially coupled design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScParams {
    pub ell: usize,
    pub s: usize,
    /// Ring degree of every individual; a multiple of `s`.
    pub delta: usize,
    pub f0_size: usize,
    pub seed_degree: usize,
    /// Ring tests `|F[1]| + … + |F[ell]|`; a multiple of `ell`.
    pub m_inner: usize,
    pub m_total: usize,
}

impl ScParams {
    pub fn ring_size(&self) -> usize {
        self.m_inner / self.ell
    }

    pub fn per_compartment_degree(&self) -> usize {
        self.delta / self.s
    }

    fn validate(&self) -> Result<()> {
        if self.s >= self.ell {
            return Err(Error::DegenerateSize(format!(
                "s={} must be below ell={}",
                self.s, self.ell
            )));
        }
        if [
            self.ell,
            self.s,
            self.delta,
            self.f0_size,
            self.seed_degree,
            self.m_inner,
        ]
        .contains(&0)
        {
            return Err(Error::InvalidParameter(format!(
                "all parameters must be positive: {self:?}"
            )));
        }
        if !self.delta.is_multiple_of(self.s) {
            return Err(Error::InvalidParameter(format!(
                "delta={} not a multiple of s={}",
                self.delta, self.s
            )));
        }
        if !self.m_inner.is_multiple_of(self.ell) || self.m_total != self.m_inner + self.f0_size {
            return Err(Error::InvalidParameter(format!("inconsistent test counts: {self:?}")));
        }
        Ok(())
    }
}

/// ℓ = ⌈(ln n)^{1/2}⌉, s = ⌈ln ln n⌉, ring tests rounded up to a multiple of
/// ℓ, Δ the smallest multiple of s with Δ ≥ m ln2 / k, a seed block of
/// 10⌈(ks/ℓ) ln n⌉ tests and seed degree ⌈10 ln2 ln n⌉.
pub fn derive_sc_params(n: usize, theta: f64, m_budget: usize, overrides: &ScOverrides) -> Result<ScParams> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("n={n} too small; need n >= 3")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("θ = {theta} not in (0, 1)")));
    }
    let k = infected_count(n, theta);
    if k >= n {
        return Err(Error::DegenerateSize(format!("k={k} >= n={n}")));
    }
    let ln_n = (n as f64).ln();
    let ell = overrides.ell.unwrap_or_else(|| ln_n.sqrt().ceil() as usize);
    let s = overrides.s.unwrap_or_else(|| ln_n.ln().ceil().max(1.0) as usize);
    if s >= ell {
        return Err(Error::DegenerateSize(format!("s={s} >= ell={ell} at n={n}")));
    }
    if m_budget < ell {
        return Err(Error::InvalidParameter(format!(
            "test budget {m_budget} below ell={ell}"
        )));
    }
    let m_inner = m_budget.div_ceil(ell) * ell;
    let delta = overrides.delta.unwrap_or_else(|| {
        let target = m_inner as f64 * LN_2 / k as f64;
        ((target / s as f64).ceil().max(1.0) as usize) * s
    });
    let f0_size = overrides
        .f0_size
        .unwrap_or_else(|| 10 * ((k * s) as f64 / ell as f64 * ln_n).ceil() as usize);
    let seed_degree = overrides
        .seed_degree
        .unwrap_or_else(|| (10.0 * LN_2 * ln_n).ceil() as usize);
    let params = ScParams {
        ell,
        s,
        delta,
        f0_size,
        seed_degree,
        m_inner,
        m_total: m_inner + f0_size,
    };
    params.validate()?;
    Ok(params)
}

/// Spatially coupled design: every `x ∈ V[i]` joins Δ/s uniform tests of
/// each of `F[i], …, F[i+s-1]` (ring indices) and seed individuals
/// additionally join `seed_degree` uniform tests of `F[0]`.
pub fn build_sc_design<R: Rng + ?Sized>(n: usize, params: &ScParams, rng: &mut R) -> Result<Design> {
    params.validate()?;
    let layout = ScLayout::new(n, params.m_total, params.ell, params.s, params.f0_size)?;
    let per = params.per_compartment_degree();
    if per > layout.ring_size() {
        return Err(Error::InvalidParameter(format!(
            "Δ/s = {per} exceeds the {} tests of a compartment",
            layout.ring_size()
        )));
    }
    if params.seed_degree > params.f0_size {
        return Err(Error::InvalidParameter(format!(
            "seed degree {} exceeds the seed block of {} tests",
            params.seed_degree, params.f0_size
        )));
    }
    let design = Design::from_individuals(n, params.m_total, |x, buf| {
        let i = layout.compartment_of(x);
        if i <= params.s {
            sample_distinct(rng, 0, params.f0_size, params.seed_degree, buf);
        }
        for j in 1..=params.s {
            let range = layout.tests(layout.ring(i + j - 1));
            sample_distinct(rng, range.start, range.len(), per, buf);
        }
        Ok(())
    })?;
    design.with_layout(layout)
}

/// `(m/k) ln 2` rounded to the nearest integer, clamped to `1..=m`.
pub fn default_delta(m: usize, k: usize) -> usize {
    let d = (m as f64 / k.max(1) as f64 * LN_2).round() as usize;
    d.clamp(1, m.max(1))
}

/// Constant-weight design: each individual joins `delta` distinct uniform tests.
pub fn build_delta_out<R: Rng + ?Sized>(n: usize, m: usize, delta: usize, rng: &mut R) -> Result<Design> {
    if delta > m {
        return Err(Error::InvalidParameter(format!("delta={delta} exceeds m={m}")));
    }
    Design::from_individuals(n, m, |_, buf| {
        sample_distinct(rng, 0, m, delta, buf);
        Ok(())
    })
}

/// `1 - 2^{-1/k}`, the edge probability at which a test of a Bernoulli
/// design is negative with probability exactly 1/2.
pub fn default_edge_prob(k: usize) -> f64 {
    -(-LN_2 / k.max(1) as f64).exp_m1()
}

/// Bernoulli design: each of the `n·m` potential edges independently.
pub fn build_bernoulli<R: Rng + ?Sized>(n: usize, m: usize, edge_prob: f64, rng: &mut R) -> Result<Design> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidParameter(format!(
            "edge probability {edge_prob} not in [0, 1]"
        )));
    }
    if edge_prob == 1.0 {
        return Design::from_individuals(n, m, |_, buf| {
            buf.extend(0..m as u32);
            Ok(())
        });
    }
    let total = (n as u128) * (m as u128);
    // Geometric skipping over the row-major edge slots.
    let log_q = (-edge_prob).ln_1p();
    let next_gap = |rng: &mut R| -> u128 {
        if edge_prob == 0.0 {
            return total;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let g = (u.ln() / log_q).floor();
        if g >= total as f64 {
            total
        } else {
            g as u128
        }
    };
    let mut pos = next_gap(rng);
    Design::from_individuals(n, m, |x, buf| {
        let row_end = (x as u128 + 1) * m as u128;
        while pos < row_end {
            buf.push((pos - x as u128 * m as u128) as u32);
            pos = pos.saturating_add(1).saturating_add(next_gap(rng));
        }
        Ok(())
    })
}

/// Smallest `n' ≥ ⌈n^{θ/θ'}/2⌉` with `⌈n'^{θ'}⌉ = ⌈n^θ⌉`.
pub fn diluted_population(n: usize, theta: f64, theta_prime: f64) -> Result<usize> {
    if !(theta > 0.0 && theta < theta_prime && theta_prime < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < θ={theta} < θ'={theta_prime} < 1"
        )));
    }
    let k = infected_count(n, theta);
    let start = ((n as f64).powf(theta / theta_prime) / 2.0).ceil().max(1.0) as usize;
    let limit = 2 * ((n as f64).powf(theta / theta_prime).ceil() as usize) + 2;
    (start..=limit)
        .find(|&np| infected_count(np, theta_prime) == k)
        .ok_or_else(|| Error::DegenerateSize(format!("no diluted population with k={k} below {limit}")))
}

/// Sub-design on a uniformly random set of `n'` individuals, where `n'` is
/// chosen by [`diluted_population`] so that the infection density θ' yields
/// the same `k`. All tests are kept.
pub fn dilute<R: Rng + ?Sized>(design: &Design, theta: f64, theta_prime: f64, rng: &mut R) -> Result<Design> {
    let np = diluted_population(design.n(), theta, theta_prime)?;
    if np > design.n() {
        return Err(Error::DegenerateSize(format!(
            "diluted population {np} exceeds n={}",
            design.n()
        )));
    }
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, design.n(), np).into_vec();
    chosen.sort_unstable();
    design.induced(&chosen)
}

/// A `d`-out design with `m2` tests on the candidate individuals, indexed
/// locally: individual `i` of the returned design is `candidates[i]`.
pub fn build_stage2_design<R: Rng + ?Sized>(candidates: &[usize], m2: usize, d: usize, rng: &mut R) -> Result<Design> {
    if d > m2 {
        return Err(Error::InvalidParameter(format!("degree d={d} exceeds m2={m2}")));
    }
    Design::from_individuals(candidates.len(), m2, |_, buf| {
        sample_distinct(rng, 0, m2, d, buf);
        Ok(())
    })
}

/// The full second-stage query over the whole population: one singleton test
/// per individual in `singles`, followed by a `d`-out design with `m2` tests
/// on `candidates` (both lists ascending and disjoint). For ascending
/// candidates the random part coincides with [`build_stage2_design`] on the
/// same stream.
pub(crate) fn build_stage2_query<R: Rng + ?Sized>(
    n: usize,
    singles: &[usize],
    candidates: &[usize],
    m2: usize,
    d: usize,
    rng: &mut R,
) -> Result<Design> {
    if d > m2 {
        return Err(Error::InvalidParameter(format!("degree d={d} exceeds m2={m2}")));
    }
    const NONE: u32 = u32::MAX;
    const CANDIDATE: u32 = u32::MAX - 1;
    let mut role = vec![NONE; n];
    for (t, &x) in singles.iter().enumerate() {
        role[x] = t as u32;
    }
    for &x in candidates {
        if role[x] != NONE {
            return Err(Error::InvalidParameter(format!(
                "individual {x} is both tested singly and pooled"
            )));
        }
        role[x] = CANDIDATE;
    }
    let offset = singles.len();
    Design::from_individuals(n, offset + m2, |x, buf| {
        match role[x] {
            NONE => {}
            CANDIDATE => sample_distinct(rng, offset, m2, d, buf),
            t => buf.push(t),
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{evaluate_tests, sample_sigma};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sc_params_at_one_million() {
        let p = derive_sc_params(1_000_000, 0.5, 18_000, &ScOverrides::default()).unwrap();
        assert_eq!((p.ell, p.s), (4, 3));
        assert_eq!(p.m_inner, 18_000);
        assert_eq!(p.delta, 15);
        // 10⌈(1000·3/4)·ln 10^6⌉ and ⌈10 ln2 ln 10^6⌉
        assert_eq!(p.f0_size, 103_620);
        assert_eq!(p.seed_degree, 96);
        assert_eq!(p.m_total, 121_620);
    }

    #[test]
    fn sc_params_round_budget_up() {
        let p = derive_sc_params(1_000_000, 0.5, 18_001, &ScOverrides::default()).unwrap();
        assert_eq!(p.m_inner, 18_004);
    }

    #[test]
    fn sc_params_reject_tiny_populations() {
        // ln 20 ≈ 3.00: ⌈√3.00⌉ = 2 = ⌈ln 3.00⌉.
        assert!(matches!(
            derive_sc_params(20, 0.5, 100, &ScOverrides::default()),
            Err(Error::DegenerateSize(_))
        ));
        assert!(derive_sc_params(2, 0.5, 100, &ScOverrides::default()).is_err());
        let bad = ScOverrides {
            delta: Some(7),
            ..Default::default()
        };
        assert!(derive_sc_params(10_000, 0.5, 1000, &bad).is_err());
    }

    #[test]
    fn sc_design_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let o = ScOverrides {
            f0_size: Some(200),
            seed_degree: Some(10),
            ..Default::default()
        };
        let p = derive_sc_params(10_000, 0.5, 1_000, &o).unwrap();
        let d = build_sc_design(10_000, &p, &mut rng).unwrap();
        let l = d.layout().unwrap().clone();
        assert_eq!(d.m(), p.m_total);
        for x in 0..d.n() {
            let expected = if l.is_seed(x) { p.delta + p.seed_degree } else { p.delta };
            assert_eq!(d.degree(x), expected);
            let i = l.compartment_of(x);
            for j in 1..=p.s {
                let c = l.ring(i + j - 1);
                let in_c = d
                    .tests_of(x)
                    .iter()
                    .filter(|&&a| l.test_compartment(a as usize) == c)
                    .count();
                assert_eq!(in_c, p.delta / p.s);
            }
        }
    }

    #[test]
    fn sc_design_is_reproducible() {
        let p = derive_sc_params(10_000, 0.4, 500, &ScOverrides::default()).unwrap();
        let a = build_sc_design(10_000, &p, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = build_sc_design(10_000, &p, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sc_design_rejects_oversized_degree() {
        let o = ScOverrides {
            delta: Some(303),
            ..Default::default()
        };
        let p = derive_sc_params(10_000, 0.5, 400, &o).unwrap();
        assert!(build_sc_design(10_000, &p, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn delta_out_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = build_delta_out(1000, 50, 7, &mut rng).unwrap();
        assert!((0..1000).all(|x| d.degree(x) == 7));
        assert_eq!((0..50).map(|a| d.test_degree(a)).sum::<usize>(), 7000);
        assert!(build_delta_out(10, 5, 6, &mut rng).is_err());
        // with delta > m/2 the other sampling branch is used
        let d = build_delta_out(100, 10, 9, &mut rng).unwrap();
        assert!((0..100).all(|x| d.degree(x) == 9));
    }

    #[test]
    fn delta_out_half_positive() {
        let (n, m, k) = (10_000, 500, 100);
        let delta = default_delta(m, k);
        assert_eq!(delta, 3);
        let exact = 1.0 - (1.0 - delta as f64 / m as f64).powi(k as i32);
        assert!((exact - 0.5).abs() < 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut frac = 0.0;
        for _ in 0..100 {
            let d = build_delta_out(n, m, delta, &mut rng).unwrap();
            let sigma = sample_sigma(n, k, &mut rng).unwrap();
            frac += evaluate_tests(&d, &sigma).unwrap().positives() as f64 / m as f64;
        }
        frac /= 100.0;
        assert!((frac - 0.5).abs() < 0.05, "positive fraction {frac}");
        // per-trial sd is about sqrt(0.25/500); 100 trials
        assert!(
            (frac - exact).abs() < 3.0 * 0.0023,
            "positive fraction {frac} vs {exact}"
        );
    }

    #[test]
    fn bernoulli_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(build_bernoulli(20, 7, 0.0, &mut rng).unwrap().edge_count(), 0);
        let full = build_bernoulli(20, 7, 1.0, &mut rng).unwrap();
        assert_eq!(full.edge_count(), 140);
        assert!((0..7).all(|a| full.test_degree(a) == 20));
        assert!(build_bernoulli(20, 7, 1.5, &mut rng).is_err());
    }

    #[test]
    fn bernoulli_half_negative() {
        let (n, m, k) = (10_000, 200, 100);
        let p = default_edge_prob(k);
        assert!(((1.0 - p).powi(k as i32) - 0.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut frac = 0.0;
        for _ in 0..100 {
            let d = build_bernoulli(n, m, p, &mut rng).unwrap();
            let sigma = sample_sigma(n, k, &mut rng).unwrap();
            frac += 1.0 - evaluate_tests(&d, &sigma).unwrap().positives() as f64 / m as f64;
        }
        frac /= 100.0;
        assert!((frac - 0.5).abs() < 0.05, "negative fraction {frac}");
    }

    #[test]
    fn bernoulli_edge_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = build_bernoulli(2_000, 300, 0.01, &mut rng).unwrap();
        let mean = 2_000.0 * 300.0 * 0.01;
        let sd = (mean * 0.99f64).sqrt();
        assert!((d.edge_count() as f64 - mean).abs() < 5.0 * sd);
    }

    #[test]
    fn dilution_population() {
        // independent route: the smallest n' with (k-1)^{1/θ'} < n'
        let k = 100usize;
        let oracle = (k as f64 - 1.0).powf(1.0 / 0.8).floor() as usize + 1;
        assert_eq!(oracle, 313);
        assert_eq!(diluted_population(10_000, 0.5, 0.8).unwrap(), 313);
        assert!(diluted_population(10_000, 0.5, 0.5).is_err());
        assert!(diluted_population(10_000, 0.6, 0.5).is_err());
    }

    #[test]
    fn dilute_keeps_tests() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = build_delta_out(10_000, 400, 5, &mut rng).unwrap();
        let g = dilute(&d, 0.5, 0.8, &mut rng).unwrap();
        assert_eq!(g.m(), 400);
        assert_eq!(g.n(), 313);
        assert!((0..g.n()).all(|x| g.degree(x) == 5));
    }

    #[test]
    fn stage2_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = build_stage2_design(&[3, 8, 9], 20, 4, &mut rng).unwrap();
        assert_eq!(d.n(), 3);
        assert!((0..3).all(|x| d.degree(x) == 4));
        let empty = build_stage2_design(&[], 5, 2, &mut rng).unwrap();
        assert_eq!((empty.n(), empty.m(), empty.edge_count()), (0, 5, 0));
        assert!(build_stage2_design(&[1], 3, 4, &mut rng).is_err());
    }

    #[test]
    fn stage2_query_matches_local_design() {
        let cands = [0usize, 2, 5, 6];
        let local = build_stage2_design(&cands, 10, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let q = build_stage2_query(8, &[1, 7], &cands, 10, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(q.m(), 12);
        assert_eq!(q.members(0), &[1]);
        assert_eq!(q.members(1), &[7]);
        for (i, &x) in cands.iter().enumerate() {
            let shifted: Vec<u32> = local.tests_of(i).iter().map(|a| a + 2).collect();
            assert_eq!(q.tests_of(x), shifted.as_slice());
        }
        assert_eq!(q.degree(3), 0);
    }
}
