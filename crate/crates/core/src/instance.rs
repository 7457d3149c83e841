//! Problem instances and the bipartite individual/test incidence structure.
//!
//! A [`Design`] stores its edges twice, as test-major and individual-major
//! CSR arrays, both sorted ascending. Indices are `u32` so that designs with
//! ~10^8 edges fit comfortably in memory.

use std::fmt;
use std::ops::Range;

use rand::Rng;

use crate::error::{check_len, Error, Result};

/// `⌈n^θ⌉`, treating values within a relative `1e-12` of an integer as that
/// integer so that e.g. `(10^6)^0.5` gives exactly 1000.
pub fn infected_count(n: usize, theta: f64) -> usize {
    let v = (n as f64).powf(theta);
    let k = (v * (1.0 - 1e-12)).ceil();
    (k.max(0.0) as usize).min(n)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProblemInstance {
    n: usize,
    theta: f64,
    k: usize,
}

impl ProblemInstance {
    pub fn new(n: usize, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!("θ = {theta} not in (0, 1)")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("population size must be positive".into()));
        }
        Ok(Self {
            n,
            theta,
            k: infected_count(n, theta).max(1),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Compartment structure of a spatially coupled design.
///
/// Individual compartments `V[1..=ell]` split `0..n` into consecutive ranges,
/// the first `n mod ell` of them one larger. Tests are laid out as the seed
/// block `F[0]` (the first `f0_size` indices) followed by `ell` ring
/// compartments of `ring_size` tests each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScLayout {
    n: usize,
    ell: usize,
    s: usize,
    f0_size: usize,
    ring_size: usize,
}

impl ScLayout {
    pub fn new(n: usize, m: usize, ell: usize, s: usize, f0_size: usize) -> Result<Self> {
        if ell == 0 || s == 0 {
            return Err(Error::InvalidParameter("ell and s must be positive".into()));
        }
        if s >= ell {
            return Err(Error::DegenerateSize(format!(
                "coupling width s={s} must be below ell={ell}"
            )));
        }
        if m < f0_size || !(m - f0_size).is_multiple_of(ell) {
            return Err(Error::InvalidParameter(format!(
                "{m} tests minus a seed block of {f0_size} is not divisible by ell={ell}"
            )));
        }
        Ok(Self {
            n,
            ell,
            s,
            f0_size,
            ring_size: (m - f0_size) / ell,
        })
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn f0_size(&self) -> usize {
        self.f0_size
    }

    /// Tests per ring compartment `|F[i]|`, `i ≥ 1`.
    pub fn ring_size(&self) -> usize {
        self.ring_size
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.f0_size + self.ell * self.ring_size
    }

    /// Maps any compartment index `c ≥ 1` onto `1..=ell` (so `F[ell+i] = F[i]`).
    pub fn ring(&self, c: usize) -> usize {
        debug_assert!(c >= 1);
        (c - 1) % self.ell + 1
    }

    fn start(&self, i: usize) -> usize {
        let (q, r) = (self.n / self.ell, self.n % self.ell);
        (i - 1) * q + (i - 1).min(r)
    }

    /// Individuals of compartment `V[i]`, `1 ≤ i ≤ ell`.
    pub fn individuals(&self, i: usize) -> Range<usize> {
        assert!((1..=self.ell).contains(&i), "compartment {i} out of range");
        self.start(i)..self.start(i + 1)
    }

    /// Compartment index in `1..=ell` of individual `x`.
    pub fn compartment_of(&self, x: usize) -> usize {
        let (q, r) = (self.n / self.ell, self.n % self.ell);
        let big = r * (q + 1);
        if x < big {
            x / (q + 1) + 1
        } else {
            r + (x - big) / q + 1
        }
    }

    /// Tests of compartment `F[c]`, `0 ≤ c ≤ ell`.
    pub fn tests(&self, c: usize) -> Range<usize> {
        assert!(c <= self.ell, "test compartment {c} out of range");
        if c == 0 {
            0..self.f0_size
        } else {
            let lo = self.f0_size + (c - 1) * self.ring_size;
            lo..lo + self.ring_size
        }
    }

    pub fn test_compartment(&self, a: usize) -> usize {
        if a < self.f0_size {
            0
        } else {
            (a - self.f0_size) / self.ring_size + 1
        }
    }

    /// The seed individuals `V[1] ∪ … ∪ V[s]`.
    pub fn seed_individuals(&self) -> Range<usize> {
        0..self.start(self.s + 1)
    }

    pub fn is_seed(&self, x: usize) -> bool {
        x < self.start(self.s + 1)
    }
}

/// An immutable bipartite test design.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Design {
    n: usize,
    m: usize,
    test_offsets: Vec<usize>,
    test_members: Vec<u32>,
    ind_offsets: Vec<usize>,
    ind_tests: Vec<u32>,
    layout: Option<ScLayout>,
}

fn check_index_width(n: usize, m: usize) -> Result<()> {
    if n > u32::MAX as usize || m > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!(
            "design of size {n}x{m} exceeds u32 indexing"
        )));
    }
    Ok(())
}

impl Design {
    /// Builds a design from explicit test membership lists. Members are
    /// sorted and deduplicated.
    pub fn from_tests(n: usize, tests: Vec<Vec<usize>>) -> Result<Self> {
        let m = tests.len();
        check_index_width(n, m)?;
        let mut test_offsets = Vec::with_capacity(m + 1);
        let mut test_members = Vec::new();
        test_offsets.push(0);
        for (a, mut members) in tests.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if let Some(&bad) = members.iter().find(|&&x| x >= n) {
                return Err(Error::InvalidParameter(format!(
                    "test {a} references individual {bad} >= n={n}"
                )));
            }
            test_members.extend(members.into_iter().map(|x| x as u32));
            test_offsets.push(test_members.len());
        }
        let (ind_offsets, ind_tests) = transpose(m, n, &test_offsets, &test_members);
        Ok(Self {
            n,
            m,
            test_offsets,
            test_members,
            ind_offsets,
            ind_tests,
            layout: None,
        })
    }

    /// Builds a design by visiting individuals `0..n` in order; `fill` pushes
    /// the tests of individual `x` into the provided buffer. The buffer is
    /// sorted afterwards; duplicates are rejected.
    pub(crate) fn from_individuals<F>(n: usize, m: usize, mut fill: F) -> Result<Self>
    where
        F: FnMut(usize, &mut Vec<u32>) -> Result<()>,
    {
        check_index_width(n, m)?;
        let mut ind_offsets = Vec::with_capacity(n + 1);
        let mut ind_tests = Vec::new();
        ind_offsets.push(0);
        let mut buf = Vec::new();
        for x in 0..n {
            buf.clear();
            fill(x, &mut buf)?;
            buf.sort_unstable();
            if buf.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidParameter(format!("individual {x} joins a test twice")));
            }
            if buf.last().is_some_and(|&a| a as usize >= m) {
                return Err(Error::InvalidParameter(format!(
                    "individual {x} references a test >= m={m}"
                )));
            }
            ind_tests.extend_from_slice(&buf);
            ind_offsets.push(ind_tests.len());
        }
        let (test_offsets, test_members) = transpose(n, m, &ind_offsets, &ind_tests);
        Ok(Self {
            n,
            m,
            test_offsets,
            test_members,
            ind_offsets,
            ind_tests,
            layout: None,
        })
    }

    pub fn with_layout(mut self, layout: ScLayout) -> Result<Self> {
        check_len(self.n, layout.n())?;
        check_len(self.m, layout.m())?;
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn without_layout(mut self) -> Self {
        self.layout = None;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn layout(&self) -> Option<&ScLayout> {
        self.layout.as_ref()
    }

    pub fn members(&self, a: usize) -> &[u32] {
        &self.test_members[self.test_offsets[a]..self.test_offsets[a + 1]]
    }

    pub fn tests_of(&self, x: usize) -> &[u32] {
        &self.ind_tests[self.ind_offsets[x]..self.ind_offsets[x + 1]]
    }

    pub fn test_degree(&self, a: usize) -> usize {
        self.test_offsets[a + 1] - self.test_offsets[a]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.ind_offsets[x + 1] - self.ind_offsets[x]
    }

    pub fn edge_count(&self) -> usize {
        self.ind_tests.len()
    }

    /// Sub-design on the given individuals (relabelled `0..len` in the
    /// order given) keeping all tests. The layout is dropped.
    pub fn induced(&self, individuals: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n];
        for &x in individuals {
            if x >= self.n || std::mem::replace(&mut seen[x], true) {
                return Err(Error::InvalidParameter(format!("bad or repeated individual {x}")));
            }
        }
        Self::from_individuals(individuals.len(), self.m, |i, buf| {
            buf.extend_from_slice(self.tests_of(individuals[i]));
            Ok(())
        })
    }
}

/// Counting-sort transposition of a CSR incidence structure.
fn transpose(rows: usize, cols: usize, offsets: &[usize], entries: &[u32]) -> (Vec<usize>, Vec<u32>) {
    let mut out_offsets = vec![0usize; cols + 1];
    for &c in entries {
        out_offsets[c as usize + 1] += 1;
    }
    for c in 0..cols {
        out_offsets[c + 1] += out_offsets[c];
    }
    let mut cursor = out_offsets.clone();
    let mut out = vec![0u32; entries.len()];
    for r in 0..rows {
        for &c in &entries[offsets[r]..offsets[r + 1]] {
            let slot = &mut cursor[c as usize];
            out[*slot] = r as u32;
            *slot += 1;
        }
    }
    (out_offsets, out)
}

fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.trim()
        .chars()
        .enumerate()
        .map(|(i, c)| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse {
                line: 1,
                msg: format!("invalid bit {other:?} at position {i}"),
            }),
        })
        .collect()
}

fn write_bits(bits: &[bool], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    for &b in bits {
        f.write_str(if b { "1" } else { "0" })?;
    }
    Ok(())
}

/// The infection status vector σ (or an estimate τ of it).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InfectionVector {
    bits: Vec<bool>,
    weight: usize,
}

impl InfectionVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            bits: vec![false; n],
            weight: 0,
        }
    }

    pub fn ones(n: usize) -> Self {
        Self {
            bits: vec![true; n],
            weight: n,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let weight = bits.iter().filter(|&&b| b).count();
        Self { bits, weight }
    }

    pub fn from_indices(n: usize, infected: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &x in infected {
            if x >= n {
                return Err(Error::InvalidParameter(format!("individual {x} >= n={n}")));
            }
            bits[x] = true;
        }
        Ok(Self::from_bits(bits))
    }

    pub fn parse(s: &str) -> Result<Self> {
        parse_bits(s).map(Self::from_bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.weight
    }

    pub fn get(&self, x: usize) -> bool {
        self.bits[x]
    }

    pub fn set(&mut self, x: usize, value: bool) {
        if self.bits[x] != value {
            self.bits[x] = value;
            if value {
                self.weight += 1;
            } else {
                self.weight -= 1;
            }
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    /// Indices of the set bits, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(x, &b)| b.then_some(x))
            .collect()
    }
}

impl fmt::Display for InfectionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_bits(&self.bits, f)
    }
}

/// The vector of test outcomes σ̂.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ResultVector {
    bits: Vec<bool>,
}

impl ResultVector {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn parse(s: &str) -> Result<Self> {
        parse_bits(s).map(Self::from_bits)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, a: usize) -> bool {
        self.bits[a]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn positives(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

impl fmt::Display for ResultVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_bits(&self.bits, f)
    }
}

/// Individuals without a negative test, split by their true status.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DisguisedSets {
    /// Healthy individuals all of whose tests contain an infected individual.
    pub v0plus: Vec<usize>,
    /// Infected individuals all of whose tests contain another infected individual.
    pub v1plus: Vec<usize>,
}

/// Test results induced by `sigma`: a test is positive iff one of its
/// members is infected. Empty tests are negative.
pub fn evaluate_tests(design: &Design, sigma: &InfectionVector) -> Result<ResultVector> {
    check_len(design.n(), sigma.len())?;
    let bits = sigma.bits();
    let results = (0..design.m())
        .map(|a| design.members(a).iter().any(|&x| bits[x as usize]))
        .collect();
    Ok(ResultVector::from_bits(results))
}

/// Membership of `candidate` in `S_k(G, σ̂)`.
pub fn is_consistent(design: &Design, candidate: &InfectionVector, results: &ResultVector, k: usize) -> Result<bool> {
    check_len(design.n(), candidate.len())?;
    check_len(design.m(), results.len())?;
    if candidate.weight() != k {
        return Ok(false);
    }
    let bits = candidate.bits();
    Ok((0..design.m()).all(|a| design.members(a).iter().any(|&x| bits[x as usize]) == results.get(a)))
}

/// An individual is disguised if each of its tests contains an infected
/// individual other than itself; individuals in no test are vacuously
/// disguised.
pub fn disguised_sets(design: &Design, sigma: &InfectionVector) -> Result<DisguisedSets> {
    check_len(design.n(), sigma.len())?;
    let bits = sigma.bits();
    let infected_in: Vec<u32> = (0..design.m())
        .map(|a| design.members(a).iter().filter(|&&x| bits[x as usize]).count() as u32)
        .collect();
    let mut out = DisguisedSets::default();
    for (x, &infected) in bits.iter().enumerate() {
        let own = infected as u32;
        if design.tests_of(x).iter().all(|&a| infected_in[a as usize] > own) {
            if infected {
                out.v1plus.push(x);
            } else {
                out.v0plus.push(x);
            }
        }
    }
    Ok(out)
}

/// A uniformly random vector of weight `k`.
pub fn sample_sigma<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<InfectionVector> {
    if k > n {
        return Err(Error::InvalidParameter(format!("k={k} exceeds n={n}")));
    }
    let mut bits = vec![false; n];
    for x in rand::seq::index::sample(rng, n, k) {
        bits[x] = true;
    }
    Ok(InfectionVector { bits, weight: k })
}

pub fn mismatch_count(a: &InfectionVector, b: &InfectionVector) -> Result<usize> {
    check_len(a.len(), b.len())?;
    Ok(a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count())
}
