//! Decoders: DD, the three phases of the spatially coupled decoder (SPIV),
//! and the two-stage adaptive protocol.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::Bound;
use crate::bounds::{spiv_weights, SpivWeights};
use crate::designs::{build_sc_design, build_stage2_query, derive_sc_params, ScOverrides, ScParams};
use crate::error::{check_len, Error, Result};
use crate::instance::{infected_count, Design, InfectionVector, ResultVector, ScLayout};

/// DD restricted to the tests in `tests` and the individuals accepted by
/// `eligible`. Writes decisions for eligible individuals into `out`.
fn dd_restricted(
    design: &Design,
    results: &ResultVector,
    tests: Range<usize>,
    eligible: impl Fn(usize) -> bool,
    out: &mut [bool],
) {
    let mut cleared = vec![false; design.n()];
    for a in tests.clone().filter(|&a| !results.get(a)) {
        for &x in design.members(a) {
            cleared[x as usize] = true;
        }
    }
    for a in tests.filter(|&a| results.get(a)) {
        let mut survivors = design
            .members(a)
            .iter()
            .map(|&x| x as usize)
            .filter(|&x| eligible(x) && !cleared[x]);
        if let (Some(x), None) = (survivors.next(), survivors.next()) {
            out[x] = true;
        }
    }
}

/// DD: clear every member of a negative test, declare the sole surviving
/// member of a positive test infected, everyone else healthy.
pub fn dd_decode(design: &Design, results: &ResultVector) -> Result<InfectionVector> {
    check_len(design.m(), results.len())?;
    let mut out = vec![false; design.n()];
    dd_restricted(design, results, 0..design.m(), |_| true, &mut out);
    Ok(InfectionVector::from_bits(out))
}

fn layout_of(design: &Design) -> Result<&ScLayout> {
    design.layout().ok_or(Error::MissingLayout)
}

/// Phase 1: DD on the seed block `F[0]` and the seed individuals
/// `V[1] ∪ … ∪ V[s]`. Everyone else is 0.
pub fn spiv_phase1(design: &Design, results: &ResultVector) -> Result<InfectionVector> {
    check_len(design.m(), results.len())?;
    let layout = layout_of(design)?;
    let mut out = vec![false; design.n()];
    dd_restricted(design, results, layout.tests(0), |x| layout.is_seed(x), &mut out);
    Ok(InfectionVector::from_bits(out))
}

/// Largest number of ring tests (outside `F[0]`) of any individual. For a
/// design built by [`build_sc_design`] this is Δ.
pub fn ring_degree(design: &Design) -> Result<usize> {
    let f0 = layout_of(design)?.f0_size() as u32;
    Ok((0..design.n())
        .map(|x| design.tests_of(x).iter().filter(|&&a| a >= f0).count())
        .max()
        .unwrap_or(0))
}

/// Unexplained-test counts and weighted scores of one compartment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    /// The scored compartment `i + 1`.
    pub compartment: usize,
    pub individuals: Range<usize>,
    /// Row-major `W_{x,j}`, `s - 1` entries per individual.
    pub counts: Vec<u32>,
    pub scores: Vec<f64>,
    s: usize,
}

impl ScoreTable {
    /// `W_{x,j}` for `x` in the scored compartment and `1 ≤ j < s`.
    pub fn count(&self, x: usize, j: usize) -> u32 {
        let row = x - self.individuals.start;
        self.counts[row * (self.s - 1) + j - 1]
    }

    pub fn score(&self, x: usize) -> f64 {
        self.scores[x - self.individuals.start]
    }
}

/// Scores of compartment `V[i+1]` given the estimate `tau` on `V[1..=i]`.
/// `W_{x,j}` counts the tests of `x` in `F[i+j]` none of whose members from
/// `V[i+j-s+1] ∪ … ∪ V[i]` is marked infected, and `W*_x = Σ_j w_j W_{x,j}`.
/// Members of `F[i+j]` that reach it by wrapping around the ring are not
/// consulted even when already decoded.
pub fn compute_scores(design: &Design, tau: &InfectionVector, i: usize, weights: &SpivWeights) -> Result<ScoreTable> {
    check_len(design.n(), tau.len())?;
    let layout = layout_of(design)?;
    let s = layout.s();
    if weights.s != s {
        return Err(Error::InvalidParameter(format!(
            "weights for s={} on a design with s={s}",
            weights.s
        )));
    }
    if !(s <= i && i < layout.ell()) {
        return Err(Error::InvalidParameter(format!(
            "compartment index i={i} outside [{s}, {})",
            layout.ell()
        )));
    }
    // offset[c] = j when F[c] = F[i+j], 1 ≤ j < s
    let mut offset = vec![0usize; layout.ell() + 1];
    let mut explained = vec![false; design.m()];
    for j in 1..s {
        let c = layout.ring(i + j);
        offset[c] = j;
        // the compartments of F[i+j] that precede V[i+1] in its window
        let window = i + j + 1 - s..=i;
        for a in layout.tests(c) {
            explained[a] = design.members(a).iter().any(|&y| {
                let y = y as usize;
                tau.get(y) && window.contains(&layout.compartment_of(y))
            });
        }
    }
    let individuals = layout.individuals(i + 1);
    let mut counts = vec![0u32; individuals.len() * (s - 1)];
    let mut scores = Vec::with_capacity(individuals.len());
    for (row, x) in individuals.clone().enumerate() {
        let w = &mut counts[row * (s - 1)..(row + 1) * (s - 1)];
        for &a in design.tests_of(x) {
            let a = a as usize;
            let j = offset[layout.test_compartment(a)];
            if j > 0 && !explained[a] {
                w[j - 1] += 1;
            }
        }
        scores.push(w.iter().zip(&weights.w).map(|(&c, &wj)| c as f64 * wj).sum());
    }
    Ok(ScoreTable {
        compartment: i + 1,
        individuals,
        counts,
        scores,
        s,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase2Outcome {
    pub tau: InfectionVector,
    /// Tentatively infected individuals of `V[s+1], …, V[ell]`, in order.
    pub compartment_positives: Vec<usize>,
}

/// Phase 2: sweep `V[s+1], …, V[ell]` in ring order. An individual with a
/// negative test is healthy; otherwise it is infected iff its score reaches
/// `(1-ζ)(Δ/s) Σ_j 2^{j/s-1} w_j`.
pub fn spiv_phase2(
    design: &Design,
    results: &ResultVector,
    tau_seed: &InfectionVector,
    weights: &SpivWeights,
    delta: usize,
) -> Result<Phase2Outcome> {
    check_len(design.m(), results.len())?;
    let layout = layout_of(design)?;
    let threshold = weights.threshold(delta);
    let mut tau = tau_seed.clone();
    let mut compartment_positives = Vec::new();
    for i in layout.s()..layout.ell() {
        let table = compute_scores(design, &tau, i, weights)?;
        let mut positives = 0;
        for x in table.individuals.clone() {
            let infected = !design.tests_of(x).iter().any(|&a| !results.get(a as usize)) && table.score(x) >= threshold;
            tau.set(x, infected);
            positives += infected as usize;
        }
        compartment_positives.push(positives);
    }
    Ok(Phase2Outcome {
        tau,
        compartment_positives,
    })
}

/// `(ln n)^{1/4}` and `⌈ln n⌉`, the clean-up threshold and round count.
pub fn cleanup_defaults(n: usize) -> (f64, usize) {
    let ln_n = (n.max(2) as f64).ln();
    (ln_n.powf(0.25), ln_n.ceil() as usize)
}

/// Phase 3 with explicit threshold and round limit. Returns the final
/// estimate and the number of rounds computed; stops early once a round
/// changes nothing, since every later round would repeat it.
pub fn spiv_phase3_with(
    design: &Design,
    results: &ResultVector,
    tau: &InfectionVector,
    threshold: f64,
    max_rounds: usize,
) -> Result<(InfectionVector, usize)> {
    check_len(design.m(), results.len())?;
    check_len(design.n(), tau.len())?;
    let layout = layout_of(design)?;
    let mut tau = tau.clone();
    let mut ones: Vec<u32> = (0..design.m())
        .map(|a| design.members(a).iter().filter(|&&y| tau.get(y as usize)).count() as u32)
        .collect();
    let free = layout.seed_individuals().end..design.n();
    let mut changes = Vec::new();
    let mut rounds = 0;
    while rounds < max_rounds {
        rounds += 1;
        changes.clear();
        for x in free.clone() {
            let own = tau.get(x) as u32;
            // positive tests where nobody besides x is marked infected
            let private = design
                .tests_of(x)
                .iter()
                .filter(|&&a| results.get(a as usize) && ones[a as usize] == own)
                .count();
            let next = private as f64 > threshold;
            if next != tau.get(x) {
                changes.push(x);
            }
        }
        if changes.is_empty() {
            break;
        }
        for &x in &changes {
            let next = !tau.get(x);
            tau.set(x, next);
            for &a in design.tests_of(x) {
                if next {
                    ones[a as usize] += 1;
                } else {
                    ones[a as usize] -= 1;
                }
            }
        }
    }
    Ok((tau, rounds))
}

/// Phase 3: `⌈ln n⌉` simultaneous rounds of `τ_x ← 1{S_x(τ) > (ln n)^{1/4}}`
/// on the non-seed individuals, where `S_x` counts the positive tests of `x`
/// with no other member marked infected.
pub fn spiv_phase3(design: &Design, results: &ResultVector, tau: &InfectionVector) -> Result<InfectionVector> {
    let (threshold, rounds) = cleanup_defaults(design.n());
    spiv_phase3_with(design, results, tau, threshold, rounds).map(|(t, _)| t)
}

/// Tunables of the spatially coupled decoder; `None` means the default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpivOptions {
    /// Slack ζ, default `1/s²`.
    pub zeta: Option<f64>,
    /// Ring degree Δ, default inferred with [`ring_degree`].
    pub delta: Option<usize>,
    /// Clean-up threshold, default `(ln n)^{1/4}`.
    pub cleanup_threshold: Option<f64>,
    /// Clean-up rounds, default `⌈ln n⌉`.
    pub cleanup_rounds: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub seed_size: usize,
    pub seed_positives: usize,
    pub compartment_positives: Vec<usize>,
    pub cleanup_rounds: usize,
    #[serde(skip)]
    pub after_phase1: Option<InfectionVector>,
    #[serde(skip)]
    pub after_phase2: Option<InfectionVector>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutcome {
    pub tau: InfectionVector,
    pub diagnostics: Diagnostics,
}

fn phases_1_2(design: &Design, results: &ResultVector, opts: &SpivOptions) -> Result<(Phase2Outcome, Diagnostics)> {
    let layout = layout_of(design)?;
    let s = layout.s();
    let weights = spiv_weights(s, opts.zeta.unwrap_or(1.0 / (s * s) as f64))?;
    let delta = match opts.delta {
        Some(d) => d,
        None => ring_degree(design)?,
    };
    let seed = spiv_phase1(design, results)?;
    let diagnostics = Diagnostics {
        seed_size: layout.seed_individuals().len(),
        seed_positives: seed.weight(),
        after_phase1: Some(seed.clone()),
        ..Diagnostics::default()
    };
    let phase2 = spiv_phase2(design, results, &seed, &weights, delta)?;
    Ok((phase2, diagnostics))
}

pub fn spiv_with(design: &Design, results: &ResultVector, opts: &SpivOptions) -> Result<DecodeOutcome> {
    let (phase2, mut diagnostics) = phases_1_2(design, results, opts)?;
    let (default_threshold, default_rounds) = cleanup_defaults(design.n());
    let (tau, rounds) = spiv_phase3_with(
        design,
        results,
        &phase2.tau,
        opts.cleanup_threshold.unwrap_or(default_threshold),
        opts.cleanup_rounds.unwrap_or(default_rounds),
    )?;
    diagnostics.compartment_positives = phase2.compartment_positives;
    diagnostics.cleanup_rounds = rounds;
    diagnostics.after_phase2 = Some(phase2.tau);
    Ok(DecodeOutcome { tau, diagnostics })
}

/// Phases 1 to 3 with default parameters.
pub fn spiv(design: &Design, results: &ResultVector) -> Result<DecodeOutcome> {
    spiv_with(design, results, &SpivOptions::default())
}

/// Answers test designs against a hidden infection vector.
pub trait TestingOracle {
    fn answers(&mut self, design: &Design) -> Result<ResultVector>;

    /// Total tests answered so far.
    fn tests_used(&self) -> usize;

    fn queries(&self) -> usize;
}

/// An oracle that evaluates designs against a known σ.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    sigma: InfectionVector,
    tests_used: usize,
    queries: usize,
}

impl SimulatedOracle {
    pub fn new(sigma: InfectionVector) -> Self {
        Self {
            sigma,
            tests_used: 0,
            queries: 0,
        }
    }

    pub fn sigma(&self) -> &InfectionVector {
        &self.sigma
    }
}

impl TestingOracle for SimulatedOracle {
    fn answers(&mut self, design: &Design) -> Result<ResultVector> {
        let r = crate::instance::evaluate_tests(design, &self.sigma)?;
        self.tests_used += design.m();
        self.queries += 1;
        Ok(r)
    }

    fn tests_used(&self) -> usize {
        self.tests_used
    }

    fn queries(&self) -> usize {
        self.queries
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptiveOptions {
    pub overrides: ScOverrides,
    pub spiv: SpivOptions,
}

#[derive(Clone, Debug)]
pub struct AdaptiveOutcome {
    /// The final estimate τ′.
    pub tau: InfectionVector,
    /// The estimate τ after phases 1 and 2 on the first stage.
    pub stage1_tau: InfectionVector,
    pub stage1_params: ScParams,
    pub diagnostics: Diagnostics,
    /// Individuals tested singly in the second stage, ascending.
    pub singles: Vec<usize>,
    /// The second-stage query: singleton tests for `singles` first, then
    /// the pooled `d`-out tests on everyone else.
    pub stage2_design: Design,
    pub stage2_results: ResultVector,
    pub stage1_tests: usize,
    pub stage2_tests: usize,
    /// Cumulative tests reported by the oracle.
    pub total_tests: usize,
}

/// Two-stage protocol with a first-stage ring budget of `(1+ε) m_adapt`.
pub fn adaptive_two_stage<O: TestingOracle, R: Rng + ?Sized>(
    n: usize,
    theta: f64,
    eps: f64,
    oracle: &mut O,
    rng: &mut R,
) -> Result<AdaptiveOutcome> {
    let budget = ((1.0 + eps) * Bound::Adapt.value(n, theta)).ceil() as usize;
    adaptive_two_stage_with(n, theta, budget, &AdaptiveOptions::default(), oracle, rng)
}

/// Stage 1: a spatially coupled design with ring budget `stage1_budget`,
/// decoded by phases 1 and 2 into τ. Stage 2, queried at once: every
/// `x ∈ V_1(τ)` tested alone, and a `⌈10 ln n⌉`-out design with `k` tests on
/// `V_0(τ)` decoded by DD.
pub fn adaptive_two_stage_with<O: TestingOracle, R: Rng + ?Sized>(
    n: usize,
    theta: f64,
    stage1_budget: usize,
    opts: &AdaptiveOptions,
    oracle: &mut O,
    rng: &mut R,
) -> Result<AdaptiveOutcome> {
    let k = infected_count(n, theta);
    let params = derive_sc_params(n, theta, stage1_budget, &opts.overrides)?;
    let (stage1_tau, diagnostics, flagged) = {
        let design = build_sc_design(n, &params, rng)?;
        let results = oracle.answers(&design)?;
        if results.len() != design.m() {
            return Err(Error::OracleInconsistent(format!(
                "{} results for a design of {} tests",
                results.len(),
                design.m()
            )));
        }
        let (phase2, mut diagnostics) = phases_1_2(&design, &results, &opts.spiv)?;
        diagnostics.compartment_positives = phase2.compartment_positives;
        diagnostics.after_phase2 = Some(phase2.tau.clone());
        // individuals already seen in a negative test cannot test positive alone
        let flagged: Vec<bool> = phase2
            .tau
            .support()
            .into_iter()
            .map(|x| design.tests_of(x).iter().any(|&a| !results.get(a as usize)))
            .collect();
        (phase2.tau, diagnostics, flagged)
    };

    let singles = stage1_tau.support();
    let pooled: Vec<usize> = (0..n).filter(|&x| !stage1_tau.get(x)).collect();
    let d = (10.0 * (n as f64).ln()).ceil() as usize;
    let stage2_design = build_stage2_query(n, &singles, &pooled, k, d.min(k), rng)?;
    let stage2_results = oracle.answers(&stage2_design)?;
    if stage2_results.len() != stage2_design.m() {
        return Err(Error::OracleInconsistent(format!(
            "{} results for a design of {} tests",
            stage2_results.len(),
            stage2_design.m()
        )));
    }

    let mut tau = vec![false; n];
    for (t, &x) in singles.iter().enumerate() {
        if stage2_results.get(t) && flagged[t] {
            return Err(Error::OracleInconsistent(format!(
                "individual {x} tests positive alone but was in a negative first-stage test"
            )));
        }
        tau[x] = stage2_results.get(t);
    }
    let in_pool = {
        let mut v = vec![false; n];
        for &x in &pooled {
            v[x] = true;
        }
        v
    };
    dd_restricted(
        &stage2_design,
        &stage2_results,
        singles.len()..stage2_design.m(),
        |x| in_pool[x],
        &mut tau,
    );

    Ok(AdaptiveOutcome {
        tau: InfectionVector::from_bits(tau),
        stage1_tau,
        stage1_params: params,
        diagnostics,
        stage1_tests: params.m_total,
        stage2_tests: stage2_design.m(),
        singles,
        total_tests: oracle.tests_used(),
        stage2_design,
        stage2_results,
    })
}
