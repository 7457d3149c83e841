//! Monte Carlo experiments over a grid of test budgets.
//!
//! A grid point is a multiple of one of the [`Bound`]s. Every trial draws
//! its randomness from a ChaCha stream keyed by the master seed and indexed
//! by `(grid index, trial index)`, so results do not depend on scheduling.

use std::io::{Read, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{spiv_weights, Bound};
use crate::decoders::{
    adaptive_two_stage_with, compute_scores, dd_decode, spiv_with, AdaptiveOptions, SimulatedOracle,
};
use crate::designs::{
    build_bernoulli, build_delta_out, build_sc_design, default_delta, default_edge_prob, derive_sc_params, ScOverrides,
};
use crate::error::{Error, Result};
use crate::instance::{evaluate_tests, infected_count, mismatch_count, sample_sigma, Design, InfectionVector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    #[default]
    Sc,
    DeltaOut,
    Bernoulli,
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidParameter(format!("unknown design kind {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Dd,
    #[default]
    Spiv,
    /// The two-stage protocol; the grid sets its first-stage ring budget.
    Adaptive,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Dd => "dd",
            DecoderKind::Spiv => "spiv",
            DecoderKind::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_owned()))
            .map_err(|_| Error::InvalidParameter(format!("unknown decoder {s:?}")))
    }
}

fn default_trials() -> usize {
    1
}

fn default_parallel() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub theta: f64,
    #[serde(default)]
    pub design: DesignKind,
    #[serde(default)]
    pub decoder: DecoderKind,
    /// Reference threshold of the grid.
    #[serde(default)]
    pub bound: Bound,
    /// Test budgets as multiples of `bound`.
    pub ratios: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub overrides: ScOverrides,
    /// Number of infected individuals, default `⌈n^θ⌉`. Designs are always
    /// parametrised by `⌈n^θ⌉`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(n: usize, theta: f64, ratios: Vec<f64>) -> Self {
        Self {
            n,
            theta,
            design: DesignKind::default(),
            decoder: DecoderKind::default(),
            bound: Bound::default(),
            ratios,
            trials: 1,
            seed: 0,
            overrides: ScOverrides::default(),
            k: None,
            parallel: true,
            output: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("θ = {} not in (0, 1)", self.theta)));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::InvalidParameter(format!("ratio {r} must be positive")));
        }
        if let Some(k) = self.k.filter(|&k| k > self.n) {
            return Err(Error::InvalidParameter(format!("k={k} exceeds n={}", self.n)));
        }
        if self.decoder == DecoderKind::Spiv && self.design != DesignKind::Sc {
            return Err(Error::InvalidParameter("the spiv decoder needs the sc design".into()));
        }
        Ok(())
    }

    pub fn design_k(&self) -> usize {
        infected_count(self.n, self.theta)
    }

    pub fn sigma_k(&self) -> usize {
        self.k.unwrap_or_else(|| self.design_k())
    }

    /// `⌈ratio · bound⌉`, the budget at grid point `point`.
    pub fn budget(&self, point: usize) -> usize {
        (self.ratios[point] * self.bound.value(self.n, self.theta))
            .ceil()
            .max(1.0) as usize
    }
}

/// The random stream of one trial.
pub fn trial_rng(seed: u64, point: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((point as u64) << 32) | trial as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub success: bool,
    pub mismatch: usize,
    pub m_inner: usize,
    /// Tests used, counting every stage.
    pub m_total: usize,
}

/// Per-compartment test budget and the design it produces.
fn build_design(config: &ExperimentConfig, budget: usize, rng: &mut ChaCha8Rng) -> Result<(Design, usize)> {
    let n = config.n;
    let k = config.design_k();
    match config.design {
        DesignKind::Sc => {
            let p = derive_sc_params(n, config.theta, budget, &config.overrides)?;
            Ok((build_sc_design(n, &p, rng)?, p.m_inner))
        }
        DesignKind::DeltaOut => Ok((build_delta_out(n, budget, default_delta(budget, k), rng)?, budget)),
        DesignKind::Bernoulli => Ok((build_bernoulli(n, budget, default_edge_prob(k), rng)?, budget)),
    }
}

/// One trial at grid point `point`: sample σ, build the design, test,
/// decode, and compare with σ.
pub fn run_trial(config: &ExperimentConfig, point: usize, trial: usize) -> Result<TrialOutcome> {
    let mut rng = trial_rng(config.seed, point, trial);
    let budget = config.budget(point);
    let sigma = sample_sigma(config.n, config.sigma_k(), &mut rng)?;
    let (tau, m_inner, m_total) = match config.decoder {
        DecoderKind::Adaptive => {
            let mut oracle = SimulatedOracle::new(sigma.clone());
            let opts = AdaptiveOptions {
                overrides: config.overrides,
                ..Default::default()
            };
            let out = adaptive_two_stage_with(config.n, config.theta, budget, &opts, &mut oracle, &mut rng)?;
            (out.tau, out.stage1_params.m_inner, out.total_tests)
        }
        decoder => {
            let (design, m_inner) = build_design(config, budget, &mut rng)?;
            let results = evaluate_tests(&design, &sigma)?;
            let tau = match decoder {
                DecoderKind::Dd => dd_decode(&design, &results)?,
                _ => spiv_with(&design, &results, &Default::default())?.tau,
            };
            (tau, m_inner, design.m())
        }
    };
    let mismatch = mismatch_count(&tau, &sigma)?;
    Ok(TrialOutcome {
        success: mismatch == 0,
        mismatch,
        m_inner,
        m_total,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub theta: f64,
    pub k: usize,
    pub m_inner: usize,
    /// All tests of the design; for the adaptive protocol the mean over
    /// trials of the total oracle test count, rounded.
    pub m_total: usize,
    pub bound: String,
    pub ratio: f64,
    pub decoder: String,
    pub trials: usize,
    pub successes: usize,
    pub mean_mismatch: f64,
    /// Seconds; excluded from reproducibility comparisons.
    pub wall_time: f64,
    pub seed: u64,
}

impl SweepRecord {
    pub const COLUMNS: [&'static str; 13] = [
        "n",
        "theta",
        "k",
        "m_inner",
        "m_total",
        "bound",
        "ratio",
        "decoder",
        "trials",
        "successes",
        "mean_mismatch",
        "wall_time",
        "seed",
    ];

    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

fn collect_trials(config: &ExperimentConfig, point: usize) -> Result<Vec<TrialOutcome>> {
    #[cfg(feature = "parallel")]
    if config.parallel {
        use rayon::prelude::*;
        return (0..config.trials)
            .into_par_iter()
            .map(|t| run_trial(config, point, t))
            .collect();
    }
    (0..config.trials).map(|t| run_trial(config, point, t)).collect()
}

/// Wall clock that reads zero where the platform has no clock
/// (`std::time::Instant` panics on bare wasm32).
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Stopwatch {
    fn start() -> Self {
        Stopwatch(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        0.0
    }
}

fn run_point(config: &ExperimentConfig, point: usize) -> Result<SweepRecord> {
    let start = Stopwatch::start();
    let outcomes = collect_trials(config, point)?;
    let trials = outcomes.len();
    let m_total = if config.decoder == DecoderKind::Adaptive {
        (outcomes.iter().map(|o| o.m_total as f64).sum::<f64>() / trials as f64).round() as usize
    } else {
        outcomes[0].m_total
    };
    Ok(SweepRecord {
        n: config.n,
        theta: config.theta,
        k: config.sigma_k(),
        m_inner: outcomes[0].m_inner,
        m_total,
        bound: config.bound.name().to_owned(),
        ratio: config.ratios[point],
        decoder: config.decoder.name().to_owned(),
        trials,
        successes: outcomes.iter().filter(|o| o.success).count(),
        mean_mismatch: outcomes.iter().map(|o| o.mismatch as f64).sum::<f64>() / trials as f64,
        wall_time: start.seconds(),
        seed: config.seed,
    })
}

/// One record per grid point, in grid order.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    (0..config.ratios.len()).map(|p| run_point(config, p)).collect()
}

/// [`run_sweep`] with the adaptive protocol, whatever `config.decoder` says.
pub fn run_adaptive_experiment(config: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    let config = ExperimentConfig {
        decoder: DecoderKind::Adaptive,
        design: DesignKind::Sc,
        ..config.clone()
    };
    run_sweep(&config)
}

/// CSV with a header row, which is written even for an empty sweep.
pub fn write_csv<W: Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SweepRecord::COLUMNS)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SweepRecord::COLUMNS {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected CSV header {header:?}"),
        });
    }
    Ok(r.deserialize().collect::<Result<Vec<_>, _>>()?)
}

/// Empirical means of `W_{x,j}` with the true σ on the earlier
/// compartments of the coupling window.
///
/// `disguised` averages over healthy individuals all of whose tests are
/// positive, which are rare once Δ is moderate. `healthy_per_test` is the
/// fraction of positive tests of healthy individuals that carry no earlier
/// infected member, scaled by Δ/s; with independent tests it estimates the
/// same quantity from every healthy individual.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalMeans {
    pub s: usize,
    pub delta: usize,
    pub infected: Vec<f64>,
    pub disguised: Vec<f64>,
    pub healthy_per_test: Vec<f64>,
    pub infected_count: usize,
    pub disguised_count: usize,
}

impl ConditionalMeans {
    /// `2^{j/s-1} Δ/s` and `(2^{j/s}-1) Δ/s` for `j = 1..s-1`.
    pub fn predicted(&self) -> (Vec<f64>, Vec<f64>) {
        let unit = self.delta as f64 / self.s as f64;
        (1..self.s)
            .map(|j| {
                let t = j as f64 / self.s as f64;
                ((t - 1.0).exp2() * unit, (t.exp2() - 1.0) * unit)
            })
            .unzip()
    }
}

pub fn conditional_means(design: &Design, sigma: &InfectionVector) -> Result<ConditionalMeans> {
    let layout = design.layout().ok_or(Error::MissingLayout)?;
    let (s, ell) = (layout.s(), layout.ell());
    let weights = spiv_weights(s, 1.0 / (s * s) as f64)?;
    let results = evaluate_tests(design, sigma)?;
    let delta = crate::decoders::ring_degree(design)?;

    // earliest window position of an infected member, per test
    let mut first_infected = vec![usize::MAX; design.m()];
    for y in sigma.support() {
        let cy = layout.compartment_of(y);
        for &a in design.tests_of(y) {
            let ca = layout.test_compartment(a as usize);
            if ca > 0 {
                let pos = (cy + ell + s - 1 - ca) % ell;
                let slot = &mut first_infected[a as usize];
                *slot = (*slot).min(pos);
            }
        }
    }

    let mut infected = vec![0u64; s - 1];
    let mut disguised = vec![0u64; s - 1];
    let mut clean = vec![0u64; s - 1];
    let mut positive = vec![0u64; s - 1];
    let (mut n1, mut n0) = (0usize, 0usize);
    for i in s..ell {
        let table = compute_scores(design, sigma, i, &weights)?;
        for x in table.individuals.clone() {
            if sigma.get(x) {
                n1 += 1;
                for (j, slot) in infected.iter_mut().enumerate() {
                    *slot += table.count(x, j + 1) as u64;
                }
                continue;
            }
            for &a in design.tests_of(x) {
                let a = a as usize;
                let j = (layout.test_compartment(a) + ell - 1 - i) % ell + 1;
                if j < s && results.get(a) {
                    positive[j - 1] += 1;
                    clean[j - 1] += (first_infected[a] >= s - j) as u64;
                }
            }
            if design.tests_of(x).iter().all(|&a| results.get(a as usize)) {
                n0 += 1;
                for (j, slot) in disguised.iter_mut().enumerate() {
                    *slot += table.count(x, j + 1) as u64;
                }
            }
        }
    }
    let mean = |v: Vec<u64>, c: usize| v.into_iter().map(|t| t as f64 / c.max(1) as f64).collect();
    let unit = delta as f64 / s as f64;
    Ok(ConditionalMeans {
        s,
        delta,
        infected: mean(infected, n1),
        disguised: mean(disguised, n0),
        healthy_per_test: clean
            .iter()
            .zip(&positive)
            .map(|(&c, &p)| c as f64 / p.max(1) as f64 * unit)
            .collect(),
        infected_count: n1,
        disguised_count: n0,
    })
}
