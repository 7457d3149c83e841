use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use grouptest::bounds::{bound_table, Bound};
use grouptest::decoders::{dd_decode, spiv};
use grouptest::designs::{
    build_bernoulli, build_delta_out, build_sc_design, default_delta, default_edge_prob, derive_sc_params, ScOverrides,
};
use grouptest::harness::{
    conditional_means, run_adaptive_experiment, run_sweep, write_csv, DecoderKind, DesignKind, ExperimentConfig,
    SweepRecord,
};
use grouptest::instance::{evaluate_tests, infected_count, sample_sigma};
use grouptest::oracle::{ml_decode, posterior_uniformity, random_tiny_instance, zk_bound_check};
use grouptest::{gt1, Design, ResultVector};

#[derive(Parser)]
#[command(
    name = "grouptest",
    version,
    about = "Group testing designs, decoders and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the test-count thresholds for one (n, θ).
    Bounds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        csv: bool,
    },
    /// Sample a test design and write it in GT1 format.
    Design(DesignArgs),
    /// Decode a result bit-string against a GT1 design.
    Decode {
        #[arg(long)]
        design: PathBuf,
        /// One character per test; `@FILE` reads the string from a file.
        #[arg(long)]
        results: String,
        #[arg(long, value_enum, default_value_t = DecoderArg::Dd)]
        decoder: DecoderArg,
    },
    /// Run a budget sweep described by a JSON config and emit CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the two-stage protocol over a budget grid and emit CSV.
    Adaptive {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exhaustive-inference sanity checks on small random instances.
    OracleCheck {
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Population size for `means`.
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        /// Density exponent for `means`.
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Ring budget for `means`, as a multiple of m_inf.
        #[arg(long, default_value_t = 1.5)]
        ratio: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Sc,
    DeltaOut,
    Bernoulli,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Dd,
    Spiv,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleMode {
    Zk,
    Posterior,
    Ml,
    Means,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_enum)]
    kind: KindArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    theta: f64,
    /// Number of tests; for `sc` the ring budget before the seed block.
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Individual degree Δ (`delta-out` and `sc`).
    #[arg(long)]
    delta: Option<usize>,
    /// Edge probability (`bernoulli`).
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    ell: Option<usize>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    f0_size: Option<usize>,
    #[arg(long)]
    seed_degree: Option<usize>,
}

/// Config file plus field overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    decoder: Option<String>,
    #[arg(long)]
    bound: Option<String>,
    /// Comma-separated budget multiples.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<usize>,
    /// Run trials on one thread.
    #[arg(long)]
    serial: bool,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        let mut c: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", self.config.display()))?;
        if let Some(n) = self.n {
            c.n = n;
        }
        if let Some(theta) = self.theta {
            c.theta = theta;
        }
        if let Some(d) = &self.design {
            c.design = d.parse()?;
        }
        if let Some(d) = &self.decoder {
            c.decoder = d.parse()?;
        }
        if let Some(b) = &self.bound {
            c.bound = b.parse()?;
        }
        if let Some(r) = &self.ratios {
            c.ratios = r.clone();
        }
        if let Some(t) = self.trials {
            c.trials = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if self.k.is_some() {
            c.k = self.k;
        }
        if self.serial {
            c.parallel = false;
        }
        if let Some(out) = &self.out {
            c.output = Some(out.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit_records(records: &[SweepRecord], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(records, BufWriter::new(file))?;
        }
        None => write_csv(records, io::stdout().lock())?,
    }
    Ok(())
}

fn print_bounds(n: usize, theta: f64, csv: bool) -> Result<()> {
    let t = bound_table(n, theta)?;
    let rows = [
        ("m_adapt", t.m_adapt),
        ("m_inf", t.m_inf),
        ("m_alg", t.m_alg),
        ("m_dd_bernoulli", t.m_dd_bernoulli),
        ("m_bl", t.m_bl),
        ("m_mt", t.m_mt),
        ("counting_lb", t.counting_lb as f64),
    ];
    let mut out = io::stdout().lock();
    if csv {
        writeln!(out, "n,theta,k,{}", rows.map(|r| r.0).join(","))?;
        writeln!(
            out,
            "{},{},{},{}",
            t.n,
            t.theta,
            t.k,
            rows.map(|r| r.1.to_string()).join(",")
        )?;
    } else {
        writeln!(out, "n = {}, theta = {}, k = {}", t.n, t.theta, t.k)?;
        for (name, v) in rows {
            writeln!(out, "{name:<16}{v:>16.3}")?;
        }
    }
    Ok(())
}

fn make_design(a: &DesignArgs) -> Result<Design> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let k = infected_count(a.n, a.theta);
    Ok(match a.kind {
        KindArg::Sc => {
            let o = ScOverrides {
                ell: a.ell,
                s: a.s,
                delta: a.delta,
                f0_size: a.f0_size,
                seed_degree: a.seed_degree,
            };
            let p = derive_sc_params(a.n, a.theta, a.m, &o)?;
            build_sc_design(a.n, &p, &mut rng)?
        }
        KindArg::DeltaOut => build_delta_out(a.n, a.m, a.delta.unwrap_or_else(|| default_delta(a.m, k)), &mut rng)?,
        KindArg::Bernoulli => build_bernoulli(a.n, a.m, a.p.unwrap_or_else(|| default_edge_prob(k)), &mut rng)?,
    })
}

fn decode(design: &Path, results: &str, decoder: DecoderArg) -> Result<()> {
    let file = fs::File::open(design).with_context(|| format!("opening {}", design.display()))?;
    let design = gt1::read(BufReader::new(file))?;
    let bits = match results.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading {path}"))?,
        None => results.to_owned(),
    };
    let results = ResultVector::parse(bits.trim())?;
    let (tau, diagnostics) = match decoder {
        DecoderArg::Dd => {
            let tau = dd_decode(&design, &results)?;
            (tau, json!({ "decoder": "dd" }))
        }
        DecoderArg::Spiv => {
            let out = spiv(&design, &results)?;
            let d = serde_json::to_value(&out.diagnostics)?;
            (out.tau, json!({ "decoder": "spiv", "phases": d }))
        }
    };
    let mut diagnostics = diagnostics;
    diagnostics["weight"] = json!(tau.weight());
    diagnostics["positive_tests"] = json!(results.positives());
    let mut out = io::stdout().lock();
    writeln!(out, "{tau}")?;
    writeln!(out, "{}", serde_json::to_string(&diagnostics)?)?;
    Ok(())
}

fn oracle_check(mode: OracleMode, trials: usize, seed: u64, n: usize, theta: f64, ratio: f64) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (report, ok) = match mode {
        OracleMode::Zk => {
            let mut violations = 0;
            for _ in 0..trials {
                let (d, sigma) = random_tiny_instance(&mut rng, 12)?;
                violations += !zk_bound_check(&d, &sigma)? as usize;
            }
            (
                json!({ "mode": "zk", "trials": trials, "violations": violations }),
                violations == 0,
            )
        }
        OracleMode::Posterior => {
            let d = Design::from_tests(4, vec![vec![0, 1], vec![2, 3]])?;
            let r = ResultVector::from_bits(vec![true, true]);
            let u = posterior_uniformity(&d, &r, 2, trials, &mut rng)?;
            let ok = u.p_value > 0.001;
            (json!({ "mode": "posterior", "check": u }), ok)
        }
        OracleMode::Ml => {
            let (mut overweight, mut dd_disagree, mut dd_consistent) = (0, 0, 0);
            for _ in 0..trials {
                let (d, sigma) = random_tiny_instance(&mut rng, 12)?;
                let r = evaluate_tests(&d, &sigma)?;
                let ml = ml_decode(&d, &r, d.n())?;
                overweight += (ml.weight() > sigma.weight()) as usize;
                let dd = dd_decode(&d, &r)?;
                if evaluate_tests(&d, &dd)? == r {
                    dd_consistent += 1;
                    dd_disagree += (dd != ml) as usize;
                }
            }
            let report = json!({
                "mode": "ml", "trials": trials, "overweight": overweight,
                "dd_consistent": dd_consistent, "dd_disagreements": dd_disagree,
            });
            (report, overweight == 0 && dd_disagree == 0)
        }
        OracleMode::Means => {
            let budget = (ratio * Bound::Inf.value(n, theta)).ceil() as usize;
            let params = derive_sc_params(n, theta, budget, &ScOverrides::default())?;
            let mut runs = Vec::new();
            for _ in 0..trials {
                let d = build_sc_design(n, &params, &mut rng)?;
                let sigma = sample_sigma(n, infected_count(n, theta), &mut rng)?;
                let m = conditional_means(&d, &sigma)?;
                let (inf, healthy) = m.predicted();
                runs.push(json!({ "measured": m, "predicted_infected": inf, "predicted_healthy": healthy }));
            }
            (
                json!({ "mode": "means", "n": n, "theta": theta, "params": params, "runs": runs }),
                true,
            )
        }
    };
    writeln!(io::stdout().lock(), "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Bounds { n, theta, csv } => print_bounds(n, theta, csv)?,
        Command::Design(args) => {
            let design = make_design(&args)?;
            let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
            gt1::write(&design, BufWriter::new(file))?;
        }
        Command::Decode {
            design,
            results,
            decoder,
        } => decode(&design, &results, decoder)?,
        Command::Sweep { run } => {
            let config = run.load()?;
            emit_records(&run_sweep(&config)?, config.output.as_deref())?;
        }
        Command::Adaptive { run } => {
            let mut config = run.load()?;
            if config.decoder != DecoderKind::Adaptive {
                config.decoder = DecoderKind::Adaptive;
                config.design = DesignKind::Sc;
            }
            emit_records(&run_adaptive_experiment(&config)?, config.output.as_deref())?;
        }
        Command::OracleCheck {
            mode,
            trials,
            seed,
            n,
            theta,
            ratio,
        } => {
            if trials == 0 {
                bail!("--trials must be at least 1");
            }
            return oracle_check(mode, trials, seed, n, theta, ratio);
        }
    }
    Ok(true)
}

/// A closed downstream pipe (`grouptest ... | head`) ends output early, not in error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
