//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Each export returns a JSON string. The `*_json` functions hold the logic and
//! are plain Rust so they can be tested natively.

use grouptest::bounds::{rate_m, spiv_weights, theta_crossover, Bound};
use grouptest::harness::{run_sweep, ExperimentConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest population the demo will simulate; keeps the page responsive.
pub const MAX_DEMO_N: usize = 200_000;
const MAX_DEMO_TRIALS: usize = 200;

type Out = Result<String, String>;

/// Coefficients c(θ) of every bound on `steps` evenly spaced θ in (0, 1),
/// plus the absolute counts at population `n`.
pub fn bound_curves_json(n: usize, steps: usize) -> Out {
    if !(2..=1000).contains(&steps) {
        return Err(format!("steps must be in 2..=1000, got {steps}"));
    }
    if n < 2 {
        return Err(format!("n must be at least 2, got {n}"));
    }
    let thetas: Vec<f64> = (1..=steps).map(|i| i as f64 / (steps + 1) as f64).collect();
    let curves: serde_json::Map<_, _> = Bound::ALL
        .iter()
        .map(|b| {
            let c: Vec<f64> = thetas.iter().map(|&t| b.coefficient(t)).collect();
            let m: Vec<f64> = thetas.iter().map(|&t| b.value(n, t)).collect();
            (b.name().to_owned(), json!({ "coefficient": c, "tests": m }))
        })
        .collect();
    Ok(json!({ "n": n, "theta": thetas, "crossover": theta_crossover(), "curves": curves }).to_string())
}

/// Score weights for `s` seed compartments and slack `zeta`, with the score
/// mean and threshold at ring degree `delta`.
pub fn weights_json(s: usize, zeta: f64, delta: usize) -> Out {
    let w = spiv_weights(s, zeta).map_err(|e| e.to_string())?;
    let rate = rate_m(s, zeta).map_err(|e| e.to_string())?;
    let weights = w.w.clone();
    Ok(json!({
        "s": s,
        "zeta": zeta,
        "delta": delta,
        "weights": weights,
        "score_mean": w.score_mean(delta),
        "threshold": w.threshold(delta),
        "rate": rate,
    })
    .to_string())
}

/// A small single-threaded sweep. `design` and `decoder` take the CLI names.
#[allow(clippy::too_many_arguments)]
pub fn simulate_json(
    n: usize,
    theta: f64,
    design: &str,
    decoder: &str,
    bound: &str,
    ratios: &[f64],
    trials: usize,
    seed: u64,
) -> Out {
    if n > MAX_DEMO_N {
        return Err(format!("n = {n} is above the demo limit of {MAX_DEMO_N}"));
    }
    if trials == 0 || trials > MAX_DEMO_TRIALS {
        return Err(format!("trials must be in 1..={MAX_DEMO_TRIALS}"));
    }
    let mut config = ExperimentConfig::new(n, theta, ratios.to_vec());
    config.design = design.parse().map_err(|e: grouptest::Error| e.to_string())?;
    config.decoder = decoder.parse().map_err(|e: grouptest::Error| e.to_string())?;
    config.bound = bound.parse().map_err(|e: grouptest::Error| e.to_string())?;
    config.trials = trials;
    config.seed = seed;
    config.parallel = false;
    let records = run_sweep(&config).map_err(|e| e.to_string())?;
    let rows: Vec<_> = records
        .iter()
        .map(|r| {
            json!({
                "ratio": r.ratio,
                "m": r.m_total,
                "success_rate": r.success_rate(),
                "mean_mismatch": r.mean_mismatch,
                "k": r.k,
            })
        })
        .collect();
    Ok(json!({ "n": n, "theta": theta, "design": design, "decoder": decoder, "points": rows }).to_string())
}

fn js(out: Out) -> Result<String, JsError> {
    out.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn bound_curves(n: u32, steps: u32) -> Result<String, JsError> {
    js(bound_curves_json(n as usize, steps as usize))
}

#[wasm_bindgen]
pub fn weights(s: u32, zeta: f64, delta: u32) -> Result<String, JsError> {
    js(weights_json(s as usize, zeta, delta as usize))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    n: u32,
    theta: f64,
    design: &str,
    decoder: &str,
    bound: &str,
    ratios: Vec<f64>,
    trials: u32,
    seed: u32,
) -> Result<String, JsError> {
    js(simulate_json(
        n as usize,
        theta,
        design,
        decoder,
        bound,
        &ratios,
        trials as usize,
        seed as u64,
    ))
}
