use grouptest_wasm::{bound_curves_json, simulate_json, weights_json, MAX_DEMO_N};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn curves_have_one_point_per_theta() {
    let v = parse(bound_curves_json(1_000_000, 9).unwrap());
    assert_eq!(v["theta"].as_array().unwrap().len(), 9);
    let curves = v["curves"].as_object().unwrap();
    assert_eq!(curves.len(), 6);
    for c in curves.values() {
        assert_eq!(c["coefficient"].as_array().unwrap().len(), 9);
        assert_eq!(c["tests"].as_array().unwrap().len(), 9);
    }
    let x = v["crossover"].as_f64().unwrap();
    assert!((x - 0.409).abs() < 1e-3);
}

#[test]
fn adaptive_curve_never_exceeds_information_curve() {
    let v = parse(bound_curves_json(100_000, 49).unwrap());
    let a = v["curves"]["m_adapt"]["coefficient"].as_array().unwrap();
    let i = v["curves"]["m_inf"]["coefficient"].as_array().unwrap();
    for (a, i) in a.iter().zip(i) {
        assert!(a.as_f64().unwrap() <= i.as_f64().unwrap() + 1e-12);
    }
}

#[test]
fn curves_reject_bad_input() {
    assert!(bound_curves_json(1, 10).is_err());
    assert!(bound_curves_json(1000, 1).is_err());
}

#[test]
fn weights_for_three_compartments() {
    let v = parse(weights_json(3, 1.0 / 9.0, 15).unwrap());
    let w = v["weights"].as_array().unwrap();
    assert_eq!(w.len(), 2);
    assert!(w.iter().all(|w| w.as_f64().unwrap() > 0.0));
    let mean = v["score_mean"].as_f64().unwrap();
    let thr = v["threshold"].as_f64().unwrap();
    assert!((thr - mean * (1.0 - 1.0 / 9.0)).abs() < 1e-12);
    assert!(weights_json(1, 0.1, 15).is_err());
}

#[test]
fn simulation_is_deterministic_and_bounded() {
    let run = || simulate_json(5_000, 0.3, "delta-out", "dd", "m_alg", &[0.5, 2.0], 10, 3).unwrap();
    let a = parse(run());
    assert_eq!(a, parse(run()));
    let points = a["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points[1]["success_rate"].as_f64().unwrap(), 1.0);
    assert!(simulate_json(MAX_DEMO_N + 1, 0.3, "delta-out", "dd", "m_alg", &[1.0], 1, 0).is_err());
    assert!(simulate_json(5_000, 0.3, "nope", "dd", "m_alg", &[1.0], 1, 0).is_err());
}
