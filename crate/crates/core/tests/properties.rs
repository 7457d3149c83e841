use grouptest::bounds::Bound;
use grouptest::decoders::{cleanup_defaults, dd_decode, spiv, spiv_phase3};
use grouptest::designs::{build_sc_design, derive_sc_params, ScOverrides};
use grouptest::harness::{run_sweep, DecoderKind, DesignKind, ExperimentConfig};
use grouptest::instance::{evaluate_tests, infected_count, sample_sigma};
use grouptest::oracle::{enumerate_satisfying, posterior_marginals};
use grouptest::{gt1, Design, InfectionVector, ResultVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A free-form design on `n ≤ 12` individuals with a planted σ.
fn tiny_instance() -> impl Strategy<Value = (Design, InfectionVector)> {
    (2usize..=12, 1usize..=8).prop_flat_map(|(n, m)| {
        let tests = prop::collection::vec(prop::collection::btree_set(0..n, 0..=n), m);
        let sigma = prop::collection::vec(any::<bool>(), n);
        (tests, sigma).prop_map(move |(tests, sigma)| {
            let tests = tests.into_iter().map(|t| t.into_iter().collect()).collect();
            (Design::from_tests(n, tests).unwrap(), InfectionVector::from_bits(sigma))
        })
    })
}

/// Consistent weight-`k` supports by brute force over all `2^n` masks.
fn brute_force(design: &Design, results: &ResultVector, k: usize) -> Vec<Vec<usize>> {
    let n = design.n();
    let mut out: Vec<Vec<usize>> = (0u32..1 << n)
        .filter(|mask| mask.count_ones() as usize == k)
        .filter(|mask| (0..design.m()).all(|a| design.members(a).iter().any(|&x| mask >> x & 1 == 1) == results.get(a)))
        .map(|mask| (0..n).filter(|&x| mask >> x & 1 == 1).collect())
        .collect();
    out.sort();
    out
}

fn permute_design(design: &Design, perm: &[usize]) -> Design {
    let tests = (0..design.m())
        .map(|a| design.members(a).iter().map(|&x| perm[x as usize]).collect())
        .collect();
    let d = Design::from_tests(design.n(), tests).unwrap();
    match design.layout() {
        Some(l) => d.with_layout(l.clone()).unwrap(),
        None => d,
    }
}

fn permute_vector(v: &InfectionVector, perm: &[usize]) -> InfectionVector {
    let mut bits = vec![false; v.len()];
    for (x, &b) in v.bits().iter().enumerate() {
        bits[perm[x]] = b;
    }
    InfectionVector::from_bits(bits)
}

proptest! {
    #[test]
    fn dd_never_reports_a_healthy_individual((design, sigma) in tiny_instance()) {
        let r = evaluate_tests(&design, &sigma).unwrap();
        let tau = dd_decode(&design, &r).unwrap();
        for x in 0..design.n() {
            prop_assert!(!tau.get(x) || sigma.get(x));
        }
    }

    #[test]
    fn enumeration_matches_brute_force((design, sigma) in tiny_instance()) {
        let r = evaluate_tests(&design, &sigma).unwrap();
        let k = sigma.weight();
        let set = enumerate_satisfying(&design, &r, k, usize::MAX).unwrap();
        let supports: Vec<Vec<usize>> = set.vectors.iter().map(|v| v.support()).collect();
        prop_assert_eq!(set.count as usize, supports.len());
        prop_assert_eq!(supports, brute_force(&design, &r, k));
    }

    #[test]
    fn marginals_match_brute_force((design, sigma) in tiny_instance()) {
        let r = evaluate_tests(&design, &sigma).unwrap();
        let k = sigma.weight();
        let all = brute_force(&design, &r, k);
        let marg = posterior_marginals(&design, &r, k).unwrap();
        for (x, p) in marg.iter().enumerate() {
            let hits = all.iter().filter(|s| s.contains(&x)).count();
            prop_assert!((p - hits as f64 / all.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn gt1_round_trip((design, _) in tiny_instance()) {
        let text = gt1::to_string(&design);
        prop_assert_eq!(gt1::from_str(&text).unwrap(), design);
    }

    #[test]
    fn dd_is_equivariant_under_relabelling((design, sigma) in tiny_instance(), seed in any::<u64>()) {
        let mut perm: Vec<usize> = (0..design.n()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = evaluate_tests(&design, &sigma).unwrap();
        let tau = dd_decode(&design, &r).unwrap();
        let tau_p = dd_decode(&permute_design(&design, &perm), &r).unwrap();
        prop_assert_eq!(tau_p, permute_vector(&tau, &perm));
    }
}

fn moderate_sc(seed: u64) -> (Design, InfectionVector) {
    let (n, theta) = (20_000, 0.4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = (2.0 * Bound::Inf.value(n, theta)) as usize;
    let p = derive_sc_params(n, theta, budget, &ScOverrides::default()).unwrap();
    let d = build_sc_design(n, &p, &mut rng).unwrap();
    let sigma = sample_sigma(n, infected_count(n, theta), &mut rng).unwrap();
    (d, sigma)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn spiv_is_equivariant_within_a_compartment(seed in 0u64..1000, c in 0usize..100) {
        let (d, sigma) = moderate_sc(seed);
        let layout = d.layout().unwrap().clone();
        let i = layout.s() + c % (layout.ell() - layout.s());
        let block: Vec<usize> = layout.individuals(i).collect();
        let mut shuffled = block.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
        let mut perm: Vec<usize> = (0..d.n()).collect();
        for (&from, &to) in block.iter().zip(&shuffled) {
            perm[from] = to;
        }
        let r = evaluate_tests(&d, &sigma).unwrap();
        let tau = spiv(&d, &r).unwrap().tau;
        let dp = permute_design(&d, &perm);
        let rp = evaluate_tests(&dp, &permute_vector(&sigma, &perm)).unwrap();
        prop_assert_eq!(&rp, &r);
        prop_assert_eq!(spiv(&dp, &rp).unwrap().tau, permute_vector(&tau, &perm));
    }

    #[test]
    fn cleanup_keeps_truth_when_every_infected_has_enough_private_tests(seed in 0u64..1000) {
        let (d, sigma) = moderate_sc(seed);
        let r = evaluate_tests(&d, &sigma).unwrap();
        let (threshold, _) = cleanup_defaults(d.n());
        let layout = d.layout().unwrap();
        let private = |x: usize| {
            d.tests_of(x)
                .iter()
                .filter(|&&a| r.get(a as usize))
                .filter(|&&a| d.members(a as usize).iter().all(|&y| y as usize == x || !sigma.get(y as usize)))
                .count()
        };
        let stable = (layout.seed_individuals().end..d.n()).filter(|&x| sigma.get(x)).all(|x| private(x) as f64 > threshold);
        let out = spiv_phase3(&d, &r, &sigma).unwrap();
        if stable {
            prop_assert_eq!(out, sigma);
        }
    }
}

#[test]
fn dd_success_rate_grows_with_budget() {
    let mut config = ExperimentConfig::new(100_000, 0.3, vec![0.5, 1.0, 1.5, 2.0]);
    config.design = DesignKind::DeltaOut;
    config.decoder = DecoderKind::Dd;
    config.bound = Bound::Alg;
    config.trials = 20;
    config.seed = 11;
    let records = run_sweep(&config).unwrap();
    let rates: Vec<f64> = records.iter().map(|r| r.success_rate()).collect();
    for w in records.windows(2) {
        let (a, b) = (w[0].success_rate(), w[1].success_rate());
        let sd = ((a * (1.0 - a) + b * (1.0 - b)) / config.trials as f64).sqrt();
        assert!(b >= a - 2.0 * sd, "rates {rates:?}");
    }
    assert!(rates[3] > rates[0], "rates {rates:?}");
}
