use fpp_core::conditioning::{condition_on_event, EventSpec};
use fpp_core::error::Error;
use fpp_core::estimator::{
    continuity_shift, estimate_tail, estimate_time_constant, kesten_speed, mean_matching_tilt, rate_curve,
    shift_margin, trend_verdict, BinomialSummary, Method, RateEstimate, ShiftParams, Tail, TailConfig,
};
use fpp_core::geodesic::passage_time;
use fpp_core::grid::sample_environment;
use fpp_core::model::make_weight_model;
use fpp_core::{EnvironmentGrid, Point, WeightModel};
use proptest::prelude::*;
use rand::Rng;

fn uniform() -> WeightModel {
    make_weight_model("uniform", 1.0, &[]).unwrap()
}

const MU: f64 = 0.354;

#[test]
fn constant_law_time_constant_is_exact() {
    let m = make_weight_model("constant-test", 1.0, &[0.75]).unwrap();
    let est = estimate_time_constant(&m, &[2, 4, 8], 3, 8, 0).unwrap();
    assert!(est.table.iter().all(|r| r.mean == 0.75 && r.std == 0.0));
    assert_eq!(est.mu_hat, 0.75);
}

#[test]
fn uniform_time_constant_is_below_b() {
    let est = estimate_time_constant(&uniform(), &[8, 16], 60, 8, 3).unwrap();
    let last = est.table.last().unwrap();
    assert!(est.mu_hat + 3.0 * last.stderr < 1.0);
    assert!(est.mu_hat_min <= est.mu_hat);
    assert_eq!(est.directional.len(), 8);
}

#[test]
fn naive_summary_is_unbiased_on_bernoulli_draws() {
    let p: f64 = 0.03;
    let mut rng = fpp_core::seed::rng(10);
    for trial in 0..20 {
        let n = 20_000;
        let hits = (0..n).filter(|_| rng.gen_bool(p)).count();
        let s = BinomialSummary::from_counts(hits, n);
        assert!((s.log_p - p.ln()).abs() <= 3.0 * s.stderr, "trial {trial}");
        assert!(s.ci_low <= p.ln() || s.ci_high >= p.ln());
    }
    let none = BinomialSummary::from_counts(0, 100);
    assert!(none.one_sided && none.log_p < 0.0);
}

#[test]
fn unreachable_levels_are_flagged() {
    let cfg = TailConfig::new(4, 0.7, 0.4, 10, 2.0);
    let est = estimate_tail(&uniform(), &cfg, 0).unwrap();
    assert!(est.impossible && est.log_p == f64::NEG_INFINITY);
    let lower = TailConfig { tail: Tail::Lower, ..TailConfig::new(4, 0.5, 0.4, 10, 2.0) };
    assert!(estimate_tail(&uniform(), &lower, 0).unwrap().impossible);
}

#[test]
fn zero_tilt_is_the_naive_estimator() {
    let mut cfg = TailConfig::new(3, 0.1, MU, 300, 3.0);
    let naive = estimate_tail(&uniform(), &cfg, 17).unwrap();
    cfg.method = Method::Tilted;
    cfg.lambda = Some(0.0);
    let tilted = estimate_tail(&uniform(), &cfg, 17).unwrap();
    assert_eq!(naive.hits, tilted.hits);
    assert_eq!(tilted.n_eff, 300.0);
}

#[test]
fn tilted_and_naive_agree_at_small_n() {
    let mut cfg = TailConfig::new(3, 0.05, MU, 8000, 3.0);
    let naive = estimate_tail(&uniform(), &cfg, 1).unwrap();
    cfg.method = Method::Tilted;
    let full = estimate_tail(&uniform(), &cfg, 2).unwrap();
    let joint = naive.stderr.hypot(full.stderr);
    assert!((naive.log_p - full.log_p).abs() <= 2.0 * joint, "{naive:?} {full:?}");
    let lambda = mean_matching_tilt(&uniform(), &cfg).unwrap();
    cfg.lambda = Some(lambda / 2.0);
    let half = estimate_tail(&uniform(), &cfg, 3).unwrap();
    assert!((half.log_p - full.log_p).abs() <= 3.0 * half.stderr.hypot(full.stderr));
    assert!(full.n_eff > 1.0 && full.n_eff <= 8000.0);
}

#[test]
fn constant_law_rate_curve_is_degenerate() {
    let m = make_weight_model("constant-test", 1.0, &[0.5]).unwrap();
    let curve = rate_curve(&m, &[2, 3], 0.1, 0.5, 5, 2.0, 0.05, 0).unwrap();
    assert!(curve.degenerate && curve.verdict);
    let single = rate_curve(&uniform(), &[3], 0.05, MU, 2000, 2.0, 0.05, 0).unwrap();
    assert!(single.verdict && single.violations.is_empty());
    let starved = rate_curve(&uniform(), &[3, 4], 0.5, MU, 20, 2.0, 0.05, 0);
    assert!(matches!(starved, Err(Error::BudgetExhausted(_))));
}

fn row(n: i64, log_p: f64, stderr: f64) -> RateEstimate {
    RateEstimate {
        n,
        zeta: 0.1,
        tail: Tail::Upper,
        method: Method::Naive,
        samples: 1000,
        hits: 10,
        log_p,
        normalized: log_p / (n * n) as f64,
        stderr,
        ci_low: None,
        ci_high: None,
        n_eff: 1000.0,
        lambda: None,
        one_sided: false,
        impossible: false,
        seed: 0,
    }
}

#[test]
fn trend_verdict_arithmetic() {
    // a_n / n^2 = -0.5, -0.4, -0.45: the last pair dips by 0.05 relative to n=4
    let rows = [row(3, -4.5, 0.0), row(4, -6.4, 0.0), row(5, -11.25, 0.0)];
    assert!(trend_verdict(&rows, 0.06).0);
    let (ok, bad) = trend_verdict(&rows, 0.04);
    assert!(!ok && bad == vec![(4, 5)]);
    let noisy = [row(4, -6.4, 0.0), row(5, -11.25, 1.5)];
    assert!(trend_verdict(&noisy, 0.0).0);
}

#[test]
fn kesten_speed_arithmetic() {
    let upper = [row(2, -1.0, 0.0), row(3, -2.5, 0.0), row(4, -5.0, 0.0)];
    let lower = [row(2, -0.4, 0.0), row(3, -0.7, 0.0), row(4, -0.8, 0.0)];
    let k = kesten_speed(&upper, &lower, 3.0);
    assert!(k.upper_increasing && k.lower_banded);
    let flat = [row(2, -1.0, 0.0), row(3, -1.2, 0.0)];
    assert!(!kesten_speed(&flat, &lower, 3.0).upper_increasing);
}

#[test]
fn conditioned_samples_meet_the_event() {
    let spec = EventSpec::with_defaults(3, 0.1, MU, MU, 1.0);
    let s = condition_on_event(&uniform(), &spec, 5, 100_000).unwrap();
    let t = passage_time(&s.env, Point::new(0, 0), Point::new(3, 0), None).unwrap();
    assert!(t >= (MU + 0.1) * 3.0 && t == s.passage_time);
    assert!(s.metric_margin >= 1.0);
    assert_eq!(s.env.halfwidth(), spec.outer_halfwidth());
    let again = condition_on_event(&uniform(), &spec, 5, 100_000).unwrap();
    assert_eq!((again.attempts, again.env), (s.attempts, s.env));
}

#[test]
fn conditioning_errors() {
    let impossible = EventSpec::with_defaults(3, 1.0 - MU, MU, MU, 1.0);
    assert!(matches!(condition_on_event(&uniform(), &impossible, 0, 10), Err(Error::Precondition(_))));
    let rare = EventSpec::with_defaults(6, 0.5, MU, MU, 1.0);
    assert!(matches!(condition_on_event(&uniform(), &rare, 0, 1), Err(Error::BudgetExhausted(_))));
    let constant = make_weight_model("constant-test", 1.0, &[0.5]).unwrap();
    assert!(condition_on_event(&constant, &EventSpec::with_defaults(3, 0.1, 0.4, 0.4, 1.0), 0, 10).is_err());
}

fn shift_params() -> ShiftParams {
    ShiftParams { eps1: 0.1, eps2: 0.1, eps3: 0.05, eps7: 0.05 }
}

#[test]
fn shift_without_fixed_edges_adds_eps7_per_step() {
    let m = uniform();
    let base = sample_environment(&m, 12, 8).unwrap();
    let env = EnvironmentGrid::from_fn(&m, 12, |e| 0.85 * base.weight(e).unwrap()).unwrap();
    let (n, zeta) = (6, 0.1);
    let x = continuity_shift(&env, &m, n, 12, MU, zeta, shift_params(), 0).unwrap();
    assert!(x.high.is_empty() && x.low_density.is_empty());
    assert_eq!(x.rn_weight, 1.0);
    let (eps_prime, c) = shift_margin(1.0, MU, zeta, &shift_params()).unwrap();
    assert_eq!((x.eps_prime, x.c), (eps_prime, c));
    // every path to (n, 0) has at least n edges, each raised by eps7
    assert!(x.passage_after >= x.passage_before + n as f64 * 0.05 - 1e-12);
    assert!(x.passage_before + n as f64 * (0.025f64).min(0.05) * (1.0 - c) <= x.passage_after);
    assert_eq!(x.verdict, x.passage_after >= (MU + zeta) * n as f64);
}

#[test]
fn shift_preconditions() {
    let m = uniform();
    let env = sample_environment(&m, 8, 1).unwrap();
    let heavy_top = ShiftParams { eps1: 0.05, ..shift_params() };
    assert!(matches!(continuity_shift(&env, &m, 4, 8, MU, 0.1, heavy_top, 0), Err(Error::Precondition(_))));
    assert!(shift_margin(1.0, 0.6, 0.35, &shift_params()).is_err());
    let wide = ShiftParams { eps3: 0.2, ..shift_params() };
    assert!(continuity_shift(&env, &m, 4, 8, MU, 0.1, wide, 0).is_err());
}

#[test]
fn triangular_shift_uses_density_ratios() {
    let m = make_weight_model("triangular", 1.0, &[0.2]).unwrap();
    let env = sample_environment(&m, 8, 4).unwrap();
    let p = ShiftParams { eps1: 0.2, eps2: 0.1, eps3: 0.05, eps7: 0.05 };
    let x = continuity_shift(&env, &m, 4, 8, 0.3, 0.05, p, 0).unwrap();
    let shifted = x.shifted.as_ref().unwrap();
    let expected: f64 = env
        .edges()
        .filter(|e| !x.high.contains(e) && !x.low_density.contains(e))
        .map(|e| m.density_ratio(env.weight(e).unwrap(), 0.05).unwrap().ln())
        .sum();
    assert!((x.log_rn_weight - expected).abs() < 1e-9);
    assert!(x.rn_weight.is_finite() && x.rn_weight > 0.0);
    for e in &x.high {
        assert_eq!(shifted.weight(*e), env.weight(*e));
    }
    assert!(x.high.iter().all(|e| !x.low_density.contains(e)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shifting_never_lowers_passage_times(seed in any::<u64>(), n in 2i64..6) {
        let m = uniform();
        let env = sample_environment(&m, 8, seed).unwrap();
        let x = continuity_shift(&env, &m, n, 6, MU, 0.1, shift_params(), seed).unwrap();
        prop_assert!(x.passage_after >= x.passage_before);
        let shifted = x.shifted.unwrap();
        prop_assert!(env.edges().all(|e| shifted.weight(e).unwrap() >= env.weight(e).unwrap()));
    }

    #[test]
    fn clopper_pearson_contains_the_point_estimate(k in 0usize..50, extra in 1usize..200) {
        let n = k + extra;
        let s = BinomialSummary::from_counts(k, n);
        if k > 0 {
            let p = (k as f64 / n as f64).ln();
            prop_assert!(s.ci_low <= p && p <= s.ci_high);
        }
        prop_assert!(s.ci_high <= 0.0);
    }
}
