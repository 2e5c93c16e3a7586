//! Monte Carlo estimates: time constants, tail probabilities (naive and
//! exponentially tilted), rate curves and the weight-shift experiment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::geodesic::{distances_exact, passage_time, passage_time_exact, ExactTime};
use crate::geometry::{Edge, Point, Rect};
use crate::grid::{sample_environment, sample_window, EnvironmentGrid};
use crate::model::WeightModel;
use crate::seed;
use crate::stability::AngleGrid;

/// Half-width of the box used for unconditioned `T_n` samples.
#[must_use]
pub fn shape_halfwidth(n: i64) -> i64 {
    n + n / 4 + 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConstantRow {
    pub n: i64,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConstantEstimate {
    pub mu_hat: f64,
    pub mu_hat_min: f64,
    /// Per-direction means at the largest `n`, in angle order.
    pub directional: Vec<f64>,
    pub table: Vec<TimeConstantRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample means of `T_n / n` for each `n`. At the largest `n` every sample
/// also yields passage times to `n (cos t, sin t)` over `directions`
/// equally spaced angles; `mu_hat_min` is the smallest directional mean.
pub fn estimate_time_constant(
    model: &WeightModel,
    ns: &[i64],
    samples: usize,
    directions: usize,
    seed: u64,
) -> Result<TimeConstantEstimate> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] < 1 {
        return Err(invalid(format!("ns must be nonempty, positive and increasing, got {ns:?}")));
    }
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let largest = *ns.last().expect("nonempty");
    let angles = AngleGrid::with_count(directions.max(1))?;
    let origin = Point::new(0, 0);
    let mut table = Vec::with_capacity(ns.len());
    let mut directional = Vec::new();
    for &n in ns {
        let r = shape_halfwidth(n);
        let targets: Vec<Point> = if n == largest {
            angles.angles().iter().map(|&t| crate::geometry::RealPoint::polar(n as f64, t).round()).collect()
        } else {
            Vec::new()
        };
        let rows: Vec<(f64, Vec<f64>)> = (0..samples as u64)
            .into_par_iter()
            .map(|i| -> Result<(f64, Vec<f64>)> {
                let env = sample_environment(model, r, seed::derive_seed(seed, &format!("shape-{n}"), i))?;
                let mut all = vec![Point::new(n, 0)];
                all.extend(&targets);
                let times = distances_exact(&env, origin, &all, None)?;
                let dirs = targets.iter().zip(&times[1..]).map(|(p, t)| t.to_f64() / p.to_real().norm()).collect();
                Ok((times[0].to_f64() / n as f64, dirs))
            })
            .collect::<Result<_>>()?;
        let values: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let (mean, std) = mean_std(&values);
        table.push(TimeConstantRow { n, samples, mean, std, stderr: std / (samples as f64).sqrt() });
        if n == largest {
            directional = (0..targets.len())
                .map(|k| rows.iter().map(|r| r.1[k]).sum::<f64>() / samples as f64)
                .collect();
        }
    }
    let mu_hat = table.last().expect("nonempty").mean;
    let mu_hat_min = directional.iter().copied().fold(f64::INFINITY, f64::min).min(mu_hat);
    Ok(TimeConstantEstimate { mu_hat, mu_hat_min, directional, table })
}

/// `zeta` such that `P(T_n >= (mu_hat + zeta) n)` is about `acceptance`:
/// the empirical `1 - acceptance` quantile of `T_n / n` minus `mu_hat`.
/// `T_n` is computed inside `L-Box(halfwidth)`, which can only raise it.
pub fn calibrate_zeta(
    model: &WeightModel,
    n: i64,
    mu_hat: f64,
    acceptance: f64,
    samples: usize,
    halfwidth: i64,
    seed: u64,
) -> Result<f64> {
    if !(acceptance > 0.0 && acceptance < 1.0) || samples == 0 {
        return Err(invalid(format!("bad calibration acceptance {acceptance} or samples {samples}")));
    }
    let mut values: Vec<f64> = (0..samples as u64)
        .into_par_iter()
        .map(|i| {
            let env = sample_environment(model, halfwidth, seed::derive_seed(seed, "calibrate", i))?;
            Ok(passage_time(&env, Point::new(0, 0), Point::new(n, 0), None)? / n as f64)
        })
        .collect::<Result<_>>()?;
    values.sort_by(f64::total_cmp);
    let k = (((1.0 - acceptance) * samples as f64).ceil() as usize).min(samples - 1);
    Ok(values[k] - mu_hat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Upper,
    Lower,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Naive,
    Tilted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub n: i64,
    pub zeta: f64,
    pub mu_hat: f64,
    pub tail: Tail,
    pub method: Method,
    pub samples: usize,
    /// Environments live on `L-Box(ceil(spread * n))`.
    pub spread: f64,
    /// Edges tilted by the tilted method; defaults to a strip around the
    /// segment from the origin to `(n, 0)`.
    pub tilt_region: Option<Rect>,
    /// Overrides the mean-matching tilt.
    pub lambda: Option<f64>,
}

impl TailConfig {
    #[must_use]
    pub fn new(n: i64, zeta: f64, mu_hat: f64, samples: usize, spread: f64) -> Self {
        Self {
            n,
            zeta,
            mu_hat,
            tail: Tail::Upper,
            method: Method::Naive,
            samples,
            spread,
            tilt_region: None,
            lambda: None,
        }
    }

    #[must_use]
    pub fn threshold(&self) -> f64 {
        match self.tail {
            Tail::Upper => (self.mu_hat + self.zeta) * self.n as f64,
            Tail::Lower => (self.mu_hat - self.zeta) * self.n as f64,
        }
    }

    #[must_use]
    pub fn halfwidth(&self) -> i64 {
        ((self.spread * self.n as f64).ceil() as i64).max(self.n + 1)
    }

    #[must_use]
    pub fn default_tilt_region(&self) -> Rect {
        Rect::new(-1, self.n + 1, -1, 1)
    }

    fn speed(&self) -> f64 {
        let n = self.n as f64;
        match self.tail {
            Tail::Upper => n * n,
            Tail::Lower => n,
        }
    }

    fn hit(&self, t: f64) -> bool {
        match self.tail {
            Tail::Upper => t >= self.threshold(),
            Tail::Lower => t <= self.threshold(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub n: i64,
    pub zeta: f64,
    pub tail: Tail,
    pub method: Method,
    pub samples: usize,
    pub hits: usize,
    /// Natural log of the estimated probability.
    pub log_p: f64,
    /// `log_p` divided by the speed, `n^2` (upper) or `n` (lower).
    pub normalized: f64,
    /// Standard error of `log_p`.
    pub stderr: f64,
    /// Exact binomial bounds on `log_p` (naive only).
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Effective sample size of the importance weights.
    pub n_eff: f64,
    pub lambda: Option<f64>,
    /// Zero hits: `log_p` is the binomial upper bound.
    pub one_sided: bool,
    /// The threshold cannot be reached, probability exactly 0.
    pub impossible: bool,
    pub seed: u64,
}

/// Quantile of `Beta(a, b)` by bisection on the CDF; the library inverse
/// stops at about 1e-5.
fn beta_quantile(a: f64, b: f64, q: f64) -> f64 {
    let dist = Beta::new(a, b).expect("positive shape");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Two-sided 95% Clopper-Pearson interval for `k` hits out of `n`.
#[must_use]
pub fn clopper_pearson(k: usize, n: usize) -> (f64, f64) {
    let level = 0.05;
    let lo = if k == 0 { 0.0 } else { beta_quantile(k as f64, (n - k + 1) as f64, level / 2.0) };
    let hi = if k == n { 1.0 } else { beta_quantile((k + 1) as f64, (n - k) as f64, 1.0 - level / 2.0) };
    (lo, hi)
}

/// `T_n` of sample `i`, drawn exactly as `sample_environment` with the
/// per-sample seed. Upper-tail misses are settled on a small window first.
fn naive_hit(model: &WeightModel, cfg: &TailConfig, seed: u64, i: u64) -> Result<bool> {
    let s = seed::derive_seed(seed, "tail", i);
    let r = cfg.halfwidth();
    let (origin, target) = (Point::new(0, 0), Point::new(cfg.n, 0));
    let window = (2 * cfg.n + 2).min(r);
    if model.is_conforming() && window < r {
        let w = sample_window(model, r, s, window)?;
        let t = passage_time(&w, origin, target, None)?;
        // restricted passage times only overestimate
        match cfg.tail {
            Tail::Upper if t < cfg.threshold() => return Ok(false),
            Tail::Lower if t <= cfg.threshold() => return Ok(true),
            _ => {}
        }
    }
    let env = sample_environment(model, r, s)?;
    Ok(cfg.hit(passage_time(&env, origin, target, None)?))
}

fn impossible(cfg: &TailConfig, b: f64) -> bool {
    match cfg.tail {
        Tail::Upper => cfg.mu_hat + cfg.zeta > b,
        Tail::Lower => cfg.mu_hat - cfg.zeta < 0.0,
    }
}

fn log_estimate(cfg: &TailConfig, method: Method, seed: u64) -> RateEstimate {
    RateEstimate {
        n: cfg.n,
        zeta: cfg.zeta,
        tail: cfg.tail,
        method,
        samples: cfg.samples,
        hits: 0,
        log_p: f64::NEG_INFINITY,
        normalized: f64::NEG_INFINITY,
        stderr: f64::NAN,
        ci_low: None,
        ci_high: None,
        n_eff: 0.0,
        lambda: None,
        one_sided: false,
        impossible: false,
        seed,
    }
}

pub fn estimate_tail(model: &WeightModel, cfg: &TailConfig, seed: u64) -> Result<RateEstimate> {
    if cfg.samples == 0 || cfg.n < 1 {
        return Err(invalid("tail estimate needs n >= 1 and samples >= 1"));
    }
    let mut out = log_estimate(cfg, cfg.method, seed);
    if impossible(cfg, model.b()) {
        out.impossible = true;
        return Ok(out);
    }
    match cfg.method {
        Method::Naive => naive(model, cfg, seed, out),
        Method::Tilted => tilted(model, cfg, seed, out),
    }
}

/// Log-space summary of `hits` successes in `samples` Bernoulli trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinomialSummary {
    pub log_p: f64,
    /// Standard error of `log_p` by the delta method; NaN with no hits.
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// No hits: `log_p` is the upper confidence bound.
    pub one_sided: bool,
}

impl BinomialSummary {
    #[must_use]
    pub fn from_counts(hits: usize, samples: usize) -> Self {
        let (lo, hi) = clopper_pearson(hits, samples);
        if hits == 0 {
            return Self { log_p: hi.ln(), stderr: f64::NAN, ci_low: lo.ln(), ci_high: hi.ln(), one_sided: true };
        }
        let p = hits as f64 / samples as f64;
        Self {
            log_p: p.ln(),
            stderr: ((1.0 - p) / (samples as f64 * p)).sqrt(),
            ci_low: lo.ln(),
            ci_high: hi.ln(),
            one_sided: false,
        }
    }
}

fn naive(model: &WeightModel, cfg: &TailConfig, seed: u64, mut out: RateEstimate) -> Result<RateEstimate> {
    let hits: Vec<bool> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| naive_hit(model, cfg, seed, i))
        .collect::<Result<_>>()?;
    let k = hits.iter().filter(|&&h| h).count();
    let summary = BinomialSummary::from_counts(k, cfg.samples);
    out.hits = k;
    out.n_eff = cfg.samples as f64;
    out.log_p = summary.log_p;
    out.stderr = summary.stderr;
    out.ci_low = Some(summary.ci_low);
    out.ci_high = Some(summary.ci_high);
    out.one_sided = summary.one_sided;
    out.normalized = out.log_p / cfg.speed();
    Ok(out)
}

/// Tilt that moves the edge mean by the factor `(mu_hat +- zeta) / mu_hat`.
pub fn mean_matching_tilt(model: &WeightModel, cfg: &TailConfig) -> Result<f64> {
    let factor = cfg.threshold() / (cfg.mu_hat * cfg.n as f64);
    model.solve_tilt(factor * model.mean(), 1e-6)
}

fn tilted(model: &WeightModel, cfg: &TailConfig, seed: u64, mut out: RateEstimate) -> Result<RateEstimate> {
    if !model.is_conforming() {
        return Err(Error::Precondition("tilting needs a conforming law".into()));
    }
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => mean_matching_tilt(model, cfg)?,
    };
    let region = cfg.tilt_region.unwrap_or_else(|| cfg.default_tilt_region());
    let log_z = model.log_mgf(lambda);
    let r = cfg.halfwidth();
    let (origin, target) = (Point::new(0, 0), Point::new(cfg.n, 0));
    // (hit, log of f / f_lambda over the tilted edges)
    let draws: Vec<(bool, f64)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed::derive_seed(seed, "tail", i));
            let mut log_w = 0.0;
            let env = EnvironmentGrid::from_fn(model, r, |e: Edge| {
                if e.inside(&region) {
                    let x = model.sample_tilted(lambda, &mut rng);
                    log_w += log_z - lambda * x;
                    x
                } else {
                    model.sample(&mut rng)
                }
            })?;
            Ok((cfg.hit(passage_time(&env, origin, target, None)?), log_w))
        })
        .collect::<Result<_>>()?;
    let n = cfg.samples as f64;
    let hit_logs: Vec<f64> = draws.iter().filter(|d| d.0).map(|d| d.1).collect();
    out.hits = hit_logs.len();
    out.lambda = Some(lambda);
    let all_logs: Vec<f64> = draws.iter().map(|d| d.1).collect();
    out.n_eff = kish(&all_logs);
    if hit_logs.is_empty() {
        out.one_sided = true;
        out.log_p = clopper_pearson(0, cfg.samples).1.ln();
        out.normalized = out.log_p / cfg.speed();
        return Ok(out);
    }
    let m = hit_logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // moments of the scaled weights w / e^m, zeros included
    let s1: f64 = hit_logs.iter().map(|l| (l - m).exp()).sum();
    let s2: f64 = hit_logs.iter().map(|l| (2.0 * (l - m)).exp()).sum();
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    out.log_p = m + mean.ln();
    out.stderr = (var / n).sqrt() / mean;
    out.normalized = out.log_p / cfg.speed();
    Ok(out)
}

/// Kish effective sample size of log-weights.
fn kish(logs: &[f64]) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s1: f64 = logs.iter().map(|l| (l - m).exp()).sum();
    let s2: f64 = logs.iter().map(|l| (2.0 * (l - m)).exp()).sum();
    s1 * s1 / s2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub rows: Vec<RateEstimate>,
    pub eps: f64,
    pub verdict: bool,
    /// Pairs `(n, m)` with `m > n` where the trend fails.
    pub violations: Vec<(i64, i64)>,
    /// All probabilities are 0 or 1 (degenerate law).
    pub degenerate: bool,
}

/// Joint standard error of `a_n / n^2` and `a_m / m^2`.
fn joint_se(a: &RateEstimate, b: &RateEstimate, speed: impl Fn(i64) -> f64) -> f64 {
    let term = |r: &RateEstimate| if r.stderr.is_finite() { r.stderr / speed(r.n) } else { 0.0 };
    term(a).hypot(term(b))
}

/// Pairwise check `a_m / m^2 >= a_n / n^2 - (eps + 2 SE)` for all `m > n`.
#[must_use]
pub fn trend_verdict(rows: &[RateEstimate], eps: f64) -> (bool, Vec<(i64, i64)>) {
    let sq = |n: i64| (n * n) as f64;
    let mut violations = Vec::new();
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let slack = eps + 2.0 * joint_se(a, b, sq);
            if b.log_p / sq(b.n) < a.log_p / sq(a.n) - slack {
                violations.push((a.n, b.n));
            }
        }
    }
    (violations.is_empty(), violations)
}

/// Naive upper-tail estimates over `ns` with `samples` draws each.
#[allow(clippy::too_many_arguments)]
pub fn rate_curve(
    model: &WeightModel,
    ns: &[i64],
    zeta: f64,
    mu_hat: f64,
    samples: usize,
    spread: f64,
    eps: f64,
    seed: u64,
) -> Result<RateCurve> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(format!("ns must be nonempty and increasing, got {ns:?}")));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let cfg = TailConfig::new(n, zeta, mu_hat, samples, spread);
        let est = estimate_tail(model, &cfg, seed::derive_seed(seed, "rate", n as u64))?;
        if model.is_conforming() && (est.one_sided || est.impossible) {
            return Err(Error::BudgetExhausted(format!("no hits at n = {n} within {samples} samples")));
        }
        rows.push(est);
    }
    let degenerate = rows.iter().all(|r| r.hits == 0 || r.hits == r.samples);
    let (verdict, violations) = if degenerate { (true, Vec::new()) } else { trend_verdict(&rows, eps) };
    Ok(RateCurve { rows, eps, verdict, violations, degenerate })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenReport {
    /// `-a_n / n` is nondecreasing in `n` (upper tail), within 2 SE.
    pub upper_increasing: bool,
    /// `max(-a_n / n) <= band * min(-a_n / n)` (lower tail), within 2 SE.
    pub lower_banded: bool,
    pub upper_per_n: Vec<f64>,
    pub lower_per_n: Vec<f64>,
}

/// Qualitative speed check: the upper tail decays faster than `e^{-c n}`,
/// the lower tail at rate `n`.
#[must_use]
pub fn kesten_speed(upper: &[RateEstimate], lower: &[RateEstimate], band: f64) -> KestenReport {
    let per_n = |r: &RateEstimate| -r.log_p / r.n as f64;
    let lin = |n: i64| n as f64;
    let upper_increasing = upper.iter().enumerate().all(|(i, a)| {
        upper[i + 1..].iter().all(|b| per_n(b) >= per_n(a) - 2.0 * joint_se(a, b, lin))
    });
    let lower_per_n: Vec<f64> = lower.iter().map(per_n).collect();
    let lower_banded = lower.iter().enumerate().all(|(i, a)| {
        lower.iter().skip(i + 1).all(|b| {
            let se = 2.0 * joint_se(a, b, lin);
            let (hi, lo) = if per_n(a) > per_n(b) { (per_n(a), per_n(b)) } else { (per_n(b), per_n(a)) };
            hi - se <= band * (lo + se)
        })
    });
    KestenReport { upper_increasing, lower_banded, upper_per_n: upper.iter().map(per_n).collect(), lower_per_n }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftParams {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps7: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShiftExperiment {
    pub params: ShiftParams,
    /// `min(eps3 / 2, eps7) (1 - c) / 2`.
    pub eps_prime: f64,
    /// `(mu_hat + zeta) / (b - eps2)`.
    pub c: f64,
    /// Edges with weight in `[b - eps2, b]`, kept fixed.
    pub high: Vec<Edge>,
    /// Edges with weight in the low-density set, resampled.
    pub low_density: Vec<Edge>,
    pub shifted_edges: usize,
    #[serde(skip)]
    pub shifted: Option<EnvironmentGrid>,
    pub log_rn_weight: f64,
    pub rn_weight: f64,
    pub passage_before: f64,
    pub passage_after: f64,
    pub threshold: f64,
    pub verdict: bool,
}

/// `eps' = min(eps3 / 2, eps7) (1 - c) / 2` with `c = (mu_hat + zeta) / (b - eps2)`.
pub fn shift_margin(b: f64, mu_hat: f64, zeta: f64, p: &ShiftParams) -> Result<(f64, f64)> {
    let c = (mu_hat + zeta) / (b - p.eps2);
    if !(c < 1.0) {
        return Err(Error::Precondition(format!("c = {c} must be below 1")));
    }
    Ok(((p.eps3 / 2.0).min(p.eps7) * (1.0 - c) / 2.0, c))
}

/// Raise every edge of `Box(inner)`: high edges stay, low-density edges are
/// redrawn in `[b - eps2 + eps3/2, b - eps2 + eps3]`, the rest move up by
/// `eps7`. The verdict asks whether `T_n >= (mu_hat + zeta) n` afterwards.
#[allow(clippy::too_many_arguments)]
pub fn continuity_shift(
    env: &EnvironmentGrid,
    model: &WeightModel,
    n: i64,
    inner: i64,
    mu_hat: f64,
    zeta: f64,
    p: ShiftParams,
    seed: u64,
) -> Result<ShiftExperiment> {
    let b = model.b();
    if !model.is_conforming() {
        return Err(Error::Precondition("the shift needs a density".into()));
    }
    if !(p.eps2 > 0.0 && p.eps3 > 0.0 && p.eps3 <= p.eps2 && p.eps7 > 0.0 && p.eps7 <= p.eps2 && p.eps2 < b) {
        return Err(invalid(format!("need 0 < eps3, eps7 <= eps2 < b, got {p:?}")));
    }
    let top = model.mass_by_quadrature(b - p.eps2, b);
    if top > p.eps1 {
        return Err(Error::Precondition(format!("P(X >= b - eps2) = {top} exceeds eps1 = {}", p.eps1)));
    }
    let floor = model.density_floor(b - p.eps2, b - p.eps2 + p.eps3);
    if floor < p.eps3 {
        return Err(Error::Precondition(format!("density floor {floor} below eps3 = {}", p.eps3)));
    }
    let (eps_prime, c) = shift_margin(b, mu_hat, zeta, &p)?;
    let low_cut = p.eps3.powi(3) / b;
    let bx = Rect::centered(inner.min(env.halfwidth()));
    let mut high = Vec::new();
    let mut low_density = Vec::new();
    let mut shifted_edges = 0;
    let mut log_rn = 0.0;
    let mut rng = seed::derived_rng(seed, "shift", 0);
    let (lo2, hi2) = (b - p.eps2 + p.eps3 / 2.0, b - p.eps2 + p.eps3);
    let mut failure = None;
    let shifted = EnvironmentGrid::from_fn(model, env.halfwidth(), |e| {
        let x = env.weight(e).expect("same box");
        if !e.inside(&bx) {
            return x;
        }
        if x >= b - p.eps2 {
            high.push(e);
            return x;
        }
        if model.density(x).is_some_and(|f| f <= low_cut) {
            low_density.push(e);
            return rand::Rng::gen_range(&mut rng, lo2..=hi2);
        }
        match model.density_ratio(x, p.eps7) {
            Ok(r) => log_rn += r.ln(),
            Err(err) => failure = Some(err),
        }
        shifted_edges += 1;
        x + p.eps7
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    let (origin, target) = (Point::new(0, 0), Point::new(n, 0));
    let passage_before = passage_time(env, origin, target, None)?;
    let passage_after = passage_time(&shifted, origin, target, None)?;
    let threshold = (mu_hat + zeta) * n as f64;
    Ok(ShiftExperiment {
        params: p,
        eps_prime,
        c,
        high,
        low_density,
        shifted_edges,
        shifted: Some(shifted),
        log_rn_weight: log_rn,
        rn_weight: log_rn.exp(),
        passage_before,
        passage_after,
        threshold,
        verdict: passage_after >= threshold,
    })
}

/// Exact `T_n` of a grid, for callers that need the fixed-point value.
pub fn exact_tn(env: &EnvironmentGrid, n: i64) -> Result<ExactTime> {
    passage_time_exact(env, Point::new(0, 0), Point::new(n, 0), None)
}
