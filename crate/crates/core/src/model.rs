//! Edge-weight laws supported on `[0, b]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form of a model: `{ kind, params }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
enum Law {
    Uniform,
    Triangular { peak: f64 },
    /// `density(x) = sum coefficients[i] * x^i`, already normalised.
    Polynomial { coefficients: Vec<f64> },
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightModel {
    b: f64,
    law: Law,
    params: Vec<f64>,
}

const QUAD_TOL: f64 = 1e-13;

/// Build a weight model from its kind name and parameters.
///
/// Kinds: `uniform` (no params), `triangular` (`[peak]`), `polynomial`
/// (raw coefficients, normalised here), `constant-test` (`[value]`).
pub fn make_weight_model(kind: &str, b: f64, params: &[f64]) -> Result<WeightModel> {
    if !(b.is_finite() && b > 0.0) {
        return Err(Error::InvalidModel(format!("support bound b must be positive, got {b}")));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidModel("non-finite parameter".into()));
    }
    let law = match kind {
        "uniform" => {
            if !params.is_empty() {
                return Err(Error::InvalidModel("uniform takes no parameters".into()));
            }
            Law::Uniform
        }
        "triangular" => {
            let [peak] = params else {
                return Err(Error::InvalidModel("triangular takes [peak]".into()));
            };
            if !(0.0..=b).contains(peak) {
                return Err(Error::InvalidModel(format!("peak {peak} outside [0, {b}]")));
            }
            Law::Triangular { peak: *peak }
        }
        "polynomial" => {
            if params.is_empty() {
                return Err(Error::InvalidModel("polynomial needs coefficients".into()));
            }
            let mass: f64 = params
                .iter()
                .enumerate()
                .map(|(i, c)| c * b.powi(i as i32 + 1) / (i as f64 + 1.0))
                .sum();
            if !(mass > 0.0) {
                return Err(Error::InvalidModel("polynomial has non-positive mass".into()));
            }
            let coefficients: Vec<f64> = params.iter().map(|c| c / mass).collect();
            let steps = 2000;
            for s in 0..=steps {
                let x = b * s as f64 / steps as f64;
                if eval_poly(&coefficients, x) < 0.0 {
                    return Err(Error::InvalidModel(format!("density negative at x = {x}")));
                }
            }
            Law::Polynomial { coefficients }
        }
        "constant-test" => {
            let [value] = params else {
                return Err(Error::InvalidModel("constant-test takes [value]".into()));
            };
            if !(0.0..=b).contains(value) {
                return Err(Error::InvalidModel(format!("value {value} outside [0, {b}]")));
            }
            Law::Constant { value: *value }
        }
        other => return Err(Error::InvalidModel(format!("unknown kind {other:?}"))),
    };
    let model = WeightModel { b, law, params: params.to_vec() };
    if model.is_conforming() {
        let mass = model.integrate(|_| 1.0);
        if (mass - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("density integrates to {mass}")));
        }
    }
    Ok(model)
}

fn eval_poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, ci| acc * x + ci)
}

impl WeightModel {
    #[must_use]
    pub fn b(&self) -> f64 {
        self.b
    }

    #[must_use]
    pub fn kind(&self) -> &'static str {
        match self.law {
            Law::Uniform => "uniform",
            Law::Triangular { .. } => "triangular",
            Law::Polynomial { .. } => "polynomial",
            Law::Constant { .. } => "constant-test",
        }
    }

    #[must_use]
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    #[must_use]
    pub fn spec(&self) -> ModelSpec {
        ModelSpec { kind: self.kind().to_string(), params: self.params.clone() }
    }

    pub fn from_spec(spec: &ModelSpec, b: f64) -> Result<Self> {
        make_weight_model(&spec.kind, b, &spec.params)
    }

    /// False only for the degenerate constant law used in tests.
    #[must_use]
    pub fn is_conforming(&self) -> bool {
        !matches!(self.law, Law::Constant { .. })
    }

    #[must_use]
    pub fn constant_value(&self) -> Option<f64> {
        match self.law {
            Law::Constant { value } => Some(value),
            _ => None,
        }
    }

    /// Density on `[0, b]`, zero outside. `None` for the constant law.
    #[must_use]
    pub fn density(&self, x: f64) -> Option<f64> {
        if !self.is_conforming() {
            return None;
        }
        if !(0.0..=self.b).contains(&x) {
            return Some(0.0);
        }
        let b = self.b;
        Some(match &self.law {
            Law::Uniform => 1.0 / b,
            Law::Triangular { peak } => {
                let p = *peak;
                if x < p {
                    2.0 * x / (b * p)
                } else if p < b {
                    2.0 * (b - x) / (b * (b - p))
                } else {
                    2.0 / b
                }
            }
            Law::Polynomial { coefficients } => eval_poly(coefficients, x),
            Law::Constant { .. } => unreachable!(),
        })
    }

    #[must_use]
    pub fn cdf(&self, x: f64) -> f64 {
        let b = self.b;
        if x <= 0.0 {
            return if let Law::Constant { value } = self.law { f64::from(value <= x) } else { 0.0 };
        }
        if x >= b {
            return 1.0;
        }
        match &self.law {
            Law::Uniform => x / b,
            Law::Triangular { peak } => {
                let p = *peak;
                if x < p {
                    x * x / (b * p)
                } else {
                    1.0 - (b - x) * (b - x) / (b * (b - p))
                }
            }
            Law::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| c * x.powi(i as i32 + 1) / (i as f64 + 1.0))
                .sum::<f64>()
                .clamp(0.0, 1.0),
            Law::Constant { value } => f64::from(*value <= x),
        }
    }

    /// `P(lo <= X <= hi)`.
    #[must_use]
    pub fn probability(&self, lo: f64, hi: f64) -> f64 {
        if hi < lo {
            return 0.0;
        }
        if let Law::Constant { value } = self.law {
            return f64::from((lo..=hi).contains(&value));
        }
        (self.cdf(hi) - self.cdf(lo)).max(0.0)
    }

    #[must_use]
    pub fn mean(&self) -> f64 {
        let b = self.b;
        match &self.law {
            Law::Uniform => b / 2.0,
            Law::Triangular { peak } => (b + peak) / 3.0,
            Law::Polynomial { coefficients } => coefficients
                .iter()
                .enumerate()
                .map(|(i, c)| c * b.powi(i as i32 + 2) / (i as f64 + 2.0))
                .sum(),
            Law::Constant { value } => *value,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let b = self.b;
        match &self.law {
            Law::Uniform => rng.gen::<f64>() * b,
            Law::Triangular { peak } => {
                let p = *peak;
                let u: f64 = rng.gen();
                if u * b < p {
                    (u * b * p).sqrt()
                } else {
                    b - ((1.0 - u) * b * (b - p)).sqrt()
                }
            }
            Law::Polynomial { .. } => {
                let u: f64 = rng.gen();
                let (mut lo, mut hi) = (0.0, b);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
            Law::Constant { value } => *value,
        }
    }

    /// `f(x + shift) / f(x)`.
    pub fn density_ratio(&self, x: f64, shift: f64) -> Result<f64> {
        if !self.is_conforming() {
            return Err(Error::InvalidModel("constant law has no density".into()));
        }
        if x < 0.0 || x + shift > self.b {
            return Err(Error::InvalidParameter(format!(
                "shifted point {} leaves [0, {}]",
                x + shift,
                self.b
            )));
        }
        let fx = self.density(x).unwrap_or(0.0);
        if fx <= 0.0 {
            return Err(Error::InvalidParameter(format!("zero density at x = {x}")));
        }
        Ok(self.density(x + shift).unwrap_or(0.0) / fx)
    }

    /// Infimum of the density on `[lo, hi]`, sampled on a fine mesh plus
    /// the endpoints.
    #[must_use]
    pub fn density_floor(&self, lo: f64, hi: f64) -> f64 {
        let steps = 1000;
        (0..=steps)
            .map(|s| lo + (hi - lo) * s as f64 / steps as f64)
            .map(|x| self.density(x).unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// `P(lo <= X <= hi)` by quadrature of the density, independent of
    /// the closed-form CDF.
    #[must_use]
    pub fn mass_by_quadrature(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = (lo.max(0.0), hi.min(self.b));
        if hi <= lo || !self.is_conforming() {
            return self.probability(lo, hi);
        }
        let f = |x: f64| self.density(x).unwrap_or(0.0);
        let mut cuts = vec![lo, hi];
        if let Law::Triangular { peak } = self.law {
            if peak > lo && peak < hi {
                cuts.insert(1, peak);
            }
        }
        cuts.windows(2).map(|w| quadrature::integrate(f, w[0], w[1], QUAD_TOL).integral).sum()
    }

    /// Integral of `g(x) f(x)` over `[0, b]` by double-exponential quadrature,
    /// split at the kink of the triangular law.
    fn integrate(&self, g: impl Fn(f64) -> f64) -> f64 {
        let h = |x: f64| g(x) * self.density(x).unwrap_or(0.0);
        let mut cuts = vec![0.0, self.b];
        if let Law::Triangular { peak } = self.law {
            if peak > 0.0 && peak < self.b {
                cuts.insert(1, peak);
            }
        }
        cuts.windows(2).map(|w| quadrature::integrate(h, w[0], w[1], QUAD_TOL).integral).sum()
    }

    /// `log E[exp(lambda X)]`.
    #[must_use]
    pub fn log_mgf(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let b = self.b;
        match &self.law {
            Law::Uniform => {
                let t = lambda * b;
                // log((e^t - 1) / t), written to stay finite for large |t|
                if t > 0.0 {
                    t + (-(-t).exp_m1() / t).ln()
                } else {
                    (t.exp_m1() / t).ln()
                }
            }
            Law::Constant { value } => lambda * value,
            _ => {
                let shift = lambda.max(0.0) * b;
                shift + self.integrate(|x| (lambda * x - shift).exp()).ln()
            }
        }
    }

    /// Mean of the exponentially tilted law `f_lambda ∝ f e^{lambda x}`.
    #[must_use]
    pub fn tilted_mean(&self, lambda: f64) -> f64 {
        if lambda == 0.0 {
            return self.mean();
        }
        let b = self.b;
        match &self.law {
            Law::Uniform => {
                let t = lambda * b;
                if t.abs() < 1e-4 {
                    b / 2.0 + lambda * b * b / 12.0
                } else {
                    b / -(-t).exp_m1() - 1.0 / lambda
                }
            }
            Law::Constant { value } => *value,
            _ => {
                let shift = lambda.max(0.0) * b;
                let z = self.integrate(|x| (lambda * x - shift).exp());
                self.integrate(|x| x * (lambda * x - shift).exp()) / z
            }
        }
    }

    /// Draw from the tilted law. With `lambda == 0` this consumes exactly
    /// the same random numbers as [`WeightModel::sample`].
    pub fn sample_tilted<R: Rng + ?Sized>(&self, lambda: f64, rng: &mut R) -> f64 {
        if lambda == 0.0 {
            return self.sample(rng);
        }
        match &self.law {
            Law::Uniform => {
                let u: f64 = rng.gen();
                (u * (lambda * self.b).exp_m1()).ln_1p() / lambda
            }
            Law::Constant { value } => *value,
            _ => loop {
                let x = self.sample(rng);
                let log_accept = if lambda > 0.0 { lambda * (x - self.b) } else { lambda * x };
                if rng.gen::<f64>().ln() < log_accept {
                    break x;
                }
            },
        }
    }

    /// Solve `tilted_mean(lambda) = target` by bisection to `tol`.
    pub fn solve_tilt(&self, target: f64, tol: f64) -> Result<f64> {
        if !self.is_conforming() {
            return Err(Error::InvalidModel("cannot tilt the constant law".into()));
        }
        if !(target > 0.0 && target < self.b) {
            return Err(Error::InvalidParameter(format!("tilted mean {target} not inside (0, b)")));
        }
        let (mut lo, mut hi) = (-1.0, 1.0);
        while self.tilted_mean(lo) > target {
            lo *= 2.0;
            if lo < -1e4 {
                return Err(Error::InvalidParameter("tilt diverges".into()));
            }
        }
        while self.tilted_mean(hi) < target {
            hi *= 2.0;
            if hi > 1e4 {
                return Err(Error::InvalidParameter("tilt diverges".into()));
            }
        }
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.tilted_mean(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}
