//! Rejection sampling of environments in the upper-tail event.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geodesic::{distances_exact, passage_time, ExactTime};
use crate::geometry::{Point, Rect};
use crate::grid::{sample_environment, sample_window, EnvironmentGrid};
use crate::model::WeightModel;
use crate::seed;

/// Parameters of the conditioning event: `T_n >= (mu_hat + zeta) n` plus a
/// metric lower bound `PT(z, w) >= alpha |z - w|` on sampled pairs of
/// `Box(spread * n)` at separation at least `sqrt(n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub n: i64,
    pub zeta: f64,
    pub mu_hat: f64,
    pub alpha: f64,
    pub spread: f64,
    pub pairs: usize,
    pub sources: usize,
}

impl EventSpec {
    /// Defaults tied to a minimal-direction estimate: `alpha = mu_min / 2`,
    /// `spread = 4 b / mu_min`.
    #[must_use]
    pub fn with_defaults(n: i64, zeta: f64, mu_hat: f64, mu_min: f64, b: f64) -> Self {
        Self { n, zeta, mu_hat, alpha: mu_min / 2.0, spread: 4.0 * b / mu_min, pairs: 512, sources: 4 }
    }

    #[must_use]
    pub fn threshold(&self) -> f64 {
        (self.mu_hat + self.zeta) * self.n as f64
    }

    /// Half-width of the sampled box, `4 * spread * n`.
    #[must_use]
    pub fn outer_halfwidth(&self) -> i64 {
        (4.0 * self.spread * self.n as f64).ceil() as i64
    }

    #[must_use]
    pub fn inner_halfwidth(&self) -> i64 {
        (self.spread * self.n as f64).ceil() as i64
    }

    /// Window used for cheap rejection before drawing the full box.
    #[must_use]
    pub fn window_halfwidth(&self) -> i64 {
        (2 * self.n + 2).min(self.outer_halfwidth())
    }

    fn validate(&self, model: &WeightModel) -> Result<()> {
        if !model.is_conforming() {
            return Err(Error::Precondition(format!("{} is not a conforming law", model.kind())));
        }
        if self.n < 1 || self.pairs == 0 || self.sources == 0 || self.sources > self.pairs {
            return Err(invalid(format!("bad event spec {self:?}")));
        }
        if !(self.zeta > 0.0 && self.zeta < model.b() - self.mu_hat) {
            return Err(Error::Precondition(format!(
                "zeta = {} must lie in (0, b - mu_hat) = (0, {})",
                self.zeta,
                model.b() - self.mu_hat
            )));
        }
        if !(self.alpha > 0.0 && self.spread >= 1.0) {
            return Err(invalid(format!("alpha {} and spread {} out of range", self.alpha, self.spread)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ConditionedSample {
    pub env: EnvironmentGrid,
    /// Attempts consumed, including the accepted one.
    pub attempts: u64,
    pub event: EventSpec,
    pub passage_time: f64,
    /// Smallest `PT(z, w) / (alpha |z - w|)` over the checked pairs.
    pub metric_margin: f64,
    /// Seed of the checked pair set; re-checks after a monotone change reuse it.
    pub metric_seed: u64,
}

/// Pair check for the metric lower bound. Returns the smallest ratio
/// `PT / (alpha |z - w|)`; the event holds when it is at least 1.
pub fn metric_margin(env: &EnvironmentGrid, spec: &EventSpec, seed: u64) -> Result<f64> {
    let inner = spec.inner_halfwidth().min(env.halfwidth());
    let bx = Rect::centered(inner);
    let min_sep = (spec.n as f64).sqrt();
    let mut rng = seed::derived_rng(seed, "metric-pairs", 0);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        Point::new(rng.gen_range(bx.x_min..=bx.x_max), rng.gen_range(bx.y_min..=bx.y_max))
    };
    let per_source = spec.pairs.div_ceil(spec.sources);
    let mut worst = f64::INFINITY;
    for s in 0..spec.sources {
        let source = draw(&mut rng);
        let count = per_source.min(spec.pairs - s * per_source);
        let mut targets = Vec::with_capacity(count);
        while targets.len() < count {
            let t = draw(&mut rng);
            if t.to_real().dist(source.to_real()) >= min_sep {
                targets.push(t);
            }
        }
        let times = distances_exact(env, source, &targets, None)?;
        for (t, d) in targets.iter().zip(times) {
            let ratio = ExactTime::to_f64(d) / (spec.alpha * t.to_real().dist(source.to_real()));
            worst = worst.min(ratio);
        }
    }
    Ok(worst)
}

fn attempt(model: &WeightModel, spec: &EventSpec, seed: u64, index: u64) -> Result<Option<ConditionedSample>> {
    let s = seed::derive_seed(seed, "attempt", index);
    let r = spec.outer_halfwidth();
    let target = Point::new(spec.n, 0);
    let origin = Point::new(0, 0);
    let threshold = spec.threshold();
    // The window restricts paths, so its passage time bounds the full one from above.
    let window = sample_window(model, r, s, spec.window_halfwidth())?;
    if passage_time(&window, origin, target, None)? < threshold {
        return Ok(None);
    }
    let env = sample_environment(model, r, s)?;
    let t = passage_time(&env, origin, target, None)?;
    if t < threshold {
        return Ok(None);
    }
    let margin = metric_margin(&env, spec, s)?;
    if margin < 1.0 {
        return Ok(None);
    }
    Ok(Some(ConditionedSample { env, attempts: index + 1, event: *spec, passage_time: t, metric_margin: margin, metric_seed: s }))
}

/// First accepted environment on `L-Box(4 spread n)`. Attempts run in
/// parallel batches; the lowest accepted index wins, so the result does
/// not depend on the worker count.
pub fn condition_on_event(model: &WeightModel, spec: &EventSpec, seed: u64, max_attempts: u64) -> Result<ConditionedSample> {
    spec.validate(model)?;
    let mut batch = 16 * rayon::current_num_threads() as u64;
    let mut start = 0;
    while start < max_attempts {
        let end = (start + batch).min(max_attempts);
        let found = (start..end)
            .into_par_iter()
            .map(|i| attempt(model, spec, seed, i))
            .find_first(|r| !matches!(r, Ok(None)));
        match found {
            Some(Ok(Some(sample))) => return Ok(sample),
            Some(Err(e)) => return Err(e),
            _ => {
                start = end;
                batch = (batch * 2).min(4096);
            }
        }
    }
    Err(Error::BudgetExhausted(format!(
        "no acceptance in {max_attempts} attempts at n = {}, zeta = {}",
        spec.n, spec.zeta
    )))
}

/// `count` independent conditioned samples, sample `k` seeded from
/// `(seed, k)`.
pub fn conditioned_samples(
    model: &WeightModel,
    spec: &EventSpec,
    seed: u64,
    count: usize,
    max_attempts: u64,
) -> Result<Vec<ConditionedSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| condition_on_event(model, spec, seed::derive_seed(seed, "conditioned", k), max_attempts))
        .collect()
}
