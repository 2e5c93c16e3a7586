use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fpp_core::conditioning::{condition_on_event, conditioned_samples, metric_margin, EventSpec};
use fpp_core::dilation::{build_fav, make_plan, verify_fav, CorridorLayout, DilationPlan, FavEnvironment};
use fpp_core::estimator::{
    continuity_shift, estimate_tail, estimate_time_constant, shift_margin, trend_verdict, RateEstimate, ShiftExperiment,
    ShiftParams, TailConfig,
};
use fpp_core::geodesic::geodesic;
use fpp_core::grid::sample_environment;
use fpp_core::model::make_weight_model;
use fpp_core::paths::{compare_lengths, random_path, regularize, scale_down, LengthReport};
use fpp_core::projection::{build_proj_table, NestedGrids, Signature};
use fpp_core::seed::{derive_seed, derived_rng};
use fpp_core::stability::{gradient_ratio_violations, scan_scales, ScanConfig, StabilityParams, StabilityReport, TileGrid};
use fpp_core::{EnvironmentGrid, Point, WeightModel};
use serde::Serialize;

use crate::config::{BaseChoice, Format, RunConfig};
use crate::report::Emitter;

/// Result of a command that ran to completion. `verdict` is `Some(false)`
/// when the command's own check failed.
pub struct Outcome {
    pub verdict: Option<bool>,
}

impl Outcome {
    fn done() -> Self {
        Self { verdict: None }
    }

    fn checked(ok: bool) -> Self {
        Self { verdict: Some(ok) }
    }
}

pub struct Run<'a> {
    pub config: &'a RunConfig,
    pub format: Format,
    pub emit: Emitter,
}

impl Run<'_> {
    fn seed(&self) -> u64 {
        self.config.seed()
    }

    fn model(&self) -> Result<WeightModel> {
        let m = &self.config.model;
        Ok(make_weight_model(&m.kind, m.b, &m.params)?)
    }

    fn json_only(&self) -> Result<()> {
        if self.format == Format::Csv {
            bail!("command {} has no CSV output", self.emit.command);
        }
        Ok(())
    }

    fn say(&self, path: &Path) {
        println!("wrote {}", path.display());
    }

    /// Environment from a file, or sampled from the model at half-width `r`.
    fn environment(&self, file: Option<&PathBuf>, r: i64, label: &str) -> Result<EnvironmentGrid> {
        match file {
            Some(path) => EnvironmentGrid::read_file(path).with_context(|| format!("reading {}", path.display())),
            None => Ok(sample_environment(&self.model()?, r, derive_seed(self.seed(), label, 0))?),
        }
    }

    /// `(mu_hat, mu_min)`, estimated from `T_32 / 32` when not configured.
    fn time_constant(&self, configured: Option<f64>) -> Result<(f64, f64)> {
        if let Some(mu) = configured {
            return Ok((mu, mu));
        }
        let est = estimate_time_constant(&self.model()?, &[8, 16, 32], 100, 16, derive_seed(self.seed(), "mu-hat", 0))?;
        println!("estimated mu_hat {:.4} (directional minimum {:.4})", est.mu_hat, est.mu_hat_min);
        Ok((est.mu_hat, est.mu_hat_min))
    }

    pub fn sample(&self) -> Result<Outcome> {
        self.json_only()?;
        let env = sample_environment(&self.model()?, self.config.sample.r, self.seed())?
            .with_config_hash(self.emit.config_hash.clone());
        let path = self.emit.raw("environment.json", &env.to_json_string()?)?;
        self.say(&path);
        Ok(Outcome::done())
    }

    pub fn pt(&self) -> Result<Outcome> {
        self.json_only()?;
        let cfg = &self.config.pt;
        let Some(file) = &cfg.env else { bail!("pt needs an environment file") };
        let env = EnvironmentGrid::read_file(file).with_context(|| format!("reading {}", file.display()))?;
        let (u, v) = (Point::new(cfg.from[0], cfg.from[1]), Point::new(cfg.to[0], cfg.to[1]));
        let path = geodesic(&env, u, v, None)?;
        println!("{}", path.weight);
        println!("{}", serde_json::to_string(&path.vertices)?);
        #[derive(Serialize)]
        struct Report<'a> {
            environment: String,
            from: Point,
            to: Point,
            passage_time: f64,
            geodesic: &'a [Point],
        }
        let report =
            Report { environment: env.content_hash(), from: u, to: v, passage_time: path.weight, geodesic: &path.vertices };
        self.emit.json("pt.json", &report)?;
        Ok(Outcome::done())
    }

    pub fn shape(&self) -> Result<Outcome> {
        let cfg = &self.config.shape;
        let est = estimate_time_constant(&self.model()?, &cfg.ns, cfg.samples, cfg.directions, self.seed())?;
        let path = match self.format {
            Format::Json => self.emit.json("shape.json", &est)?,
            Format::Csv => {
                let rows: Vec<Vec<String>> = est
                    .table
                    .iter()
                    .map(|r| {
                        vec![r.n.to_string(), r.samples.to_string(), r.mean.to_string(), r.std.to_string(), r.stderr.to_string()]
                    })
                    .collect();
                self.emit.csv("shape.csv", &["n", "samples", "mean", "std", "se"], &rows)?
            }
        };
        println!("mu_hat {:.4}, directional minimum {:.4}", est.mu_hat, est.mu_hat_min);
        self.say(&path);
        Ok(Outcome::done())
    }

    pub fn stability_scan(&self) -> Result<Outcome> {
        self.json_only()?;
        let s = &self.config.stability;
        let r = s.r.unwrap_or_else(|| s.needed_halfwidth());
        let env = self.environment(s.env.as_ref(), r, "stability-env")?;
        let scan = ScanConfig {
            n: s.n,
            j_min: s.j_min,
            j_max: s.j_max,
            m: s.m,
            delta3: s.delta3,
            params: StabilityParams { delta: s.delta, eta: s.eta(), step: 1.0, k: s.k, epsilon: s.epsilon },
            lines_per_direction: s.lines_per_direction,
            points_per_tile: s.points_per_tile,
            alpha_hat: s.alpha_hat,
            seed: derive_seed(self.seed(), "scan", 0),
        };
        let report = scan_scales(&env, &scan)?;
        let tiles = TileGrid::new(s.n, report.scale * s.m)?;
        let params = StabilityParams { step: report.step(), ..scan.params };
        let c0 = self.config.constants.c0;
        let mut violations = 0;
        let mut checked = 0;
        for t in report.tiles.iter().filter(|t| t.stable) {
            violations += gradient_ratio_violations(&env, tiles.center(t.v), &params, c0)?;
            checked += 1;
        }
        #[derive(Serialize)]
        struct Output<'a> {
            environment: String,
            report: &'a StabilityReport,
            c0: f64,
            checked_tiles: usize,
            gradient_ratio_violations: usize,
        }
        let out = Output {
            environment: env.content_hash(),
            report: &report,
            c0,
            checked_tiles: checked,
            gradient_ratio_violations: violations,
        };
        let path = self.emit.json("stability.json", &out)?;
        println!(
            "scale {} unstable fraction {:.4}, gradient-ratio violations {violations} over {checked} tiles",
            report.scale, report.unstable_fraction
        );
        self.say(&path);
        Ok(Outcome::checked(violations == 0))
    }

    pub fn project(&self) -> Result<Outcome> {
        let p = &self.config.projection;
        let env = self.environment(p.env.as_ref(), p.r.unwrap_or(p.n + 1), "projection-env")?;
        let grids = NestedGrids::new(p.n, p.j, p.m)?;
        let table = build_proj_table(&env, &grids, p.eta1, p.domain.into())?;
        let bad = table
            .entries()
            .filter(|e| {
                let gap = e.passage_time - e.value;
                !(gap >= 0.0 && gap <= p.eta1 * e.z.dist(e.w))
            })
            .count();
        let csv = self.emit.csv_text("proj_table.csv", &table.to_csv())?;
        #[derive(Serialize)]
        struct Output {
            environment: String,
            table_digest: String,
            signature: Signature,
            distinct_levels: usize,
            sandwich_violations: usize,
        }
        let out = Output {
            environment: env.content_hash(),
            table_digest: table.digest(),
            signature: Signature::new(&table, &[]),
            distinct_levels: table.distinct_levels(),
            sandwich_violations: bad,
        };
        let sig = self.emit.json("signature.json", &out)?;
        println!("{} distinct levels, {bad} sandwich violations", out.distinct_levels);
        self.say(&csv);
        self.say(&sig);
        Ok(Outcome::checked(bad == 0))
    }

    fn base_grids(&self, plan: &DilationPlan) -> Result<(Vec<EnvironmentGrid>, Vec<String>, f64)> {
        let d = &self.config.dilation;
        let count = (plan.h() * plan.h()) as usize;
        match d.bases {
            BaseChoice::Constant => {
                let b = self.config.model.b;
                let grid = EnvironmentGrid::constant(plan.base_halfwidth(), b, d.base_value)?;
                let mu = d.mu_hat.unwrap_or(d.base_value);
                Ok((vec![grid; count], vec![format!("constant {}", d.base_value); count], mu))
            }
            BaseChoice::Conditioned => {
                let model = self.model()?;
                let (mu, mu_min) = self.time_constant(d.mu_hat)?;
                let spec = EventSpec::with_defaults(plan.params.n, d.zeta, mu, mu_min, model.b());
                let grids = (0..count as u64)
                    .map(|k| {
                        let s = condition_on_event(&model, &spec, derive_seed(self.seed(), "base", k), d.max_attempts)?;
                        Ok(s.env.restrict(plan.base_halfwidth())?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let signature = format!("T_{} >= {}", spec.n, spec.threshold());
                Ok((grids, vec![signature; count], mu))
            }
        }
    }

    fn build(&self) -> Result<(CorridorLayout, Vec<EnvironmentGrid>, FavEnvironment, f64)> {
        let d = &self.config.dilation;
        let plan = make_plan(d.plan.clone())?;
        let layout = CorridorLayout::new(&plan);
        let (bases, signatures, mu) = self.base_grids(&plan)?;
        let fav = build_fav(&layout, &bases, &signatures, derive_seed(self.seed(), "barrier", 0), d.log_base_probability)?;
        Ok((layout, bases, fav, mu))
    }

    pub fn dilate(&self) -> Result<Outcome> {
        self.json_only()?;
        let d = &self.config.dilation;
        let (_, _, fav, mu) = self.build()?;
        let eps = d.eps.unwrap_or(0.1 * (mu + d.zeta));
        let report = verify_fav(&fav.grid, &fav.plan, mu, d.zeta, eps)?;
        let plan_path = self.emit.json("plan.json", &fav.plan)?;
        let grid = fav.grid.clone().with_config_hash(self.emit.config_hash.clone());
        let fav_path = self.emit.raw("fav.json", &grid.to_json_string()?)?;
        #[derive(Serialize)]
        struct Output<'a> {
            mu_hat: f64,
            zeta: f64,
            eps: f64,
            accounting: &'a fpp_core::dilation::MeasureAccounting,
            report: &'a fpp_core::dilation::FavReport,
        }
        let out = Output { mu_hat: mu, zeta: d.zeta, eps, accounting: &fav.accounting, report: &report };
        let verify_path = self.emit.json("verify.json", &out)?;
        println!(
            "passage {:.4} vs {:.4}, exit {:.4} vs {:.4}",
            report.passage_time, report.passage_threshold, report.exit_time, report.exit_threshold
        );
        for p in [plan_path, fav_path, verify_path] {
            self.say(&p);
        }
        Ok(Outcome::checked(report.passed()))
    }

    pub fn paths(&self) -> Result<Outcome> {
        self.json_only()?;
        let cfg = &self.config.paths;
        let (layout, bases, fav, _) = self.build()?;
        let plan = &fav.plan;
        let levels = plan.base_halfwidth().trailing_zeros().saturating_sub(plan.params.j1);
        let mut rng = derived_rng(self.seed(), "paths", 0);
        #[derive(Serialize)]
        struct PathOutcome {
            index: usize,
            edges: usize,
            original_weight: f64,
            regularized_weight: f64,
            certified_ratio: f64,
            certified_bound: f64,
            certified: bool,
            bridges_replaced: usize,
            detours: usize,
            unresolved: usize,
            scaled_weight: f64,
            scaled_pieces: usize,
            compare: LengthReport,
        }
        let mut outcomes = Vec::with_capacity(cfg.count);
        for index in 0..cfg.count {
            let path = random_path(&plan.region(), Point::new(0, 0), plan.target(), cfg.waypoints, &mut rng);
            let r = regularize(&path, &fav.grid, &layout, self.config.constants.c3)?;
            let scaled = scale_down(&r.path, &layout, &bases[0], levels)?;
            let compare = compare_lengths(&scaled, &fav.grid, &layout, r.original_weight, cfg.slack)?;
            outcomes.push(PathOutcome {
                index,
                edges: path.len() - 1,
                original_weight: r.original_weight,
                regularized_weight: r.weight,
                certified_ratio: r.ratio,
                certified_bound: r.bound,
                certified: r.certified,
                bridges_replaced: r.bridges_replaced,
                detours: r.detours,
                unresolved: r.unresolved,
                scaled_weight: scaled.weight,
                scaled_pieces: scaled.pieces.len(),
                compare,
            });
        }
        let passed = outcomes.iter().filter(|o| o.compare.passed && o.certified).count();
        let worst = outcomes.iter().map(|o| o.compare.chain_ratio.min(o.compare.pieces_ratio)).fold(f64::INFINITY, f64::min);
        let path = self.emit.json("paths.json", &outcomes)?;
        println!("{passed}/{} paths pass, worst total ratio {worst:.4}", cfg.count);
        self.say(&path);
        Ok(Outcome::checked(passed == cfg.count))
    }

    pub fn estimate(&self) -> Result<Outcome> {
        let e = &self.config.estimate;
        let model = self.model()?;
        let (mu, _) = self.time_constant(e.mu_hat)?;
        let rows: Vec<RateEstimate> = e
            .ns
            .iter()
            .map(|&n| {
                let cfg = TailConfig {
                    tail: e.tail.into(),
                    method: e.method.into(),
                    lambda: e.lambda,
                    ..TailConfig::new(n, e.zeta, mu, e.samples, e.spread)
                };
                Ok(estimate_tail(&model, &cfg, derive_seed(self.seed(), "estimate", n as u64))?)
            })
            .collect::<Result<_>>()?;
        let (verdict, violations) = trend_verdict(&rows, e.eps);
        let method = match e.method {
            crate::config::MethodChoice::Naive => "naive",
            crate::config::MethodChoice::Tilted => "tilted",
        };
        let path = match self.format {
            Format::Json => {
                #[derive(Serialize)]
                struct Output<'a> {
                    mu_hat: f64,
                    rows: &'a [RateEstimate],
                    eps: f64,
                    verdict: bool,
                    violations: &'a [(i64, i64)],
                }
                let out = Output { mu_hat: mu, rows: &rows, eps: e.eps, verdict, violations: &violations };
                self.emit.json("estimate.json", &out)?
            }
            Format::Csv => {
                let table: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.n.to_string(),
                            r.zeta.to_string(),
                            method.to_string(),
                            r.log_p.to_string(),
                            r.normalized.to_string(),
                            r.stderr.to_string(),
                            r.n_eff.to_string(),
                            r.seed.to_string(),
                        ]
                    })
                    .collect();
                let columns = ["n", "zeta", "method", "log_p", "norm", "se", "n_eff", "seed"];
                self.emit.csv("estimate.csv", &columns, &table)?
            }
        };
        for r in &rows {
            println!("n={} log p {:.4} (se {:.4}), per n^2 {:.4}", r.n, r.log_p, r.stderr, r.normalized);
        }
        println!("trend verdict {verdict}");
        self.say(&path);
        Ok(Outcome::checked(verdict))
    }

    pub fn continuity(&self) -> Result<Outcome> {
        self.json_only()?;
        let c = &self.config.continuity;
        let model = self.model()?;
        let (mu, mu_min) = self.time_constant(c.mu_hat)?;
        let params = ShiftParams { eps1: c.eps1, eps2: c.eps2, eps3: c.eps3, eps7: c.eps7 };
        let (eps_prime, cc) = shift_margin(model.b(), mu, c.zeta, &params)?;
        let lowered = EventSpec::with_defaults(c.n, c.zeta - eps_prime, mu, mu_min, model.b());
        let samples = conditioned_samples(&model, &lowered, derive_seed(self.seed(), "continuity", 0), c.samples, c.max_attempts)?;
        let experiments: Vec<ShiftExperiment> = samples
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let seed = derive_seed(self.seed(), "shift", k as u64);
                Ok(continuity_shift(&s.env, &model, c.n, lowered.inner_halfwidth(), mu, c.zeta, params, seed)?)
            })
            .collect::<Result<_>>()?;
        let target = EventSpec { zeta: c.zeta, ..lowered };
        let mut inside = 0;
        for (s, x) in samples.iter().zip(&experiments) {
            let shifted = x.shifted.as_ref().expect("shift keeps its grid");
            if x.verdict && metric_margin(shifted, &target, s.metric_seed)? >= 1.0 {
                inside += 1;
            }
        }
        let weights_ok = experiments.iter().all(|x| x.rn_weight.is_finite() && x.rn_weight > 0.0);
        #[derive(Serialize)]
        struct Output<'a> {
            mu_hat: f64,
            eps_prime: f64,
            c: f64,
            conditioned_zeta: f64,
            inside: usize,
            weights_ok: bool,
            experiments: &'a [ShiftExperiment],
        }
        let out = Output {
            mu_hat: mu,
            eps_prime,
            c: cc,
            conditioned_zeta: lowered.zeta,
            inside,
            weights_ok,
            experiments: &experiments,
        };
        let path = self.emit.json("continuity.json", &out)?;
        println!("eps' {eps_prime:.5}: {inside}/{} shifted samples lie in the event", experiments.len());
        self.say(&path);
        Ok(Outcome::checked(inside == experiments.len() && weights_ok))
    }
}
