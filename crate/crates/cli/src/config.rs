use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use fpp_core::dilation::DilationParams;
use fpp_core::estimator::{Method, Tail};
use fpp_core::projection::ProjDomain;
use fpp_core::seed::digest_hex;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// Everything a run depends on. Unset top-level values fall back to flags,
/// then to built-in defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub model: ModelSection,
    pub sample: SampleSection,
    pub pt: PtSection,
    pub shape: ShapeSection,
    pub stability: StabilitySection,
    pub projection: ProjectionSection,
    pub dilation: DilationSection,
    pub paths: PathsSection,
    pub estimate: EstimateSection,
    pub continuity: ContinuitySection,
    pub constants: Constants,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: String,
    pub b: f64,
    pub params: Vec<f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { kind: "uniform".into(), b: 1.0, params: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    /// Half-width of the sampled box.
    pub r: i64,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { r: 16 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PtSection {
    pub env: Option<PathBuf>,
    pub from: [i64; 2],
    pub to: [i64; 2],
}

impl Default for PtSection {
    fn default() -> Self {
        Self { env: None, from: [0, 0], to: [3, 0] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapeSection {
    pub ns: Vec<i64>,
    pub samples: usize,
    pub directions: usize,
}

impl Default for ShapeSection {
    fn default() -> Self {
        Self { ns: vec![8, 16, 32], samples: 100, directions: 16 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilitySection {
    /// Environment file; sampled from the model when absent.
    pub env: Option<PathBuf>,
    /// Half-width of the sampled grid; the smallest legal one when absent.
    pub r: Option<i64>,
    pub n: i64,
    pub j_min: u32,
    pub j_max: u32,
    pub m: u32,
    pub delta: f64,
    /// Number of grid directions; the angle spacing is `2 pi / directions`.
    pub directions: usize,
    pub k: usize,
    pub epsilon: f64,
    pub delta3: f64,
    pub lines_per_direction: usize,
    pub points_per_tile: usize,
    pub alpha_hat: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            env: None,
            r: None,
            n: 64,
            j_min: 1,
            j_max: 3,
            m: 1,
            delta: 0.3,
            directions: 16,
            k: 4,
            epsilon: 0.1,
            delta3: 0.05,
            lines_per_direction: 4,
            points_per_tile: 4,
            alpha_hat: 0.35,
        }
    }
}

impl StabilitySection {
    #[must_use]
    pub fn eta(&self) -> f64 {
        TAU / self.directions.max(1) as f64
    }

    /// Smallest grid the scan accepts.
    #[must_use]
    pub fn needed_halfwidth(&self) -> i64 {
        let n = self.n as f64;
        let coarse = n / 2f64.powi((self.j_min * self.m) as i32);
        ((n + coarse * self.k as f64).max(1.5 * n) + 2.0).ceil() as i64 + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainChoice {
    Fine,
    TileCenters,
}

impl From<DomainChoice> for ProjDomain {
    fn from(d: DomainChoice) -> Self {
        match d {
            DomainChoice::Fine => ProjDomain::Fine,
            DomainChoice::TileCenters => ProjDomain::TileCenters,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    pub env: Option<PathBuf>,
    pub r: Option<i64>,
    pub n: i64,
    pub j: u32,
    pub m: u32,
    pub eta1: f64,
    pub domain: DomainChoice,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        Self { env: None, r: None, n: 16, j: 1, m: 2, eta1: 0.05, domain: DomainChoice::Fine }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseChoice {
    /// Every base grid constant at `base_value`.
    Constant,
    /// Base grids drawn from the model conditioned on the upper-tail event.
    Conditioned,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilationSection {
    pub bases: BaseChoice,
    pub base_value: f64,
    /// Time constant used by the verification; `base_value` for constant
    /// bases, estimated otherwise.
    pub mu_hat: Option<f64>,
    pub zeta: f64,
    /// Tolerance in the passage check `PT >= (mu + zeta - eps) n1`; a tenth
    /// of `mu_hat + zeta` when absent.
    pub eps: Option<f64>,
    pub max_attempts: u64,
    pub log_base_probability: Option<f64>,
    pub plan: DilationParams,
}

impl Default for DilationSection {
    fn default() -> Self {
        Self {
            bases: BaseChoice::Constant,
            base_value: 0.8,
            mu_hat: None,
            zeta: 0.0,
            eps: None,
            max_attempts: 1 << 20,
            log_base_probability: None,
            plan: DilationParams {
                n: 8,
                h: 2,
                j1: 1,
                eps6: 0.125,
                eps7: 0.1,
                spread: 4.0,
                eps1: 0.25,
                unstable: Vec::new(),
                corridor_constant: 16.0,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub count: usize,
    /// Random waypoints per path.
    pub waypoints: usize,
    pub slack: f64,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { count: 100, waypoints: 3, slack: 0.15 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    Naive,
    Tilted,
}

impl From<MethodChoice> for Method {
    fn from(m: MethodChoice) -> Self {
        match m {
            MethodChoice::Naive => Method::Naive,
            MethodChoice::Tilted => Method::Tilted,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailChoice {
    Upper,
    Lower,
}

impl From<TailChoice> for Tail {
    fn from(t: TailChoice) -> Self {
        match t {
            TailChoice::Upper => Tail::Upper,
            TailChoice::Lower => Tail::Lower,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    pub ns: Vec<i64>,
    pub zeta: f64,
    /// Estimated from the model when absent.
    pub mu_hat: Option<f64>,
    pub samples: usize,
    pub spread: f64,
    pub method: MethodChoice,
    pub tail: TailChoice,
    pub lambda: Option<f64>,
    /// Trend tolerance on `log p / n^2`.
    pub eps: f64,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            ns: vec![3, 4, 5],
            zeta: 0.05,
            mu_hat: None,
            samples: 20_000,
            spread: 3.0,
            method: MethodChoice::Naive,
            tail: TailChoice::Upper,
            lambda: None,
            eps: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContinuitySection {
    pub n: i64,
    pub zeta: f64,
    pub mu_hat: Option<f64>,
    pub samples: usize,
    pub max_attempts: u64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    pub eps7: f64,
}

impl Default for ContinuitySection {
    fn default() -> Self {
        Self {
            n: 4,
            zeta: 0.3,
            mu_hat: None,
            samples: 20,
            max_attempts: 1 << 20,
            eps1: 0.1,
            eps2: 0.1,
            eps3: 0.05,
            eps7: 0.05,
        }
    }
}

/// Overrides for the unspecified constants in the slack bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constants {
    /// Gradient-ratio slack `c0 (eta + delta + 1/k)` in the scan diagnostics.
    pub c0: f64,
    /// Certified ratio `1 - c3 (eps6 + eps7)` for regularised paths.
    pub c3: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Self { c0: 8.0, c3: 32.0 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    #[must_use]
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Fix the command name, rejecting a config written for another one.
    pub fn bind_command(&mut self, command: &str) -> Result<()> {
        match &self.command {
            Some(c) if c != command => bail!("config is for command {c:?}, not {command:?}"),
            _ => self.command = Some(command.to_string()),
        }
        Ok(())
    }

    /// Digest of every setting that can change results. Worker count,
    /// output location and format are excluded.
    #[must_use]
    pub fn hash(&self) -> String {
        let view = RunConfig { workers: None, out: None, format: None, seed: Some(self.seed()), ..self.clone() };
        let bytes = serde_json::to_vec(&view).expect("config serialises");
        digest_hex(&bytes)[..16].to_string()
    }
}
