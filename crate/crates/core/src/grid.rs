//! Sampled environments on `L-Box(r) = [-r, r]^2` and their file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Axis, Edge, Point, Rect};
use crate::model::{ModelSpec, WeightModel};
use crate::seed;

pub const FILE_VERSION: u32 = 1;

/// Immutable edge weights on a centred lattice box.
///
/// Horizontal edges `(x, y)-(x+1, y)` are stored row-major with `y` outer;
/// vertical edges `(x, y)-(x, y+1)` likewise.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentGrid {
    halfwidth: i64,
    model: WeightModel,
    seed: Option<u64>,
    horizontal: Vec<f64>,
    vertical: Vec<f64>,
    provenance: Option<serde_json::Value>,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvironmentFile {
    version: u32,
    halfwidth: i64,
    b: f64,
    model: ModelSpec,
    seed: Option<u64>,
    horizontal: Vec<f64>,
    vertical: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Sample i.i.d. weights on `L-Box(r)`: horizontal edges first, then
/// vertical, each in storage order, one draw per edge.
pub fn sample_environment(model: &WeightModel, r: i64, seed: u64) -> Result<EnvironmentGrid> {
    let mut rng = seed::rng(seed);
    let mut grid = EnvironmentGrid::zeros(model, r)?;
    for w in grid.horizontal.iter_mut().chain(grid.vertical.iter_mut()) {
        *w = model.sample(&mut rng);
    }
    grid.seed = Some(seed);
    Ok(grid)
}

/// The weights that `sample_environment(model, r, seed)` puts on the edges
/// of `L-Box(inner)`, returned as a grid of half-width `inner`, without
/// drawing the rest. Relies on every draw consuming one 64-bit word pair of
/// the stream, which holds for all conforming laws.
pub fn sample_window(model: &WeightModel, r: i64, seed: u64, inner: i64) -> Result<EnvironmentGrid> {
    if inner > r {
        return Err(Error::OutOfBounds(format!("window {inner} larger than box {r}")));
    }
    let mut grid = EnvironmentGrid::zeros(model, inner)?;
    let mut rng = seed::rng(seed);
    let h_inner = grid.horizontal.len();
    let mut cursor = usize::MAX;
    for i in 0..grid.edge_count() {
        let e = grid.edge_at(i);
        let j = storage_index(r, e).expect("window inside box");
        if j != cursor {
            rng.set_word_pos(2 * j as u128);
        }
        let w = model.sample(&mut rng);
        cursor = j + 1;
        if i < h_inner {
            grid.horizontal[i] = w;
        } else {
            grid.vertical[i - h_inner] = w;
        }
    }
    grid.seed = Some(seed);
    Ok(grid)
}

/// Storage position of `e` in a grid of half-width `r`.
fn storage_index(r: i64, e: Edge) -> Option<usize> {
    let (x, y) = (e.origin.x + r, e.origin.y + r);
    let side = 2 * r + 1;
    match e.axis {
        Axis::Horizontal if (0..2 * r).contains(&x) && (0..side).contains(&y) => Some((y * 2 * r + x) as usize),
        Axis::Vertical if (0..side).contains(&x) && (0..2 * r).contains(&y) => {
            Some((2 * r * side + y * side + x) as usize)
        }
        _ => None,
    }
}

/// Replace the listed edge weights, returning a new grid.
pub fn overwrite_edges(env: &EnvironmentGrid, weights: &[(Edge, f64)]) -> Result<EnvironmentGrid> {
    let mut out = env.clone();
    for &(e, w) in weights {
        out.set(e, w)?;
    }
    Ok(out)
}

/// Redraw the listed edges i.i.d. uniform on `[lo, hi]`, in list order.
pub fn overwrite_uniform(env: &EnvironmentGrid, edges: &[Edge], lo: f64, hi: f64, seed: u64) -> Result<EnvironmentGrid> {
    if !(0.0 <= lo && lo <= hi && hi <= env.b()) {
        return Err(Error::InvalidParameter(format!("range [{lo}, {hi}] not inside [0, {}]", env.b())));
    }
    let mut rng = seed::derived_rng(seed, "overwrite", 0);
    let weights: Vec<(Edge, f64)> = edges
        .iter()
        .map(|&e| (e, if lo == hi { lo } else { rand::Rng::gen_range(&mut rng, lo..=hi) }))
        .collect();
    overwrite_edges(env, &weights)
}

impl EnvironmentGrid {
    fn zeros(model: &WeightModel, r: i64) -> Result<Self> {
        if r < 1 {
            return Err(Error::InvalidParameter(format!("halfwidth must be >= 1, got {r}")));
        }
        let count = (2 * r * (2 * r + 1)) as usize;
        Ok(Self {
            halfwidth: r,
            model: model.clone(),
            seed: None,
            horizontal: vec![0.0; count],
            vertical: vec![0.0; count],
            provenance: None,
            config_hash: None,
        })
    }

    /// Build a grid whose weight on each edge is `f(edge)`, visiting edges
    /// in storage order.
    pub fn from_fn(model: &WeightModel, r: i64, mut f: impl FnMut(Edge) -> f64) -> Result<Self> {
        let mut grid = Self::zeros(model, r)?;
        let b = model.b();
        for i in 0..grid.edge_count() {
            let w = f(grid.edge_at(i));
            if !(w.is_finite() && (0.0..=b).contains(&w)) {
                return Err(Error::OutOfBounds(format!("weight {w} outside [0, {b}]")));
            }
            let h = grid.horizontal.len();
            if i < h {
                grid.horizontal[i] = w;
            } else {
                grid.vertical[i - h] = w;
            }
        }
        Ok(grid)
    }

    /// Constant weight `c` everywhere, tagged with the constant-test law.
    pub fn constant(r: i64, b: f64, c: f64) -> Result<Self> {
        let model = crate::model::make_weight_model("constant-test", b, &[c])?;
        Self::from_fn(&model, r, |_| c)
    }

    #[must_use]
    pub fn halfwidth(&self) -> i64 {
        self.halfwidth
    }

    #[must_use]
    pub fn bounds(&self) -> Rect {
        Rect::centered(self.halfwidth)
    }

    #[must_use]
    pub fn b(&self) -> f64 {
        self.model.b()
    }

    #[must_use]
    pub fn model(&self) -> &WeightModel {
        &self.model
    }

    #[must_use]
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    #[must_use]
    pub fn provenance(&self) -> Option<&serde_json::Value> {
        self.provenance.as_ref()
    }

    #[must_use]
    pub fn with_provenance(mut self, provenance: serde_json::Value) -> Self {
        self.provenance = Some(provenance);
        self
    }

    #[must_use]
    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    #[must_use]
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    #[must_use]
    pub fn edge_count(&self) -> usize {
        self.horizontal.len() + self.vertical.len()
    }

    fn side(&self) -> i64 {
        2 * self.halfwidth + 1
    }

    /// Position of `e` in storage order (horizontal block, then vertical).
    #[must_use]
    pub fn edge_index(&self, e: Edge) -> Option<usize> {
        storage_index(self.halfwidth, e)
    }

    /// Inverse of [`EnvironmentGrid::edge_index`].
    #[must_use]
    pub fn edge_at(&self, index: usize) -> Edge {
        let r = self.halfwidth;
        let side = self.side();
        if index < self.horizontal.len() {
            let i = index as i64;
            Edge::new(Point::new(i % (2 * r) - r, i / (2 * r) - r), Axis::Horizontal)
        } else {
            let i = (index - self.horizontal.len()) as i64;
            Edge::new(Point::new(i % side - r, i / side - r), Axis::Vertical)
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.edge_count()).map(|i| self.edge_at(i))
    }

    /// All weights in storage order.
    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.horizontal.iter().chain(self.vertical.iter()).copied()
    }

    #[must_use]
    pub fn weight(&self, e: Edge) -> Option<f64> {
        self.edge_index(e).map(|i| self.weight_at(i))
    }

    #[must_use]
    pub fn weight_at(&self, index: usize) -> f64 {
        if index < self.horizontal.len() {
            self.horizontal[index]
        } else {
            self.vertical[index - self.horizontal.len()]
        }
    }

    #[must_use]
    pub fn weight_between(&self, a: Point, b: Point) -> Option<f64> {
        Edge::between(a, b).and_then(|e| self.weight(e))
    }

    pub(crate) fn raw(&self) -> (&[f64], &[f64]) {
        (&self.horizontal, &self.vertical)
    }

    fn set(&mut self, e: Edge, w: f64) -> Result<()> {
        if !(w.is_finite() && (0.0..=self.b()).contains(&w)) {
            return Err(Error::OutOfBounds(format!("weight {w} outside [0, {}]", self.b())));
        }
        let i = self
            .edge_index(e)
            .ok_or_else(|| Error::OutOfBounds(format!("edge {e:?} not in L-Box({})", self.halfwidth)))?;
        if i < self.horizontal.len() {
            self.horizontal[i] = w;
        } else {
            let j = i - self.horizontal.len();
            self.vertical[j] = w;
        }
        Ok(())
    }

    /// Copy of the weights restricted to a smaller centred box.
    pub fn restrict(&self, r: i64) -> Result<Self> {
        if r > self.halfwidth {
            return Err(Error::OutOfBounds(format!("cannot restrict to a larger box {r}")));
        }
        let mut out = Self::from_fn(&self.model, r, |e| self.weight(e).expect("inner edge"))?;
        out.seed = self.seed;
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let file = EnvironmentFile {
            version: FILE_VERSION,
            halfwidth: self.halfwidth,
            b: self.b(),
            model: self.model.spec(),
            seed: self.seed,
            horizontal: self.horizontal.clone(),
            vertical: self.vertical.clone(),
            provenance: self.provenance.clone(),
            config_hash: self.config_hash.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(FILE_VERSION)) {
            return Err(Error::Format(format!("unsupported environment file version {version:?}")));
        }
        let file: EnvironmentFile = serde_json::from_value(value)?;
        let model = WeightModel::from_spec(&file.model, file.b)?;
        let r = file.halfwidth;
        let mut grid = Self::zeros(&model, r)?;
        if file.horizontal.len() != grid.horizontal.len() || file.vertical.len() != grid.vertical.len() {
            return Err(Error::Format("edge arrays do not match halfwidth".into()));
        }
        for (i, w) in file.horizontal.iter().chain(file.vertical.iter()).enumerate() {
            let e = grid.edge_at(i);
            grid.set(e, *w)?;
        }
        grid.seed = file.seed;
        grid.provenance = file.provenance;
        grid.config_hash = file.config_hash;
        Ok(grid)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Digest of the weights and support bound only.
    #[must_use]
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(8 * (self.edge_count() + 2));
        bytes.extend_from_slice(&self.halfwidth.to_le_bytes());
        bytes.extend_from_slice(&self.b().to_bits().to_le_bytes());
        for w in self.weights() {
            bytes.extend_from_slice(&w.to_bits().to_le_bytes());
        }
        seed::digest_hex(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::make_weight_model;

    #[test]
    fn edge_count_and_indexing() {
        let g = EnvironmentGrid::constant(5, 1.0, 1.0).unwrap();
        assert_eq!(g.edge_count(), 220);
        assert!(g.weights().all(|w| w == 1.0));
        for i in 0..g.edge_count() {
            assert_eq!(g.edge_index(g.edge_at(i)), Some(i));
        }
        assert!(g.weight(Edge::new(Point::new(5, 0), Axis::Horizontal)).is_none());
        assert!(g.weight(Edge::new(Point::new(5, 4), Axis::Vertical)).is_some());
    }

    #[test]
    fn sampling_is_reproducible() {
        let m = make_weight_model("uniform", 1.0, &[]).unwrap();
        let a = sample_environment(&m, 4, 99).unwrap();
        let b = sample_environment(&m, 4, 99).unwrap();
        let c = sample_environment(&m, 4, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn window_matches_full_sample() {
        for (kind, params) in [("uniform", vec![]), ("triangular", vec![0.3]), ("polynomial", vec![1.0, 2.0])] {
            let m = make_weight_model(kind, 1.0, &params).unwrap();
            let full = sample_environment(&m, 9, 17).unwrap();
            let window = sample_window(&m, 9, 17, 4).unwrap();
            assert_eq!(window.weights().collect::<Vec<_>>(), full.restrict(4).unwrap().weights().collect::<Vec<_>>());
        }
    }

    #[test]
    fn file_roundtrip_and_version_check() {
        let m = make_weight_model("triangular", 2.0, &[0.5]).unwrap();
        let g = sample_environment(&m, 3, 5).unwrap();
        let text = g.to_json_string().unwrap();
        let back = EnvironmentGrid::from_json_str(&text).unwrap();
        assert_eq!(g, back);
        let bumped = text.replacen("\"version\":1", "\"version\":2", 1);
        assert!(EnvironmentGrid::from_json_str(&bumped).is_err());
    }

    #[test]
    fn overwrite_checks_bounds() {
        let g = EnvironmentGrid::constant(2, 1.0, 0.5).unwrap();
        let e = Edge::new(Point::new(0, 0), Axis::Vertical);
        let h = overwrite_edges(&g, &[(e, 0.25)]).unwrap();
        assert_eq!(h.weight(e), Some(0.25));
        assert_eq!(g.weight(e), Some(0.5));
        assert!(overwrite_edges(&g, &[(e, 1.5)]).is_err());
    }
}
