//! Projected passage times on nested dyadic grids, tile norms and
//! signature clustering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geodesic::distances_exact;
use crate::geometry::RealPoint;
use crate::grid::EnvironmentGrid;
use crate::seed;
use crate::stability::{AngleGrid, TileGrid};

/// `Grid_n(j) = Box(n) ∩ (n / 2^j) Z^2` and its refinement at `j + m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NestedGrids {
    pub n: i64,
    pub j: u32,
    pub m: u32,
}

impl NestedGrids {
    pub fn new(n: i64, j: u32, m: u32) -> Result<Self> {
        if n < 1 || j + m > 20 {
            return Err(invalid(format!("bad nested grids n={n}, j={j}, m={m}")));
        }
        Ok(Self { n, j, m })
    }

    #[must_use]
    pub fn spacing(&self, level: u32) -> f64 {
        self.n as f64 / 2f64.powi(level as i32)
    }

    fn level_points(&self, level: u32, keep: impl Fn(i64, i64) -> bool) -> Vec<RealPoint> {
        let k = 1i64 << level;
        let s = self.spacing(level);
        let mut out = Vec::new();
        for a in -k..=k {
            for b in -k..=k {
                if keep(a, b) {
                    out.push(RealPoint::new(a as f64 * s, b as f64 * s));
                }
            }
        }
        out
    }

    /// `Grid_n(level)`, `(2 * 2^level + 1)^2` points, lexicographic order.
    #[must_use]
    pub fn points(&self, level: u32) -> Vec<RealPoint> {
        self.level_points(level, |_, _| true)
    }

    #[must_use]
    pub fn coarse(&self) -> Vec<RealPoint> {
        self.points(self.j)
    }

    #[must_use]
    pub fn fine(&self) -> Vec<RealPoint> {
        self.points(self.j + self.m)
    }

    /// `Grid_n(l; j)`: fine points lying on a coarse grid line.
    #[must_use]
    pub fn line_points(&self) -> Vec<RealPoint> {
        let r = 1i64 << self.m;
        self.level_points(self.j + self.m, |a, b| a % r == 0 || b % r == 0)
    }

    fn snap(v: f64, s: f64) -> f64 {
        // nearest multiple of s, ties downward
        ((v / s) - 0.5).ceil() * s
    }

    fn inside(&self, p: RealPoint) -> bool {
        let n = self.n as f64;
        p.x.abs() <= n + 1e-9 && p.y.abs() <= n + 1e-9
    }

    /// Nearest fine-grid point, if it lies in `Box(n)`.
    #[must_use]
    pub fn nearest_fine(&self, p: RealPoint) -> Option<RealPoint> {
        let s = self.spacing(self.j + self.m);
        let q = RealPoint::new(Self::snap(p.x, s), Self::snap(p.y, s));
        self.inside(q).then_some(q)
    }

    /// Nearest point of `Grid_n(l; j)`, clamped to `Box(n)`. Ties go to the
    /// lexicographically smaller candidate.
    #[must_use]
    pub fn nearest_line_point(&self, p: RealPoint) -> RealPoint {
        let n = self.n as f64;
        let sc = self.spacing(self.j);
        let sf = self.spacing(self.j + self.m);
        let clamp = |v: f64| v.clamp(-n, n);
        let p = RealPoint::new(clamp(p.x), clamp(p.y));
        let on_vertical = RealPoint::new(clamp(Self::snap(p.x, sc)), clamp(Self::snap(p.y, sf)));
        let on_horizontal = RealPoint::new(clamp(Self::snap(p.x, sf)), clamp(Self::snap(p.y, sc)));
        let (dv, dh) = (p.dist(on_vertical), p.dist(on_horizontal));
        if dv < dh || (dv == dh && (on_vertical.x, on_vertical.y) <= (on_horizontal.x, on_horizontal.y)) {
            on_vertical
        } else {
            on_horizontal
        }
    }
}

/// Quantisation level: the largest `q` with `eta1 * q * d <= pt`.
fn quantise(pt: f64, d: f64, eta1: f64) -> u32 {
    let value = |q: u32| eta1 * f64::from(q) * d;
    let mut q = (pt / (eta1 * d)).floor().max(0.0) as u32;
    while q > 0 && value(q) > pt {
        q -= 1;
    }
    while value(q + 1) <= pt {
        q += 1;
    }
    q
}

/// `Proj(z, w) = eta1 * floor(PT(z, w) / (eta1 |z - w|)) * |z - w|`.
#[must_use]
pub fn project_value(pt: f64, d: f64, eta1: f64) -> f64 {
    if d == 0.0 {
        return 0.0;
    }
    eta1 * f64::from(quantise(pt, d, eta1)) * d
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub n: i64,
    pub j: u32,
    pub m: u32,
    pub eta1: f64,
    pub b: f64,
}

/// Projected passage times from each source point to every fine-grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjTable {
    pub meta: TableMeta,
    pub sources: Vec<RealPoint>,
    pub targets: Vec<RealPoint>,
    /// Quantisation levels, source-major; `u32::MAX` marks `z == w`.
    levels: Vec<u32>,
    /// Underlying passage times, kept for verification.
    times: Vec<f64>,
}

/// Which source points a table stores rows for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjDomain {
    /// Every fine-grid point: the complete table.
    Fine,
    /// Only the centres of the scale-`j` tiles; enough for tile gradients.
    TileCenters,
}

pub fn build_proj_table(env: &EnvironmentGrid, grids: &NestedGrids, eta1: f64, domain: ProjDomain) -> Result<ProjTable> {
    if !(eta1 > 0.0) {
        return Err(invalid("eta1 must be positive"));
    }
    if env.halfwidth() < grids.n + 1 {
        return Err(Error::OutOfBounds(format!("grid half-width {} < n + 1", env.halfwidth())));
    }
    let targets = grids.fine();
    let sources = match domain {
        ProjDomain::Fine => targets.clone(),
        ProjDomain::TileCenters => {
            let tiles = TileGrid::new(grids.n, grids.j)?;
            tiles.tiles().map(|v| tiles.center(v)).collect()
        }
    };
    let rounded: Vec<_> = targets.iter().map(|p| p.round()).collect();
    let rows = sources
        .par_iter()
        .map(|z| {
            let d = distances_exact(env, z.round(), &rounded, None)?;
            Ok(targets
                .iter()
                .zip(d)
                .map(|(w, t)| {
                    let dist = z.dist(*w);
                    if dist == 0.0 {
                        (u32::MAX, 0.0)
                    } else {
                        (quantise(t.to_f64(), dist, eta1), t.to_f64())
                    }
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let (levels, times) = rows.into_iter().flatten().unzip();
    Ok(ProjTable {
        meta: TableMeta { n: grids.n, j: grids.j, m: grids.m, eta1, b: env.b() },
        sources,
        targets,
        levels,
        times,
    })
}

/// One stored pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjEntry {
    pub z: RealPoint,
    pub w: RealPoint,
    pub passage_time: f64,
    pub value: f64,
    pub level: u32,
}

impl ProjTable {
    #[must_use]
    pub fn grids(&self) -> NestedGrids {
        NestedGrids { n: self.meta.n, j: self.meta.j, m: self.meta.m }
    }

    pub fn entries(&self) -> impl Iterator<Item = ProjEntry> + '_ {
        let t = self.targets.len();
        self.levels.iter().enumerate().filter(|(_, q)| **q != u32::MAX).map(move |(i, &q)| {
            let (z, w) = (self.sources[i / t], self.targets[i % t]);
            ProjEntry {
                z,
                w,
                passage_time: self.times[i],
                value: self.meta.eta1 * f64::from(q) * z.dist(w),
                level: q,
            }
        })
    }

    /// Lookup by exact grid coordinates.
    pub fn value(&self, z: RealPoint, w: RealPoint) -> Result<f64> {
        let find = |set: &[RealPoint], p: RealPoint| set.iter().position(|q| q.x == p.x && q.y == p.y);
        let (Some(i), Some(k)) = (find(&self.sources, z), find(&self.targets, w)) else {
            return Err(Error::OutOfBounds(format!("pair {z:?} -> {w:?} not in table domain")));
        };
        let q = self.levels[i * self.targets.len() + k];
        Ok(if q == u32::MAX { 0.0 } else { self.meta.eta1 * f64::from(q) * z.dist(w) })
    }

    /// Distinct normalised values `Proj / |z - w|` in the table.
    #[must_use]
    pub fn distinct_levels(&self) -> usize {
        let mut seen: Vec<u32> = self.levels.iter().copied().filter(|q| *q != u32::MAX).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Digest of the metadata, domain and quantised levels.
    #[must_use]
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&self.meta.n.to_le_bytes());
        bytes.extend_from_slice(&self.meta.j.to_le_bytes());
        bytes.extend_from_slice(&self.meta.m.to_le_bytes());
        bytes.extend_from_slice(&self.meta.eta1.to_bits().to_le_bytes());
        bytes.extend_from_slice(&self.meta.b.to_bits().to_le_bytes());
        for p in &self.sources {
            bytes.extend_from_slice(&p.x.to_bits().to_le_bytes());
            bytes.extend_from_slice(&p.y.to_bits().to_le_bytes());
        }
        for q in &self.levels {
            bytes.extend_from_slice(&q.to_le_bytes());
        }
        seed::digest_hex(&bytes)
    }

    /// CSV: a metadata header row and its values, then one row per pair.
    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(out, "n,j,m,eta1,b");
        let _ = writeln!(out, "{},{},{},{},{}", m.n, m.j, m.m, m.eta1, m.b);
        let _ = writeln!(out, "z_x,z_y,w_x,w_y,value");
        for e in self.entries() {
            let _ = writeln!(out, "{},{},{},{},{}", e.z.x, e.z.y, e.w.x, e.w.y, e.value);
        }
        out
    }
}

/// Projected gradient of a tile: `Proj(z, w) / d` with `z` the tile centre,
/// `d = n / 2^(j + floor(m / 8))` and `w` the fine point nearest `z + d theta`.
pub fn proj_tile_gradient(table: &ProjTable, v: [u32; 2], theta: f64) -> Result<f64> {
    let grids = table.grids();
    let tiles = TileGrid::new(grids.n, grids.j)?;
    let z = tiles.center(v);
    let d = grids.spacing(grids.j + grids.m / 8);
    let w = grids
        .nearest_fine(z.add(RealPoint::polar(d, theta)))
        .ok_or_else(|| Error::OutOfBounds(format!("gradient target from tile {v:?} leaves Box({})", grids.n)))?;
    Ok(table.value(z, w)? / d)
}

/// Direction-indexed projected gradients of one tile, read as a norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileNorm {
    pub v: [u32; 2],
    pub directions: AngleGrid,
    pub gradients: Vec<f64>,
}

impl TileNorm {
    pub fn from_table(table: &ProjTable, v: [u32; 2], directions: AngleGrid) -> Result<Self> {
        let gradients = directions.angles().iter().map(|&t| proj_tile_gradient(table, v, t)).collect::<Result<_>>()?;
        Ok(Self { v, directions, gradients })
    }

    /// `r * grad(nearest tabulated direction)`.
    #[must_use]
    pub fn eval(&self, theta: f64, r: f64) -> f64 {
        r * self.gradients[self.directions.nearest(theta)]
    }

    #[must_use]
    pub fn of_vector(&self, w: RealPoint) -> f64 {
        self.eval(w.y.atan2(w.x), w.norm())
    }
}

/// `||sum w_i|| <= (1 + slack) * sum ||w_i||` under the tile norm. Returns
/// the verdict and the ratio `||sum w_i|| / sum ||w_i||`.
#[must_use]
pub fn convexity_check(norm: &TileNorm, vectors: &[RealPoint], slack: f64) -> (bool, f64) {
    let total = vectors.iter().fold(RealPoint::new(0.0, 0.0), |a, w| a.add(*w));
    let lhs = norm.of_vector(total);
    let rhs: f64 = vectors.iter().map(|w| norm.of_vector(*w)).sum();
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
    (ratio <= 1.0 + slack, ratio)
}

/// Clustering key: quantised table digest plus the unstable tile set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub table: String,
    pub unstable: Vec<[u32; 2]>,
}

impl Signature {
    #[must_use]
    pub fn new(table: &ProjTable, unstable: &[[u32; 2]]) -> Self {
        let mut unstable = unstable.to_vec();
        unstable.sort_unstable();
        Self { table: table.digest(), unstable }
    }

    #[must_use]
    pub fn digest(&self) -> String {
        seed::digest_hex(serde_json::to_string(self).expect("signature serialises").as_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub key: Signature,
    pub members: Vec<usize>,
    pub cluster_count: usize,
}

/// Group by exact key and return the most populated group; ties go to the
/// smallest key.
pub fn signature_cluster(signatures: &[Signature]) -> Result<Cluster> {
    let mut groups: BTreeMap<&Signature, Vec<usize>> = BTreeMap::new();
    for (i, s) in signatures.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let cluster_count = groups.len();
    let (key, members) = groups
        .into_iter()
        .fold(None::<(&Signature, Vec<usize>)>, |best, (k, m)| match best {
            Some((bk, bm)) if bm.len() >= m.len() => Some((bk, bm)),
            _ => Some((k, m)),
        })
        .ok_or_else(|| invalid("no signatures to cluster"))?;
    Ok(Cluster { key: key.clone(), members, cluster_count })
}
