//! Dilated environments: `h x h` copies of a base environment per tile,
//! separated by high-weight corridors, plus boosting of unstable tiles.
//!
//! Geometry per axis, inside the layout region of side `2 * outer`:
//!
//! ```text
//! | margin | A | A | ... | A | margin | margin | A | ... (next tile)
//!          \_____ star _____/
//! A = annulus | block | annulus
//! ```
//!
//! Every length is an integer fixed at plan time.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geodesic::{exit_time, geodesic, LatticePath};
use crate::geometry::{Axis, Edge, Point, RealPoint, Rect};
use crate::grid::EnvironmentGrid;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DilationParams {
    pub n: i64,
    /// Dilation factor, the ratio of the large scale to `n`.
    pub h: i64,
    pub j1: u32,
    /// Relative corridor width.
    pub eps6: f64,
    /// Barrier window: corridor weights live in `[b - eps7, b]`.
    pub eps7: f64,
    /// Box enlargement factor for the base domain.
    pub spread: f64,
    /// Allowed fraction of boosted tiles.
    pub eps1: f64,
    /// Tiles (1-based) whose blocks are boosted instead of copied.
    #[serde(default)]
    pub unstable: Vec<[u32; 2]>,
    /// Constant in the exterior corridor size bound `c * eps6 * outer^2`.
    #[serde(default = "default_corridor_constant")]
    pub corridor_constant: f64,
}

fn default_corridor_constant() -> f64 {
    16.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilationPlan {
    pub params: DilationParams,
    pub n1: i64,
    /// Tiles per axis.
    pub tiles: i64,
    pub block_half: i64,
    pub annulus: i64,
    pub margin: i64,
    pub cell_side: i64,
    pub star_side: i64,
    pub tile_side: i64,
    /// Half sides, from the layout region inward: outer, star extent,
    /// copied extent, base extent with annuli, base extent.
    pub lengths: [i64; 5],
    /// Translation of the layout relative to the origin (both axes).
    pub shift: i64,
    pub grid_halfwidth: i64,
}

impl DilationPlan {
    #[must_use]
    pub fn outer(&self) -> i64 {
        self.lengths[0]
    }

    #[must_use]
    pub fn base_halfwidth(&self) -> i64 {
        self.lengths[4]
    }

    #[must_use]
    pub fn h(&self) -> i64 {
        self.params.h
    }

    /// Layout region: `Box(outer)` translated by `shift`.
    #[must_use]
    pub fn region(&self) -> Rect {
        let lo = -self.outer() + self.shift;
        let hi = self.outer() + self.shift;
        Rect::new(lo, hi, lo, hi)
    }

    #[must_use]
    pub fn base_region(&self) -> Rect {
        Rect::centered(self.base_halfwidth())
    }

    #[must_use]
    pub fn target(&self) -> Point {
        Point::new(self.n1, 0)
    }

    #[must_use]
    pub fn is_boosted(&self, v: [u32; 2]) -> bool {
        self.params.unstable.contains(&v)
    }

    /// Largeness threshold for excursions in stars.
    #[must_use]
    pub fn large_threshold(&self) -> f64 {
        self.params.eps6.powi(2) * self.outer() as f64 / self.tiles as f64
    }

    /// Largeness threshold for excursions in blocks.
    #[must_use]
    pub fn block_large_threshold(&self) -> f64 {
        self.params.eps6.powi(2) * self.base_halfwidth() as f64 / self.tiles as f64
    }
}

pub fn make_plan(params: DilationParams) -> Result<DilationPlan> {
    let p = &params;
    if p.h < 2 {
        return Err(invalid(format!("dilation factor must be >= 2, got {}", p.h)));
    }
    if p.n < 1 || p.j1 > 12 {
        return Err(invalid(format!("bad scale n={}, j1={}", p.n, p.j1)));
    }
    if !(p.eps6 > 0.0 && p.eps6 < 1.0) || !(p.eps7 > 0.0 && p.eps7 < 1.0) {
        return Err(invalid(format!("eps6 and eps7 must lie in (0,1), got {} and {}", p.eps6, p.eps7)));
    }
    if !(p.spread >= 1.0) {
        return Err(invalid(format!("spread must be >= 1, got {}", p.spread)));
    }
    let tiles = 1i64 << p.j1;
    for v in &p.unstable {
        if v[0] < 1 || v[1] < 1 || i64::from(v[0]) > tiles || i64::from(v[1]) > tiles {
            return Err(invalid(format!("unstable tile {v:?} outside 1..={tiles}")));
        }
    }
    if p.unstable.len() as f64 > p.eps1 * (tiles * tiles) as f64 {
        return Err(invalid(format!("{} unstable tiles exceed eps1 * {}", p.unstable.len(), tiles * tiles)));
    }
    let block_exact = p.spread * p.n as f64 / tiles as f64;
    let block_half = block_exact.round() as i64;
    let annulus = (p.eps6 * block_half as f64).round() as i64;
    if block_half < 1 || (block_exact - block_half as f64).abs() > 1e-9 || annulus < 1 {
        return Err(Error::InvalidParameter(format!(
            "dimensions cannot be made integral: block half {block_exact}, annulus {}",
            p.eps6 * block_exact
        )));
    }
    let margin = p.h * annulus;
    let cell_side = 2 * (block_half + annulus);
    let star_side = p.h * cell_side;
    let tile_side = star_side + 2 * margin;
    let n4 = tiles * block_half;
    let n3 = tiles * (block_half + annulus);
    let n2 = p.h * n4;
    let n1 = p.h * n3;
    let n0 = tiles * tile_side / 2;
    let shift = if tiles > 1 { tile_side / 2 } else { 0 };
    Ok(DilationPlan {
        n1: p.h * p.n,
        tiles,
        block_half,
        annulus,
        margin,
        cell_side,
        star_side,
        tile_side,
        lengths: [n0, n1, n2, n3, n4],
        shift,
        grid_halfwidth: n0 + shift + 1,
        params,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum AxisPos {
    Outside,
    Corridor,
    /// Tile index (1-based) and offset inside the star, `0..=star_side`.
    Star(u32, i64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    Block { tile: [u32; 2], block: [u32; 2] },
    Interior { tile: [u32; 2] },
    Exterior,
    /// Padding outside the layout region.
    Frame,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutCounts {
    pub block: usize,
    pub interior: usize,
    pub exterior: usize,
    pub boosted: usize,
    pub frame: usize,
    pub total: usize,
}

/// Classification of the dilated grid into blocks and corridors.
#[derive(Clone, Debug)]
pub struct CorridorLayout {
    plan: DilationPlan,
    counts: LayoutCounts,
}

impl CorridorLayout {
    pub fn new(plan: &DilationPlan) -> Self {
        let mut layout = Self { plan: plan.clone(), counts: LayoutCounts::default() };
        let r = plan.grid_halfwidth;
        let mut counts = LayoutCounts::default();
        for e in grid_edges(r) {
            counts.total += 1;
            match layout.edge_class(e) {
                EdgeClass::Block { tile, .. } => {
                    counts.block += 1;
                    if plan.is_boosted(tile) {
                        counts.boosted += 1;
                    }
                }
                EdgeClass::Interior { .. } => counts.interior += 1,
                EdgeClass::Exterior => counts.exterior += 1,
                EdgeClass::Frame => counts.frame += 1,
            }
        }
        layout.counts = counts;
        layout
    }

    #[must_use]
    pub fn plan(&self) -> &DilationPlan {
        &self.plan
    }

    #[must_use]
    pub fn counts(&self) -> LayoutCounts {
        self.counts
    }

    /// `corridor_constant * eps6 * outer^2`.
    #[must_use]
    pub fn exterior_bound(&self) -> f64 {
        let p = &self.plan;
        p.params.corridor_constant * p.params.eps6 * (p.outer() as f64).powi(2)
    }

    fn axis(&self, x: i64) -> AxisPos {
        let p = &self.plan;
        let u = x - (p.shift - p.outer());
        if u < 0 || u > 2 * p.outer() {
            return AxisPos::Outside;
        }
        let i = (u / p.tile_side).min(p.tiles - 1);
        let o = u - i * p.tile_side;
        if o < p.margin || o > p.tile_side - p.margin {
            AxisPos::Corridor
        } else {
            AxisPos::Star(i as u32 + 1, o - p.margin)
        }
    }

    /// Block index (1-based) and block-local offset, `0..=2 * block_half`.
    fn block_axis(&self, offset: i64) -> Option<(u32, i64)> {
        let p = &self.plan;
        let w = (offset / p.cell_side).min(p.h() - 1);
        let a = offset - w * p.cell_side;
        (a >= p.annulus && a <= p.cell_side - p.annulus).then(|| (w as u32 + 1, a - p.annulus))
    }

    #[must_use]
    pub fn in_region(&self, p: Point) -> bool {
        self.axis(p.x) != AxisPos::Outside && self.axis(p.y) != AxisPos::Outside
    }

    /// The closed star containing `p`, if any.
    #[must_use]
    pub fn star_of(&self, p: Point) -> Option<[u32; 2]> {
        match (self.axis(p.x), self.axis(p.y)) {
            (AxisPos::Star(a, _), AxisPos::Star(b, _)) => Some([a, b]),
            _ => None,
        }
    }

    /// Tile, block and block-local point for `p` inside a closed block.
    #[must_use]
    pub fn block_of(&self, p: Point) -> Option<([u32; 2], [u32; 2], Point)> {
        let (AxisPos::Star(vx, ox), AxisPos::Star(vy, oy)) = (self.axis(p.x), self.axis(p.y)) else {
            return None;
        };
        let (wx, ax) = self.block_axis(ox)?;
        let (wy, ay) = self.block_axis(oy)?;
        Some(([vx, vy], [wx, wy], Point::new(ax, ay)))
    }

    #[must_use]
    pub fn edge_class(&self, e: Edge) -> EdgeClass {
        let (a, b) = (e.origin, e.end());
        if let (Some(x), Some(y)) = (self.block_of(a), self.block_of(b)) {
            if x.0 == y.0 && x.1 == y.1 {
                return EdgeClass::Block { tile: x.0, block: x.1 };
            }
        }
        if let (Some(x), Some(y)) = (self.star_of(a), self.star_of(b)) {
            if x == y {
                return EdgeClass::Interior { tile: x };
            }
        }
        if self.in_region(a) && self.in_region(b) {
            EdgeClass::Exterior
        } else {
            EdgeClass::Frame
        }
    }

    fn tile_lo(&self, v: u32) -> i64 {
        let p = &self.plan;
        p.shift - p.outer() + i64::from(v - 1) * p.tile_side
    }

    #[must_use]
    pub fn tile_rect(&self, v: [u32; 2]) -> Rect {
        let s = self.plan.tile_side;
        let (x, y) = (self.tile_lo(v[0]), self.tile_lo(v[1]));
        Rect::new(x, x + s, y, y + s)
    }

    #[must_use]
    pub fn star_rect(&self, v: [u32; 2]) -> Rect {
        let p = &self.plan;
        let (x, y) = (self.tile_lo(v[0]) + p.margin, self.tile_lo(v[1]) + p.margin);
        Rect::new(x, x + p.star_side, y, y + p.star_side)
    }

    #[must_use]
    pub fn block_rect(&self, v: [u32; 2], w: [u32; 2]) -> Rect {
        let p = &self.plan;
        let side = 2 * p.block_half;
        let lo = |vi: u32, wi: u32| self.tile_lo(vi) + p.margin + i64::from(wi - 1) * p.cell_side + p.annulus;
        let (x, y) = (lo(v[0], w[0]), lo(v[1], w[1]));
        Rect::new(x, x + side, y, y + side)
    }

    /// Base tile `v` of `Box(base_halfwidth)` under the dyadic tiling.
    #[must_use]
    pub fn base_tile_rect(&self, v: [u32; 2]) -> Rect {
        let p = &self.plan;
        let side = 2 * p.block_half;
        let lo = |vi: u32| -p.base_halfwidth() + i64::from(vi - 1) * side;
        Rect::new(lo(v[0]), lo(v[0]) + side, lo(v[1]), lo(v[1]) + side)
    }

    /// Base point identified with a block-local point of tile `v`.
    #[must_use]
    pub fn to_base(&self, v: [u32; 2], local: Point) -> Point {
        let r = self.base_tile_rect(v);
        Point::new(r.x_min + local.x, r.y_min + local.y)
    }

    /// Index into the list of base environments for block `w`.
    #[must_use]
    pub fn base_index(&self, w: [u32; 2]) -> usize {
        ((w[1] - 1) as i64 * self.plan.h() + (w[0] - 1) as i64) as usize
    }

    /// Pairs of (dilated edge, base edge) for one block.
    #[must_use]
    pub fn block_edges(&self, v: [u32; 2], w: [u32; 2]) -> Vec<(Edge, Edge)> {
        let rect = self.block_rect(v, w);
        let base = self.base_tile_rect(v);
        let dx = base.x_min - rect.x_min;
        let dy = base.y_min - rect.y_min;
        let mut out = Vec::new();
        for p in rect.points() {
            for axis in [Axis::Horizontal, Axis::Vertical] {
                let e = Edge { origin: p, axis };
                if e.inside(&rect) {
                    out.push((e, Edge { origin: Point::new(p.x + dx, p.y + dy), axis }));
                }
            }
        }
        out
    }

    /// Total block length strictly before `x` on one axis; corridors
    /// contribute nothing.
    fn squish_axis(&self, x: i64) -> i64 {
        let p = &self.plan;
        let u = (x - (p.shift - p.outer())).clamp(0, 2 * p.outer());
        let per_tile = p.h() * 2 * p.block_half;
        let i = (u / p.tile_side).min(p.tiles - 1);
        let o = u - i * p.tile_side;
        let inner = if o < p.margin {
            0
        } else if o > p.tile_side - p.margin {
            per_tile
        } else {
            let so = o - p.margin;
            let w = (so / p.cell_side).min(p.h() - 1);
            let a = so - w * p.cell_side;
            w * 2 * p.block_half + (a - p.annulus).clamp(0, 2 * p.block_half)
        };
        i * per_tile + inner
    }

    /// Squish corridors away and shrink by `h`: the base-scale image of `p`.
    #[must_use]
    pub fn squish(&self, p: Point) -> RealPoint {
        let lo = -self.plan.base_halfwidth() as f64;
        let h = self.plan.h() as f64;
        RealPoint::new(lo + self.squish_axis(p.x) as f64 / h, lo + self.squish_axis(p.y) as f64 / h)
    }

    /// Edges of a class, in storage order.
    #[must_use]
    pub fn edges_where(&self, keep: impl Fn(EdgeClass) -> bool) -> Vec<Edge> {
        grid_edges(self.plan.grid_halfwidth).filter(|&e| keep(self.edge_class(e))).collect()
    }
}

fn grid_edges(r: i64) -> impl Iterator<Item = Edge> {
    let h = (-r..=r).flat_map(move |y| (-r..r).map(move |x| Edge { origin: Point::new(x, y), axis: Axis::Horizontal }));
    let v = (-r..r).flat_map(move |y| (-r..=r).map(move |x| Edge { origin: Point::new(x, y), axis: Axis::Vertical }));
    h.chain(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureAccounting {
    pub counts: LayoutCounts,
    /// Edges forced into the barrier window: corridors plus boosted blocks.
    pub forced_edges: usize,
    pub log_barrier_mass: Option<f64>,
    pub log_base_probability: Option<f64>,
    pub log_probability: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FavEnvironment {
    pub grid: EnvironmentGrid,
    pub plan: DilationPlan,
    pub accounting: MeasureAccounting,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Assemble the dilated environment. `signatures` identify the base
/// event each base grid was drawn from and must all agree.
pub fn build_fav(
    layout: &CorridorLayout,
    bases: &[EnvironmentGrid],
    signatures: &[String],
    barrier_seed: u64,
    log_base_probability: Option<f64>,
) -> Result<FavEnvironment> {
    let plan = layout.plan();
    let count = (plan.h() * plan.h()) as usize;
    if bases.len() != count || signatures.len() != count {
        return Err(invalid(format!("need {count} base grids and signatures, got {} and {}", bases.len(), signatures.len())));
    }
    if signatures.iter().any(|s| s != &signatures[0]) {
        return Err(Error::Precondition("base grids carry different signatures".into()));
    }
    let b = bases[0].b();
    for g in bases {
        if g.halfwidth() < plan.base_halfwidth() {
            return Err(Error::Precondition(format!(
                "base grid halfwidth {} smaller than {}",
                g.halfwidth(),
                plan.base_halfwidth()
            )));
        }
        if g.b() != b {
            return Err(Error::Precondition("base grids disagree on the support bound".into()));
        }
    }
    let eps7 = plan.params.eps7;
    let mut rng = seed::derived_rng(barrier_seed, "barrier", 0);
    let grid = EnvironmentGrid::from_fn(bases[0].model(), plan.grid_halfwidth, |e| {
        if let EdgeClass::Block { tile, block } = layout.edge_class(e) {
            if !plan.is_boosted(tile) {
                let (_, _, local) = layout.block_of(e.origin).expect("block edge origin lies in its block");
                let base_origin = layout.to_base(tile, local);
                let base_edge = Edge { origin: base_origin, axis: e.axis };
                return bases[layout.base_index(block)].weight(base_edge).expect("base tile inside base grid");
            }
        }
        rng.gen_range(b - eps7..=b)
    })?;
    let counts = layout.counts();
    let forced = counts.exterior + counts.interior + counts.boosted;
    let log_barrier = bases[0].model().probability(b - eps7, b).ln();
    let log_probability = log_base_probability.map(|lp| count as f64 * lp + forced as f64 * log_barrier);
    let accounting = MeasureAccounting {
        counts,
        forced_edges: forced,
        log_barrier_mass: finite(log_barrier),
        log_base_probability,
        log_probability: log_probability.and_then(finite),
    };
    let provenance = serde_json::json!({
        "kind": "dilated",
        "plan": plan,
        "base_hashes": bases.iter().map(EnvironmentGrid::content_hash).collect::<Vec<_>>(),
        "signature": signatures[0],
        "barrier_seed": barrier_seed,
        "accounting": accounting,
    });
    let grid = grid.with_seed(Some(barrier_seed)).with_provenance(provenance);
    Ok(FavEnvironment { grid, plan: plan.clone(), accounting })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FavReport {
    pub passage_time: f64,
    pub exit_time: f64,
    pub passage_threshold: f64,
    pub exit_threshold: f64,
    pub passage_ok: bool,
    pub exit_ok: bool,
    pub geodesic: Vec<Point>,
}

impl FavReport {
    #[must_use]
    pub fn passed(&self) -> bool {
        self.passage_ok && self.exit_ok
    }
}

/// Passage time to `(n1, 0)` and exit time, both inside the layout region.
pub fn verify_fav(fav: &EnvironmentGrid, plan: &DilationPlan, mu_hat: f64, zeta: f64, eps: f64) -> Result<FavReport> {
    let region = plan.region();
    if fav.halfwidth() < plan.grid_halfwidth {
        return Err(Error::Precondition("dilated grid smaller than its plan".into()));
    }
    let LatticePath { vertices, weight } = geodesic(fav, Point::new(0, 0), plan.target(), Some(region))?;
    let exit = exit_time(fav, Point::new(0, 0), region)?;
    let n1 = plan.n1 as f64;
    let passage_threshold = (mu_hat + zeta - eps) * n1;
    let exit_threshold = fav.b() * n1;
    Ok(FavReport {
        passage_time: weight,
        exit_time: exit,
        passage_threshold,
        exit_threshold,
        passage_ok: weight >= passage_threshold,
        exit_ok: exit >= exit_threshold,
        geodesic: vertices,
    })
}

/// Block weights read back from a dilated grid must equal the base tile.
pub fn identification_mismatches(layout: &CorridorLayout, fav: &EnvironmentGrid, bases: &[EnvironmentGrid]) -> usize {
    let plan = layout.plan();
    let tiles = plan.tiles as u32;
    let h = plan.h() as u32;
    let jobs: Vec<([u32; 2], [u32; 2])> = (1..=tiles)
        .flat_map(|vy| (1..=tiles).map(move |vx| [vx, vy]))
        .filter(|v| !plan.is_boosted(*v))
        .flat_map(|v| (1..=h).flat_map(move |wy| (1..=h).map(move |wx| (v, [wx, wy]))))
        .collect();
    jobs.par_iter()
        .map(|&(v, w)| {
            let base = &bases[layout.base_index(w)];
            layout.block_edges(v, w).iter().filter(|(f, g)| fav.weight(*f) != base.weight(*g)).count()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(j1: u32, h: i64) -> DilationParams {
        DilationParams {
            n: 8,
            h,
            j1,
            eps6: 0.125,
            eps7: 0.1,
            spread: 4.0,
            eps1: 0.25,
            unstable: vec![],
            corridor_constant: 16.0,
        }
    }

    #[test]
    fn example_lengths() {
        for j1 in 0..=2 {
            let plan = make_plan(params(j1, 2)).unwrap();
            assert_eq!(plan.lengths, [80, 72, 64, 36, 32]);
            assert_eq!(plan.n1, 16);
        }
    }

    #[test]
    fn degenerate_plans_fail() {
        let mut p = params(0, 2);
        p.eps6 = 0.0;
        assert!(make_plan(p).is_err());
        assert!(make_plan(params(0, 1)).is_err());
        assert!(make_plan(params(5, 2)).is_err());
    }

    #[test]
    fn origin_is_a_star_center() {
        for j1 in 0..=2 {
            let plan = make_plan(params(j1, 2)).unwrap();
            let layout = CorridorLayout::new(&plan);
            let v = layout.star_of(Point::new(0, 0)).unwrap();
            assert_eq!(layout.star_rect(v).center(), RealPoint::new(0.0, 0.0));
        }
    }

    #[test]
    fn squish_is_monotone_and_spans_base() {
        let plan = make_plan(params(1, 3)).unwrap();
        let layout = CorridorLayout::new(&plan);
        let r = plan.region();
        let lo = layout.squish(Point::new(r.x_min, r.y_min));
        let hi = layout.squish(Point::new(r.x_max, r.y_max));
        let b = plan.base_halfwidth() as f64;
        assert_eq!((lo.x, hi.x), (-b, b));
        let mut prev = lo.x;
        for x in r.x_min..=r.x_max {
            let s = layout.squish(Point::new(x, 0)).x;
            assert!(s >= prev);
            prev = s;
        }
    }
}
