//! Path surgery on dilated environments.
//!
//! A path in the layout region splits into excursions (maximal runs inside
//! one closed star) and bridges (runs through the exterior corridor, with
//! the junction vertices on both ends). Regularising straightens bridges
//! and enlarges short excursions; scaling maps the result onto the base
//! box by squishing the corridors away.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dilation::CorridorLayout;
use crate::error::{Error, Result};
use crate::geodesic::{geodesic, l_path, path_weight, LatticePath};
use crate::geometry::{Point, Rect};
use crate::grid::EnvironmentGrid;
use crate::projection::NestedGrids;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece<K> {
    /// `None` for a bridge.
    pub cell: Option<K>,
    pub vertices: Vec<Point>,
}

impl<K> Piece<K> {
    #[must_use]
    pub fn is_bridge(&self) -> bool {
        self.cell.is_none()
    }

    #[must_use]
    pub fn first(&self) -> Point {
        self.vertices[0]
    }

    #[must_use]
    pub fn last(&self) -> Point {
        *self.vertices.last().expect("pieces are nonempty")
    }
}

/// Maximal runs of equal labels; unlabelled runs become bridges that also
/// carry the neighbouring junction vertices.
fn split_runs<K: Copy + Eq>(path: &[Point], label: impl Fn(Point) -> Option<K>) -> Vec<Piece<K>> {
    let labels: Vec<Option<K>> = path.iter().map(|&p| label(p)).collect();
    let n = path.len();
    let mut pieces = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && labels[j + 1] == labels[i] {
            j += 1;
        }
        let (lo, hi) = if labels[i].is_some() { (i, j) } else { (i.saturating_sub(1), (j + 1).min(n - 1)) };
        pieces.push(Piece { cell: labels[i], vertices: path[lo..=hi].to_vec() });
        i = j + 1;
    }
    pieces
}

/// Concatenate pieces, dropping the junction vertex each bridge shares with
/// its neighbours.
#[must_use]
pub fn recompose<K>(pieces: &[Piece<K>]) -> Vec<Point> {
    let mut out = Vec::new();
    for (k, p) in pieces.iter().enumerate() {
        let shared = k > 0 && (p.is_bridge() || pieces[k - 1].is_bridge());
        out.extend_from_slice(if shared { &p.vertices[1..] } else { &p.vertices });
    }
    out
}

fn append_joined(out: &mut Vec<Point>, piece: &[Point]) {
    let skip = usize::from(out.last().is_some() && out.last() == piece.first());
    out.extend_from_slice(&piece[skip..]);
}

fn is_large(vertices: &[Point], threshold: f64) -> bool {
    let (x, y) = (vertices[0].to_real(), vertices[vertices.len() - 1].to_real());
    vertices.iter().any(|z| {
        let z = z.to_real();
        x.dist(z).min(y.dist(z)) >= threshold
    })
}

fn regular_bridges<K: Copy>(pieces: &[Piece<K>], cells: impl Fn(K) -> [u32; 2]) -> bool {
    (1..pieces.len().saturating_sub(1)).filter(|&k| pieces[k].is_bridge()).all(|k| {
        let (Some(a), Some(b)) = (pieces[k - 1].cell, pieces[k + 1].cell) else {
            return false;
        };
        let (v, w) = (cells(a), cells(b));
        let dx = v[0].abs_diff(w[0]);
        let dy = v[1].abs_diff(w[1]);
        let (s, e) = (pieces[k].first(), pieces[k].last());
        match (dx, dy) {
            (1, 0) => s.y == e.y,
            (0, 1) => s.x == e.x,
            _ => false,
        }
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExcursionDecomposition {
    pub pieces: Vec<Piece<[u32; 2]>>,
    /// Per piece; `None` for bridges.
    pub large: Vec<Option<bool>>,
    pub regular: bool,
}

impl ExcursionDecomposition {
    #[must_use]
    pub fn recompose(&self) -> Vec<Point> {
        recompose(&self.pieces)
    }

    /// Excursions strictly between the first and last piece, the ones
    /// required to be large.
    pub fn inner_excursions(&self) -> impl Iterator<Item = usize> + '_ {
        let last = self.pieces.len().saturating_sub(1);
        (1..last).filter(|&k| !self.pieces[k].is_bridge())
    }

    #[must_use]
    pub fn all_large(&self) -> bool {
        self.inner_excursions().all(|k| self.large[k] == Some(true))
    }

    #[must_use]
    pub fn excursion_count(&self) -> usize {
        self.pieces.iter().filter(|p| !p.is_bridge()).count()
    }
}

fn check_path(path: &[Point], region: &Rect) -> Result<()> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("empty path".into()));
    }
    if let Some(p) = path.iter().find(|p| !region.contains(**p)) {
        return Err(Error::OutOfBounds(format!("path leaves the layout region at {p:?}")));
    }
    if let Some(w) = path.windows(2).find(|w| w[0].l1(w[1]) != 1) {
        return Err(Error::InvalidParameter(format!("{:?} and {:?} are not adjacent", w[0], w[1])));
    }
    Ok(())
}

pub fn decompose_excursions(path: &[Point], layout: &CorridorLayout) -> Result<ExcursionDecomposition> {
    check_path(path, &layout.plan().region())?;
    let pieces = split_runs(path, |p| layout.star_of(p));
    let threshold = layout.plan().large_threshold();
    let large = pieces.iter().map(|p| (!p.is_bridge()).then(|| is_large(&p.vertices, threshold))).collect();
    let regular = regular_bridges(&pieces, |v| v);
    Ok(ExcursionDecomposition { pieces, large, regular })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteriorSummary {
    pub excursions: usize,
    pub large: usize,
    pub bridges: usize,
    pub regular: bool,
}

/// The same decomposition one level down, by blocks inside a star.
#[must_use]
pub fn interior_decomposition(excursion: &[Point], layout: &CorridorLayout) -> InteriorSummary {
    let pieces = split_runs(excursion, |p| layout.block_of(p).map(|(v, w, _)| (v, w)));
    let threshold = layout.plan().block_large_threshold();
    InteriorSummary {
        excursions: pieces.iter().filter(|p| !p.is_bridge()).count(),
        large: pieces.iter().filter(|p| !p.is_bridge() && is_large(&p.vertices, threshold)).count(),
        bridges: pieces.iter().filter(|p| p.is_bridge()).count(),
        regular: regular_bridges(&pieces, |(_, w)| w),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Regularized {
    pub path: Vec<Point>,
    pub original_weight: f64,
    pub weight: f64,
    /// `original_weight / weight`.
    pub ratio: f64,
    pub bound: f64,
    pub certified: bool,
    pub regular: bool,
    pub all_large: bool,
    pub bridges_replaced: usize,
    pub detours: usize,
    /// Short excursions for which no detour vertex exists.
    pub unresolved: usize,
}

/// Straighten one bridge: horizontal-then-vertical, with the stretches
/// inside stars replaced by in-star geodesics.
fn regular_bridge(env: &EnvironmentGrid, layout: &CorridorLayout, x: Point, y: Point) -> Result<Vec<Point>> {
    let line = l_path(x, y);
    let mut out = Vec::new();
    for run in split_runs(&line, |p| layout.star_of(p)) {
        match run.cell {
            Some(v) => {
                let g = geodesic(env, run.first(), run.last(), Some(layout.star_rect(v)))?;
                append_joined(&mut out, &g.vertices);
            }
            None => append_joined(&mut out, &run.vertices),
        }
    }
    Ok(out)
}

/// Detour vertex for a short excursion from `x` to `y` in star `rect`:
/// closest lattice point to `x + 1.5 t n` (inward normal `n`) whose
/// distances to `x` and `y` both lie in `(t, 2t)`.
#[must_use]
pub fn detour_vertex(rect: &Rect, x: Point, y: Point, t: f64) -> Option<Point> {
    let mut nx = 0.0;
    let mut ny = 0.0;
    if x.x == rect.x_min {
        nx += 1.0;
    }
    if x.x == rect.x_max {
        nx -= 1.0;
    }
    if x.y == rect.y_min {
        ny += 1.0;
    }
    if x.y == rect.y_max {
        ny -= 1.0;
    }
    let norm = f64::hypot(nx, ny);
    let (nx, ny) = if norm > 0.0 { (nx / norm, ny / norm) } else { (0.0, 0.0) };
    let target = crate::geometry::RealPoint::new(x.x as f64 + 1.5 * t * nx, x.y as f64 + 1.5 * t * ny);
    let reach = (2.0 * t).ceil() as i64 + 1;
    let window = Rect::new(x.x - reach, x.x + reach, x.y - reach, x.y + reach);
    let (xr, yr) = (x.to_real(), y.to_real());
    let mut best: Option<(f64, Point)> = None;
    for q in window.points().filter(|q| rect.contains(*q)) {
        let qr = q.to_real();
        let ok = |d: f64| d > t && d < 2.0 * t;
        if !(ok(qr.dist(xr)) && ok(qr.dist(yr))) {
            continue;
        }
        let d = qr.dist(target);
        if best.is_none_or(|(bd, bq)| d < bd || (d == bd && q < bq)) {
            best = Some((d, q));
        }
    }
    best.map(|(_, q)| q)
}

/// Make `path` regular with large excursions, keeping its endpoints.
pub fn regularize(path: &[Point], env: &EnvironmentGrid, layout: &CorridorLayout, c3: f64) -> Result<Regularized> {
    let plan = layout.plan();
    let floor = env.b() - plan.params.eps7;
    let dec = decompose_excursions(path, layout)?;
    for piece in dec.pieces.iter().filter(|p| p.is_bridge()) {
        for w in piece.vertices.windows(2) {
            let inside = layout.star_of(w[0]).is_some() && layout.star_of(w[1]).is_some();
            let weight = env.weight_between(w[0], w[1]).ok_or_else(|| Error::OutOfBounds("path outside grid".into()))?;
            if !inside && weight < floor {
                return Err(Error::Precondition(format!(
                    "corridor edge {:?}-{:?} has weight {weight} below {floor}",
                    w[0], w[1]
                )));
            }
        }
    }

    let mut straight = Vec::new();
    let mut bridges_replaced = 0;
    for piece in &dec.pieces {
        if piece.is_bridge() {
            let replacement = regular_bridge(env, layout, piece.first(), piece.last())?;
            bridges_replaced += usize::from(replacement != piece.vertices);
            append_joined(&mut straight, &replacement);
        } else {
            append_joined(&mut straight, &piece.vertices);
        }
    }

    let dec = decompose_excursions(&straight, layout)?;
    let t = plan.large_threshold();
    let inner: Vec<usize> = dec.inner_excursions().collect();
    let mut out = Vec::new();
    let (mut detours, mut unresolved) = (0, 0);
    for (k, piece) in dec.pieces.iter().enumerate() {
        let short = inner.contains(&k) && dec.large[k] == Some(false);
        let Some(v) = piece.cell.filter(|_| short) else {
            append_joined(&mut out, &piece.vertices);
            continue;
        };
        let rect = layout.star_rect(v);
        match detour_vertex(&rect, piece.first(), piece.last(), t) {
            Some(z) => {
                append_joined(&mut out, &geodesic(env, piece.first(), z, Some(rect))?.vertices);
                append_joined(&mut out, &geodesic(env, z, piece.last(), Some(rect))?.vertices);
                detours += 1;
            }
            None => {
                append_joined(&mut out, &piece.vertices);
                unresolved += 1;
            }
        }
    }

    let final_dec = decompose_excursions(&out, layout)?;
    let original_weight = path_weight(env, path)?;
    let weight = path_weight(env, &out)?;
    let ratio = if weight > 0.0 { original_weight / weight } else { 1.0 };
    let bound = 1.0 - c3 * (plan.params.eps6 + plan.params.eps7);
    Ok(Regularized {
        path: out,
        original_weight,
        weight,
        ratio,
        bound,
        certified: ratio >= bound,
        regular: final_dec.regular,
        all_large: final_dec.all_large(),
        bridges_replaced,
        detours,
        unresolved,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledPiece {
    pub tile: [u32; 2],
    pub boosted: bool,
    /// The excursion in the dilated grid.
    pub excursion: Vec<Point>,
    pub start: Point,
    /// Adjusted end, next to the following piece's start.
    pub end: Point,
    pub base_path: LatticePath,
    /// Flagged edges joining this piece to the next one.
    pub connector: Vec<Point>,
    pub connector_weight: f64,
    pub interior: InteriorSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledPath {
    pub pieces: Vec<ScaledPiece>,
    pub vertices: Vec<Point>,
    pub weight: f64,
    pub connector_weight: f64,
    pub spacing: i64,
}

/// Snap a base-scale point to the line grid of the base box.
fn snap(grids: &NestedGrids, p: crate::geometry::RealPoint) -> Point {
    let q = grids.nearest_line_point(p);
    Point::new(q.x.round() as i64, q.y.round() as i64)
}

/// Squish a regular path onto the base box. `snap_levels` refines the
/// base tiling to the snapping grid; its spacing must be an integer.
pub fn scale_down(path: &[Point], layout: &CorridorLayout, base: &EnvironmentGrid, snap_levels: u32) -> Result<ScaledPath> {
    let plan = layout.plan();
    let n4 = plan.base_halfwidth();
    let levels = plan.params.j1 + snap_levels;
    if levels > 30 || n4 % (1i64 << levels) != 0 {
        return Err(Error::InvalidParameter(format!("snapping spacing {n4}/2^{levels} is not an integer")));
    }
    let spacing = n4 >> levels;
    let grids = NestedGrids::new(n4, plan.params.j1, snap_levels)?;
    let region = plan.base_region();
    if !base.bounds().contains_rect(&region) {
        return Err(Error::Precondition("base grid smaller than the base box".into()));
    }
    let dec = decompose_excursions(path, layout)?;
    let excursions: Vec<&Piece<[u32; 2]>> = dec.pieces.iter().filter(|p| !p.is_bridge()).collect();
    if excursions.is_empty() {
        return Err(Error::InvalidParameter("path has no excursion".into()));
    }
    let starts: Vec<Point> = excursions.iter().map(|p| snap(&grids, layout.squish(p.first()))).collect();
    let last_end = snap(&grids, layout.squish(excursions[excursions.len() - 1].last()));

    let mut pieces = Vec::with_capacity(excursions.len());
    for (i, ex) in excursions.iter().enumerate() {
        let v = ex.cell.expect("excursions carry a tile");
        let start = starts[i];
        let tile = layout.base_tile_rect(v);
        let (end, connector) = match starts.get(i + 1) {
            None => (last_end, Vec::new()),
            Some(&next) if tile.contains(next) => (next, Vec::new()),
            Some(&next) => match next.neighbours().into_iter().filter(|q| tile.contains(*q)).min() {
                Some(q) => (q, vec![q, next]),
                None => {
                    let q = tile.clamp(next);
                    (q, l_path(q, next))
                }
            },
        };
        if let Some(next) = excursions.get(i + 1) {
            let moved = layout.squish(ex.first()).dist(layout.squish(next.first()));
            if start == starts[i + 1] && moved >= 2.0 * spacing as f64 {
                return Err(Error::Precondition(format!(
                    "snap collision at {start:?}: pieces {moved:.2} apart collapse on spacing {spacing}"
                )));
            }
        }
        let base_path = geodesic(base, start, end, Some(region))?;
        let connector_weight = if connector.is_empty() { 0.0 } else { path_weight(base, &connector)? };
        pieces.push(ScaledPiece {
            tile: v,
            boosted: plan.is_boosted(v),
            excursion: ex.vertices.clone(),
            start,
            end,
            base_path,
            connector,
            connector_weight,
            interior: interior_decomposition(&ex.vertices, layout),
        });
    }
    let mut vertices = Vec::new();
    for p in &pieces {
        append_joined(&mut vertices, &p.base_path.vertices);
        if !p.connector.is_empty() {
            append_joined(&mut vertices, &p.connector);
        }
    }
    let connector_weight: f64 = pieces.iter().map(|p| p.connector_weight).sum();
    let weight = pieces.iter().map(|p| p.base_path.weight).sum::<f64>() + connector_weight;
    Ok(ScaledPath { pieces, vertices, weight, connector_weight, spacing })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PieceComparison {
    pub tile: [u32; 2],
    pub fav_weight: f64,
    pub base_weight: f64,
    /// `fav_weight / (h * base_weight)`; absent for degenerate pieces.
    pub ratio: Option<f64>,
    pub boosted: bool,
    /// For boosted tiles: `fav_weight >= (b - eps7) * |displacement|_1`.
    pub boosted_ok: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LengthReport {
    pub pieces: Vec<PieceComparison>,
    pub worst_ratio: Option<f64>,
    /// Excursion weights against scaled piece weights.
    pub pieces_ratio: f64,
    /// Whole original path against the whole scaled path, connectors
    /// included.
    pub chain_ratio: f64,
    pub piece_failures: usize,
    pub slack: f64,
    pub passed: bool,
}

/// Compare dilated excursion weights with `h` times their scaled
/// counterparts. `original_weight` is the weight of the path before
/// regularisation.
pub fn compare_lengths(
    scaled: &ScaledPath,
    fav: &EnvironmentGrid,
    layout: &CorridorLayout,
    original_weight: f64,
    slack: f64,
) -> Result<LengthReport> {
    let plan = layout.plan();
    let h = plan.h() as f64;
    let floor = fav.b() - plan.params.eps7;
    let threshold = 1.0 - slack;
    let mut pieces = Vec::with_capacity(scaled.pieces.len());
    for p in &scaled.pieces {
        let fav_weight = path_weight(fav, &p.excursion)?;
        let base_weight = p.base_path.weight;
        let ratio = (base_weight > 0.0).then(|| fav_weight / (h * base_weight));
        let displacement = p.excursion[0].l1(*p.excursion.last().expect("nonempty")) as f64;
        pieces.push(PieceComparison {
            tile: p.tile,
            fav_weight,
            base_weight,
            ratio,
            boosted: p.boosted,
            boosted_ok: p.boosted.then_some(fav_weight >= floor * displacement),
        });
    }
    let worst_ratio = pieces.iter().filter(|p| !p.boosted).filter_map(|p| p.ratio).reduce(f64::min);
    let piece_failures = pieces
        .iter()
        .filter(|p| if p.boosted { p.boosted_ok == Some(false) } else { p.ratio.is_some_and(|r| r < threshold) })
        .count();
    let fav_total: f64 = pieces.iter().map(|p| p.fav_weight).sum();
    let base_total: f64 = pieces.iter().map(|p| p.base_weight).sum();
    let ratio_of = |num: f64, den: f64| if den > 0.0 { num / (h * den) } else { f64::INFINITY };
    let pieces_ratio = ratio_of(fav_total, base_total);
    let chain_ratio = ratio_of(original_weight, scaled.weight);
    Ok(LengthReport {
        pieces,
        worst_ratio,
        pieces_ratio,
        chain_ratio,
        piece_failures,
        slack,
        passed: pieces_ratio >= threshold && chain_ratio >= threshold,
    })
}

/// Random monotone staircase from `a` to `b`.
pub fn random_staircase<R: Rng + ?Sized>(a: Point, b: Point, rng: &mut R) -> Vec<Point> {
    let mut out = vec![a];
    let mut cur = a;
    while cur != b {
        let dx = (b.x - cur.x).abs();
        let dy = (b.y - cur.y).abs();
        if rng.gen_range(0..dx + dy) < dx {
            cur.x += (b.x - cur.x).signum();
        } else {
            cur.y += (b.y - cur.y).signum();
        }
        out.push(cur);
    }
    out
}

/// Random path from `start` to `end` through `waypoints` uniform points of
/// `region`, joined by random staircases.
pub fn random_path<R: Rng + ?Sized>(region: &Rect, start: Point, end: Point, waypoints: usize, rng: &mut R) -> Vec<Point> {
    let mut stops = vec![start];
    for _ in 0..waypoints {
        stops.push(Point::new(rng.gen_range(region.x_min..=region.x_max), rng.gen_range(region.y_min..=region.y_max)));
    }
    stops.push(end);
    let mut out = Vec::new();
    for w in stops.windows(2) {
        append_joined(&mut out, &random_staircase(w[0], w[1], rng));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dilation::{make_plan, DilationParams};

    fn layout(j1: u32) -> CorridorLayout {
        let plan = make_plan(DilationParams {
            n: 8,
            h: 2,
            j1,
            eps6: 0.125,
            eps7: 0.1,
            spread: 4.0,
            eps1: 0.25,
            unstable: vec![],
            corridor_constant: 16.0,
        })
        .unwrap();
        CorridorLayout::new(&plan)
    }

    #[test]
    fn single_star_path_is_one_excursion() {
        let l = layout(0);
        let path = l_path(Point::new(0, 0), Point::new(10, 5));
        let d = decompose_excursions(&path, &l).unwrap();
        assert_eq!(d.pieces.len(), 1);
        assert_eq!(d.recompose(), path);
    }

    #[test]
    fn horizontal_crossing_alternates() {
        let l = layout(1);
        let r = l.plan().region();
        let path = l_path(Point::new(r.x_min, 0), Point::new(r.x_max, 0));
        let d = decompose_excursions(&path, &l).unwrap();
        let kinds: Vec<bool> = d.pieces.iter().map(Piece::is_bridge).collect();
        assert!(kinds.windows(2).all(|w| w[0] != w[1]));
        assert_eq!(d.recompose(), path);
        assert!(d.regular);
    }

    #[test]
    fn escaping_path_is_rejected() {
        let l = layout(0);
        let path = l_path(Point::new(0, 0), Point::new(90, 0));
        assert!(decompose_excursions(&path, &l).is_err());
    }
}
