//! Passage times, geodesics and exit times.
//!
//! Distances are accumulated in signed 128-bit fixed point with 96
//! fractional bits. Every weight in `[2^-43, 2^31)` converts exactly, so a
//! passage time is an exact sum of stored weights and does not depend on
//! the order of summation. In particular `PT(u, v) == PT(v, u)` bit for bit.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RealPoint, Rect};
use crate::grid::EnvironmentGrid;

const SCALE: f64 = 79_228_162_514_264_337_593_543_950_336.0; // 2^96

/// An exactly accumulated passage time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactTime(i128);

impl ExactTime {
    pub const ZERO: ExactTime = ExactTime(0);

    #[must_use]
    pub fn from_weight(w: f64) -> Self {
        ExactTime((w * SCALE) as i128)
    }

    #[must_use]
    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    #[must_use]
    pub fn raw(self) -> i128 {
        self.0
    }
}

impl std::ops::Add for ExactTime {
    type Output = ExactTime;
    fn add(self, rhs: Self) -> Self {
        ExactTime(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for ExactTime {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for ExactTime {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExactTime::ZERO, |a, b| a + b)
    }
}

/// A nearest-neighbour path with its weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticePath {
    pub vertices: Vec<Point>,
    pub weight: f64,
}

impl LatticePath {
    #[must_use]
    pub fn start(&self) -> Point {
        self.vertices[0]
    }

    #[must_use]
    pub fn end(&self) -> Point {
        *self.vertices.last().expect("non-empty path")
    }

    #[must_use]
    pub fn edge_count(&self) -> usize {
        self.vertices.len().saturating_sub(1)
    }
}

/// Exact weight of a vertex sequence; errors if consecutive vertices are
/// not adjacent or an edge is missing from the grid.
pub fn path_weight_exact(env: &EnvironmentGrid, vertices: &[Point]) -> Result<ExactTime> {
    vertices
        .windows(2)
        .map(|w| {
            env.weight_between(w[0], w[1])
                .map(ExactTime::from_weight)
                .ok_or_else(|| Error::OutOfBounds(format!("no edge between {:?} and {:?}", w[0], w[1])))
        })
        .sum()
}

pub fn path_weight(env: &EnvironmentGrid, vertices: &[Point]) -> Result<f64> {
    path_weight_exact(env, vertices).map(ExactTime::to_f64)
}

struct Workspace {
    dist: Vec<i128>,
    seen: Vec<u32>,
    done: Vec<u32>,
    epoch: u32,
    heap: BinaryHeap<Reverse<(i128, u32)>>,
}

impl Workspace {
    fn prepare(&mut self, vertices: usize) {
        if self.dist.len() < vertices {
            self.dist.resize(vertices, 0);
            self.seen.resize(vertices, 0);
            self.done.resize(vertices, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.seen.iter_mut().for_each(|s| *s = 0);
            self.done.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.heap.clear();
    }
}

thread_local! {
    static WORKSPACE: RefCell<Workspace> = RefCell::new(Workspace {
        dist: Vec::new(),
        seen: Vec::new(),
        done: Vec::new(),
        epoch: 0,
        heap: BinaryHeap::new(),
    });
}

fn resolve_region(env: &EnvironmentGrid, region: Option<Rect>) -> Result<Rect> {
    let bounds = env.bounds();
    match region {
        None => Ok(bounds),
        Some(r) if !r.is_empty() && bounds.contains_rect(&r) => Ok(r),
        Some(r) => Err(Error::OutOfBounds(format!("region {r:?} not inside {bounds:?}"))),
    }
}

fn require_inside(region: &Rect, p: Point) -> Result<()> {
    if region.contains(p) {
        Ok(())
    } else {
        Err(Error::OutOfBounds(format!("point {p:?} outside {region:?}")))
    }
}

/// Dijkstra from `source` inside `region`. `visit` sees each vertex once,
/// in settling order (ties broken by vertex index), and returns `false` to
/// stop the search.
fn search(env: &EnvironmentGrid, source: Point, region: Rect, mut visit: impl FnMut(Point, i128) -> bool) {
    let r = env.halfwidth();
    let side = 2 * r + 1;
    let (horizontal, vertical) = env.raw();
    let index = |p: Point| ((p.y + r) * side + (p.x + r)) as u32;
    WORKSPACE.with(|cell| {
        let mut guard = cell.borrow_mut();
        let ws = &mut *guard;
        ws.prepare((side * side) as usize);
        let epoch = ws.epoch;
        let s = index(source);
        ws.dist[s as usize] = 0;
        ws.seen[s as usize] = epoch;
        ws.heap.push(Reverse((0, s)));
        while let Some(Reverse((d, v))) = ws.heap.pop() {
            if ws.done[v as usize] == epoch {
                continue;
            }
            ws.done[v as usize] = epoch;
            let p = Point::new(v as i64 % side - r, v as i64 / side - r);
            if !visit(p, d) {
                break;
            }
            let (x, y) = (p.x + r, p.y + r);
            let mut relax = |u: u32, w: f64| {
                let u = u as usize;
                if ws.done[u] == epoch {
                    return;
                }
                let nd = d + (w * SCALE) as i128;
                if ws.seen[u] != epoch || nd < ws.dist[u] {
                    ws.seen[u] = epoch;
                    ws.dist[u] = nd;
                    ws.heap.push(Reverse((nd, u as u32)));
                }
            };
            if p.x > region.x_min {
                relax(v - 1, horizontal[(y * 2 * r + x - 1) as usize]);
            }
            if p.x < region.x_max {
                relax(v + 1, horizontal[(y * 2 * r + x) as usize]);
            }
            if p.y > region.y_min {
                relax(v - side as u32, vertical[((y - 1) * side + x) as usize]);
            }
            if p.y < region.y_max {
                relax(v + side as u32, vertical[(y * side + x) as usize]);
            }
        }
    });
}

/// Passage time from `u` to `v` over paths inside `region` (whole grid if
/// `None`).
pub fn passage_time_exact(env: &EnvironmentGrid, u: Point, v: Point, region: Option<Rect>) -> Result<ExactTime> {
    let region = resolve_region(env, region)?;
    require_inside(&region, u)?;
    require_inside(&region, v)?;
    let mut found = None;
    search(env, u, region, |p, d| {
        if p == v {
            found = Some(d);
            false
        } else {
            true
        }
    });
    found.map(ExactTime).ok_or_else(|| Error::OutOfBounds("target unreachable".into()))
}

pub fn passage_time(env: &EnvironmentGrid, u: Point, v: Point, region: Option<Rect>) -> Result<f64> {
    passage_time_exact(env, u, v, region).map(ExactTime::to_f64)
}

/// Passage times from one source to many targets, stopping once all
/// targets are settled.
pub fn distances_exact(
    env: &EnvironmentGrid,
    source: Point,
    targets: &[Point],
    region: Option<Rect>,
) -> Result<Vec<ExactTime>> {
    let region = resolve_region(env, region)?;
    require_inside(&region, source)?;
    let mut slots: HashMap<Point, Vec<usize>> = HashMap::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        require_inside(&region, t)?;
        slots.entry(t).or_default().push(i);
    }
    let mut out = vec![ExactTime::ZERO; targets.len()];
    let mut remaining = slots.len();
    if remaining == 0 {
        return Ok(out);
    }
    search(env, source, region, |p, d| {
        if let Some(idx) = slots.get(&p) {
            for &i in idx {
                out[i] = ExactTime(d);
            }
            remaining -= 1;
        }
        remaining > 0
    });
    Ok(out)
}

pub fn distances(env: &EnvironmentGrid, source: Point, targets: &[Point], region: Option<Rect>) -> Result<Vec<f64>> {
    Ok(distances_exact(env, source, targets, region)?.into_iter().map(ExactTime::to_f64).collect())
}

/// Single-source passage times to every vertex of a region.
#[derive(Clone, Debug)]
pub struct DistanceMap {
    pub source: Point,
    pub region: Rect,
    dist: Vec<ExactTime>,
}

impl DistanceMap {
    #[must_use]
    pub fn get_exact(&self, p: Point) -> Option<ExactTime> {
        self.region.contains(p).then(|| {
            let i = (p.y - self.region.y_min) * self.region.width() + (p.x - self.region.x_min);
            self.dist[i as usize]
        })
    }

    #[must_use]
    pub fn get(&self, p: Point) -> Option<f64> {
        self.get_exact(p).map(ExactTime::to_f64)
    }
}

pub fn distance_map(env: &EnvironmentGrid, source: Point, region: Option<Rect>) -> Result<DistanceMap> {
    let region = resolve_region(env, region)?;
    require_inside(&region, source)?;
    let mut dist = vec![ExactTime::ZERO; region.vertex_count()];
    let w = region.width();
    search(env, source, region, |p, d| {
        dist[((p.y - region.y_min) * w + (p.x - region.x_min)) as usize] = ExactTime(d);
        true
    });
    Ok(DistanceMap { source, region, dist })
}

/// A geodesic from `u` to `v` inside `region`.
///
/// Among geodesics reachable by stepping to strictly earlier-settled
/// vertices of a search rooted at `v`, the walk from `u` always takes the
/// lexicographically smallest next vertex, which makes the result
/// deterministic.
pub fn geodesic(env: &EnvironmentGrid, u: Point, v: Point, region: Option<Rect>) -> Result<LatticePath> {
    let region = resolve_region(env, region)?;
    require_inside(&region, u)?;
    require_inside(&region, v)?;
    let mut settled: HashMap<Point, (i128, usize)> = HashMap::new();
    search(env, v, region, |p, d| {
        let order = settled.len();
        settled.insert(p, (d, order));
        p != u
    });
    let mut vertices = vec![u];
    let mut cur = u;
    while cur != v {
        let (d_cur, o_cur) = settled[&cur];
        let next = cur
            .neighbours()
            .into_iter()
            .filter(|w| region.contains(*w))
            .filter(|w| match settled.get(w) {
                Some(&(d_w, o_w)) => {
                    let step = ExactTime::from_weight(env.weight_between(cur, *w).expect("edge in region")).0;
                    o_w < o_cur && d_w + step == d_cur
                }
                None => false,
            })
            .min()
            .expect("the search parent is always a valid step");
        vertices.push(next);
        cur = next;
    }
    let weight = ExactTime(settled[&u].0).to_f64();
    Ok(LatticePath { vertices, weight })
}

/// Minimum passage time from `u` to a vertex one step outside `bx`, using
/// paths inside `bx` plus the final step. `bx` must sit strictly inside
/// the grid.
pub fn exit_time(env: &EnvironmentGrid, u: Point, bx: Rect) -> Result<f64> {
    let bounds = env.bounds();
    let outer = Rect::new(bx.x_min - 1, bx.x_max + 1, bx.y_min - 1, bx.y_max + 1);
    if bx.is_empty() || !bounds.contains_rect(&outer) {
        return Err(Error::OutOfBounds(format!("box {bx:?} must lie strictly inside {bounds:?}")));
    }
    require_inside(&bx, u)?;
    let mut best: Option<i128> = None;
    search(env, u, bx, |p, d| {
        if best.is_some_and(|b| d >= b) {
            return false;
        }
        if bx.on_boundary(p) {
            for q in p.neighbours() {
                if !bx.contains(q) {
                    let w = env.weight_between(p, q).expect("outer ring inside grid");
                    let c = d + ExactTime::from_weight(w).0;
                    best = Some(best.map_or(c, |b| b.min(c)));
                }
            }
        }
        true
    });
    Ok(ExactTime(best.expect("a boundary vertex is always reached")).to_f64())
}

/// Passage time between real points, each rounded to its nearest lattice
/// point. Zero when both round to the same vertex.
pub fn pt_real_exact(env: &EnvironmentGrid, z: RealPoint, w: RealPoint) -> Result<ExactTime> {
    let (a, b) = (z.round(), w.round());
    if a == b {
        let bounds = env.bounds();
        require_inside(&bounds, a)?;
        return Ok(ExactTime::ZERO);
    }
    passage_time_exact(env, a, b, None)
}

pub fn pt_real(env: &EnvironmentGrid, z: RealPoint, w: RealPoint) -> Result<f64> {
    pt_real_exact(env, z, w).map(ExactTime::to_f64)
}

/// Points `z_i = z + i * step * (cos angle, sin angle)` for `i = 0..=k`.
#[must_use]
pub fn segment_points(z: RealPoint, angle: f64, step: f64, k: usize) -> Vec<RealPoint> {
    let dir = RealPoint::polar(1.0, angle);
    (0..=k).map(|i| z.add(dir.scale(i as f64 * step))).collect()
}

/// Sum of real-point passage times along consecutive segment points.
pub fn segment_passage_time_exact(
    env: &EnvironmentGrid,
    z: RealPoint,
    angle: f64,
    step: f64,
    k: usize,
) -> Result<ExactTime> {
    segment_points(z, angle, step, k).windows(2).map(|w| pt_real_exact(env, w[0], w[1])).sum()
}

pub fn segment_passage_time(env: &EnvironmentGrid, z: RealPoint, angle: f64, step: f64, k: usize) -> Result<f64> {
    segment_passage_time_exact(env, z, angle, step, k).map(ExactTime::to_f64)
}

/// Weight-bounded straight line: the edges of the horizontal-then-vertical
/// lattice path from `a` to `b`.
#[must_use]
pub fn l_path(a: Point, b: Point) -> Vec<Point> {
    let mut out = vec![a];
    let mut cur = a;
    while cur.x != b.x {
        cur.x += (b.x - cur.x).signum();
        out.push(cur);
    }
    while cur.y != b.y {
        cur.y += (b.y - cur.y).signum();
        out.push(cur);
    }
    out
}
