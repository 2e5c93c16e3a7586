//! Point and tile stability, gradients, and the multi-scale scan.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geodesic::{distances_exact, pt_real, pt_real_exact, segment_points, ExactTime};
use crate::geometry::{Point, RealPoint, Rect};
use crate::grid::EnvironmentGrid;
use crate::seed;

/// The angle set `{0, eta, 2 eta, ..., 2 pi - eta}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AngleGrid {
    count: usize,
}

impl AngleGrid {
    /// `eta` must divide `2 pi` (to within 1e-9 relative).
    pub fn from_spacing(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= TAU) {
            return Err(invalid(format!("angle spacing {eta} not in (0, 2 pi]")));
        }
        let count = (TAU / eta).round();
        if ((TAU / eta) - count).abs() > 1e-9 * count.max(1.0) {
            return Err(invalid(format!("angle spacing {eta} does not divide 2 pi")));
        }
        Ok(Self { count: count as usize })
    }

    pub fn with_count(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(invalid("angle grid needs at least one direction"));
        }
        Ok(Self { count })
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.count
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    #[must_use]
    pub fn spacing(&self) -> f64 {
        TAU / self.count as f64
    }

    #[must_use]
    pub fn angle(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    #[must_use]
    pub fn angles(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.angle(i)).collect()
    }

    /// Index of the grid angle closest to `theta` on the circle.
    #[must_use]
    pub fn nearest(&self, theta: f64) -> usize {
        let t = theta.rem_euclid(TAU) / self.spacing();
        (t.round() as usize) % self.count
    }
}

/// `PT(z, z + step * (cos theta, sin theta)) / step`.
pub fn gradient(env: &EnvironmentGrid, z: RealPoint, theta: f64, step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(invalid("gradient step must be positive"));
    }
    Ok(pt_real(env, z, z.add(RealPoint::polar(step, theta)))? / step)
}

/// Check the two-sided stability inequalities given `times[k'-1] =
/// PT(z, z + k' step theta)` for `k' = 1..=k`.
#[must_use]
pub fn stable_profile(times: &[f64], delta: f64) -> bool {
    let Some(&base) = times.first() else { return true };
    times.iter().enumerate().all(|(i, &t)| {
        let kk = (i + 1) as f64;
        kk * base / (1.0 + delta) <= t && t <= (1.0 + delta) * kk * base
    })
}

/// Smallest `delta` for which [`stable_profile`] accepts `times`.
#[must_use]
pub fn required_delta(times: &[f64]) -> f64 {
    let Some(&base) = times.first() else { return 0.0 };
    times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let linear = (i + 1) as f64 * base;
            (t / linear).max(linear / t) - 1.0
        })
        .fold(0.0, f64::max)
}

/// Stability of the interior points of a line from its piece times alone.
///
/// `pieces[i]` is the passage time over the `i`-th unit step of a line on
/// which passage times add up. Returns, for every start `i` with `k` steps
/// to spare, the smallest `delta` making the point `(delta, k)`-stable.
#[must_use]
pub fn interior_deltas(pieces: &[f64], k: usize) -> Vec<f64> {
    if k == 0 || pieces.len() < k {
        return Vec::new();
    }
    (0..=pieces.len() - k)
        .map(|i| {
            let mut acc = 0.0;
            let times: Vec<f64> = pieces[i..i + k].iter().map(|p| { acc += p; acc }).collect();
            required_delta(&times)
        })
        .collect()
}

/// Whether `z` is stable in direction `theta` at step `step` up to `k`
/// multiples. One search per call.
pub fn is_stable_point(env: &EnvironmentGrid, z: RealPoint, theta: f64, step: f64, k: usize, delta: f64) -> Result<bool> {
    let times: Vec<f64> = (1..=k)
        .map(|kk| pt_real(env, z, z.add(RealPoint::polar(step * kk as f64, theta))))
        .collect::<Result<_>>()?;
    Ok(stable_profile(&times, delta))
}

/// `times[a][k'-1]` for every grid angle `a`, from a single search.
pub fn point_profile(env: &EnvironmentGrid, z: RealPoint, angles: &[f64], step: f64, k: usize) -> Result<Vec<Vec<f64>>> {
    let mut targets = Vec::with_capacity(angles.len() * k);
    for &theta in angles {
        for kk in 1..=k {
            targets.push(z.add(RealPoint::polar(step * kk as f64, theta)).round());
        }
    }
    let d = distances_exact(env, z.round(), &targets, None)?;
    Ok(d.chunks(k).map(|c| c.iter().map(|t| t.to_f64()).collect()).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityParams {
    pub delta: f64,
    /// Angle spacing; must divide `2 pi`.
    pub eta: f64,
    pub step: f64,
    pub k: usize,
    /// Tolerated unstable fraction inside a stable tile.
    pub epsilon: f64,
}

impl StabilityParams {
    pub fn validate(&self) -> Result<AngleGrid> {
        if !(self.delta > 0.0) || self.k == 0 || !(self.step > 0.0) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid(format!("bad stability parameters {self:?}")));
        }
        AngleGrid::from_spacing(self.eta)
    }
}

/// Stable in every direction of the angle grid.
pub fn is_stable_all(env: &EnvironmentGrid, z: RealPoint, params: &StabilityParams) -> Result<bool> {
    let angles = params.validate()?.angles();
    Ok(point_profile(env, z, &angles, params.step, params.k)?.iter().all(|t| stable_profile(t, params.delta)))
}

/// Over the directions in which `z` is stable, count ordered pairs of
/// lengths among `k step / 4`, `k step / 2`, `k step` whose gradients differ
/// by more than a factor `1 + c0 (eta + delta + 1/k)`.
pub fn gradient_ratio_violations(env: &EnvironmentGrid, z: RealPoint, params: &StabilityParams, c0: f64) -> Result<usize> {
    let angles = params.validate()?;
    let slack = c0 * (angles.spacing() + params.delta + 1.0 / params.k as f64);
    let reach = params.k as f64 * params.step;
    let profiles = point_profile(env, z, &angles.angles(), params.step, params.k)?;
    let mut violations = 0;
    for (theta, times) in angles.angles().into_iter().zip(profiles) {
        if !stable_profile(&times, params.delta) {
            continue;
        }
        let g: Vec<f64> =
            [reach / 4.0, reach / 2.0, reach].iter().map(|&l| gradient(env, z, theta, l)).collect::<Result<_>>()?;
        for a in &g {
            for b in &g {
                let r = a / b;
                if r > 1.0 + slack || r < 1.0 / (1.0 + slack) {
                    violations += 1;
                }
            }
        }
    }
    Ok(violations)
}

/// Partition of `Box(n) = [-n, n]^2` into `2^scale x 2^scale` tiles,
/// indexed `v in [1, 2^scale]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub n: i64,
    pub scale: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileBounds {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl TileGrid {
    pub fn new(n: i64, scale: u32) -> Result<Self> {
        if n < 1 || scale > 30 {
            return Err(invalid(format!("bad tile grid n={n}, scale={scale}")));
        }
        Ok(Self { n, scale })
    }

    #[must_use]
    pub fn per_axis(&self) -> u32 {
        1 << self.scale
    }

    #[must_use]
    pub fn side(&self) -> f64 {
        2.0 * self.n as f64 / f64::from(self.per_axis())
    }

    #[must_use]
    pub fn bounds(&self, v: [u32; 2]) -> TileBounds {
        let s = self.side();
        let lo = -(self.n as f64);
        TileBounds {
            x_lo: lo + f64::from(v[0] - 1) * s,
            x_hi: lo + f64::from(v[0]) * s,
            y_lo: lo + f64::from(v[1] - 1) * s,
            y_hi: lo + f64::from(v[1]) * s,
        }
    }

    #[must_use]
    pub fn center(&self, v: [u32; 2]) -> RealPoint {
        let b = self.bounds(v);
        RealPoint::new(0.5 * (b.x_lo + b.x_hi), 0.5 * (b.y_lo + b.y_hi))
    }

    fn axis_index(&self, c: i64) -> u32 {
        let i = ((c + self.n) as f64 / self.side()).floor() as i64;
        i.clamp(0, i64::from(self.per_axis()) - 1) as u32 + 1
    }

    /// Tile owning a lattice point of `L-Box(n)`; tiles are half-open
    /// except along the top and right edges of the box.
    pub fn tile_of(&self, p: Point) -> Result<[u32; 2]> {
        if !Rect::centered(self.n).contains(p) {
            return Err(Error::OutOfBounds(format!("{p:?} outside L-Box({})", self.n)));
        }
        Ok([self.axis_index(p.x), self.axis_index(p.y)])
    }

    fn axis_range(&self, i: u32) -> (i64, i64) {
        let s = self.side();
        let lo = -(self.n as f64) + f64::from(i - 1) * s;
        let first = lo.ceil() as i64;
        let last = if i == self.per_axis() { self.n } else { (lo + s).ceil() as i64 - 1 };
        (first, last)
    }

    /// Lattice points owned by tile `v`, row-major.
    #[must_use]
    pub fn lattice_points(&self, v: [u32; 2]) -> Vec<Point> {
        let (x0, x1) = self.axis_range(v[0]);
        let (y0, y1) = self.axis_range(v[1]);
        Rect::new(x0, x1, y0, y1).points().collect()
    }

    pub fn tiles(&self) -> impl Iterator<Item = [u32; 2]> {
        let m = self.per_axis();
        (1..=m).flat_map(move |b| (1..=m).map(move |a| [a, b]))
    }
}

/// Verdict for one tile: the fraction of (sampled) points that are stable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileVerdict {
    pub v: [u32; 2],
    pub fraction: f64,
    pub stable: bool,
}

fn check_reach(env: &EnvironmentGrid, pts: &[Point], reach: f64) -> Result<()> {
    let r = reach.ceil() as i64 + 1;
    let bounds = env.bounds();
    for p in pts {
        let outer = Rect::new(p.x - r, p.x + r, p.y - r, p.y + r);
        if !bounds.contains_rect(&outer) {
            return Err(Error::OutOfBounds(format!(
                "segments of length {reach} from {p:?} leave L-Box({})",
                env.halfwidth()
            )));
        }
    }
    Ok(())
}

fn stable_fraction(env: &EnvironmentGrid, pts: &[Point], params: &StabilityParams, angles: &[f64]) -> Result<f64> {
    check_reach(env, pts, params.step * params.k as f64)?;
    let stable = pts
        .par_iter()
        .map(|p| {
            point_profile(env, p.to_real(), angles, params.step, params.k)
                .map(|prof| prof.iter().all(|t| stable_profile(t, params.delta)))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(stable.iter().filter(|s| **s).count() as f64 / pts.len().max(1) as f64)
}

/// Exhaustive stability verdict for one tile.
pub fn tile_stability(env: &EnvironmentGrid, grid: &TileGrid, v: [u32; 2], params: &StabilityParams) -> Result<TileVerdict> {
    let angles = params.validate()?.angles();
    let pts = grid.lattice_points(v);
    let fraction = stable_fraction(env, &pts, params, &angles)?;
    Ok(TileVerdict { v, fraction, stable: fraction >= 1.0 - params.epsilon })
}

/// Gradient at the tile centre.
pub fn tile_gradient(env: &EnvironmentGrid, grid: &TileGrid, v: [u32; 2], theta: f64, step: f64) -> Result<f64> {
    gradient(env, grid.center(v), theta, step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEntry {
    pub v: [u32; 2],
    pub theta: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Half-width of the scanned box.
    pub n: i64,
    pub j_min: u32,
    pub j_max: u32,
    /// Levels are `2^m`-ary: level `j` uses steps `n / 2^(j m)`.
    pub m: u32,
    pub delta3: f64,
    /// `step` is ignored; every level sets its own.
    pub params: StabilityParams,
    pub lines_per_direction: usize,
    pub points_per_tile: usize,
    pub alpha_hat: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanDiagnostics {
    #[serde(rename = "U")]
    pub level_sums: Vec<f64>,
    pub window: Option<[u32; 2]>,
    pub levels: Vec<u32>,
    pub steps: Vec<f64>,
    pub ratios: Vec<f64>,
    pub unstable_fractions: Vec<Option<f64>>,
    pub rounding_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub scale: u32,
    pub unstable_fraction: f64,
    pub tiles: Vec<TileVerdict>,
    pub gradients: Vec<GradientEntry>,
    pub scan: ScanDiagnostics,
}

impl StabilityReport {
    /// Tiles that failed the stability threshold.
    #[must_use]
    pub fn unstable_set(&self) -> Vec<[u32; 2]> {
        self.tiles.iter().filter(|t| !t.stable).map(|t| t.v).collect()
    }

    #[must_use]
    pub fn step(&self) -> f64 {
        let i = self.scan.levels.iter().position(|&j| j == self.scale).expect("scale is a level");
        self.scan.steps[i]
    }
}

impl ScanConfig {
    #[must_use]
    pub fn step(&self, j: u32) -> f64 {
        self.n as f64 / 2f64.powi((j * self.m) as i32)
    }

    fn validate(&self, env: &EnvironmentGrid) -> Result<AngleGrid> {
        let angles = AngleGrid::from_spacing(self.params.eta)?;
        if self.j_min > self.j_max || self.m == 0 || self.lines_per_direction == 0 || self.points_per_tile == 0 {
            return Err(invalid(format!("bad scan configuration {self:?}")));
        }
        if self.step(self.j_max) < 4.0 {
            return Err(invalid(format!("finest step {} below 4 lattice units", self.step(self.j_max))));
        }
        if !(self.params.delta > 0.0) || self.params.k == 0 || !(0.0..=1.0).contains(&self.params.epsilon) {
            return Err(invalid("bad stability parameters"));
        }
        let reach = (self.n as f64 + self.step(self.j_min) * self.params.k as f64).max(1.5 * self.n as f64);
        if (env.halfwidth() as f64) < reach + 2.0 {
            return Err(Error::OutOfBounds(format!(
                "scan needs half-width at least {}, grid has {}",
                (reach + 2.0).ceil(),
                env.halfwidth()
            )));
        }
        Ok(angles)
    }

    /// Start points of the parallel lines in direction `theta`. Each line
    /// has length `2n`, centred at a perpendicular offset in `[-n/2, n/2]`.
    fn line_starts(&self, theta: f64) -> Vec<RealPoint> {
        let n = self.n as f64;
        let lines = self.lines_per_direction;
        let dir = RealPoint::polar(1.0, theta);
        let perp = RealPoint::new(-dir.y, dir.x);
        (0..lines)
            .map(|i| {
                let o = -n / 2.0 + (i as f64 + 0.5) * n / lines as f64;
                perp.scale(o).sub(dir.scale(n))
            })
            .collect()
    }
}

/// `U_j`: sum over directions and lines of the segment passage times at
/// level `j`. Level `j+1` points refine level `j` points exactly, so the
/// sums are nondecreasing in `j`.
pub fn level_sum(env: &EnvironmentGrid, cfg: &ScanConfig, angles: &AngleGrid, j: u32) -> Result<ExactTime> {
    let step = cfg.step(j);
    let pieces = 2usize << (j * cfg.m);
    let jobs: Vec<(f64, RealPoint)> = angles
        .angles()
        .into_iter()
        .flat_map(|t| cfg.line_starts(t).into_iter().map(move |s| (t, s)))
        .collect();
    let sums = jobs
        .par_iter()
        .map(|&(theta, start)| {
            segment_points(start, theta, step, pieces)
                .windows(2)
                .map(|w| pt_real_exact(env, w[0], w[1]))
                .sum::<Result<ExactTime>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sums.into_iter().sum())
}

fn sample_tile_points(grid: &TileGrid, v: [u32; 2], count: usize, seed: u64) -> Vec<Point> {
    let pts = grid.lattice_points(v);
    if pts.len() <= count {
        return pts;
    }
    let index = u64::from(v[1]) * (1 << 31) + u64::from(v[0]);
    let mut rng = seed::derived_rng(seed, &format!("tile-points-{}", grid.scale), index);
    (0..count).map(|_| pts[rng.gen_range(0..pts.len())]).collect()
}

fn longest_window(levels: &[u32], ratios: &[f64], delta3: f64) -> Option<[u32; 2]> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < ratios.len() {
        if ratios[i] - 1.0 <= delta3 {
            let start = i;
            while i < ratios.len() && ratios[i] - 1.0 <= delta3 {
                i += 1;
            }
            if best.map_or(true, |(s, e)| i - start > e - s) {
                best = Some((start, i));
            }
        } else {
            i += 1;
        }
    }
    best.map(|(s, e)| [levels[s], levels[e]])
}

/// Multi-scale scan over levels `j_min..=j_max`.
///
/// Level sums pick a window of consecutive levels whose ratios are within
/// `1 + delta3`; inside the window (or over all levels if none qualifies)
/// per-point stability is sampled tile by tile and the level with the
/// smallest unstable fraction wins, ties to the smaller level.
pub fn scan_scales(env: &EnvironmentGrid, cfg: &ScanConfig) -> Result<StabilityReport> {
    let angles = cfg.validate(env)?;
    let levels: Vec<u32> = (cfg.j_min..=cfg.j_max).collect();
    let sums: Vec<ExactTime> = levels.iter().map(|&j| level_sum(env, cfg, &angles, j)).collect::<Result<_>>()?;
    let ratios: Vec<f64> = sums.windows(2).map(|w| w[1].to_f64() / w[0].to_f64()).collect();
    let window = longest_window(&levels, &ratios, cfg.delta3);
    let candidates: Vec<u32> = match window {
        Some([lo, hi]) => (lo..=hi).collect(),
        None => levels.clone(),
    };
    let angle_list = angles.angles();
    let mut per_level: Vec<Option<f64>> = vec![None; levels.len()];
    let mut best: Option<(u32, f64, Vec<TileVerdict>)> = None;
    for &j in &candidates {
        let grid = TileGrid::new(cfg.n, j * cfg.m)?;
        let params = StabilityParams { step: cfg.step(j), ..cfg.params };
        let mut verdicts = Vec::new();
        let mut unstable = 0.0;
        let mut total = 0.0;
        for v in grid.tiles() {
            let pts = sample_tile_points(&grid, v, cfg.points_per_tile, cfg.seed);
            let frac = stable_fraction(env, &pts, &params, &angle_list)?;
            unstable += (1.0 - frac) * pts.len() as f64;
            total += pts.len() as f64;
            verdicts.push(TileVerdict { v, fraction: frac, stable: frac >= 1.0 - cfg.params.epsilon });
        }
        let fraction = unstable / total;
        per_level[(j - cfg.j_min) as usize] = Some(fraction);
        if best.as_ref().map_or(true, |(_, f, _)| fraction < *f) {
            best = Some((j, fraction, verdicts));
        }
    }
    let (scale, unstable_fraction, tiles) = best.expect("at least one candidate level");
    let grid = TileGrid::new(cfg.n, scale * cfg.m)?;
    let step = cfg.step(scale);
    let gradients = tiles
        .iter()
        .filter(|t| t.stable)
        .map(|t| {
            let c = grid.center(t.v);
            let targets: Vec<Point> = angle_list.iter().map(|&th| c.add(RealPoint::polar(step, th)).round()).collect();
            let d = distances_exact(env, c.round(), &targets, None)?;
            Ok(angle_list
                .iter()
                .zip(d)
                .map(|(&theta, pt)| GradientEntry { v: t.v, theta, value: pt.to_f64() / step })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(StabilityReport {
        scale,
        unstable_fraction,
        tiles,
        gradients,
        scan: ScanDiagnostics {
            level_sums: sums.iter().map(|s| s.to_f64()).collect(),
            window,
            steps: levels.iter().map(|&j| cfg.step(j)).collect(),
            levels,
            ratios,
            unstable_fractions: per_level,
            rounding_floor: 2.0 * env.b() / (cfg.alpha_hat * step),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_grid_counts() {
        assert_eq!(AngleGrid::from_spacing(std::f64::consts::PI / 8.0).unwrap().len(), 16);
        assert!(AngleGrid::from_spacing(1.0).is_err());
        let g = AngleGrid::with_count(4).unwrap();
        assert_eq!(g.nearest(-0.1), 0);
        assert_eq!(g.nearest(3.0), 2);
    }

    #[test]
    fn gradient_on_constant_grid() {
        let env = EnvironmentGrid::constant(10, 1.0, 1.0).unwrap();
        let z = RealPoint::new(0.0, 0.0);
        assert_eq!(gradient(&env, z, 0.0, 4.0).unwrap(), 1.0);
        let g = gradient(&env, z, std::f64::consts::FRAC_PI_4, 2.0 * 2f64.sqrt()).unwrap();
        assert!((g - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn profile_and_required_delta_agree() {
        let times = [1.0, 2.3, 2.9];
        let d = required_delta(&times);
        assert!(stable_profile(&times, d + 1e-12));
        assert!(!stable_profile(&times, d - 1e-6));
        assert!(stable_profile(&[5.0], 0.0));
    }

    #[test]
    fn tiles_round_trip() {
        let grid = TileGrid::new(16, 2).unwrap();
        for v in grid.tiles() {
            for p in grid.lattice_points(v) {
                assert_eq!(grid.tile_of(p).unwrap(), v);
            }
        }
        let count: usize = grid.tiles().map(|v| grid.lattice_points(v).len()).sum();
        assert_eq!(count, 33 * 33);
    }

    #[test]
    fn constant_pieces_are_exactly_stable() {
        assert!(interior_deltas(&[0.5; 12], 4).iter().all(|&d| d == 0.0));
    }
}
