//! Lattice points, real points, rectangles and edges.

use serde::{Deserialize, Serialize};

/// A vertex of Z^2. Derived ordering is lexicographic in `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: i64,
    pub y: i64,
}

impl Point {
    #[must_use]
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    #[must_use]
    pub fn l1(self, other: Point) -> i64 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    #[must_use]
    pub fn to_real(self) -> RealPoint {
        RealPoint::new(self.x as f64, self.y as f64)
    }

    /// Neighbours in a fixed order: left, right, down, up.
    #[must_use]
    pub fn neighbours(self) -> [Point; 4] {
        [
            Point::new(self.x - 1, self.y),
            Point::new(self.x + 1, self.y),
            Point::new(self.x, self.y - 1),
            Point::new(self.x, self.y + 1),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealPoint {
    pub x: f64,
    pub y: f64,
}

impl RealPoint {
    #[must_use]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[must_use]
    pub fn polar(length: f64, angle: f64) -> Self {
        Self::new(length * angle.cos(), length * angle.sin())
    }

    #[must_use]
    pub fn add(self, other: RealPoint) -> Self {
        Self::new(self.x + other.x, self.y + other.y)
    }

    #[must_use]
    pub fn sub(self, other: RealPoint) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }

    #[must_use]
    pub fn scale(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }

    #[must_use]
    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    #[must_use]
    pub fn dist(self, other: RealPoint) -> f64 {
        self.sub(other).norm()
    }

    /// Nearest lattice point. Each coordinate rounds half down, which picks
    /// the lexicographically smallest point among equidistant candidates.
    #[must_use]
    pub fn round(self) -> Point {
        Point::new(round_half_down(self.x), round_half_down(self.y))
    }
}

fn round_half_down(v: f64) -> i64 {
    (v - 0.5).ceil() as i64
}

/// Closed axis-aligned rectangle of lattice points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: i64,
    pub x_max: i64,
    pub y_min: i64,
    pub y_max: i64,
}

impl Rect {
    #[must_use]
    pub const fn new(x_min: i64, x_max: i64, y_min: i64, y_max: i64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    /// `[-r, r]^2`.
    #[must_use]
    pub const fn centered(r: i64) -> Self {
        Self::new(-r, r, -r, r)
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.x_min > self.x_max || self.y_min > self.y_max
    }

    #[must_use]
    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    #[must_use]
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.is_empty()
            || (other.x_min >= self.x_min
                && other.x_max <= self.x_max
                && other.y_min >= self.y_min
                && other.y_max <= self.y_max)
    }

    #[must_use]
    pub fn width(&self) -> i64 {
        self.x_max - self.x_min + 1
    }

    #[must_use]
    pub fn height(&self) -> i64 {
        self.y_max - self.y_min + 1
    }

    #[must_use]
    pub fn vertex_count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.width() * self.height()) as usize
        }
    }

    #[must_use]
    pub fn on_boundary(&self, p: Point) -> bool {
        self.contains(p)
            && (p.x == self.x_min || p.x == self.x_max || p.y == self.y_min || p.y == self.y_max)
    }

    /// Row-major iteration (y outer, x inner).
    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let r = *self;
        (r.y_min..=r.y_max).flat_map(move |y| (r.x_min..=r.x_max).map(move |x| Point::new(x, y)))
    }

    #[must_use]
    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }

    #[must_use]
    pub fn center(&self) -> RealPoint {
        RealPoint::new(
            (self.x_min + self.x_max) as f64 / 2.0,
            (self.y_min + self.y_max) as f64 / 2.0,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Nearest-neighbour edge, identified by its lower/left endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub origin: Point,
    pub axis: Axis,
}

impl Edge {
    #[must_use]
    pub const fn new(origin: Point, axis: Axis) -> Self {
        Self { origin, axis }
    }

    #[must_use]
    pub fn end(&self) -> Point {
        match self.axis {
            Axis::Horizontal => Point::new(self.origin.x + 1, self.origin.y),
            Axis::Vertical => Point::new(self.origin.x, self.origin.y + 1),
        }
    }

    /// The edge joining two adjacent points, if they are adjacent.
    #[must_use]
    pub fn between(a: Point, b: Point) -> Option<Edge> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if lo.y == hi.y && hi.x - lo.x == 1 {
            Some(Edge::new(lo, Axis::Horizontal))
        } else if lo.x == hi.x && hi.y - lo.y == 1 {
            Some(Edge::new(lo, Axis::Vertical))
        } else {
            None
        }
    }

    #[must_use]
    pub fn inside(&self, rect: &Rect) -> bool {
        rect.contains(self.origin) && rect.contains(self.end())
    }
}
