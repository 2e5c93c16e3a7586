//! First-passage percolation on the square lattice.
//!
//! The crate is organised bottom-up: [`model`] and [`grid`] hold weight laws
//! and sampled environments, [`geodesic`] computes passage times, and the
//! remaining modules build stability scans, projections, dilated
//! environments, path surgery and tail estimators on top of them.

pub mod conditioning;
pub mod dilation;
pub mod error;
pub mod estimator;
pub mod geodesic;
pub mod geometry;
pub mod grid;
pub mod model;
pub mod paths;
pub mod projection;
pub mod seed;
pub mod stability;

pub use error::{Error, Result};
pub use geometry::{Axis, Edge, Point, RealPoint, Rect};
pub use grid::EnvironmentGrid;
pub use model::WeightModel;
