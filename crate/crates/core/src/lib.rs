//! Numerical laboratory for reflected stochastic Burgers-type equations on `[0, 1]`.
//!
//! - [`grid`]: spatial grid, time mesh, discrete norms and path distances
//! - [`noise`]: seeded Brownian increments
//! - [`coefficients`]: coefficient sets, builtin families, averaging, audits
//! - [`solver`]: semi-implicit scheme with projection or penalty reflection
//! - [`ratefn`]: rate function by control optimization, level-set probes
//! - [`ldp`]: rare-event Monte Carlo and small-noise convergence probes
//! - [`averaging`]: averaging-principle experiments and diagnostics
//! - [`export`]: CSV and binary path dumps

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod averaging;
pub mod coefficients;
pub mod error;
pub mod export;
pub mod grid;
pub mod ldp;
pub mod noise;
pub mod parallel;
pub mod ratefn;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Field, PathDistance, SpatialGrid, TimeMesh};
pub use noise::NoisePath;
pub use solver::{Control, ReflectedPath, SchemeConfig};
