//! Geometry of contrastive learning on the unit hypersphere.
//!
//! Embedding pairs `(u_i, v_i)` are optimized directly as free unit vectors.
//! The crate provides:
//!
//! - [`geometry`]: embedding sets, simplex ETF construction, similarity statistics.
//! - [`loss`]: InfoNCE-shaped and independently additive loss families with
//!   analytic gradients, plus the negative-pair variance penalty (VRNS).
//! - [`optimizer`]: projected gradient descent on the sphere under full-batch
//!   and fixed mini-batch objectives.
//! - [`analysis`]: numerical checks of optimal similarities, variance bounds,
//!   inequality lemmas and gradient monotonicity.
//!
//! The crate is `no_std` and only needs `alloc`.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
mod error;
pub mod geometry;
pub mod loss;
mod math;
pub mod matrix;
pub mod optimizer;

pub use error::{Error, Result};
pub use geometry::{EmbeddingSet, SimilarityStats};
pub use loss::{GradPair, LossFamily, LossSpec};
pub use matrix::Matrix;
pub use optimizer::{BatchPartition, OptimizerConfig, TrajectoryRecord};
