//! Image-source room impulse responses and gridless recovery of the
//! image-source point cloud from multichannel recordings.
//!
//! The crate covers the forward problem (cuboid rooms, image sources, filtered
//! and sampled observations), the convex recovery problem over nonnegative
//! measures solved by a Frank-Wolfe scheme with a final sliding step, the
//! certificate and existence diagnostics, and an evaluation harness.

// Negated float comparisons such as `!(x > 0.0)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod kernels;
pub mod lasso;
pub mod optim;
pub mod solver;

pub use error::{Error, Result};
