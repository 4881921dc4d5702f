//! Point-cloud upsampling by conditional flow matching.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – point clouds, FPS / kNN queries, midpoint densification,
//!   patch extraction and covariance curvature.
//! * [`transport`] – auction and Hungarian assignment used to pre-align
//!   sparse/dense training pairs.
//! * [`metrics`] – Chamfer, Hausdorff, point-to-surface and voxel JSD.
//! * [`nn`] – a small reverse-mode autodiff tape with the layers the velocity
//!   models need, plus Adam.
//! * [`model`] – the velocity estimators (a PointNet-style MLP field and a
//!   recurrent interface network with latent tokens).
//! * [`flow`] – two-stage training (pre-aligned flow matching, endpoint
//!   Chamfer refinement) and loss profiling.
//! * [`scheduler`] – the loss-driven inference time schedule.
//! * [`sampler`] – Euler integration with curvature weights and manifold
//!   back-projection.
//! * [`io`], [`config`], [`toy`], [`pipeline`] – files, configuration,
//!   synthetic data and the commands behind the `pufm` binary.

pub mod config;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod scheduler;
pub mod toy;
pub mod transport;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud};
