//! Synthetic sparse/dense pairs sampled from analytic surfaces.
//!
//! Surfaces are oversampled uniformly by area, thinned to the dense count by
//! FPS, and the sparse cloud is an FPS subset of the dense one.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fps, norm, scale, Point3, PointCloud};

/// Oversampling factor before FPS thinning.
const OVERSAMPLE: usize = 4;

pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;
pub const RELIEF_AMPLITUDE: f64 = 0.15;
pub const RELIEF_FREQUENCY: f64 = 2.0 * PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// Unit sphere.
    Sphere,
    /// `z = a sin(w x) sin(w y)` over `[-1, 1]^2`.
    Relief,
    /// Ring torus around the z axis.
    Torus,
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "relief" | "plane" => Ok(Self::Relief),
            "torus" => Ok(Self::Torus),
            other => Err(Error::invalid(format!(
                "unknown shape '{other}' (expected sphere, relief or torus)"
            ))),
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sphere => "sphere",
            Self::Relief => "relief",
            Self::Torus => "torus",
        })
    }
}

impl Shape {
    /// Signed residual of the implicit surface equation at `p`.
    pub fn residual(&self, p: Point3) -> f64 {
        match self {
            Self::Sphere => norm(p) - 1.0,
            Self::Relief => p[2] - relief_height(p[0], p[1]),
            Self::Torus => {
                let q = (p[0] * p[0] + p[1] * p[1]).sqrt() - TORUS_MAJOR;
                (q * q + p[2] * p[2]).sqrt() - TORUS_MINOR
            }
        }
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Point3 {
        match self {
            Self::Sphere => loop {
                let v: Point3 = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n = norm(v);
                if n > 1e-9 {
                    break scale(v, 1.0 / n);
                }
            },
            Self::Relief => loop {
                // Rejection on the area element sqrt(1 + |grad h|^2).
                let (x, y) = (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0));
                let (hx, hy) = relief_gradient(x, y);
                let jac = (1.0 + hx * hx + hy * hy).sqrt();
                let max_jac = (1.0 + 2.0 * (RELIEF_AMPLITUDE * RELIEF_FREQUENCY).powi(2)).sqrt();
                if rng.gen::<f64>() * max_jac <= jac {
                    break [x, y, relief_height(x, y)];
                }
            },
            Self::Torus => loop {
                let u = rng.gen_range(0.0..2.0 * PI);
                let v: f64 = rng.gen_range(0.0..2.0 * PI);
                let w = (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR);
                if rng.gen::<f64>() <= w {
                    let r = TORUS_MAJOR + TORUS_MINOR * v.cos();
                    break [r * u.cos(), r * u.sin(), TORUS_MINOR * v.sin()];
                }
            },
        }
    }
}

fn relief_height(x: f64, y: f64) -> f64 {
    RELIEF_AMPLITUDE * (RELIEF_FREQUENCY * x).sin() * (RELIEF_FREQUENCY * y).sin()
}

fn relief_gradient(x: f64, y: f64) -> (f64, f64) {
    let (a, w) = (RELIEF_AMPLITUDE, RELIEF_FREQUENCY);
    (
        a * w * (w * x).cos() * (w * y).sin(),
        a * w * (w * x).sin() * (w * y).cos(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyPair {
    pub sparse: PointCloud,
    pub dense: PointCloud,
}

/// A dense cloud of `dense_points` and its FPS subset of `dense_points / rate`.
pub fn generate_pair(shape: Shape, dense_points: usize, rate: usize, seed: u64) -> Result<ToyPair> {
    if rate < 2 {
        return Err(Error::invalid(format!("rate must be at least 2, got {rate}")));
    }
    if dense_points < 2 * rate || dense_points % rate != 0 {
        return Err(Error::invalid(format!(
            "dense point count {dense_points} must be a multiple of the rate {rate} with at least two sparse points"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<Point3> = (0..dense_points * OVERSAMPLE).map(|_| shape.sample_point(&mut rng)).collect();
    let pool = PointCloud::new(pool)?;
    let dense = pool.select(&fps(&pool, dense_points, 0)?);
    let sparse = dense.select(&fps(&dense, dense_points / rate, 0)?);
    Ok(ToyPair { sparse, dense })
}
