//! Point clouds and the spatial primitives built on them.

mod curvature;
mod patch;
mod sampling;

pub use curvature::{estimate_curvature, symmetric_eigenvalues, CurvatureResult, DEGENERACY_FLOOR};
pub use patch::{assemble_patches, extract_patch_pairs, NormalizationTransform, PatchPair};
pub use sampling::{fps, knn, midpoint_interpolate, Neighbor};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

#[inline]
pub fn dist(a: Point3, b: Point3) -> f64 {
    dist2(a, b).sqrt()
}

/// An ordered set of 3-D points with finite coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    /// Builds a cloud, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `[x0, y0, z0, x1, ...]` buffer.
    pub fn from_flat(xyz: &[f64]) -> Result<Self> {
        if xyz.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                xyz.len()
            )));
        }
        Self::new(xyz.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    /// Callers guarantee finiteness (internal arithmetic on finite inputs).
    pub(crate) fn from_points_unchecked(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    pub fn get(&self, i: usize) -> Point3 {
        self.points[i]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn select(&self, indices: &[usize]) -> PointCloud {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len().max(1) as f64;
        let s = self
            .points
            .iter()
            .fold([0.0; 3], |acc, &p| add(acc, p));
        scale(s, 1.0 / n)
    }

    pub(crate) fn require_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid(format!("{what} must contain at least one point")))
        } else {
            Ok(())
        }
    }
}

impl From<PointCloud> for Vec<Point3> {
    fn from(c: PointCloud) -> Self {
        c.points
    }
}
