//! Evaluation metrics between point clouds and against reference meshes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, cross, dist2, dot, norm, scale, sub, Point3, PointCloud};

/// Default voxel grid resolution per axis for [`jsd`].
pub const DEFAULT_JSD_RESOLUTION: usize = 32;

/// Face area below which a triangle is treated as degenerate.
const DEGENERATE_AREA: f64 = 1e-15;

/// For every point of `from`, the index of and squared distance to its nearest
/// point of `to` (lowest index on ties).
pub fn nearest_neighbors(from: &PointCloud, to: &PointCloud) -> Vec<(usize, f64)> {
    from.points()
        .iter()
        .map(|&p| {
            let mut best = (0usize, f64::INFINITY);
            for (j, &q) in to.points().iter().enumerate() {
                let d = dist2(p, q);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

fn require_pair(a: &PointCloud, b: &PointCloud) -> Result<()> {
    a.require_nonempty("first cloud")?;
    b.require_nonempty("second cloud")
}

/// Symmetric Chamfer distance on squared nearest-neighbour distances, each
/// direction averaged over its source cloud.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    require_pair(a, b)?;
    let ab: f64 = nearest_neighbors(a, b).iter().map(|x| x.1).sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_neighbors(b, a).iter().map(|x| x.1).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Symmetric Hausdorff distance (unsquared).
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    require_pair(a, b)?;
    let worst = |x: &PointCloud, y: &PointCloud| {
        nearest_neighbors(x, y).iter().map(|v| v.1).fold(0.0, f64::max)
    };
    Ok(worst(a, b).max(worst(b, a)).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::invalid("mesh vertex has a non-finite coordinate"));
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        Ok(Self { vertices, faces })
    }

    fn corners(&self, f: &[usize; 3]) -> [Point3; 3] {
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn is_degenerate(&self, f: &[usize; 3]) -> bool {
        let [a, b, c] = self.corners(f);
        0.5 * norm(cross(sub(b, a), sub(c, a))) < DEGENERATE_AREA
    }

    /// Corners of the faces that take part in distance queries.
    pub fn valid_triangles(&self) -> Vec<[Point3; 3]> {
        self.faces
            .iter()
            .filter(|f| !self.is_degenerate(f))
            .map(|f| self.corners(f))
            .collect()
    }
}

/// Closest point on triangle `abc` to `p`, by Voronoi-region classification.
pub fn closest_point_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return add(a, scale(ab, d1 / (d1 - d3)));
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return add(a, scale(ac, d2 / (d2 - d6)));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return add(b, scale(sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6))));
    }
    let denom = 1.0 / (va + vb + vc);
    add(a, add(scale(ab, vb * denom), scale(ac, vc * denom)))
}

pub fn point_triangle_distance(p: Point3, tri: &[Point3; 3]) -> f64 {
    dist2(p, closest_point_on_triangle(p, tri[0], tri[1], tri[2])).sqrt()
}

/// Mean point-to-surface distance over `points`.
pub fn p2f(points: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    points.require_nonempty("point cloud")?;
    let tris = mesh.valid_triangles();
    if tris.is_empty() {
        return Err(Error::invalid("mesh has no non-degenerate faces"));
    }
    let total: f64 = points
        .points()
        .iter()
        .map(|&p| {
            tris.iter()
                .map(|t| point_triangle_distance(p, t))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / points.len() as f64)
}

/// Occupancy histogram on a uniform `resolution^3` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelHistogram {
    pub resolution: usize,
    pub bbox_min: Point3,
    pub bbox_max: Point3,
    /// Cell masses in x-major order, summing to 1.
    pub masses: Vec<f64>,
}

impl VoxelHistogram {
    pub fn build(cloud: &PointCloud, resolution: usize, bbox_min: Point3, bbox_max: Point3) -> Result<Self> {
        cloud.require_nonempty("point cloud")?;
        if resolution == 0 {
            return Err(Error::invalid("voxel resolution must be at least 1"));
        }
        let cells = resolution
            .checked_pow(3)
            .ok_or_else(|| Error::invalid(format!("voxel resolution {resolution} is too large")))?;
        let mut masses = vec![0.0; cells];
        let w = 1.0 / cloud.len() as f64;
        for p in cloud.points() {
            let mut idx = 0usize;
            for d in 0..3 {
                let extent = bbox_max[d] - bbox_min[d];
                let cell = if extent > 0.0 {
                    (((p[d] - bbox_min[d]) / extent) * resolution as f64).floor() as isize
                } else {
                    0
                };
                idx = idx * resolution + cell.clamp(0, resolution as isize - 1) as usize;
            }
            masses[idx] += w;
        }
        Ok(Self {
            resolution,
            bbox_min,
            bbox_max,
            masses,
        })
    }
}

fn joint_bbox(a: &PointCloud, b: &PointCloud) -> (Point3, Point3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in a.points().iter().chain(b.points()) {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

/// Jensen–Shannon divergence (nats) between two discrete distributions.
pub fn jsd_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::invalid("distributions must have the same support size"));
    }
    let kl_to_mid = |x: f64, m: f64| if x > 0.0 { x * (x / m).ln() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        total += 0.5 * kl_to_mid(a, m) + 0.5 * kl_to_mid(b, m);
    }
    Ok(total.clamp(0.0, std::f64::consts::LN_2))
}

/// Voxel-occupancy JSD on the joint bounding box of both clouds.
pub fn jsd(a: &PointCloud, b: &PointCloud, resolution: usize) -> Result<f64> {
    require_pair(a, b)?;
    let (lo, hi) = joint_bbox(a, b);
    let p = VoxelHistogram::build(a, resolution, lo, hi)?;
    let q = VoxelHistogram::build(b, resolution, lo, hi)?;
    jsd_masses(&p.masses, &q.masses)
}
