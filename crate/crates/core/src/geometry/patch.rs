use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fps, knn, midpoint_interpolate, norm, scale, sub, add, Point3, PointCloud};
use crate::error::{Error, Result};

/// Maps a patch into local coordinates: `(p - centroid) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationTransform {
    pub centroid: Point3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn new(centroid: Point3, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || centroid.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid(format!(
                "normalization needs a finite centroid and positive scale, got scale {scale}"
            )));
        }
        Ok(Self { centroid, scale })
    }

    pub fn identity() -> Self {
        Self {
            centroid: [0.0; 3],
            scale: 1.0,
        }
    }

    /// Centroid of `reference`, scale = largest distance from it over `reference`
    /// and every cloud in `also_cover`.
    pub fn fit(reference: &PointCloud, also_cover: &[&PointCloud]) -> Self {
        let centroid = reference.centroid();
        let max_norm = std::iter::once(reference)
            .chain(also_cover.iter().copied())
            .flat_map(|c| c.points().iter())
            .map(|p| norm(sub(*p, centroid)))
            .fold(0.0, f64::max);
        let scale = if max_norm > 0.0 { max_norm } else { 1.0 };
        Self { centroid, scale }
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        scale(sub(p, self.centroid), 1.0 / self.scale)
    }

    pub fn invert_point(&self, p: Point3) -> Point3 {
        add(scale(p, self.scale), self.centroid)
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(cloud.points().iter().map(|&p| self.apply_point(p)).collect())
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points_unchecked(cloud.points().iter().map(|&p| self.invert_point(p)).collect())
    }
}

/// A registered training pair: the midpoint-densified sparse patch and the
/// dense patch, both in the dense patch's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub sparse: PointCloud,
    pub dense: PointCloud,
    pub transform: NormalizationTransform,
}

/// Cuts `num_patches` paired patches around FPS centroids of `dense`.
///
/// Each dense patch is the `q` nearest dense points to its centroid; the sparse
/// side takes the `q / rate` nearest sparse points and densifies them back to
/// `q` by midpoint interpolation. `seed` picks the FPS start point.
pub fn extract_patch_pairs(
    sparse: &PointCloud,
    dense: &PointCloud,
    q: usize,
    num_patches: usize,
    rate: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    if rate < 2 || q % rate != 0 {
        return Err(Error::invalid(format!(
            "patch size {q} must be a multiple of rate {rate} (rate >= 2)"
        )));
    }
    let sparse_q = q / rate;
    if sparse_q < 2 {
        return Err(Error::invalid(format!(
            "sparse patch of {sparse_q} points is too small to interpolate"
        )));
    }
    if dense.len() < q {
        return Err(Error::invalid(format!(
            "dense cloud has {} points, patch needs {q}",
            dense.len()
        )));
    }
    if sparse.len() < sparse_q {
        return Err(Error::invalid(format!(
            "sparse cloud has {} points, patch needs {sparse_q}",
            sparse.len()
        )));
    }
    if num_patches == 0 || num_patches > dense.len() {
        return Err(Error::invalid(format!(
            "cannot place {num_patches} patch centroids on {} points",
            dense.len()
        )));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).gen_range(0..dense.len());
    let centroids = fps(dense, num_patches, start)?;
    centroids
        .into_iter()
        .map(|c| {
            let center = dense.get(c);
            let dense_idx: Vec<usize> = knn(dense, center, q)?.into_iter().map(|n| n.index).collect();
            let sparse_idx: Vec<usize> =
                knn(sparse, center, sparse_q)?.into_iter().map(|n| n.index).collect();
            let dense_patch = dense.select(&dense_idx);
            let interp = midpoint_interpolate(&sparse.select(&sparse_idx), rate)?;
            let transform = NormalizationTransform::fit(&dense_patch, &[&interp]);
            Ok(PatchPair {
                sparse: transform.apply(&interp),
                dense: transform.apply(&dense_patch),
                transform,
            })
        })
        .collect()
}

/// Denormalizes and concatenates patches, then reduces to `target_count` by FPS.
pub fn assemble_patches(
    patches: &[(PointCloud, NormalizationTransform)],
    target_count: usize,
) -> Result<PointCloud> {
    let union: Vec<Point3> = patches
        .iter()
        .flat_map(|(cloud, tf)| cloud.points().iter().map(move |&p| tf.invert_point(p)))
        .collect();
    if union.len() < target_count || target_count == 0 {
        return Err(Error::invalid(format!(
            "patches hold {} points, cannot assemble {target_count}",
            union.len()
        )));
    }
    let union = PointCloud::new(union)?;
    if union.len() == target_count {
        return Ok(union);
    }
    let keep = fps(&union, target_count, 0)?;
    Ok(union.select(&keep))
}
