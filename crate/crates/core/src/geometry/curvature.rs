use super::{knn, sub, PointCloud};
use crate::error::{Error, Result};

/// Eigenvalue sums below this are treated as a degenerate neighbourhood (κ = 0).
pub const DEGENERACY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct CurvatureResult {
    /// Per-point surface variation `λ1 / (λ1 + λ2 + λ3)`, in `[0, 1/3]`.
    pub kappa: Vec<f64>,
    /// Per-point covariance eigenvalues, ascending and clamped at zero.
    pub eigenvalues: Vec<[f64; 3]>,
}

/// Eigenvalues of a symmetric 3x3 matrix in ascending order, clamped at 0.
///
/// Closed-form trigonometric solution of the characteristic cubic.
pub fn symmetric_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let mut ev = if p1 == 0.0 {
        [m[0][0], m[1][1], m[2][2]]
    } else {
        let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
        let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = m;
        for (i, row) in b.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= p;
            }
            row[i] -= q / p;
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let largest = q + 2.0 * p * phi.cos();
        let smallest = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [smallest, 3.0 * q - largest - smallest, largest]
    };
    ev.sort_by(f64::total_cmp);
    ev.map(|v| v.max(0.0))
}

/// Covariance of the `k` nearest neighbours (query point included) about their mean.
pub(crate) fn neighborhood_covariance(cloud: &PointCloud, i: usize, k: usize) -> Result<[[f64; 3]; 3]> {
    let nbrs = knn(cloud, cloud.get(i), k)?;
    let mut mean = [0.0; 3];
    for nb in &nbrs {
        let p = cloud.get(nb.index);
        for d in 0..3 {
            mean[d] += p[d];
        }
    }
    for m in &mut mean {
        *m /= k as f64;
    }
    let mut cov = [[0.0; 3]; 3];
    for nb in &nbrs {
        let d = sub(cloud.get(nb.index), mean);
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= k as f64;
        }
    }
    Ok(cov)
}

/// Per-point curvature score from the local covariance spectrum.
pub fn estimate_curvature(cloud: &PointCloud, k: usize) -> Result<CurvatureResult> {
    if k < 3 {
        return Err(Error::invalid(format!("curvature neighbourhood k = {k} must be at least 3")));
    }
    if k > cloud.len() {
        return Err(Error::invalid(format!(
            "curvature neighbourhood k = {k} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let mut kappa = Vec::with_capacity(cloud.len());
    let mut eigenvalues = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let ev = symmetric_eigenvalues(neighborhood_covariance(cloud, i, k)?);
        let sum: f64 = ev.iter().sum();
        kappa.push(if sum < DEGENERACY_FLOOR { 0.0 } else { ev[0] / sum });
        eigenvalues.push(ev);
    }
    Ok(CurvatureResult { kappa, eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Roots of det(C - λI) by bisection on sign changes of the characteristic
    /// cubic, independent of the trigonometric solver.
    fn charpoly_eigenvalues(m: [[f64; 3]; 3]) -> [f64; 3] {
        let tr = m[0][0] + m[1][1] + m[2][2];
        let c2 = m[0][0] * m[1][1] + m[0][0] * m[2][2] + m[1][1] * m[2][2]
            - m[0][1] * m[1][0]
            - m[0][2] * m[2][0]
            - m[1][2] * m[2][1];
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        let f = |l: f64| -l * l * l + tr * l * l - c2 * l + det;
        let bound = m.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
        let steps = 200_000;
        let mut roots = Vec::new();
        let mut prev_x = -bound;
        let mut prev_f = f(prev_x);
        for s in 1..=steps {
            let x = -bound + 2.0 * bound * s as f64 / steps as f64;
            let fx = f(x);
            if fx == 0.0 {
                roots.push(x);
            } else if prev_f.signum() != fx.signum() && prev_f != 0.0 {
                let (mut lo, mut hi) = (prev_x, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid).signum() == f(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev_f = fx;
        }
        assert_eq!(roots.len(), 3, "expected three distinct roots");
        [roots[0], roots[1], roots[2]]
    }

    fn cloud(pts: Vec<Point3>) -> PointCloud {
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn planar_cloud_has_zero_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cloud((0..60).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0]).collect());
        let r = estimate_curvature(&c, 10).unwrap();
        assert!(r.kappa.iter().all(|&k| k.abs() <= 1e-9));
    }

    #[test]
    fn octahedral_neighbourhood_is_isotropic() {
        let c = cloud(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]);
        let r = estimate_curvature(&c, 6).unwrap();
        for k in r.kappa {
            assert!((k - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flattened_neighbourhood_matches_charpoly_oracle() {
        let c = cloud(vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 0.1],
            [0.0, 0.0, -0.1],
        ]);
        let r = estimate_curvature(&c, 6).unwrap();
        let cov = neighborhood_covariance(&c, 4, 6).unwrap();
        // Diagonal covariance: the characteristic polynomial factors directly.
        let diag = [[1.0 / 3.0, 0.0, 0.0], [0.0, 1.0 / 3.0, 0.0], [0.0, 0.0, 0.02 / 6.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov[i][j] - diag[i][j]).abs() < 1e-15);
            }
        }
        let expected = (0.02 / 6.0) / (2.0 / 3.0 + 0.02 / 6.0);
        assert!((r.kappa[4] - expected).abs() < 1e-12);
        assert!((r.kappa[4] - 0.004975124378109453).abs() < 1e-12);
    }

    #[test]
    fn trig_solver_matches_charpoly_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a: [[f64; 3]; 3] = std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            // A Aᵀ is symmetric positive semidefinite.
            let m: [[f64; 3]; 3] = std::array::from_fn(|i| {
                std::array::from_fn(|j| (0..3).map(|k| a[i][k] * a[j][k]).sum())
            });
            let got = symmetric_eigenvalues(m);
            let want = charpoly_eigenvalues(m);
            for k in 0..3 {
                assert!((got[k] - want[k]).abs() < 1e-9, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let c = cloud(vec![[0.5, 0.5, 0.5]; 5]);
        let r = estimate_curvature(&c, 4).unwrap();
        assert!(r.kappa.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn small_k_rejected() {
        let c = cloud(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(estimate_curvature(&c, 2).is_err());
        assert!(estimate_curvature(&c, 4).is_err());
    }

    fn rotation(rng: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
        let (a, b, c): (f64, f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
        let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
        let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
        let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
        let mul = |x: [[f64; 3]; 3], y: [[f64; 3]; 3]| -> [[f64; 3]; 3] {
            std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| x[i][k] * y[k][j]).sum()))
        };
        mul(rz, mul(ry, rx))
    }

    proptest! {
        #[test]
        fn invariant_under_rigid_motion_and_scaling(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = cloud((0..40).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3)]).collect());
            let r = rotation(&mut rng);
            let t = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let s = rng.gen_range(0.1..10.0);
            let moved = cloud(c.points().iter().map(|p| {
                std::array::from_fn(|i| s * (r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2]) + t[i])
            }).collect());
            let k0 = estimate_curvature(&c, 8).unwrap().kappa;
            let k1 = estimate_curvature(&moved, 8).unwrap().kappa;
            for (a, b) in k0.iter().zip(&k1) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(*a >= 0.0 && *a <= 1.0 / 3.0 + 1e-15);
            }
        }
    }
}
