//! Euler integration of a learned velocity field over a [`TimeSchedule`], with
//! curvature-weighted steps and a manifold back-projection pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{add, dist, estimate_curvature, knn, midpoint_interpolate, scale, sub, Point3, PointCloud};
use crate::model::{LatentState, VelocityModel};
use crate::scheduler::TimeSchedule;

/// Gradients of the manifold distance are skipped below this separation.
pub const COINCIDENCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub alpha_cur: f64,
    pub alpha: f64,
    pub curvature_k: usize,
    pub manifold_k: usize,
    pub use_ats: bool,
    pub postprocess: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 6,
            alpha_cur: 0.1,
            alpha: 0.01,
            curvature_k: 16,
            manifold_k: 1,
            use_ats: true,
            postprocess: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        for (name, v) in [("alpha_cur", self.alpha_cur), ("alpha", self.alpha)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        if self.curvature_k < 3 {
            return Err(Error::invalid("curvature_k must be at least 3"));
        }
        if self.manifold_k == 0 {
            return Err(Error::invalid("manifold_k must be at least 1"));
        }
        Ok(())
    }
}

/// `x + delta * (w ⊙ v)` where `(v, z') = model(x, z, t)`.
pub fn euler_step<M: VelocityModel + ?Sized>(
    x: &PointCloud,
    t: f64,
    delta: f64,
    model: &M,
    z: &LatentState,
    weights: &[f64],
) -> Result<(PointCloud, LatentState)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("Euler step size must be positive, got {delta}")));
    }
    if weights.len() != x.len() {
        return Err(Error::invalid(format!("{} weights for {} points", weights.len(), x.len())));
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::invalid("Euler weights must be finite and positive"));
    }
    let (v, z_next) = model.evaluate(x, z, t)?;
    if v.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::numeric(format!("velocity is not finite at t = {t}")));
    }
    let pts = x
        .points()
        .iter()
        .zip(&v)
        .zip(weights)
        .map(|((&p, &vi), &w)| add(p, scale(vi, delta * w)))
        .collect();
    Ok((PointCloud::new(pts)?, z_next))
}

/// `w_i = 1 + alpha_cur * kappa_i`.
pub fn curvature_weights(x: &PointCloud, alpha_cur: f64, curvature_k: usize) -> Result<Vec<f64>> {
    if alpha_cur == 0.0 {
        return Ok(vec![1.0; x.len()]);
    }
    let c = estimate_curvature(x, curvature_k)?;
    Ok(c.kappa.iter().map(|k| 1.0 + alpha_cur * k).collect())
}

/// One gradient step of `sum_i mean_j |x_i - a_j|` over each point's
/// `manifold_k` nearest anchors.
pub fn manifold_postprocess(x: &PointCloud, anchor: &PointCloud, alpha: f64, manifold_k: usize) -> Result<PointCloud> {
    anchor.require_nonempty("manifold anchor")?;
    let k = manifold_k.min(anchor.len());
    if k == 0 {
        return Err(Error::invalid("manifold_k must be at least 1"));
    }
    let pts = x
        .points()
        .iter()
        .map(|&p| {
            let mut grad = [0.0; 3];
            for nb in knn(anchor, p, k)? {
                let a = anchor.get(nb.index);
                let d = dist(p, a);
                if d < COINCIDENCE_EPS {
                    continue;
                }
                grad = add(grad, scale(sub(p, a), 1.0 / (k as f64 * d)));
            }
            Ok(sub(p, scale(grad, alpha)))
        })
        .collect::<Result<Vec<Point3>>>()?;
    PointCloud::new(pts)
}

/// Integrates from `x0` across `schedule`, then optionally post-processes
/// against `x0`.
pub fn integrate<M: VelocityModel + ?Sized>(
    model: &M,
    x0: &PointCloud,
    schedule: &TimeSchedule,
    config: &SamplerConfig,
) -> Result<PointCloud> {
    let times = schedule.times();
    let mut x = x0.clone();
    let mut z = LatentState::empty();
    for w in times.windows(2) {
        let (t, delta) = (w[0], w[1] - w[0]);
        let weights = if config.alpha_cur > 0.0 {
            curvature_weights(&x, config.alpha_cur, config.curvature_k.min(x.len()).max(3))?
        } else {
            vec![1.0; x.len()]
        };
        (x, z) = euler_step(&x, t, delta, model, &z, &weights)?;
    }
    if config.postprocess {
        x = manifold_postprocess(&x, x0, config.alpha, config.manifold_k)?;
    }
    Ok(x)
}

/// Densifies `sparse` by midpoints, then integrates the flow.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    sparse: &PointCloud,
    rate: usize,
    schedule: &TimeSchedule,
    config: &SamplerConfig,
) -> Result<PointCloud> {
    config.validate()?;
    let x0 = midpoint_interpolate(sparse, rate)?;
    integrate(model, &x0, schedule, config)
}
