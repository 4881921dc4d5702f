//! Two-stage flow-matching training.
//!
//! Stage 1 regresses the straight-line velocity `x1 - x0` between a densified
//! sparse patch and its OT-aligned dense patch. Stage 2 perturbs the source
//! with Gaussian noise and refines the single-step endpoint against the dense
//! patch under Chamfer distance.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sub, PatchPair, Point3, PointCloud};
use crate::metrics::nearest_neighbors;
use crate::model::{cloud_tensor, tensor_points, VelocityModel};
use crate::nn::{AdamConfig, Grads, Graph, Tensor, Var};
use crate::scheduler::LossProfile;
use crate::transport::{align_pair, DEFAULT_EPSILON};

/// Grid intervals of [`record_loss_profile`] by default.
pub const DEFAULT_PROFILE_INTERVALS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub sigma: f64,
    pub epsilon_final: f64,
    pub seed: u64,
    /// Pre-align pairs by optimal transport before stage 1.
    pub align: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_lr: 1e-4,
            stage2_lr: 1e-5,
            stage1_epochs: 100,
            stage2_epochs: 50,
            batch_size: 8,
            sigma: 0.02,
            epsilon_final: DEFAULT_EPSILON,
            seed: 0,
            align: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stage1_lr", self.stage1_lr),
            ("stage2_lr", self.stage2_lr),
            ("sigma", self.sigma),
            ("epsilon_final", self.epsilon_final),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// A point on the straight path from `x0` to `x1` and its velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolantSample {
    pub x_t: PointCloud,
    pub t: f64,
    pub target_velocity: Vec<Point3>,
}

/// `t = 1 - cos(s pi / 2)`.
pub fn cosine_time(s: f64) -> f64 {
    1.0 - (s * std::f64::consts::FRAC_PI_2).cos()
}

/// Draws `s ~ U[0, 1)` and maps it through [`cosine_time`].
pub fn sample_time_cosine<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    cosine_time(rng.gen::<f64>())
}

pub fn make_interpolant(x0: &PointCloud, x1: &PointCloud, t: f64) -> Result<InterpolantSample> {
    if x0.len() != x1.len() {
        return Err(Error::invalid(format!(
            "interpolant endpoints differ in size: {} vs {}",
            x0.len(),
            x1.len()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("interpolation time {t} is outside [0, 1]")));
    }
    let mut pts = Vec::with_capacity(x0.len());
    let mut vel = Vec::with_capacity(x0.len());
    for (&a, &b) in x0.points().iter().zip(x1.points()) {
        pts.push(std::array::from_fn(|k| (1.0 - t) * a[k] + t * b[k]));
        vel.push(sub(b, a));
    }
    Ok(InterpolantSample {
        x_t: PointCloud::new(pts)?,
        t,
        target_velocity: vel,
    })
}

fn points_tensor(p: &[Point3]) -> Tensor {
    Tensor::matrix(p.len(), 3, p.iter().flatten().copied().collect()).expect("three columns")
}

/// `(1/n) sum_i |a_i - b_i|^2` as a graph node.
fn mean_sq_rows(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let n = g.value(a).rows();
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    g.scale(s, 1.0 / n as f64)
}

/// Mean over points of the squared velocity error, summed over coordinates.
pub fn cfm_loss<M: VelocityModel + ?Sized>(model: &M, g: &mut Graph, sample: &InterpolantSample) -> Result<Var> {
    let x = g.constant(cloud_tensor(&sample.x_t))?;
    let v = model.training_forward(g, x, sample.t)?;
    let target = g.constant(points_tensor(&sample.target_velocity))?;
    mean_sq_rows(g, v, target)
}

/// Loss value and parameter gradients of [`cfm_loss`].
pub fn cfm_loss_and_grads<M: VelocityModel + ?Sized>(model: &M, sample: &InterpolantSample) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let loss = cfm_loss(model, &mut g, sample)?;
    let grads = g.backward(loss);
    Ok((g.value(loss).item(), g.param_grads(&grads, model.params())))
}

/// [`cfm_loss`] without gradients.
pub fn cfm_loss_value<M: VelocityModel + ?Sized>(model: &M, sample: &InterpolantSample) -> Result<f64> {
    let mut g = Graph::frozen();
    let loss = cfm_loss(model, &mut g, sample)?;
    Ok(g.value(loss).item())
}

/// Chamfer distance from the `n x 3` node `pred` to `target`, differentiable
/// in `pred` with nearest-neighbour indices fixed at their forward values.
pub fn chamfer_loss(g: &mut Graph, pred: Var, target: &PointCloud) -> Result<Var> {
    let pred_cloud = PointCloud::new(tensor_points(g.value(pred)))?;
    target.require_nonempty("chamfer target")?;
    let fwd: Vec<usize> = nearest_neighbors(&pred_cloud, target).into_iter().map(|(j, _)| j).collect();
    let bwd: Vec<usize> = nearest_neighbors(target, &pred_cloud).into_iter().map(|(j, _)| j).collect();
    let matched_target = g.constant(cloud_tensor(&target.select(&fwd)))?;
    let a = mean_sq_rows(g, pred, matched_target)?;
    let gathered = g.gather_rows(pred, &bwd)?;
    let tgt = g.constant(cloud_tensor(target))?;
    let b = mean_sq_rows(g, gathered, tgt)?;
    g.add(a, b)
}

/// `x0 + sigma * xi`, `xi ~ N(0, I)` per coordinate.
pub fn perturb<R: Rng + ?Sized>(x0: &PointCloud, sigma: f64, rng: &mut R) -> Result<PointCloud> {
    let pts = x0
        .points()
        .iter()
        .map(|p| {
            std::array::from_fn(|k| {
                let xi: f64 = rng.sample(StandardNormal);
                p[k] + sigma * xi
            })
        })
        .collect();
    PointCloud::new(pts)
}

/// The single unit-time Euler step from `x0` with a null latent, as a node.
fn one_step_prediction<M: VelocityModel + ?Sized>(model: &M, g: &mut Graph, x0: &PointCloud) -> Result<Var> {
    let x = g.constant(cloud_tensor(x0))?;
    let (v, _) = model.forward(g, x, None, 0.0)?;
    g.add(x, v)
}

/// Endpoint loss `chamfer(x0' + v(x0', 0), x1)` for an already perturbed
/// source `x0'`, with gradients.
pub fn stage2_loss_and_grads<M: VelocityModel + ?Sized>(
    model: &M,
    x0_noisy: &PointCloud,
    x1: &PointCloud,
) -> Result<(f64, Grads)> {
    let mut g = Graph::new();
    let pred = one_step_prediction(model, &mut g, x0_noisy)?;
    let loss = chamfer_loss(&mut g, pred, x1)?;
    let grads = g.backward(loss);
    Ok((g.value(loss).item(), g.param_grads(&grads, model.params())))
}

/// `chamfer(x0 + v(x0, 0), x1)` with no noise and no gradients.
pub fn one_step_chamfer<M: VelocityModel + ?Sized>(model: &M, x0: &PointCloud, x1: &PointCloud) -> Result<f64> {
    let mut g = Graph::frozen();
    let pred = one_step_prediction(model, &mut g, x0)?;
    let pred = PointCloud::new(tensor_points(g.value(pred)))?;
    crate::metrics::chamfer(&pred, x1)
}

/// One stage-1 update on a single pair: align, sample `t`, regress, step.
/// Returns the loss before the update.
pub fn stage1_step<M: VelocityModel + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    pair: &PatchPair,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let x1 = if config.align {
        align_pair(&pair.sparse, &pair.dense, config.epsilon_final)?
    } else {
        pair.dense.clone()
    };
    let t = sample_time_cosine(rng);
    let sample = make_interpolant(&pair.sparse, &x1, t)?;
    let (loss, grads) = cfm_loss_and_grads(&*model, &sample)?;
    model.params_mut().adam_step(&grads, config.stage1_lr, AdamConfig::default())?;
    Ok(loss)
}

/// One stage-2 update on a single pair. Returns the loss before the update.
pub fn stage2_step<M: VelocityModel + ?Sized, R: Rng + ?Sized>(
    model: &mut M,
    pair: &PatchPair,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<f64> {
    let x0 = perturb(&pair.sparse, config.sigma, rng)?;
    let (loss, grads) = stage2_loss_and_grads(&*model, &x0, &pair.dense)?;
    model.params_mut().adam_step(&grads, config.stage2_lr, AdamConfig::default())?;
    Ok(loss)
}

/// Patch pairs with their (optionally OT-aligned) dense targets. Alignment is
/// independent of `t`, so it is computed once.
#[derive(Clone, Debug)]
pub struct TrainingSet {
    pairs: Vec<PatchPair>,
    targets: Vec<PointCloud>,
}

impl TrainingSet {
    pub fn new(pairs: Vec<PatchPair>, align: bool, epsilon_final: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let targets = if align {
            pairs
                .par_iter()
                .map(|p| align_pair(&p.sparse, &p.dense, epsilon_final))
                .collect::<Result<Vec<_>>>()?
        } else {
            pairs.iter().map(|p| p.dense.clone()).collect()
        };
        Ok(Self { pairs, targets })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PatchPair] {
        &self.pairs
    }

    pub fn targets(&self) -> &[PointCloud] {
        &self.targets
    }
}

/// Sums per-item gradients in item order (deterministic regardless of the
/// thread count), averages, and applies one Adam step.
fn apply_batch<M: VelocityModel + ?Sized>(model: &mut M, results: Vec<(f64, Grads)>, lr: f64) -> Result<f64> {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss_sum, mut total) = iter.next().expect("nonempty batch");
    for (l, g) in iter {
        loss_sum += l;
        total.accumulate(&g)?;
    }
    total.scale(1.0 / n);
    model.params_mut().adam_step(&total, lr, AdamConfig::default())?;
    Ok(loss_sum)
}

/// Runs stage 1 for `config.stage1_epochs` epochs. Pairs are reshuffled each
/// epoch; `on_epoch(epoch, mean_loss)` is called after every epoch. Returns
/// the per-epoch mean losses.
pub fn train_stage1<M: VelocityModel + ?Sized>(
    model: &mut M,
    data: &TrainingSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.stage1_epochs);
    for epoch in 0..config.stage1_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(usize, f64)> = chunk.iter().map(|&i| (i, sample_time_cosine(&mut rng))).collect();
            let results = batch
                .par_iter()
                .map(|&(i, t)| {
                    let s = make_interpolant(&data.pairs[i].sparse, &data.targets[i], t)?;
                    cfm_loss_and_grads(&*model, &s)
                })
                .collect::<Result<Vec<_>>>()?;
            total += apply_batch(model, results, config.stage1_lr)?;
        }
        let mean = total / data.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Runs stage 2 for `config.stage2_epochs` epochs; see [`train_stage1`].
pub fn train_stage2<M: VelocityModel + ?Sized>(
    model: &mut M,
    data: &TrainingSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5354_4147_4532);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.stage2_epochs);
    for epoch in 0..config.stage2_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| Ok((i, perturb(&data.pairs[i].sparse, config.sigma, &mut rng)?)))
                .collect::<Result<Vec<_>>>()?;
            let results = batch
                .par_iter()
                .map(|(i, x0)| stage2_loss_and_grads(&*model, x0, &data.pairs[*i].dense))
                .collect::<Result<Vec<_>>>()?;
            total += apply_batch(model, results, config.stage2_lr)?;
        }
        let mean = total / data.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Mean [`cfm_loss`] of a frozen model over `data` at every `t_i = i / K`.
pub fn record_loss_profile<M: VelocityModel + ?Sized>(model: &M, data: &TrainingSet, k: usize) -> Result<LossProfile> {
    if k == 0 {
        return Err(Error::invalid("loss profile needs at least one interval"));
    }
    if data.is_empty() {
        return Err(Error::invalid("loss profile needs a nonempty dataset"));
    }
    let losses = (0..=k)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / k as f64;
            let mut sum = 0.0;
            for (p, x1) in data.pairs.iter().zip(&data.targets) {
                let s = make_interpolant(&p.sparse, x1, t)?;
                sum += cfm_loss_value(model, &s)?;
            }
            Ok(sum / data.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    LossProfile::uniform(losses)
}

/// Mean [`one_step_chamfer`] over pairs.
pub fn mean_one_step_chamfer<M: VelocityModel + ?Sized>(model: &M, pairs: &[PatchPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to evaluate"));
    }
    let vals = pairs
        .par_iter()
        .map(|p| one_step_chamfer(model, &p.sparse, &p.dense))
        .collect::<Result<Vec<f64>>>()?;
    Ok(vals.iter().sum::<f64>() / pairs.len() as f64)
}
