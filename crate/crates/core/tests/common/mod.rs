#![allow(dead_code)]

pub mod gradcheck;

use pufm::model::VelocityModel;
use pufm::nn::{Grads, Graph, ParamStore, Tensor, Var};
use pufm::{Point3, PointCloud};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries with magnitude in `[lo, 1]` and random sign.
pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(lo..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

pub fn cube_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()).unwrap()
}

pub fn ball_point(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let p: Point3 = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        if p.iter().map(|c| c * c).sum::<f64>() <= 1.0 {
            return p;
        }
    }
}

pub fn ball_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| ball_point(rng)).collect()).unwrap()
}

/// `|a - n| / (|a| + |n|)` over whole gradient vectors; 0 when both vanish.
pub fn grad_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let v = g.value(out);
    let (r, c) = (v.rows(), v.cols());
    let w = random_tensor(&mut rng(seed), r, c, 0.1);
    let w = g.constant(w).unwrap();
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

/// Largest relative error between the tape gradient and central differences
/// of `sum(W * build(inputs))` over every input, with a random fixed `W`.
pub fn check_op(inputs: &[Tensor], weight_seed: u64, build: impl Fn(&mut Graph, &[Var]) -> pufm::Result<Var>) -> f64 {
    let eval = |ins: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.input(t.clone()).unwrap()).collect();
        let out = build(&mut g, &vars).unwrap();
        let l = weighted_sum(&mut g, out, weight_seed);
        g.value(l).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = weighted_sum(&mut g, out, weight_seed);
    let grads = g.backward(l);
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, &inputs[k]).into_data();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * FD_STEP));
        }
        worst = worst.max(grad_rel_err(&analytic, &numeric));
    }
    worst
}

/// Overwrites every parameter with entries of magnitude in `[0.1, 0.6]`.
pub fn randomize_params<M: VelocityModel + ?Sized>(model: &mut M, rng: &mut ChaCha8Rng) {
    let names: Vec<String> = model.params().names().cloned().collect();
    for name in names {
        let t = model.params_mut().get_mut(&name).unwrap();
        for x in t.data_mut() {
            let m = rng.gen_range(0.1..0.6);
            *x = if rng.gen::<bool>() { m } else { -m };
        }
    }
}

/// A bare parameter store, for checking layer gradients with the model helpers.
pub struct Store(pub ParamStore);

impl VelocityModel for Store {
    fn params(&self) -> &ParamStore {
        &self.0
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.0
    }

    fn latent_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn forward(&self, _: &mut Graph, _: Var, _: Option<Var>, _: f64) -> pufm::Result<(Var, Option<Var>)> {
        Err(pufm::Error::InvalidArgument("a bare store has no forward pass".into()))
    }
}

/// Relative error of `grads` on up to `max_coords` randomly chosen parameter
/// scalars, against central differences of `value`.
pub fn check_grads_against<M: VelocityModel>(
    model: &mut M,
    grads: &Grads,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
    value: impl Fn(&M) -> f64,
) -> f64 {
    let mut coords: Vec<(String, usize)> = model
        .params()
        .iter()
        .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.clone(), i)))
        .collect();
    if coords.len() > max_coords {
        for i in 0..max_coords {
            let j = rng.gen_range(i..coords.len());
            coords.swap(i, j);
        }
        coords.truncate(max_coords);
    }
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (name, i) in &coords {
        analytic.push(grads.get(name).unwrap().data()[*i]);
        let orig = model.params().get(name).unwrap().data()[*i];
        model.params_mut().get_mut(name).unwrap().data_mut()[*i] = orig + FD_STEP;
        let up = value(model);
        model.params_mut().get_mut(name).unwrap().data_mut()[*i] = orig - FD_STEP;
        let down = value(model);
        model.params_mut().get_mut(name).unwrap().data_mut()[*i] = orig;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    grad_rel_err(&analytic, &numeric)
}

/// [`check_grads_against`] for a scalar node built by `loss`.
pub fn check_param_grads<M: VelocityModel>(
    model: &mut M,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&M, &mut Graph) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let l = loss(model, &mut g);
    let grads = g.param_grads(&g.backward(l), model.params());
    check_grads_against(model, &grads, max_coords, rng, |m| {
        let mut g = Graph::new();
        let l = loss(m, &mut g);
        g.value(l).item()
    })
}

/// Analytic velocity fields for integrator tests.
pub enum Field {
    Constant(Point3),
    Linear,
    Fixed(Vec<Point3>),
}

pub struct FieldModel(pub Field, ParamStore);

impl FieldModel {
    pub fn new(f: Field) -> Self {
        Self(f, ParamStore::new())
    }
}

impl VelocityModel for FieldModel {
    fn params(&self) -> &ParamStore {
        &self.1
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.1
    }

    fn latent_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn forward(&self, g: &mut Graph, x: Var, _: Option<Var>, _: f64) -> pufm::Result<(Var, Option<Var>)> {
        let n = g.value(x).rows();
        let v = match &self.0 {
            Field::Linear => g.scale(x, 1.0)?,
            Field::Constant(c) => g.constant(Tensor::matrix(n, 3, c.repeat(n)).unwrap())?,
            Field::Fixed(v) => g.constant(Tensor::matrix(n, 3, v.iter().flatten().copied().collect()).unwrap())?,
        };
        Ok((v, None))
    }
}
