//! Finite-difference gradient suites shared by the gradient tests and the
//! acceptance run. Each suite returns the worst relative error over its trials.

use pufm::flow::{cfm_loss, chamfer_loss, make_interpolant, stage2_loss_and_grads};
use pufm::model::{cloud_tensor, MlpConfig, MlpField, Rin, RinConfig, VelocityModel};
use pufm::nn::{init_layer_norm, init_linear, init_mha, init_mlp_block, layer_norm, linear, mha, mlp_block};
use pufm::nn::{Graph, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_grads_against, check_op, check_param_grads, cube_cloud, randomize_params, random_tensor, rng, Store};

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const MODEL_TOL: f64 = 1e-4;
pub const TRIALS: usize = 20;
const MAX_COORDS: usize = 120;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> pufm::Result<Var>>;

pub const PRIMITIVES: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "add_row",
    "repeat_rows",
    "scale",
    "relu",
    "gelu",
    "softmax_rows",
    "layer_norm",
    "mean_pool",
    "max_pool",
    "concat_cols",
    "slice_cols",
    "transpose",
    "gather_rows",
    "sum",
    "mean",
];

fn scaled(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor {
    let t = random_tensor(rng, r, c, 0.1);
    Tensor::matrix(r, c, t.data().iter().map(|v| v * s).collect()).unwrap()
}

fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Build) {
    let n = rng.gen_range(1..6);
    let d = rng.gen_range(2..6);
    let x = random_tensor(rng, n, d, 0.1);
    match name {
        "matmul" => {
            let m = rng.gen_range(1..5);
            (vec![x, random_tensor(rng, d, m, 0.1)], Box::new(|g, v| g.matmul(v[0], v[1])))
        }
        "add" => (vec![x, random_tensor(rng, n, d, 0.1)], Box::new(|g, v| g.add(v[0], v[1]))),
        "sub" => (vec![x, random_tensor(rng, n, d, 0.1)], Box::new(|g, v| g.sub(v[0], v[1]))),
        "mul" => (vec![x, random_tensor(rng, n, d, 0.1)], Box::new(|g, v| g.mul(v[0], v[1]))),
        "add_row" => (vec![x, random_tensor(rng, 1, d, 0.1)], Box::new(|g, v| g.add_row(v[0], v[1]))),
        "repeat_rows" => (vec![random_tensor(rng, 1, d, 0.1)], Box::new(move |g, v| g.repeat_rows(v[0], n))),
        "scale" => {
            let s = rng.gen_range(-2.0..2.0);
            (vec![x], Box::new(move |g, v| g.scale(v[0], s)))
        }
        "relu" => (vec![x], Box::new(|g, v| g.relu(v[0]))),
        "gelu" => (vec![scaled(rng, n, d, 3.0)], Box::new(|g, v| g.gelu(v[0]))),
        "softmax_rows" => (vec![scaled(rng, n, d, 3.0)], Box::new(|g, v| g.softmax_rows(v[0]))),
        "layer_norm" => (
            vec![scaled(rng, n, d, 2.0), random_tensor(rng, 1, d, 0.1), random_tensor(rng, 1, d, 0.1)],
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2])),
        ),
        "mean_pool" => (vec![x], Box::new(|g, v| g.mean_pool(v[0]))),
        "max_pool" => (vec![x], Box::new(|g, v| g.max_pool(v[0]))),
        "concat_cols" => {
            let (d2, d3) = (rng.gen_range(1..4), rng.gen_range(1..4));
            (
                vec![x, random_tensor(rng, n, d2, 0.1), random_tensor(rng, n, d3, 0.1)],
                Box::new(|g, v| g.concat_cols(&[v[0], v[1], v[2]])),
            )
        }
        "slice_cols" => {
            let start = rng.gen_range(0..d);
            let len = rng.gen_range(1..=d - start);
            (vec![x], Box::new(move |g, v| g.slice_cols(v[0], start, len)))
        }
        "transpose" => (vec![x], Box::new(|g, v| g.transpose(v[0]))),
        "gather_rows" => {
            let idx: Vec<usize> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..n)).collect();
            (vec![x], Box::new(move |g, v| g.gather_rows(v[0], &idx)))
        }
        "sum" => (vec![x], Box::new(|g, v| g.sum(v[0]))),
        "mean" => (vec![x], Box::new(|g, v| g.mean(v[0]))),
        other => panic!("unknown primitive {other}"),
    }
}

/// Worst relative error of `name` over `trials` random shapes and inputs.
pub fn primitive_error(name: &str, trials: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..trials)
        .map(|trial| {
            let (inputs, build) = primitive_case(name, &mut r);
            check_op(&inputs, seed.wrapping_add(trial as u64), build)
        })
        .fold(0.0, f64::max)
}

fn weighted(g: &mut Graph, out: Var, w: &Tensor) -> Var {
    let w = g.constant(w.clone()).unwrap();
    let p = g.mul(out, w).unwrap();
    g.sum(p).unwrap()
}

fn small_rin(rng: &mut ChaCha8Rng) -> Rin {
    let cfg = RinConfig {
        blocks: 1,
        tokens: 3,
        latent_dim: 4,
        feature_dim: 4,
        heads: 2,
        time_dim: 4,
    };
    let mut m = Rin::new(cfg, rng.gen()).unwrap();
    randomize_params(&mut m, rng);
    m
}

fn small_mlp(rng: &mut ChaCha8Rng) -> MlpField {
    let mut m = MlpField::new(MlpConfig { hidden: 6, time_dim: 4 }, rng.gen()).unwrap();
    randomize_params(&mut m, rng);
    m
}

fn max_of(trials: usize, seed: u64, mut f: impl FnMut(&mut ChaCha8Rng) -> f64) -> f64 {
    let mut r = rng(seed);
    (0..trials).map(|_| f(&mut r)).fold(0.0, f64::max)
}

/// Layer helpers: linear, layer norm, GELU block and attention, in both
/// parameters and inputs.
pub fn layers_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let (n, d) = (r.gen_range(1..5), 4);
        let m = r.gen_range(1..4);
        let mut p = ParamStore::new();
        init_linear(&mut p, "lin", d, d, false, r).unwrap();
        init_layer_norm(&mut p, "ln", d).unwrap();
        init_mlp_block(&mut p, "mlp", d, false, r).unwrap();
        init_mha(&mut p, "att", d, 3, 2, false, r).unwrap();
        let mut s = Store(p);
        randomize_params(&mut s, r);
        let x = random_tensor(r, n, d, 0.1);
        let kv = random_tensor(r, m, 3, 0.1);
        let w = random_tensor(r, n, d, 0.1);
        let build = |store: &ParamStore, g: &mut Graph, x: Var, kv: Var| -> pufm::Result<Var> {
            let h = linear(g, store, "lin", x)?;
            let h = layer_norm(g, store, "ln", h)?;
            let h = mlp_block(g, store, "mlp", h)?;
            mha(g, store, "att", h, kv, 2)
        };
        let e_in = check_op(&[x.clone(), kv.clone()], r.gen(), |g, v| build(&s.0, g, v[0], v[1]));
        let e_p = check_param_grads(&mut s, MAX_COORDS, r, |s, g| {
            let xv = g.constant(x.clone()).unwrap();
            let kvv = g.constant(kv.clone()).unwrap();
            let out = build(&s.0, g, xv, kvv).unwrap();
            weighted(g, out, &w)
        });
        e_in.max(e_p)
    })
}

/// Two queries attending over two tokens with two heads.
pub fn mha_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let mut p = ParamStore::new();
        init_mha(&mut p, "att", 2, 2, 2, false, r).unwrap();
        let mut s = Store(p);
        randomize_params(&mut s, r);
        let q = random_tensor(r, 2, 2, 0.1);
        let kv = random_tensor(r, 2, 2, 0.1);
        let w = random_tensor(r, 2, 2, 0.1);
        let e_in = check_op(&[q.clone(), kv.clone()], r.gen(), |g, v| mha(g, &s.0, "att", v[0], v[1], 2));
        let e_p = check_param_grads(&mut s, MAX_COORDS, r, |s, g| {
            let qv = g.constant(q.clone()).unwrap();
            let kvv = g.constant(kv.clone()).unwrap();
            let out = mha(g, &s.0, "att", qv, kvv, 2).unwrap();
            weighted(g, out, &w)
        });
        e_in.max(e_p)
    })
}

pub fn mlp_field_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let mut m = small_mlp(r);
        let n = r.gen_range(2..10);
        let x = cloud_tensor(&cube_cloud(r, n));
        let t: f64 = r.gen();
        let w = random_tensor(r, n, 3, 0.1);
        let e_in = check_op(&[x.clone()], r.gen(), |g, v| m.forward(g, v[0], None, t).map(|o| o.0));
        let e_p = check_param_grads(&mut m, MAX_COORDS, r, |m, g| {
            let xv = g.constant(x.clone()).unwrap();
            let (v, _) = m.forward(g, xv, None, t).unwrap();
            weighted(g, v, &w)
        });
        e_in.max(e_p)
    })
}

/// One RIN block with and without an incoming latent; velocity and next
/// latent both feed the loss.
pub fn rin_block_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let mut m = small_rin(r);
        let n = r.gen_range(2..8);
        let x = cloud_tensor(&cube_cloud(r, n));
        let z = random_tensor(r, 3, 4, 0.1);
        let t: f64 = r.gen();
        let wv = random_tensor(r, n, 3, 0.1);
        let wz = random_tensor(r, 3, 4, 0.1);
        let with_latent: bool = r.gen();
        let run = |m: &Rin, g: &mut Graph, xv: Var, zv: Option<Var>| -> pufm::Result<Var> {
            let (v, zn) = m.forward(g, xv, zv, t)?;
            let a = weighted(g, v, &wv);
            let b = weighted(g, zn.unwrap(), &wz);
            g.add(a, b)
        };
        let e_in = if with_latent {
            check_op(&[x.clone(), z.clone()], r.gen(), |g, v| run(&m, g, v[0], Some(v[1])))
        } else {
            check_op(&[x.clone()], r.gen(), |g, v| run(&m, g, v[0], None))
        };
        let e_p = check_param_grads(&mut m, MAX_COORDS, r, |m, g| {
            let xv = g.constant(x.clone()).unwrap();
            let zv = with_latent.then(|| g.constant(z.clone()).unwrap());
            run(m, g, xv, zv).unwrap()
        });
        e_in.max(e_p)
    })
}

fn interpolant(r: &mut ChaCha8Rng, n: usize) -> pufm::flow::InterpolantSample {
    let x0 = cube_cloud(r, n);
    let x1 = cube_cloud(r, n);
    make_interpolant(&x0, &x1, r.gen()).unwrap()
}

/// Flow-matching loss of the MLP field, and of the RIN with its proxy latent
/// held at its forward value.
pub fn cfm_loss_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let n = r.gen_range(2..8);
        let s = interpolant(r, n);
        if r.gen::<bool>() {
            let mut m = small_mlp(r);
            check_param_grads(&mut m, MAX_COORDS, r, |m, g| cfm_loss(m, g, &s).unwrap())
        } else {
            let mut m = small_rin(r);
            let mut g = Graph::new();
            let l = cfm_loss(&m, &mut g, &s).unwrap();
            let grads = g.param_grads(&g.backward(l), m.params());
            let z_tilde = {
                let mut g = Graph::frozen();
                let x = g.constant(cloud_tensor(&s.x_t)).unwrap();
                let (_, z) = m.forward(&mut g, x, None, s.t).unwrap();
                g.value(z.unwrap()).clone()
            };
            let target = Tensor::matrix(n, 3, s.target_velocity.iter().flatten().copied().collect()).unwrap();
            check_grads_against(&mut m, &grads, MAX_COORDS, r, |m| {
                let mut g = Graph::frozen();
                let x = g.constant(cloud_tensor(&s.x_t)).unwrap();
                let z = g.constant(z_tilde.clone()).unwrap();
                let (v, _) = m.forward(&mut g, x, Some(z), s.t).unwrap();
                let v = g.value(v);
                v.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64
            })
        }
    })
}

/// Endpoint Chamfer loss: in the predicted points, and through the model.
pub fn stage2_error(trials: usize, seed: u64) -> f64 {
    max_of(trials, seed, |r| {
        let n = r.gen_range(2..10);
        let k = r.gen_range(2..10);
        let target = cube_cloud(r, k);
        let pred = cloud_tensor(&cube_cloud(r, n));
        let e_pred = check_op(&[pred], r.gen(), |g, v| chamfer_loss(g, v[0], &target));
        let mut m = small_mlp(r);
        let x0 = cube_cloud(r, n);
        let (_, grads) = stage2_loss_and_grads(&m, &x0, &target).unwrap();
        let e_p = check_grads_against(&mut m, &grads, MAX_COORDS, r, |m| {
            stage2_loss_and_grads(m, &x0, &target).unwrap().0
        });
        e_pred.max(e_p)
    })
}

pub type Suite = (&'static str, fn(usize, u64) -> f64, f64);

pub const MODEL_SUITES: &[Suite] = &[
    ("layers", layers_error, MODEL_TOL),
    ("mha_two_token_two_head", mha_error, PRIMITIVE_TOL),
    ("mlp_field", mlp_field_error, MODEL_TOL),
    ("rin_block", rin_block_error, MODEL_TOL),
    ("cfm_loss", cfm_loss_error, MODEL_TOL),
    ("stage2_chamfer", stage2_error, MODEL_TOL),
];
