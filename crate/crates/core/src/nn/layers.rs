use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest angular frequency of [`time_embed`]; the others decay geometrically
/// with base 10^4 so that `t` in [0, 1] still sweeps several periods.
pub const TIME_EMBED_MAX_FREQ: f64 = 1000.0;

/// Interleaved `[sin(w_0 t), cos(w_0 t), sin(w_1 t), ...]` with
/// `w_k = 1000 * 10000^(-2k/dim)`, as a `1 x dim` row.
pub fn time_embed(t: f64, dim: usize) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::invalid(format!("time embedding dimension must be even and positive, got {dim}")));
    }
    let mut data = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = TIME_EMBED_MAX_FREQ * 10000f64.powf(-2.0 * k as f64 / dim as f64);
        data.push((w * t).sin());
        data.push((w * t).cos());
    }
    Tensor::matrix(1, dim, data)
}

/// Registers `name.w` (`fan_in x fan_out`) and `name.b` (`1 x fan_out`).
/// With `zero` set both start at zero.
pub fn init_linear(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    zero: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if zero {
        store.init_zeros(&format!("{name}.w"), fan_in, fan_out)?;
    } else {
        store.init_uniform(&format!("{name}.w"), fan_in, fan_out, rng)?;
    }
    store.init_zeros(&format!("{name}.b"), 1, fan_out)
}

/// `x W + b`.
pub fn linear(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(store, &format!("{name}.w"))?;
    let b = g.param(store, &format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add_row(xw, b)
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, dim: usize) -> Result<()> {
    store.init_full(&format!("{name}.gain"), 1, dim, 1.0)?;
    store.init_zeros(&format!("{name}.bias"), 1, dim)
}

pub fn layer_norm(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let gain = g.param(store, &format!("{name}.gain"))?;
    let bias = g.param(store, &format!("{name}.bias"))?;
    g.layer_norm(x, gain, bias)
}

/// Two-layer `dim -> 2 dim -> dim` GELU block; the output layer may start at zero.
pub fn init_mlp_block(store: &mut ParamStore, name: &str, dim: usize, zero_out: bool, rng: &mut ChaCha8Rng) -> Result<()> {
    init_linear(store, &format!("{name}.fc1"), dim, 2 * dim, false, rng)?;
    init_linear(store, &format!("{name}.fc2"), 2 * dim, dim, zero_out, rng)
}

pub fn mlp_block(g: &mut Graph, store: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, store, &format!("{name}.fc1"), x)?;
    let h = g.gelu(h)?;
    linear(g, store, &format!("{name}.fc2"), h)
}

/// Projections for attention from `query_dim` tokens onto `kv_dim` tokens. The
/// inner width equals `query_dim` and is split evenly across `heads`.
pub fn init_mha(
    store: &mut ParamStore,
    name: &str,
    query_dim: usize,
    kv_dim: usize,
    heads: usize,
    zero_out: bool,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    check_heads(query_dim, heads)?;
    store.init_uniform(&format!("{name}.q"), query_dim, query_dim, rng)?;
    store.init_uniform(&format!("{name}.k"), kv_dim, query_dim, rng)?;
    store.init_uniform(&format!("{name}.v"), kv_dim, query_dim, rng)?;
    init_linear(store, &format!("{name}.o"), query_dim, query_dim, zero_out, rng)
}

fn check_heads(dim: usize, heads: usize) -> Result<()> {
    if heads == 0 || dim % heads != 0 {
        return Err(Error::invalid(format!("width {dim} is not divisible into {heads} heads")));
    }
    Ok(())
}

/// Multi-head scaled dot-product attention of `queries` over `keys_values`,
/// followed by the output projection.
pub fn mha(g: &mut Graph, store: &ParamStore, name: &str, queries: Var, keys_values: Var, heads: usize) -> Result<Var> {
    let wq = g.param(store, &format!("{name}.q"))?;
    let wk = g.param(store, &format!("{name}.k"))?;
    let wv = g.param(store, &format!("{name}.v"))?;
    let dim = g.value(wq).cols();
    check_heads(dim, heads)?;
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(keys_values, wk)?;
    let v = g.matmul(keys_values, wv)?;
    let dh = dim / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let logits = g.scale(logits, inv_sqrt)?;
        let att = g.softmax_rows(logits)?;
        outs.push(g.matmul(att, vh)?);
    }
    let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
    linear(g, store, &format!("{name}.o"), cat)
}
