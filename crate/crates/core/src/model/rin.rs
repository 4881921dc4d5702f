use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VelocityModel;
use crate::error::{Error, Result};
use crate::nn::{
    init_layer_norm, init_linear, init_mha, init_mlp_block, layer_norm, linear, mha, mlp_block, time_embed, Graph,
    ParamStore, Var,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RinConfig {
    pub blocks: usize,
    pub tokens: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub time_dim: usize,
}

impl Default for RinConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            tokens: 16,
            latent_dim: 64,
            feature_dim: 64,
            heads: 4,
            time_dim: 16,
        }
    }
}

/// Recurrent interface network: point features `f` and latent tokens `z`
/// exchange information through Read (z <- f), Compute (z <- z) and Write
/// (f <- z) attention, all pre-norm residual.
///
/// The latent entering a step is `tokens + W_t temb(t) + W_g mean(f) +
/// z_prev W_zin`; the latent leaving the last block is the next state.
#[derive(Clone, Debug, PartialEq)]
pub struct Rin {
    config: RinConfig,
    params: ParamStore,
}

impl Rin {
    pub fn new(config: RinConfig, seed: u64) -> Result<Self> {
        let c = config;
        if c.blocks == 0 || c.tokens == 0 || c.time_dim == 0 || c.time_dim % 2 != 0 {
            return Err(Error::invalid(format!("invalid RIN configuration {c:?}")));
        }
        for d in [c.latent_dim, c.feature_dim] {
            if c.heads == 0 || d == 0 || d % c.heads != 0 {
                return Err(Error::invalid(format!("width {d} is not divisible into {} heads", c.heads)));
            }
        }
        let (d, f) = (c.latent_dim, c.feature_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        init_linear(&mut p, "enc1", 3, f, false, &mut rng)?;
        init_linear(&mut p, "enc2", f, f, false, &mut rng)?;
        p.init_uniform("latent.tokens", c.tokens, d, &mut rng)?;
        init_linear(&mut p, "latent.time", c.time_dim, d, false, &mut rng)?;
        init_linear(&mut p, "latent.global", f, d, false, &mut rng)?;
        p.init_uniform("latent.read_prev", d, d, &mut rng)?;
        for l in 0..c.blocks {
            let b = format!("block{l}");
            for ln in ["ln_read_z", "ln_read_mlp", "ln_compute", "ln_compute_mlp"] {
                init_layer_norm(&mut p, &format!("{b}.{ln}"), d)?;
            }
            for ln in ["ln_read_f", "ln_write_f", "ln_write_mlp"] {
                init_layer_norm(&mut p, &format!("{b}.{ln}"), f)?;
            }
            init_layer_norm(&mut p, &format!("{b}.ln_write_z"), d)?;
            init_mha(&mut p, &format!("{b}.read"), d, f, c.heads, true, &mut rng)?;
            init_mlp_block(&mut p, &format!("{b}.read_mlp"), d, true, &mut rng)?;
            init_mha(&mut p, &format!("{b}.compute"), d, d, c.heads, true, &mut rng)?;
            init_mlp_block(&mut p, &format!("{b}.compute_mlp"), d, true, &mut rng)?;
            init_mha(&mut p, &format!("{b}.write"), f, d, c.heads, true, &mut rng)?;
            init_mlp_block(&mut p, &format!("{b}.write_mlp"), f, true, &mut rng)?;
        }
        init_linear(&mut p, "head1", f, f, false, &mut rng)?;
        init_linear(&mut p, "head2", f, 3, false, &mut rng)?;
        Ok(Self { config, params: p })
    }

    /// Rebuilds a network around stored parameters, checking names and shapes.
    pub fn from_params(config: RinConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        super::check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> RinConfig {
        self.config
    }

    /// Per-point encoder, `n x 3 -> n x feature_dim`.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = linear(g, &self.params, "enc1", x)?;
        let h = g.gelu(h)?;
        linear(g, &self.params, "enc2", h)
    }

    /// Velocity head, `n x feature_dim -> n x 3`.
    pub fn head(&self, g: &mut Graph, f: Var) -> Result<Var> {
        let h = linear(g, &self.params, "head1", f)?;
        let h = g.gelu(h)?;
        linear(g, &self.params, "head2", h)
    }

    fn initial_latent(&self, g: &mut Graph, f: Var, z_prev: Option<Var>, t: f64) -> Result<Var> {
        let p = &self.params;
        let temb = g.constant(time_embed(t, self.config.time_dim)?)?;
        let tproj = linear(g, p, "latent.time", temb)?;
        let pooled = g.mean_pool(f)?;
        let gproj = linear(g, p, "latent.global", pooled)?;
        let cond = g.add(tproj, gproj)?;
        let tokens = g.param(p, "latent.tokens")?;
        let mut z = g.add_row(tokens, cond)?;
        if let Some(prev) = z_prev {
            let shape = g.value(prev).shape();
            if shape != [self.config.tokens, self.config.latent_dim] {
                return Err(Error::invalid(format!(
                    "latent of shape {shape:?} does not match ({}, {})",
                    self.config.tokens, self.config.latent_dim
                )));
            }
            let w = g.param(p, "latent.read_prev")?;
            let read = g.matmul(prev, w)?;
            z = g.add(z, read)?;
        }
        Ok(z)
    }

    fn block(&self, g: &mut Graph, l: usize, mut f: Var, mut z: Var) -> Result<(Var, Var)> {
        let p = &self.params;
        let h = self.config.heads;
        let b = format!("block{l}");
        let n = |s: &str| format!("{b}.{s}");

        let zn = layer_norm(g, p, &n("ln_read_z"), z)?;
        let fnorm = layer_norm(g, p, &n("ln_read_f"), f)?;
        let a = mha(g, p, &n("read"), zn, fnorm, h)?;
        z = g.add(z, a)?;
        let zn = layer_norm(g, p, &n("ln_read_mlp"), z)?;
        let m = mlp_block(g, p, &n("read_mlp"), zn)?;
        z = g.add(z, m)?;

        let zn = layer_norm(g, p, &n("ln_compute"), z)?;
        let a = mha(g, p, &n("compute"), zn, zn, h)?;
        z = g.add(z, a)?;
        let zn = layer_norm(g, p, &n("ln_compute_mlp"), z)?;
        let m = mlp_block(g, p, &n("compute_mlp"), zn)?;
        z = g.add(z, m)?;

        let fnorm = layer_norm(g, p, &n("ln_write_f"), f)?;
        let zn = layer_norm(g, p, &n("ln_write_z"), z)?;
        let a = mha(g, p, &n("write"), fnorm, zn, h)?;
        f = g.add(f, a)?;
        let fnorm = layer_norm(g, p, &n("ln_write_mlp"), f)?;
        let m = mlp_block(g, p, &n("write_mlp"), fnorm)?;
        f = g.add(f, m)?;
        Ok((f, z))
    }

    /// Point features after every block, before the head. Exposed for
    /// inspecting the residual stream.
    pub fn features(&self, g: &mut Graph, x: Var, z_prev: Option<Var>, t: f64) -> Result<(Var, Var)> {
        let mut f = self.encode(g, x)?;
        let mut z = self.initial_latent(g, f, z_prev, t)?;
        for l in 0..self.config.blocks {
            (f, z) = self.block(g, l, f, z)?;
        }
        Ok((f, z))
    }
}

impl VelocityModel for Rin {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn latent_shape(&self) -> Option<(usize, usize)> {
        Some((self.config.tokens, self.config.latent_dim))
    }

    fn forward(&self, g: &mut Graph, x: Var, z: Option<Var>, t: f64) -> Result<(Var, Option<Var>)> {
        let (f, z) = self.features(g, x, z, t)?;
        let v = self.head(g, f)?;
        Ok((v, Some(z)))
    }
}
