use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VelocityModel;
use crate::error::{Error, Result};
use crate::nn::{init_linear, linear, time_embed, Graph, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub time_dim: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            time_dim: 16,
        }
    }
}

/// PointNet-style field: a shared per-point MLP on `[xyz | temb(t)]`, a
/// max-pooled global feature broadcast back to every point, and a head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpField {
    config: MlpConfig,
    params: ParamStore,
}

impl MlpField {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(Error::invalid(format!("invalid MLP field configuration {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let h = config.hidden;
        init_linear(&mut p, "point1", 3 + config.time_dim, h, false, &mut rng)?;
        init_linear(&mut p, "point2", h, h, false, &mut rng)?;
        init_linear(&mut p, "head1", 2 * h, h, false, &mut rng)?;
        init_linear(&mut p, "head2", h, 3, false, &mut rng)?;
        Ok(Self { config, params: p })
    }

    /// Rebuilds a field around stored parameters, checking names and shapes.
    pub fn from_params(config: MlpConfig, params: ParamStore) -> Result<Self> {
        let reference = Self::new(config, 0)?;
        super::check_layout(&reference.params, &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> MlpConfig {
        self.config
    }
}

impl VelocityModel for MlpField {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn latent_shape(&self) -> Option<(usize, usize)> {
        None
    }

    fn forward(&self, g: &mut Graph, x: Var, _z: Option<Var>, t: f64) -> Result<(Var, Option<Var>)> {
        let p = &self.params;
        let n = g.value(x).rows();
        let temb = g.constant(time_embed(t, self.config.time_dim)?)?;
        let temb = g.repeat_rows(temb, n)?;
        let input = g.concat_cols(&[x, temb])?;
        let h = linear(g, p, "point1", input)?;
        let h = g.relu(h)?;
        let h = linear(g, p, "point2", h)?;
        let f = g.relu(h)?;
        let global = g.max_pool(f)?;
        let global = g.repeat_rows(global, n)?;
        let h = g.concat_cols(&[f, global])?;
        let h = linear(g, p, "head1", h)?;
        let h = g.relu(h)?;
        let v = linear(g, p, "head2", h)?;
        Ok((v, None))
    }
}
