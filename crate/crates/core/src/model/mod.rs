//! Velocity estimators `(x_t, z_t, t) -> (velocity, z_{t+1})`.

mod mlp;
mod rin;

pub use mlp::{MlpConfig, MlpField};
pub use rin::{Rin, RinConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};
use crate::nn::{Graph, ParamStore, Tensor, Var};

/// Latent tokens carried between sampling steps. Stateless models use the
/// empty state.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LatentState {
    tokens: Option<Tensor>,
}

impl LatentState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(tokens: Tensor) -> Self {
        Self { tokens: Some(tokens) }
    }

    pub fn tokens(&self) -> Option<&Tensor> {
        self.tokens.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_none()
    }
}

/// A velocity field built on an autodiff [`Graph`].
pub trait VelocityModel: Send + Sync {
    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// `(tokens, width)` of the latent, or `None` for stateless models.
    fn latent_shape(&self) -> Option<(usize, usize)>;

    /// Records one evaluation on `g`. `x` is `n x 3`; `z`, when given, matches
    /// [`latent_shape`](Self::latent_shape). Returns the `n x 3` velocity and
    /// the next latent.
    fn forward(&self, g: &mut Graph, x: Var, z: Option<Var>, t: f64) -> Result<(Var, Option<Var>)>;

    /// The training-time forward: stateful models run the two-pass scheme.
    fn training_forward(&self, g: &mut Graph, x: Var, t: f64) -> Result<Var> {
        if self.latent_shape().is_some() {
            two_pass_forward(self, g, x, t).map(|(v, _)| v)
        } else {
            self.forward(g, x, None, t).map(|(v, _)| v)
        }
    }

    /// Inference without gradient tracking.
    fn evaluate(&self, x: &PointCloud, z: &LatentState, t: f64) -> Result<(Vec<Point3>, LatentState)> {
        if x.is_empty() {
            return Err(Error::invalid("velocity model needs at least one point"));
        }
        let mut g = Graph::frozen();
        let xv = g.constant(cloud_tensor(x))?;
        let zv = match (self.latent_shape(), z.tokens()) {
            (Some(shape), Some(tok)) => {
                if tok.shape() != [shape.0, shape.1] {
                    return Err(Error::invalid(format!(
                        "latent of shape {:?} does not match the model's {shape:?}",
                        tok.shape()
                    )));
                }
                Some(g.constant(tok.clone())?)
            }
            _ => None,
        };
        let (v, z_next) = self.forward(&mut g, xv, zv, t)?;
        let vel = tensor_points(g.value(v));
        let next = match z_next {
            Some(zn) => LatentState::new(g.value(zn).clone()),
            None => LatentState::empty(),
        };
        Ok((vel, next))
    }
}

/// Pass 1 with a null latent produces `z~`; pass 2 consumes `detach(z~)`. Only
/// pass 2 reaches the returned velocity, so only it carries gradients.
pub fn two_pass_forward<M: VelocityModel + ?Sized>(model: &M, g: &mut Graph, x: Var, t: f64) -> Result<(Var, Var)> {
    let (_, z1) = model.forward(g, x, None, t)?;
    let z1 = z1.ok_or_else(|| Error::invalid("two-pass forward needs a stateful model"))?;
    let z_tilde = g.detach(z1)?;
    let (v, _) = model.forward(g, x, Some(z_tilde), t)?;
    Ok((v, z_tilde))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Rin,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "rin" => Ok(Self::Rin),
            other => Err(Error::invalid(format!("unknown model kind '{other}' (expected mlp or rin)"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mlp => "mlp",
            Self::Rin => "rin",
        })
    }
}

/// Either model, for code that picks the architecture at run time.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Mlp(MlpField),
    Rin(Rin),
}

impl AnyModel {
    pub fn new(kind: ModelKind, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Mlp => Self::Mlp(MlpField::new(MlpConfig::default(), seed)?),
            ModelKind::Rin => Self::Rin(Rin::new(RinConfig::default(), seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Mlp(_) => ModelKind::Mlp,
            Self::Rin(_) => ModelKind::Rin,
        }
    }

    fn inner(&self) -> &dyn VelocityModel {
        match self {
            Self::Mlp(m) => m,
            Self::Rin(m) => m,
        }
    }
}

impl VelocityModel for AnyModel {
    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::Mlp(m) => m.params_mut(),
            Self::Rin(m) => m.params_mut(),
        }
    }

    fn latent_shape(&self) -> Option<(usize, usize)> {
        self.inner().latent_shape()
    }

    fn forward(&self, g: &mut Graph, x: Var, z: Option<Var>, t: f64) -> Result<(Var, Option<Var>)> {
        self.inner().forward(g, x, z, t)
    }
}

/// `n x 3` tensor of a cloud's coordinates.
pub fn cloud_tensor(cloud: &PointCloud) -> Tensor {
    Tensor::matrix(cloud.len(), 3, cloud.to_flat()).expect("three columns")
}

/// Rows of an `n x 3` tensor as points.
pub fn tensor_points(t: &Tensor) -> Vec<Point3> {
    (0..t.rows()).map(|i| [t.at(i, 0), t.at(i, 1), t.at(i, 2)]).collect()
}

/// Errors unless `actual` has exactly the parameter names and shapes of
/// `reference`.
pub(crate) fn check_layout(reference: &ParamStore, actual: &ParamStore) -> Result<()> {
    if reference.len() != actual.len() {
        return Err(Error::invalid(format!(
            "expected {} parameter tensors, found {}",
            reference.len(),
            actual.len()
        )));
    }
    for (name, t) in reference.iter() {
        match actual.get(name) {
            Some(a) if a.same_shape(t) => {}
            Some(a) => {
                return Err(Error::invalid(format!(
                    "parameter '{name}' has shape {:?}, expected {:?}",
                    a.shape(),
                    t.shape()
                )))
            }
            None => return Err(Error::invalid(format!("parameter '{name}' is missing"))),
        }
    }
    Ok(())
}
