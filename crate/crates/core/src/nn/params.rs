use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every parameter plus the shared step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// Named parameters with their optimizer state. Names iterate in sorted
/// order, which keeps every traversal deterministic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    adam: Option<AdamState>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    grads: BTreeMap<String, Tensor>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros_like(v)))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub(crate) fn set(&mut self, name: &str, g: Tensor) {
        self.grads.insert(name.to_string(), g);
    }

    pub fn insert(&mut self, name: impl Into<String>, g: Tensor) {
        self.grads.insert(name.into(), g);
    }

    /// Adds `other` into `self`; both must carry the same keys and shapes.
    pub fn accumulate(&mut self, other: &Grads) -> Result<()> {
        for (k, g) in &other.grads {
            let mine = self
                .grads
                .get_mut(k)
                .ok_or_else(|| Error::invalid(format!("gradient '{k}' has no counterpart")))?;
            if !mine.same_shape(g) {
                return Err(Error::invalid(format!("gradient '{k}' shape mismatch")));
            }
            mine.add_assign(g);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter '{name}'")));
        }
        if !t.is_finite() {
            return Err(Error::invalid(format!("parameter '{name}' is not finite")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weight of shape `fan_in x fan_out`.
    pub fn init_uniform(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let s = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-s..=s)).collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(rows, cols))
    }

    pub fn init_full(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert(name, Tensor::full(rows, cols, value))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn zero_all(&mut self) {
        for t in self.params.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn adam_state(&self) -> Option<&AdamState> {
        self.adam.as_ref()
    }

    pub fn set_adam_state(&mut self, state: Option<AdamState>) -> Result<()> {
        if let Some(s) = &state {
            for (name, p) in &self.params {
                let ok = |m: &BTreeMap<String, Tensor>| m.get(name).is_some_and(|t| t.same_shape(p));
                if !ok(&s.m) || !ok(&s.v) {
                    return Err(Error::invalid(format!("optimizer moments for '{name}' are missing or misshapen")));
                }
            }
            if s.m.len() != self.params.len() || s.v.len() != self.params.len() {
                return Err(Error::invalid("optimizer state names do not match the parameters"));
            }
        }
        self.adam = state;
        Ok(())
    }

    pub fn from_parts(params: BTreeMap<String, Tensor>, adam: Option<AdamState>) -> Result<Self> {
        let mut store = Self::new();
        for (name, t) in params {
            store.insert(name, t)?;
        }
        store.set_adam_state(adam)?;
        Ok(store)
    }

    pub fn into_parts(self) -> (BTreeMap<String, Tensor>, Option<AdamState>) {
        (self.params, self.adam)
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grads: &Grads, lr: f64, cfg: AdamConfig) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be finite and nonnegative, got {lr}")));
        }
        for (name, p) in &self.params {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("missing gradient for parameter '{name}'")))?;
            if !g.same_shape(p) {
                return Err(Error::invalid(format!("gradient for '{name}' has the wrong shape")));
            }
            if !g.is_finite() {
                return Err(Error::numeric(format!("gradient for '{name}' is not finite")));
            }
        }
        let params = &mut self.params;
        let state = self.adam.get_or_insert_with(|| AdamState {
            step: 0,
            m: params.iter().map(|(k, v)| (k.clone(), Tensor::zeros_like(v))).collect(),
            v: params.iter().map(|(k, v)| (k.clone(), Tensor::zeros_like(v))).collect(),
        });
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            let m = state.m.get_mut(name).expect("moment");
            let v = state.v.get_mut(name).expect("moment");
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
                *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
