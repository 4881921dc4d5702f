//! Reverse-mode autodiff over dense f64 matrices.
//!
//! A [`Graph`] records each primitive as it is evaluated; [`Graph::backward`]
//! walks the tape once in reverse. Parameters live in a [`ParamStore`] and are
//! bound into a graph by name, so the same store can feed many graphs.

mod graph;
mod layers;
mod params;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use layers::{
    init_layer_norm, init_linear, init_mha, init_mlp_block, layer_norm, linear, mha, mlp_block, time_embed,
    TIME_EMBED_MAX_FREQ,
};
pub use params::{AdamConfig, AdamState, Grads, ParamStore};
pub use tensor::Tensor;
