//! Minimal dense network stack: fully connected layers with rectifier hidden
//! activations, tempered softmax, cross-entropy and first-order optimizers.

mod loss;
mod mlp;
mod optim;

pub use loss::{cross_entropy, log_softmax_t, softmax_t};
pub use mlp::{init_mlp, ForwardCache, Gradients, Layer, MlpModel};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerState};
