//! Minimal differentiable compute core: dense and convolutional layers with
//! analytic backprop, positional encoding, losses and Adam.
//!
//! There is no autodiff graph. Every forward pass that will be differentiated
//! returns a tape, and callers chain the backward calls by hand.

mod adam;
mod config;
mod conv;
mod loss;
mod matrix;
mod mlp;
mod posenc;

pub use adam::{Adam, AdamConfig};
pub use config::TrainConfig;
pub use conv::{Conv2d, ConvStack, ConvStackTape, ConvTape, FeatureMap};
pub use loss::{bce, bce_grad, BCE_EPS};
pub use matrix::{gemm, Mat};
pub use mlp::{sigmoid, softplus, Activation, Layer, MlpNet, MlpTape};
pub use posenc::PosEnc;

/// Anything an optimizer can update: pairs of (parameters, gradients).
pub trait Params {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64]));
    fn param_count(&self) -> usize;
}
