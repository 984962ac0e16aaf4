//! Differentiable layers, loss, optimizer and gradient checking.
//!
//! Every layer exposes a stateless forward/backward pair as free functions
//! plus a [`Module`] wrapper that caches what its backward pass needs, so a
//! fixed sequential network can chain them.

mod activation;
mod adam;
mod batchnorm;
mod channel_fc;
mod conv;
pub mod gradcheck;
mod loss;
mod param;

pub use activation::{activation_backward, activation_forward, Activation, ActivationKind};
pub use adam::Adam;
pub use batchnorm::{BatchNorm, RunningStats};
pub use channel_fc::{channelwise_fc_backward, channelwise_fc_forward, ChannelwiseFc};
pub use conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, Conv2d, ConvGeometry,
    Deconv2d,
};
pub use loss::mse_loss;
pub use param::{gaussian_init, Parameter};

use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

/// Whether batch normalization uses batch statistics (and updates its
/// running averages) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Layer description used when assembling a network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerConfig {
    Conv(ConvGeometry),
    Deconv(ConvGeometry),
    BatchNorm {
        channels: usize,
        epsilon: f64,
        momentum: f64,
    },
    Activation(ActivationKind),
    ChannelwiseFc {
        channels: usize,
        spatial: usize,
    },
}

/// A layer with a cached forward pass.
pub trait Module<T: Scalar> {
    /// Forward pass. In [`Mode::Train`] the inputs needed by
    /// [`Module::backward`] are retained.
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>>;

    /// Eval-mode forward pass without touching any cached state.
    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>>;

    /// Backward pass for the most recent train-mode forward. Parameter
    /// gradients accumulate; the input gradient is returned.
    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>>;

    fn parameters(&self) -> Vec<&Parameter<T>> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        Vec::new()
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

pub(crate) fn missing_cache(layer: &str) -> crate::error::Error {
    crate::error::Error::Config(format!("{layer}: backward called without a train-mode forward"))
}
