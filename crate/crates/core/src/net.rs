//! The symmetric encoder-decoder restoration network.
//!
//! ```text
//! input (C x 64 x 64)
//!   4 x [conv 4x4/2/1 -> batchnorm -> leaky relu(0.2)]     64 -> 32 -> 16 -> 8 -> 4
//!   channel-wise fully-connected (per channel 16 x 16)
//!   3 x [deconv 4x4/2/1 -> relu], deconv 4x4/2/1 -> tanh   4 -> 8 -> 16 -> 32 -> 64
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    mse_loss, Activation, ActivationKind, Adam, BatchNorm, ChannelwiseFc, Conv2d, ConvGeometry,
    Deconv2d, LayerConfig, Mode, Module, Parameter,
};
use crate::rng::Stream;
use crate::tensor::{Dims, Scalar, Tensor4};

pub const INIT_STD: f64 = 0.02;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const KERNEL: usize = 4;
const STRIDE: usize = 2;
const PADDING: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub latent_spatial: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_size: 64,
            encoder_channels: vec![64, 128, 256, 512],
            latent_spatial: 4,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(Error::Config("encoder_channels must be non-empty and positive".into()));
        }
        let depth = self.encoder_channels.len() as u32;
        let scale = 1usize
            .checked_shl(depth)
            .ok_or_else(|| Error::Config("too many encoder layers".into()))?;
        if self.latent_spatial == 0 || self.input_size != self.latent_spatial * scale {
            return Err(Error::Config(format!(
                "input_size {} must equal latent_spatial {} x 2^{} ",
                self.input_size, self.latent_spatial, depth
            )));
        }
        Ok(())
    }

    /// Layer sequence this configuration builds.
    pub fn layer_configs(&self) -> Vec<LayerConfig> {
        let mut widths = vec![self.input_channels];
        widths.extend(&self.encoder_channels);
        let depth = self.encoder_channels.len();
        let mut out = Vec::new();
        for i in 0..depth {
            out.push(LayerConfig::Conv(ConvGeometry::new(widths[i], widths[i + 1], KERNEL, STRIDE, PADDING)));
            out.push(LayerConfig::BatchNorm {
                channels: widths[i + 1],
                epsilon: BN_EPSILON,
                momentum: BN_MOMENTUM,
            });
            out.push(LayerConfig::Activation(ActivationKind::LEAKY_RELU));
        }
        out.push(LayerConfig::ChannelwiseFc {
            channels: widths[depth],
            spatial: self.latent_spatial,
        });
        for i in (0..depth).rev() {
            out.push(LayerConfig::Deconv(ConvGeometry::new(widths[i + 1], widths[i], KERNEL, STRIDE, PADDING)));
            out.push(LayerConfig::Activation(if i == 0 {
                ActivationKind::Tanh
            } else {
                ActivationKind::Relu
            }));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    Deconv(Deconv2d<T>),
    BatchNorm(BatchNorm<T>),
    Activation(Activation<T>),
    ChannelwiseFc(ChannelwiseFc<T>),
}

impl<T: Scalar> Layer<T> {
    fn as_module(&self) -> &dyn Module<T> {
        match self {
            Layer::Conv(l) => l,
            Layer::Deconv(l) => l,
            Layer::BatchNorm(l) => l,
            Layer::Activation(l) => l,
            Layer::ChannelwiseFc(l) => l,
        }
    }

    fn as_module_mut(&mut self) -> &mut dyn Module<T> {
        match self {
            Layer::Conv(l) => l,
            Layer::Deconv(l) => l,
            Layer::BatchNorm(l) => l,
            Layer::Activation(l) => l,
            Layer::ChannelwiseFc(l) => l,
        }
    }
}

impl<T: Scalar> Module<T> for Layer<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.as_module_mut().forward(input, mode)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.as_module().infer(input)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.as_module_mut().backward(upstream)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        self.as_module().parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.as_module_mut().parameters_mut()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderDecoder<T: Scalar> {
    pub cfg: NetworkConfig,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> EncoderDecoder<T> {
    /// Deterministic construction from `cfg.seed`: N(0, 0.02) weights, zero
    /// biases, unit gamma, and running statistics initialized to (0, 1).
    pub fn build(cfg: NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Stream::keyed(cfg.seed, &[0x6e6574]);
        let mut layers = Vec::new();
        let (mut enc, mut dec) = (0, cfg.encoder_channels.len());
        for lc in cfg.layer_configs() {
            let layer = match lc {
                LayerConfig::Conv(g) => {
                    enc += 1;
                    Layer::Conv(Conv2d::new(&format!("enc{enc}.conv"), g, INIT_STD, &mut rng)?)
                }
                LayerConfig::BatchNorm {
                    channels,
                    epsilon,
                    momentum,
                } => Layer::BatchNorm(
                    BatchNorm::new(&format!("enc{enc}.bn"), channels, epsilon, momentum).with_standard_stats(),
                ),
                LayerConfig::Activation(kind) => Layer::Activation(Activation::new(kind)),
                LayerConfig::ChannelwiseFc { channels, spatial } => Layer::ChannelwiseFc(ChannelwiseFc::new(
                    "latent.fc",
                    channels,
                    spatial,
                    spatial,
                    INIT_STD,
                    &mut rng,
                )),
                LayerConfig::Deconv(g) => {
                    let l = Layer::Deconv(Deconv2d::new(&format!("dec{dec}.deconv"), g, INIT_STD, &mut rng)?);
                    dec -= 1;
                    l
                }
            };
            layers.push(layer);
        }
        Ok(Self { cfg, layers })
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub fn batchnorms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        let d = x.dims();
        if d.h != self.cfg.input_size || d.w != self.cfg.input_size {
            return Err(Error::InputSize {
                h: d.h,
                w: d.w,
                size: self.cfg.input_size,
            });
        }
        if d.c != self.cfg.input_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, network expects {}",
                d.c, self.cfg.input_channels
            )));
        }
        Ok(())
    }

    /// Eval-mode forward pass, `f(C, w)`.
    pub fn restore(&self, corrupted: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(corrupted)?;
        let mut x = corrupted.clone();
        for layer in &self.layers {
            x = layer.infer(&x)?;
        }
        Ok(x)
    }

    /// Forward pass retaining activations (train mode) for [`Self::backward`].
    pub fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// One forward, MSE, backward and ADAM update. Returns the loss before the update.
    pub fn train_step(&mut self, corrupted: &Tensor4<T>, target: &Tensor4<T>, adam: &Adam) -> Result<f64> {
        if corrupted.dims() != target.dims() {
            return Err(Error::Shape(format!(
                "train_step: corrupted {} vs target {}",
                corrupted.dims(),
                target.dims()
            )));
        }
        let restored = self.forward(corrupted, Mode::Train)?;
        let (loss, grad) = mse_loss(&restored, target)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        for p in self.parameters_mut() {
            p.zero_grad();
        }
        self.backward(&grad)?;
        adam.step(self.parameters_mut())?;
        Ok(loss)
    }

    /// Per-sample MSE under a train-mode forward (batch statistics), without updating weights.
    pub fn sample_losses(&mut self, corrupted: &Tensor4<T>, target: &Tensor4<T>) -> Result<Vec<f64>> {
        let restored = self.forward(corrupted, Mode::Train)?;
        target.require_dims(restored.dims(), "sample_losses target")?;
        let per = restored.dims().sample();
        Ok((0..restored.dims().n)
            .map(|n| {
                restored
                    .sample(n)
                    .iter()
                    .zip(target.sample(n))
                    .map(|(a, b)| (a.f64() - b.f64()).powi(2))
                    .sum::<f64>()
                    / per as f64
            })
            .collect())
    }

    /// Same weights and state in another precision.
    pub fn cast<U: Scalar>(&self) -> EncoderDecoder<U> {
        fn p<T: Scalar, U: Scalar>(p: &Parameter<T>) -> Parameter<U> {
            Parameter {
                name: p.name.clone(),
                value: p.value.cast(),
                grad: p.grad.cast(),
                adam_m: p.adam_m.cast(),
                adam_v: p.adam_v.cast(),
                step_count: p.step_count,
            }
        }
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => Layer::Conv(Conv2d::from_parts(c.geom, p(&c.weight), p(&c.bias)).expect("same geometry")),
                Layer::Deconv(c) => {
                    Layer::Deconv(Deconv2d::from_parts(c.geom, p(&c.weight), p(&c.bias)).expect("same geometry"))
                }
                Layer::BatchNorm(b) => {
                    let mut nb = BatchNorm::new("", b.channels, b.epsilon, b.momentum);
                    nb.gamma = p(&b.gamma);
                    nb.beta = p(&b.beta);
                    nb.running = b.running.clone();
                    Layer::BatchNorm(nb)
                }
                Layer::Activation(a) => Layer::Activation(Activation::new(a.kind)),
                Layer::ChannelwiseFc(f) => Layer::ChannelwiseFc(
                    ChannelwiseFc::from_parts(f.channels, f.spatial.0, f.spatial.1, p(&f.weight), p(&f.bias))
                        .expect("same geometry"),
                ),
            })
            .collect();
        EncoderDecoder {
            cfg: self.cfg.clone(),
            layers,
        }
    }

    pub fn input_dims(&self, n: usize) -> Dims {
        Dims::new(n, self.cfg.input_channels, self.cfg.input_size, self.cfg.input_size)
    }
}

impl<T: Scalar> Module<T> for EncoderDecoder<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        EncoderDecoder::forward(self, input, mode)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.restore(input)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        EncoderDecoder::backward(self, upstream)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        EncoderDecoder::parameters(self)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        EncoderDecoder::parameters_mut(self)
    }
}
