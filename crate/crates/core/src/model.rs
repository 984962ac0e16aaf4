//! Model interfaces consumed by the training harness.
//!
//! The harness speaks `f64` tensors at its boundary; a network trained in
//! `f32` converts on the way in and out.

use std::path::Path;

use crate::checkpoint;
use crate::corrupt::TaskKind;
use crate::error::{Error, Result};
use crate::net::EncoderDecoder;
use crate::nn::{mse_loss, Adam};
use crate::tensor::{Scalar, Tensor4};

/// Eval-mode restoration of fixed-size patches.
pub trait Restorer {
    fn channels(&self) -> usize;

    /// Square spatial extent accepted by [`Restorer::restore_batch`].
    fn patch_size(&self) -> usize;

    fn restore_batch(&self, corrupted: &Tensor4<f64>) -> Result<Tensor4<f64>>;
}

/// A restorer the training loop can update.
pub trait Trainable: Restorer {
    /// One optimization step; returns the batch loss before the update.
    fn train_step(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>, adam: &Adam) -> Result<f64>;

    /// Per-sample losses used to pick hard examples; must not change weights.
    fn sample_losses(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>) -> Result<Vec<f64>>;

    fn save(&self, task: Option<TaskKind>, path: &Path) -> Result<()>;
}

impl<T: Scalar> Restorer for EncoderDecoder<T> {
    fn channels(&self) -> usize {
        self.cfg.input_channels
    }

    fn patch_size(&self) -> usize {
        self.cfg.input_size
    }

    fn restore_batch(&self, corrupted: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        Ok(self.restore(&corrupted.cast::<T>())?.cast())
    }
}

impl<T: Scalar> Trainable for EncoderDecoder<T> {
    fn train_step(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>, adam: &Adam) -> Result<f64> {
        EncoderDecoder::train_step(self, &corrupted.cast(), &target.cast(), adam)
    }

    fn sample_losses(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>) -> Result<Vec<f64>> {
        EncoderDecoder::sample_losses(self, &corrupted.cast(), &target.cast())
    }

    fn save(&self, task: Option<TaskKind>, path: &Path) -> Result<()> {
        checkpoint::save_checkpoint(self, task, path)
    }
}

/// Output equals input. Serves as the "no restoration" reference and as a
/// stub model in tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityRestorer {
    pub channels: usize,
    pub size: usize,
}

impl Restorer for IdentityRestorer {
    fn channels(&self) -> usize {
        self.channels
    }

    fn patch_size(&self) -> usize {
        self.size
    }

    fn restore_batch(&self, corrupted: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        let d = corrupted.dims();
        if d.h != self.size || d.w != self.size {
            return Err(Error::InputSize {
                h: d.h,
                w: d.w,
                size: self.size,
            });
        }
        Ok(corrupted.clone())
    }
}

impl Trainable for IdentityRestorer {
    fn train_step(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>, _adam: &Adam) -> Result<f64> {
        Ok(mse_loss(corrupted, target)?.0)
    }

    fn sample_losses(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>) -> Result<Vec<f64>> {
        (0..corrupted.dims().n)
            .map(|n| Ok(mse_loss(&corrupted.sample_tensor(n), &target.sample_tensor(n))?.0))
            .collect()
    }

    fn save(&self, task: Option<TaskKind>, path: &Path) -> Result<()> {
        checkpoint::save_identity(self, task, path)
    }
}

/// Anything a checkpoint can hold.
#[derive(Debug, Clone)]
pub enum Model<T: Scalar> {
    Network(EncoderDecoder<T>),
    Identity(IdentityRestorer),
}

impl<T: Scalar> Restorer for Model<T> {
    fn channels(&self) -> usize {
        match self {
            Model::Network(n) => n.channels(),
            Model::Identity(i) => i.channels(),
        }
    }

    fn patch_size(&self) -> usize {
        match self {
            Model::Network(n) => n.patch_size(),
            Model::Identity(i) => i.patch_size(),
        }
    }

    fn restore_batch(&self, corrupted: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        match self {
            Model::Network(n) => n.restore_batch(corrupted),
            Model::Identity(i) => i.restore_batch(corrupted),
        }
    }
}

impl<T: Scalar> Trainable for Model<T> {
    fn train_step(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>, adam: &Adam) -> Result<f64> {
        match self {
            Model::Network(n) => Trainable::train_step(n, corrupted, target, adam),
            Model::Identity(i) => i.train_step(corrupted, target, adam),
        }
    }

    fn sample_losses(&mut self, corrupted: &Tensor4<f64>, target: &Tensor4<f64>) -> Result<Vec<f64>> {
        match self {
            Model::Network(n) => Trainable::sample_losses(n, corrupted, target),
            Model::Identity(i) => i.sample_losses(corrupted, target),
        }
    }

    fn save(&self, task: Option<TaskKind>, path: &Path) -> Result<()> {
        match self {
            Model::Network(n) => n.save(task, path),
            Model::Identity(i) => i.save(task, path),
        }
    }
}
