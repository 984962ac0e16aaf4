use crate::error::Result;
use crate::tensor::{Scalar, Tensor4};

use super::{missing_cache, Mode, Module};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    LeakyRelu { negative_slope: f64 },
    Relu,
    Tanh,
}

impl ActivationKind {
    pub const LEAKY_RELU: Self = ActivationKind::LeakyRelu { negative_slope: 0.2 };

    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            ActivationKind::LeakyRelu { negative_slope } => {
                if x >= T::zero() {
                    x
                } else {
                    T::of(negative_slope) * x
                }
            }
            ActivationKind::Relu => x.max(T::zero()),
            ActivationKind::Tanh => x.tanh(),
        }
    }
}

pub fn activation_forward<T: Scalar>(input: &Tensor4<T>, kind: ActivationKind) -> Tensor4<T> {
    input.map(|v| kind.apply(v))
}

/// Input gradient given the forward input and output.
pub fn activation_backward<T: Scalar>(
    input: &Tensor4<T>,
    output: &Tensor4<T>,
    upstream: &Tensor4<T>,
    kind: ActivationKind,
) -> Result<Tensor4<T>> {
    upstream.require_dims(input.dims(), "activation backward upstream")?;
    let mut grad = upstream.clone();
    match kind {
        ActivationKind::LeakyRelu { negative_slope } => {
            let s = T::of(negative_slope);
            for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
                if x < T::zero() {
                    *g = *g * s;
                }
            }
        }
        ActivationKind::Relu => {
            for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
                if x < T::zero() {
                    *g = T::zero();
                }
            }
        }
        ActivationKind::Tanh => {
            for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                *g = *g * (T::one() - y * y);
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct Activation<T: Scalar> {
    pub kind: ActivationKind,
    cache: Option<(Tensor4<T>, Tensor4<T>)>,
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Self { kind, cache: None }
    }
}

impl<T: Scalar> Module<T> for Activation<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let out = activation_forward(input, self.kind);
        self.cache = (mode == Mode::Train).then(|| (input.clone(), out.clone()));
        Ok(out)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(activation_forward(input, self.kind))
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (input, output) = self.cache.take().ok_or_else(|| missing_cache("activation"))?;
        activation_backward(&input, &output, upstream, self.kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn scalar(v: f64) -> Tensor4<f64> {
        Tensor4::full(Dims::new(1, 1, 1, 1), v)
    }

    #[test]
    fn definitions() {
        assert_eq!(activation_forward(&scalar(0.0), ActivationKind::Tanh).data()[0], 0.0);
        assert_eq!(activation_forward(&scalar(-3.0), ActivationKind::Relu).data()[0], 0.0);
        assert_eq!(
            activation_forward(&scalar(-1.0), ActivationKind::LEAKY_RELU).data()[0],
            -0.2
        );
        assert_eq!(
            activation_forward(&scalar(2.0), ActivationKind::LEAKY_RELU).data()[0],
            2.0
        );
    }

    #[test]
    fn shape_is_preserved() {
        let x = Tensor4::<f64>::full(Dims::new(2, 3, 4, 5), -0.5);
        assert_eq!(activation_forward(&x, ActivationKind::Relu).dims(), x.dims());
    }
}
