//! Channel-wise fully-connected layer.
//!
//! Each channel's `h*w` activations are mapped by that channel's own dense
//! `(h*w) x (h*w)` matrix plus bias; channels never mix.

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Dims, Scalar, Tensor4};

use super::param::{gaussian_init, Parameter};
use super::{missing_cache, Mode, Module};

/// Weight dims `(C, 1, hw, hw)` (row = output position) and bias dims `(1, C, h, w)`.
pub fn channel_fc_dims(channels: usize, h: usize, w: usize) -> (Dims, Dims) {
    let hw = h * w;
    (Dims::new(channels, 1, hw, hw), Dims::new(1, channels, h, w))
}

fn check<T: Scalar>(input: Dims, weight: &Parameter<T>, bias: &Parameter<T>) -> Result<()> {
    let (wd, bd) = channel_fc_dims(input.c, input.h, input.w);
    if weight.dims() != wd {
        return Err(Error::Config(format!(
            "channelwise_fc: weight dims {} inconsistent with {} channels of {} positions",
            weight.dims(),
            input.c,
            input.plane()
        )));
    }
    if bias.dims() != bd {
        return Err(Error::Config(format!(
            "channelwise_fc: bias dims {} inconsistent with input {}",
            bias.dims(),
            input
        )));
    }
    Ok(())
}

pub fn channelwise_fc_forward<T: Scalar>(
    input: &Tensor4<T>,
    weight: &Parameter<T>,
    bias: &Parameter<T>,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check(d, weight, bias)?;
    let hw = d.plane();
    let cs = (d.c * hw) as isize;
    let mut out = Tensor4::zeros(d);
    for n in 0..d.n {
        out.data_mut()[n * d.sample()..][..d.sample()].copy_from_slice(bias.value.data());
    }
    for c in 0..d.c {
        let wmat = &weight.value.data()[c * hw * hw..][..hw * hw];
        // Channel c of every sample viewed as an hw x n matrix.
        let off = c * hw;
        T::gemm(
            hw,
            hw,
            d.n,
            T::one(),
            wmat,
            (hw as isize, 1),
            &input.data()[off..],
            (1, cs),
            T::one(),
            &mut out.data_mut()[off..],
            (1, cs),
        );
    }
    Ok(out)
}

pub fn channelwise_fc_backward<T: Scalar>(
    input: &Tensor4<T>,
    upstream: &Tensor4<T>,
    weight: &mut Parameter<T>,
    bias: &mut Parameter<T>,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    check(d, weight, bias)?;
    upstream.require_dims(d, "channelwise_fc backward upstream")?;
    let hw = d.plane();
    let cs = (d.c * hw) as isize;
    let mut grad_input = Tensor4::zeros(d);
    for c in 0..d.c {
        let off = c * hw;
        let wgrad = &mut weight.grad.data_mut()[c * hw * hw..][..hw * hw];
        T::gemm(
            hw,
            d.n,
            hw,
            T::one(),
            &upstream.data()[off..],
            (1, cs),
            &input.data()[off..],
            (cs, 1),
            T::one(),
            wgrad,
            (hw as isize, 1),
        );
        let wmat = &weight.value.data()[c * hw * hw..][..hw * hw];
        T::gemm(
            hw,
            hw,
            d.n,
            T::one(),
            wmat,
            (1, hw as isize),
            &upstream.data()[off..],
            (1, cs),
            T::zero(),
            &mut grad_input.data_mut()[off..],
            (1, cs),
        );
    }
    let bgrad = bias.grad.data_mut();
    for n in 0..d.n {
        for (g, &u) in bgrad.iter_mut().zip(upstream.sample(n)) {
            *g = *g + u;
        }
    }
    Ok(grad_input)
}

#[derive(Debug, Clone)]
pub struct ChannelwiseFc<T: Scalar> {
    pub channels: usize,
    pub spatial: (usize, usize),
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    cache: Option<Tensor4<T>>,
}

impl<T: Scalar> ChannelwiseFc<T> {
    pub fn new(name: &str, channels: usize, h: usize, w: usize, init_std: f64, rng: &mut Stream) -> Self {
        let (wd, bd) = channel_fc_dims(channels, h, w);
        Self {
            channels,
            spatial: (h, w),
            weight: Parameter::new(format!("{name}.weight"), gaussian_init(wd, init_std, rng)),
            bias: Parameter::zeros(format!("{name}.bias"), bd),
            cache: None,
        }
    }

    /// Identity matrices and zero bias.
    pub fn identity(name: &str, channels: usize, h: usize, w: usize) -> Self {
        let (wd, bd) = channel_fc_dims(channels, h, w);
        let hw = h * w;
        let weight = Tensor4::from_fn(wd, |_, _, r, c| if r == c { T::one() } else { T::zero() });
        debug_assert_eq!(weight.len(), channels * hw * hw);
        Self {
            channels,
            spatial: (h, w),
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::zeros(format!("{name}.bias"), bd),
            cache: None,
        }
    }

    pub fn from_parts(channels: usize, h: usize, w: usize, weight: Parameter<T>, bias: Parameter<T>) -> Result<Self> {
        check(Dims::new(1, channels, h, w), &weight, &bias)?;
        Ok(Self {
            channels,
            spatial: (h, w),
            weight,
            bias,
            cache: None,
        })
    }
}

impl<T: Scalar> Module<T> for ChannelwiseFc<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let out = channelwise_fc_forward(input, &self.weight, &self.bias)?;
        self.cache = (mode == Mode::Train).then(|| input.clone());
        Ok(out)
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        channelwise_fc_forward(input, &self.weight, &self.bias)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let input = self.cache.take().ok_or_else(|| missing_cache("channelwise_fc"))?;
        channelwise_fc_backward(&input, upstream, &mut self.weight, &mut self.bias)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(dims: Dims, seed: u64) -> Tensor4<f64> {
        gaussian_init(dims, 1.0, &mut Stream::new(seed))
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let fc = ChannelwiseFc::<f64>::identity("fc", 3, 4, 4);
        let x = random(Dims::new(2, 3, 4, 4), 1);
        assert_eq!(fc.infer(&x).unwrap(), x);
    }

    #[test]
    fn matches_per_sample_matrix_vector_products() {
        let mut rng = Stream::new(2);
        let fc = ChannelwiseFc::<f64>::new("fc", 2, 3, 2, 1.0, &mut rng);
        let x = random(Dims::new(3, 2, 3, 2), 3);
        let y = fc.infer(&x).unwrap();
        let hw = 6;
        for n in 0..3 {
            for c in 0..2 {
                for r in 0..hw {
                    let mut acc = fc.bias.value.plane(0, c)[r];
                    for k in 0..hw {
                        acc += fc.weight.value.data()[c * hw * hw + r * hw + k] * x.plane(n, c)[k];
                    }
                    assert!((y.plane(n, c)[r] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbing_one_channel_leaves_others_untouched() {
        let mut rng = Stream::new(4);
        let fc = ChannelwiseFc::<f64>::new("fc", 4, 4, 4, 1.0, &mut rng);
        let x = random(Dims::new(2, 4, 4, 4), 5);
        let base = fc.infer(&x).unwrap();
        let mut x2 = x.clone();
        x2.plane_mut(1, 2).iter_mut().for_each(|v| *v += 0.5);
        let moved = fc.infer(&x2).unwrap();
        for n in 0..2 {
            for c in 0..4 {
                let same = base.plane(n, c) == moved.plane(n, c);
                assert_eq!(same, !(n == 1 && c == 2), "sample {n} channel {c}");
            }
        }
    }

    #[test]
    fn inconsistent_weights_rejected() {
        let mut rng = Stream::new(6);
        let fc = ChannelwiseFc::<f64>::new("fc", 2, 4, 4, 1.0, &mut rng);
        assert!(fc.infer(&Tensor4::zeros(Dims::new(1, 3, 4, 4))).is_err());
        assert!(fc.infer(&Tensor4::zeros(Dims::new(1, 2, 2, 2))).is_err());
    }
}
