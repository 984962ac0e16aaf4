use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor4};

use super::param::Parameter;
use super::{missing_cache, Mode, Module};

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    /// Mean 0, variance 1 for every channel.
    pub fn standard(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BnCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<f64>,
}

/// Per-channel batch normalization over (n, h, w).
///
/// Running statistics are updated as `r = (1 - momentum) r + momentum b`,
/// using the unbiased batch variance.
pub struct BatchNorm<T: Scalar> {
    pub channels: usize,
    pub epsilon: f64,
    pub momentum: f64,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running: Option<RunningStats>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> std::fmt::Debug for BatchNorm<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BatchNorm")
            .field("channels", &self.channels)
            .field("epsilon", &self.epsilon)
            .field("momentum", &self.momentum)
            .field("running", &self.running.is_some())
            .finish()
    }
}

impl<T: Scalar> Clone for BatchNorm<T> {
    fn clone(&self) -> Self {
        Self {
            channels: self.channels,
            epsilon: self.epsilon,
            momentum: self.momentum,
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running: self.running.clone(),
            cache: None,
        }
    }
}

impl<T: Scalar> BatchNorm<T> {
    /// gamma = 1, beta = 0, no running statistics yet.
    pub fn new(name: &str, channels: usize, epsilon: f64, momentum: f64) -> Self {
        let dims = Dims::new(1, channels, 1, 1);
        Self {
            channels,
            epsilon,
            momentum,
            gamma: Parameter::new(format!("{name}.gamma"), Tensor4::full(dims, T::one())),
            beta: Parameter::zeros(format!("{name}.beta"), dims),
            running: None,
            cache: None,
        }
    }

    pub fn with_standard_stats(mut self) -> Self {
        self.running = Some(RunningStats::standard(self.channels));
        self
    }

    fn check(&self, d: Dims) -> Result<()> {
        if d.c != self.channels {
            return Err(Error::Config(format!(
                "batchnorm: input has {} channels, layer has {}",
                d.c, self.channels
            )));
        }
        Ok(())
    }

    fn apply(&self, input: &Tensor4<T>, mean: &[f64], inv_std: &[f64]) -> (Tensor4<T>, Tensor4<T>) {
        let d = input.dims();
        let mut normalized = Tensor4::zeros(d);
        let mut out = Tensor4::zeros(d);
        for c in 0..d.c {
            let (g, b) = (self.gamma.value.data()[c], self.beta.value.data()[c]);
            let (m, s) = (T::of(mean[c]), T::of(inv_std[c]));
            for n in 0..d.n {
                let src = input.plane(n, c);
                let xh = normalized.plane_mut(n, c);
                for (o, &v) in xh.iter_mut().zip(src) {
                    *o = (v - m) * s;
                }
                let xh = normalized.plane(n, c);
                let dst = out.plane_mut(n, c);
                for (o, &v) in dst.iter_mut().zip(xh) {
                    *o = g * v + b;
                }
            }
        }
        (out, normalized)
    }

    fn train_forward(&mut self, input: &Tensor4<T>) -> Result<(Tensor4<T>, BnCache<T>)> {
        let d = input.dims();
        self.check(d)?;
        let count = d.n * d.plane();
        if count < 2 {
            return Err(Error::Config(format!(
                "batchnorm train mode needs at least 2 values per channel, got {count}"
            )));
        }
        let mut mean = vec![0.0; d.c];
        let mut var = vec![0.0; d.c];
        for c in 0..d.c {
            let s: f64 = (0..d.n).flat_map(|n| input.plane(n, c)).map(|v| v.f64()).sum();
            let m = s / count as f64;
            let ss: f64 = (0..d.n)
                .flat_map(|n| input.plane(n, c))
                .map(|v| (v.f64() - m).powi(2))
                .sum();
            mean[c] = m;
            var[c] = ss / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let (out, normalized) = self.apply(input, &mean, &inv_std);

        let mom = self.momentum;
        let unbias = count as f64 / (count as f64 - 1.0);
        let running = self
            .running
            .get_or_insert_with(|| RunningStats::standard(d.c));
        for c in 0..d.c {
            running.mean[c] = (1.0 - mom) * running.mean[c] + mom * mean[c];
            running.var[c] = (1.0 - mom) * running.var[c] + mom * var[c] * unbias;
        }
        Ok((out, BnCache { normalized, inv_std }))
    }
}

impl<T: Scalar> Module<T> for BatchNorm<T> {
    fn forward(&mut self, input: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        match mode {
            Mode::Train => {
                let (out, cache) = self.train_forward(input)?;
                self.cache = Some(cache);
                Ok(out)
            }
            Mode::Eval => {
                self.cache = None;
                self.infer(input)
            }
        }
    }

    fn infer(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(input.dims())?;
        let running = self.running.as_ref().ok_or(Error::MissingRunningStats)?;
        let inv_std: Vec<f64> = running
            .var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        Ok(self.apply(input, &running.mean, &inv_std).0)
    }

    fn backward(&mut self, upstream: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        let d = cache.normalized.dims();
        upstream.require_dims(d, "batchnorm backward upstream")?;
        let count = (d.n * d.plane()) as f64;
        let mut grad_input = Tensor4::zeros(d);
        for c in 0..d.c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xh = 0.0;
            for n in 0..d.n {
                for (&g, &xh) in upstream.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                    sum_dy += g.f64();
                    sum_dy_xh += g.f64() * xh.f64();
                }
            }
            let gamma = self.gamma.value.data()[c].f64();
            self.gamma.grad.data_mut()[c] = self.gamma.grad.data()[c] + T::of(sum_dy_xh);
            self.beta.grad.data_mut()[c] = self.beta.grad.data()[c] + T::of(sum_dy);
            let k = T::of(gamma * cache.inv_std[c] / count);
            let (mean_dy, mean_dy_xh) = (T::of(sum_dy), T::of(sum_dy_xh));
            let cnt = T::of(count);
            for n in 0..d.n {
                let up = upstream.plane(n, c);
                let xh = cache.normalized.plane(n, c);
                let dst = grad_input.plane_mut(n, c);
                for ((o, &g), &x) in dst.iter_mut().zip(up).zip(xh) {
                    *o = k * (cnt * g - mean_dy - x * mean_dy_xh);
                }
            }
        }
        Ok(grad_input)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gaussian_init;
    use crate::rng::Stream;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = Stream::new(1);
        let mut x: Tensor4<f64> = gaussian_init(Dims::new(4, 3, 5, 5), 3.0, &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v += 7.0);
        let mut bn = BatchNorm::<f64>::new("bn", 3, 1e-5, 0.1);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-6);
            assert!((v - 1.0).abs() < 1e-5 * 2.0, "variance {v}");
        }
    }

    #[test]
    fn constant_channel_collapses_to_beta() {
        let x = Tensor4::<f64>::full(Dims::new(2, 1, 3, 3), 4.25);
        let mut bn = BatchNorm::<f64>::new("bn", 1, 1e-5, 0.1);
        bn.beta.value.data_mut()[0] = 0.3;
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn eval_without_running_stats_is_an_error() {
        let bn = BatchNorm::<f64>::new("bn", 1, 1e-5, 0.1);
        let x = Tensor4::<f64>::zeros(Dims::new(1, 1, 2, 2));
        assert!(matches!(bn.infer(&x), Err(Error::MissingRunningStats)));
        let bn = bn.with_standard_stats();
        let y = bn.infer(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_follow_moving_average() {
        let x = Tensor4::<f64>::from_vec(Dims::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap();
        let mut bn = BatchNorm::<f64>::new("bn", 1, 1e-5, 0.1);
        bn.forward(&x, Mode::Train).unwrap();
        let r = bn.running.as_ref().unwrap();
        assert!((r.mean[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1, 3} is 2
        assert!((r.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let mut bn = BatchNorm::<f64>::new("bn", 2, 1e-5, 0.1);
        assert!(bn.forward(&Tensor4::zeros(Dims::new(1, 2, 1, 1)), Mode::Train).is_err());
    }
}
