//! Central finite-difference verification of backward passes.
//!
//! The scalar probed is `L = <u, forward(x)>` for a fixed random `u`, so the
//! analytic gradients are exactly what `backward(u)` returns. Relative error
//! per coordinate is `|a - n| / max(|a|, |n|, floor)`.

use crate::error::Result;
use crate::rng::Stream;
use crate::tensor::Tensor4;

use super::{gaussian_init, Mode, Module};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Perturbation half-width.
    pub eps: f64,
    pub tolerance: f64,
    /// Tensors larger than this are checked on a random subsample of this many coordinates.
    pub max_coords: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            max_coords: 400,
            floor: 1e-7,
            seed: 0x6772_6164,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().fold(0.0, |m, t| m.max(t.max_rel_error))
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error < self.tolerance)
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for t in &self.tensors {
            writeln!(
                f,
                "{:<28} checked {:>5}  max rel err {:.3e}",
                t.name, t.checked, t.max_rel_error
            )?;
        }
        write!(
            f,
            "{} at tolerance {:.1e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

fn objective<M: Module<f64>>(layer: &mut M, x: &Tensor4<f64>, u: &Tensor4<f64>) -> Result<f64> {
    layer.forward(x, Mode::Train)?.dot(u)
}

fn coords(len: usize, max: usize, rng: &mut Stream) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        rng.choose_distinct(len, max)
    }
}

fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares `layer`'s backward pass to central differences at `input`, for
/// the input and every parameter. Parameter values are restored afterwards;
/// gradients are left zeroed.
pub fn grad_check<M: Module<f64>>(
    layer: &mut M,
    input: &Tensor4<f64>,
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let mut rng = Stream::new(opts.seed);
    let out_dims = layer.forward(input, Mode::Train)?.dims();
    let u: Tensor4<f64> = gaussian_init(out_dims, 1.0, &mut rng);

    layer.zero_grad();
    layer.forward(input, Mode::Train)?;
    let grad_input = layer.backward(&u)?;
    let analytic: Vec<(String, Tensor4<f64>)> = layer
        .parameters()
        .iter()
        .map(|p| (p.name.clone(), p.grad.clone()))
        .collect();
    layer.zero_grad();

    let mut tensors = Vec::new();

    let mut x = input.clone();
    let mut worst = 0.0f64;
    let picked = coords(x.len(), opts.max_coords, &mut rng);
    for &i in &picked {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + opts.eps;
        let plus = objective(layer, &x, &u)?;
        x.data_mut()[i] = orig - opts.eps;
        let minus = objective(layer, &x, &u)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        worst = worst.max(rel_error(grad_input.data()[i], numeric, opts.floor));
    }
    tensors.push(TensorCheck {
        name: "input".into(),
        checked: picked.len(),
        max_rel_error: worst,
    });

    for (pi, (name, grad)) in analytic.iter().enumerate() {
        let picked = coords(grad.len(), opts.max_coords, &mut rng);
        let mut worst = 0.0f64;
        for &i in &picked {
            let orig = layer.parameters()[pi].value.data()[i];
            layer.parameters_mut()[pi].value.data_mut()[i] = orig + opts.eps;
            let plus = objective(layer, input, &u)?;
            layer.parameters_mut()[pi].value.data_mut()[i] = orig - opts.eps;
            let minus = objective(layer, input, &u)?;
            layer.parameters_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            worst = worst.max(rel_error(grad.data()[i], numeric, opts.floor));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            checked: picked.len(),
            max_rel_error: worst,
        });
    }
    // Leave no stale cache from the probing passes.
    layer.forward(input, Mode::Eval).ok();
    Ok(GradReport {
        tensors,
        tolerance: opts.tolerance,
    })
}
