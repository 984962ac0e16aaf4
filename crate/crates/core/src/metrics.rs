//! Image quality metrics on the [0, 1] scale.
//!
//! Tensors hold normalized intensities in [-1, 1]; both metrics map them
//! linearly to [0, 1] before comparing.

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// PSNR reported for a perfect reconstruction.
pub const PSNR_CAP: f64 = 100.0;

/// Mean squared error on the [0, 1] scale.
pub fn mse_unit(restored: &Tensor4<f64>, reference: &Tensor4<f64>) -> Result<f64> {
    mse_unit_slices(restored.data(), reference.data()).map_err(|_| {
        Error::Shape(format!(
            "metric inputs differ in shape: {} vs {}",
            restored.dims(),
            reference.dims()
        ))
    })
}

fn mse_unit_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("metric inputs of length {} and {}", a.len(), b.len())));
    }
    // (a+1)/2 - (b+1)/2 = (a-b)/2
    let sum: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) * 0.5).powi(2)).sum();
    Ok(sum / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        cap
    } else {
        (10.0 * (1.0 / mse).log10()).min(cap)
    }
}

/// `10 log10(1 / MSE)`, or [`PSNR_CAP`] when MSE is zero.
pub fn psnr(restored: &Tensor4<f64>, reference: &Tensor4<f64>) -> Result<f64> {
    Ok(psnr_from_mse(mse_unit(restored, reference)?, PSNR_CAP))
}

pub fn psnr_with_cap(restored: &Tensor4<f64>, reference: &Tensor4<f64>, cap: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse_unit(restored, reference)?, cap))
}

/// MSE on the [0, 1] scale in parts per thousand.
pub fn l2_permille(restored: &Tensor4<f64>, reference: &Tensor4<f64>) -> Result<f64> {
    Ok(1000.0 * mse_unit(restored, reference)?)
}

/// Per-sample `(l2 permille, psnr)` for two batches of equal shape.
pub fn per_sample(restored: &Tensor4<f64>, reference: &Tensor4<f64>) -> Result<Vec<(f64, f64)>> {
    restored.require_dims(reference.dims(), "metric reference")?;
    (0..restored.dims().n)
        .map(|n| {
            let mse = mse_unit_slices(restored.sample(n), reference.sample(n))?;
            Ok((1000.0 * mse, psnr_from_mse(mse, PSNR_CAP)))
        })
        .collect()
}

/// Arithmetic mean and standard error (sample std over `sqrt(n)`; zero for a single value).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn constant(v: f64) -> Tensor4<f64> {
        Tensor4::full(Dims::new(1, 1, 8, 8), v)
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = constant(0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert_eq!(l2_permille(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn constant_difference_of_a_tenth() {
        // 0.1 on the unit scale is 0.2 in normalized units.
        let a = constant(0.0);
        let b = constant(0.2);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);
        assert!((l2_permille(&a, &b).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_difference_is_zero_db() {
        assert_eq!(psnr(&constant(-1.0), &constant(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let b = Tensor4::zeros(Dims::new(1, 1, 8, 4));
        assert!(psnr(&constant(0.0), &b).is_err());
        assert!(l2_permille(&constant(0.0), &b).is_err());
    }

    #[test]
    fn standard_error() {
        assert_eq!(mean_and_se(&[4.0]), (4.0, 0.0));
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
