use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor4};

/// Mean squared error over all elements and its gradient with respect to
/// `restored`.
pub fn mse_loss<T: Scalar>(restored: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if restored.dims() != target.dims() {
        return Err(Error::Shape(format!(
            "mse_loss: restored {} vs target {}",
            restored.dims(),
            target.dims()
        )));
    }
    let count = restored.len().max(1) as f64;
    let mut grad = Tensor4::zeros(restored.dims());
    let k = T::of(2.0 / count);
    let mut total = 0.0;
    for ((g, &r), &t) in grad.data_mut().iter_mut().zip(restored.data()).zip(target.data()) {
        let diff = r - t;
        total += diff.f64() * diff.f64();
        *g = k * diff;
    }
    Ok((total / count, grad))
}
