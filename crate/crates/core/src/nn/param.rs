use crate::rng::Stream;
use crate::tensor::{Dims, Scalar, Tensor4};

/// A trainable tensor with its gradient and ADAM moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor4<T>,
    pub grad: Tensor4<T>,
    pub adam_m: Tensor4<T>,
    pub adam_v: Tensor4<T>,
    pub step_count: u64,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor4<T>) -> Self {
        let dims = value.dims();
        Self {
            name: name.into(),
            value,
            grad: Tensor4::zeros(dims),
            adam_m: Tensor4::zeros(dims),
            adam_v: Tensor4::zeros(dims),
            step_count: 0,
        }
    }

    pub fn zeros(name: impl Into<String>, dims: Dims) -> Self {
        Self::new(name, Tensor4::zeros(dims))
    }

    pub fn dims(&self) -> Dims {
        self.value.dims()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Zero-mean Gaussian tensor with standard deviation `std`.
pub fn gaussian_init<T: Scalar>(dims: Dims, std: f64, rng: &mut Stream) -> Tensor4<T> {
    let data = (0..dims.len()).map(|_| T::of(std * rng.normal())).collect();
    Tensor4::from_vec(dims, data).expect("length matches dims")
}
