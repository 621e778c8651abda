use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
        .ensure_finite("relu")
}

pub fn tanh_act<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map(|v| v.tanh()).ensure_finite("tanh")
}

/// Gradient of [`relu`] given its input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("relu_backward", x, dy, |v, g| {
        if v > T::zero() {
            g
        } else {
            T::zero()
        }
    })
}

/// Gradient of [`tanh_act`] given its output `y = tanh(x)`.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    zip_with("tanh_backward", y, dy, |t, g| g * (T::one() - t * t))
}

fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{} vs {}", a.dims(), b.dims())));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| f(u, v))
        .collect();
    Tensor::from_vec(a.dims(), data)?.ensure_finite(op)
}
