use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Scalar loss value and its gradient with respect to the prediction.
#[derive(Clone, Debug)]
pub struct LossOutput<T: Scalar = f32> {
    pub loss: f64,
    pub grad: Tensor<T>,
}

fn same_dims<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, format!("{} vs {}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Mean absolute error. The gradient at an exact tie is zero.
pub fn l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    same_dims("l1_loss", pred, target)?;
    let n = pred.len() as f64;
    let inv = T::of(1.0 / n);
    let mut sum = 0.0;
    let mut grad = Tensor::zeros(pred.dims());
    for ((g, &p), &t) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
    {
        let d = p - t;
        sum += d.as_f64().abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok(LossOutput {
        loss: sum / n,
        grad,
    })
}

/// L1 between `clamp(pred, -1, 1)` and `target`; the gradient is zero where
/// the clamp saturates.
pub fn clamped_l1_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<LossOutput<T>> {
    same_dims("clamped_l1_loss", pred, target)?;
    let clamped = pred.map(|v| v.max(-T::one()).min(T::one()));
    let mut out = l1_loss(&clamped, target)?;
    for (g, &p) in out.grad.data_mut().iter_mut().zip(pred.data()) {
        if p > T::one() || p < -T::one() {
            *g = T::zero();
        }
    }
    Ok(out)
}

/// Per-pixel softmax cross-entropy averaged over `n * h * w` pixels.
///
/// `logits` is `(n, L, h, w)`; `labels` holds `n * h * w` class indices.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[u8],
) -> Result<LossOutput<T>> {
    let d = logits.dims();
    let pixels = d.n * d.plane();
    if labels.len() != pixels {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {pixels} pixels", labels.len()),
        ));
    }
    let inv = 1.0 / pixels as f64;
    let mut grad = Tensor::zeros(d);
    let mut total = 0.0;
    let mut probs = vec![0.0f64; d.c];
    for n in 0..d.n {
        for p in 0..d.plane() {
            let label = labels[n * d.plane() + p] as usize;
            if label >= d.c {
                return Err(Error::InvalidArgument(format!(
                    "label {label} out of range for {} classes",
                    d.c
                )));
            }
            let mut max = f64::NEG_INFINITY;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = logits.data()[(n * d.c + c) * d.plane() + p].as_f64();
                max = max.max(*pr);
            }
            let mut z = 0.0;
            for pr in probs.iter_mut() {
                *pr = (*pr - max).exp();
                z += *pr;
            }
            total -= (probs[label] / z).ln();
            for (c, pr) in probs.iter().enumerate() {
                let target = if c == label { 1.0 } else { 0.0 };
                grad.data_mut()[(n * d.c + c) * d.plane() + p] = T::of((pr / z - target) * inv);
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFinite {
            op: "softmax_cross_entropy",
        });
    }
    Ok(LossOutput {
        loss: total * inv,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn l1_value_and_sign_gradient() {
        let p = Tensor::from_vec(Dims::new(1, 1, 1, 4), vec![1.0f32, -1.0, 0.5, 0.0]).unwrap();
        let t = Tensor::from_vec(Dims::new(1, 1, 1, 4), vec![0.0f32, 0.0, 0.5, 1.0]).unwrap();
        let out = l1_loss(&p, &t).unwrap();
        assert!((out.loss - 0.75).abs() < 1e-12);
        assert_eq!(out.grad.data(), &[0.25, -0.25, 0.0, -0.25]);
    }

    #[test]
    fn clamped_l1_blocks_saturated_outputs() {
        let p = Tensor::from_vec(Dims::new(1, 1, 1, 2), vec![3.0f32, 0.0]).unwrap();
        let t = Tensor::from_vec(Dims::new(1, 1, 1, 2), vec![-1.0f32, 1.0]).unwrap();
        let out = clamped_l1_loss(&p, &t).unwrap();
        assert!((out.loss - 1.5).abs() < 1e-12);
        assert_eq!(out.grad.data(), &[0.0, -0.5]);
    }

    #[test]
    fn uniform_logits_cost_log_classes() {
        let logits = Tensor::<f32>::zeros(Dims::new(1, 4, 2, 2));
        let out = softmax_cross_entropy(&logits, &[0, 1, 2, 3]).unwrap();
        assert!((out.loss - 4f64.ln()).abs() < 1e-12);
        assert!(softmax_cross_entropy(&logits, &[0, 1, 2, 4]).is_err());
    }
}
