use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_NORM_EPS: f64 = 1e-5;

/// Learned affine parameters of an instance normalization layer.
#[derive(Clone, Debug)]
pub struct NormParams<T: Scalar = f32> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub epsilon: T,
}

#[derive(Clone, Debug)]
pub struct NormGrads<T: Scalar = f32> {
    pub dx: Tensor<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

impl<T: Scalar> NormParams<T> {
    pub fn new(gamma: Vec<T>, beta: Vec<T>) -> Self {
        NormParams {
            gamma,
            beta,
            epsilon: T::of(DEFAULT_NORM_EPS),
        }
    }

    fn check(&self, c: usize, op: &'static str) -> Result<()> {
        if self.gamma.len() != c || self.beta.len() != c {
            return Err(Error::shape(
                op,
                format!(
                    "gamma/beta lengths {}/{} for {c} channels",
                    self.gamma.len(),
                    self.beta.len()
                ),
            ));
        }
        if self.epsilon.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Plane mean and biased variance, accumulated in f64 and rounded to `T`.
fn moments<T: Scalar>(plane: &[T]) -> (T, T) {
    let n = plane.len() as f64;
    let mean = plane.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = plane
        .iter()
        .map(|v| {
            let d = v.as_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (T::of(mean), T::of(var))
}

/// Per-`(n, c)` plane normalization: `gamma * (x - mean) / sqrt(var + eps) + beta`.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>, p: &NormParams<T>) -> Result<Tensor<T>> {
    let d = x.dims();
    p.check(d.c, "instance_norm")?;
    if d.plane() == 0 {
        return Err(Error::shape("instance_norm", "empty plane"));
    }
    let mut out = Tensor::zeros(d);
    for n in 0..d.n {
        for c in 0..d.c {
            let src = x.plane(n, c);
            let (mean, var) = moments(src);
            let inv = T::one() / (var + p.epsilon).sqrt();
            let (g, b) = (p.gamma[c], p.beta[c]);
            for (o, &v) in out.plane_mut(n, c).iter_mut().zip(src) {
                *o = g * ((v - mean) * inv) + b;
            }
        }
    }
    out.ensure_finite("instance_norm")
}

pub fn instance_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &NormParams<T>,
    dy: &Tensor<T>,
) -> Result<NormGrads<T>> {
    let d = x.dims();
    p.check(d.c, "instance_norm_backward")?;
    if dy.dims() != d {
        return Err(Error::shape(
            "instance_norm_backward",
            format!("upstream {} for input {d}", dy.dims()),
        ));
    }
    let count = T::of(d.plane() as f64);
    let mut dx = Tensor::zeros(d);
    let mut dgamma = vec![T::zero(); d.c];
    let mut dbeta = vec![T::zero(); d.c];
    for n in 0..d.n {
        for c in 0..d.c {
            let src = x.plane(n, c);
            let g = dy.plane(n, c);
            let (mean, var) = moments(src);
            let inv = T::one() / (var + p.epsilon).sqrt();
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (&v, &gv) in src.iter().zip(g) {
                let xhat = (v - mean) * inv;
                sum_g += gv;
                sum_gx += gv * xhat;
            }
            dgamma[c] += sum_gx;
            dbeta[c] += sum_g;
            // dxhat = gamma * dy; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
            let gamma = p.gamma[c];
            let mean_g = sum_g / count;
            let mean_gx = sum_gx / count;
            for ((o, &v), &gv) in dx.plane_mut(n, c).iter_mut().zip(src).zip(g) {
                let xhat = (v - mean) * inv;
                *o = gamma * inv * (gv - mean_g - xhat * mean_gx);
            }
        }
    }
    Ok(NormGrads {
        dx: dx.ensure_finite("instance_norm_backward")?,
        dgamma,
        dbeta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn constant_plane_yields_beta() {
        let x = Tensor::full(Dims::new(1, 2, 3, 3), 4.2f32);
        let p = NormParams::new(vec![2.0, -1.0], vec![0.25, -3.0]);
        let y = instance_norm(&x, &p).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -3.0));
    }

    #[test]
    fn two_pixel_plane_closed_form() {
        let x = Tensor::from_vec(Dims::new(1, 1, 1, 2), vec![-1.0f32, 1.0]).unwrap();
        let y = instance_norm(&x, &NormParams::new(vec![1.0], vec![0.0])).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] as f64 + expect).abs() < 1e-7);
        assert!((y.data()[1] as f64 - expect).abs() < 1e-7);
        assert!((y.data()[1] - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn affine_invariance() {
        let data: Vec<f32> = (0..32).map(|i| ((i * 7919) % 31) as f32 / 7.0).collect();
        let x = Tensor::from_vec(Dims::new(1, 2, 4, 4), data).unwrap();
        let y = x.map(|v| 3.5 * v - 1.25);
        let p = NormParams::new(vec![1.0, 1.0], vec![0.0, 0.0]);
        let a = instance_norm(&x, &p).unwrap();
        let b = instance_norm(&y, &p).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-5, "{u} vs {v}");
        }
    }

    #[test]
    fn rejects_bad_epsilon_and_lengths() {
        let x = Tensor::full(Dims::new(1, 2, 2, 2), 1.0f32);
        let mut p = NormParams::new(vec![1.0, 1.0], vec![0.0, 0.0]);
        p.epsilon = 0.0;
        assert!(instance_norm(&x, &p).is_err());
        let p = NormParams::new(vec![1.0], vec![0.0]);
        assert!(instance_norm(&x, &p).is_err());
    }
}
