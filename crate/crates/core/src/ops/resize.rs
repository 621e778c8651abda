use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

/// Source taps `(i0, i1, frac)` for each output index along one axis.
///
/// Half-pixel centers: `src = (i + 0.5) * in / out - 0.5`, clamped to
/// `[0, in - 1]`.
fn taps(input: usize, output: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f32 / output as f32;
    let max = (input - 1) as f32;
    (0..output)
        .map(|i| {
            let src = ((i as f32 + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

fn check(x: Dims, out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || x.h == 0 || x.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "bilinear resize {}x{} -> {out_h}x{out_w}",
            x.h, x.w
        )));
    }
    Ok(())
}

/// Bilinear resampling of every plane to `out_h x out_w`.
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let d = x.dims();
    check(d, out_h, out_w)?;
    let ty = taps(d.h, out_h);
    let tx = taps(d.w, out_w);
    let mut out = Tensor::zeros(Dims::new(d.n, d.c, out_h, out_w));
    for n in 0..d.n {
        for c in 0..d.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy as f64);
                for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx as f64);
                    let top = (T::one() - fx) * src[y0 * d.w + x0] + fx * src[y0 * d.w + x1];
                    let bot = (T::one() - fx) * src[y1 * d.w + x0] + fx * src[y1 * d.w + x1];
                    dst[i * out_w + j] = (T::one() - fy) * top + fy * bot;
                }
            }
        }
    }
    out.ensure_finite("bilinear_resize")
}

/// Adjoint of [`bilinear_resize`]: scatters `dy` back onto an input of dims `input`.
pub fn bilinear_resize_backward<T: Scalar>(input: Dims, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let od = dy.dims();
    check(input, od.h, od.w)?;
    if od.n != input.n || od.c != input.c {
        return Err(Error::shape(
            "bilinear_resize_backward",
            format!("upstream {od} for input {input}"),
        ));
    }
    let ty = taps(input.h, od.h);
    let tx = taps(input.w, od.w);
    let mut dx = Tensor::zeros(input);
    for n in 0..input.n {
        for c in 0..input.c {
            let g = dy.plane(n, c);
            let dst = dx.plane_mut(n, c);
            for (i, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::of(fy as f64);
                for (j, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::of(fx as f64);
                    let gv = g[i * od.w + j];
                    let top = (T::one() - fy) * gv;
                    let bot = fy * gv;
                    dst[y0 * input.w + x0] += (T::one() - fx) * top;
                    dst[y0 * input.w + x1] += fx * top;
                    dst[y1 * input.w + x0] += (T::one() - fx) * bot;
                    dst[y1 * input.w + x1] += fx * bot;
                }
            }
        }
    }
    dx.ensure_finite("bilinear_resize_backward")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(Dims::new(1, 3, 5, 7), 42.0f32);
        let y = bilinear_resize(&x, 13, 4).unwrap();
        assert!(y.data().iter().all(|&v| v == 42.0));
    }

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::full(Dims::new(1, 1, 1, 1), 7.5f32);
        let y = bilinear_resize(&x, 8, 8).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.5));
    }

    #[test]
    fn two_by_two_to_four_by_four_follows_half_pixel_formula() {
        // src_x = -0.25, 0.25, 0.75, 1.25 -> clamped 0, 0.25, 0.75, 1.
        let x = Tensor::from_vec(Dims::new(1, 1, 2, 2), vec![0.0f32, 255.0, 0.0, 255.0]).unwrap();
        let y = bilinear_resize(&x, 4, 4).unwrap();
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 63.75, 191.25, 255.0]);
        }
    }

    #[test]
    fn zero_output_rejected() {
        let x = Tensor::full(Dims::new(1, 1, 2, 2), 1.0f32);
        assert!(bilinear_resize(&x, 0, 4).is_err());
    }
}
