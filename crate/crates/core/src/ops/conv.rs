use crate::error::{Error, Result};
use crate::tensor::{Dims, Scalar, Tensor};

use super::reflect;

/// Convolution weights. `kernel` is `(out_c, in_c, s, s)` with odd `s`.
///
/// For [`conv2d`] `stride` is 1 or 2. For [`conv2d_transpose`] the layer
/// always up-samples by 2 and `stride` is ignored.
#[derive(Clone, Debug)]
pub struct ConvParams<T: Scalar = f32> {
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T: Scalar = f32> {
    pub dx: Tensor<T>,
    pub dkernel: Tensor<T>,
    pub dbias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(kernel: Tensor<T>, bias: Vec<T>, stride: usize) -> Result<Self> {
        let p = ConvParams {
            kernel,
            bias,
            stride,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims().n
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims().c
    }

    pub fn size(&self) -> usize {
        self.kernel.dims().h
    }

    /// Reflection pad width, `(s - 1) / 2`.
    pub fn padding(&self) -> usize {
        (self.size() - 1) / 2
    }

    fn validate(&self) -> Result<()> {
        let k = self.kernel.dims();
        if k.h != k.w || k.h.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel must be square with odd size, got {}x{}",
                k.h, k.w
            )));
        }
        if self.bias.len() != k.n {
            return Err(Error::shape(
                "conv2d",
                format!("bias length {} for {} filters", self.bias.len(), k.n),
            ));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::InvalidArgument(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        Ok(())
    }

    fn check_input(&self, op: &'static str, x: Dims) -> Result<()> {
        self.validate()?;
        if x.c != self.in_channels() {
            return Err(Error::shape(
                op,
                format!(
                    "input has {} channels, kernel expects {}",
                    x.c,
                    self.in_channels()
                ),
            ));
        }
        if x.h == 0 || x.w == 0 {
            return Err(Error::shape(op, format!("empty spatial dims {x}")));
        }
        Ok(())
    }

    fn conv_out_dims(&self, x: Dims) -> Dims {
        let s = self.size();
        let p = self.padding();
        Dims::new(
            x.n,
            self.out_channels(),
            (x.h + 2 * p - s) / self.stride + 1,
            (x.w + 2 * p - s) / self.stride + 1,
        )
    }
}

/// Reflection-pads every channel of sample `n`; returns `c` planes of
/// `(h + 2p) x (w + 2p)` concatenated.
fn pad_sample<T: Scalar>(x: &Tensor<T>, n: usize, pad: usize) -> Vec<T> {
    let d = x.dims();
    let (ph, pw) = (d.h + 2 * pad, d.w + 2 * pad);
    let mut out = Vec::with_capacity(d.c * ph * pw);
    for c in 0..d.c {
        let plane = x.plane(n, c);
        for py in 0..ph {
            let sy = reflect(py as isize - pad as isize, d.h);
            let row = &plane[sy * d.w..(sy + 1) * d.w];
            for px in 0..pw {
                out.push(row[reflect(px as isize - pad as isize, d.w)]);
            }
        }
    }
    out
}

/// 2-D convolution with reflection padding of `(s - 1) / 2`.
///
/// Each output element is accumulated from zero over input channel, kernel
/// row and kernel column in that nesting order, and the bias is added last.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xd = x.dims();
    p.check_input("conv2d", xd)?;
    let od = p.conv_out_dims(xd);
    let (s, pad, stride) = (p.size(), p.padding(), p.stride);
    let (ph, pw) = (xd.h + 2 * pad, xd.w + 2 * pad);
    let kernel = p.kernel.data();
    let mut out = Tensor::zeros(od);

    for n in 0..xd.n {
        let padded = pad_sample(x, n, pad);
        for oc in 0..od.c {
            let acc = out.plane_mut(n, oc);
            for ic in 0..xd.c {
                let src = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                let taps = &kernel[(oc * xd.c + ic) * s * s..(oc * xd.c + ic + 1) * s * s];
                for ky in 0..s {
                    for kx in 0..s {
                        let wv = taps[ky * s + kx];
                        for oy in 0..od.h {
                            let row = &src[(oy * stride + ky) * pw..(oy * stride + ky + 1) * pw];
                            let dst = &mut acc[oy * od.w..(oy + 1) * od.w];
                            if stride == 1 {
                                for (o, &v) in dst.iter_mut().zip(&row[kx..kx + od.w]) {
                                    *o += wv * v;
                                }
                            } else {
                                for (ox, o) in dst.iter_mut().enumerate() {
                                    *o += wv * row[ox * stride + kx];
                                }
                            }
                        }
                    }
                }
            }
            let b = p.bias[oc];
            for v in acc.iter_mut() {
                *v += b;
            }
        }
    }
    out.ensure_finite("conv2d")
}

/// Dot product with eight independent partial sums.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            lanes[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    lanes.iter().fold(tail, |acc, &v| acc + v)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let xd = x.dims();
    p.check_input("conv2d_backward", xd)?;
    let od = p.conv_out_dims(xd);
    if dy.dims() != od {
        return Err(Error::shape(
            "conv2d_backward",
            format!("upstream {} for output {od}", dy.dims()),
        ));
    }
    let (s, pad, stride) = (p.size(), p.padding(), p.stride);
    let (ph, pw) = (xd.h + 2 * pad, xd.w + 2 * pad);
    let kernel = p.kernel.data();
    let mut dkernel = Tensor::zeros(p.kernel.dims());
    let mut dbias = vec![T::zero(); od.c];
    let mut dx = Tensor::zeros(xd);

    for n in 0..xd.n {
        let padded = pad_sample(x, n, pad);
        let mut dpad = vec![T::zero(); xd.c * ph * pw];
        for (oc, db) in dbias.iter_mut().enumerate() {
            let g = dy.plane(n, oc);
            *db = g.iter().fold(*db, |acc, &v| acc + v);
            for ic in 0..xd.c {
                let src = &padded[ic * ph * pw..(ic + 1) * ph * pw];
                let dsrc = &mut dpad[ic * ph * pw..(ic + 1) * ph * pw];
                let base = (oc * xd.c + ic) * s * s;
                for ky in 0..s {
                    for kx in 0..s {
                        let wv = kernel[base + ky * s + kx];
                        let mut dw = T::zero();
                        for oy in 0..od.h {
                            let r0 = (oy * stride + ky) * pw + kx;
                            let grow = &g[oy * od.w..(oy + 1) * od.w];
                            if stride == 1 {
                                let srow = &src[r0..r0 + od.w];
                                dw += dot(grow, srow);
                                for (d, &gv) in dsrc[r0..r0 + od.w].iter_mut().zip(grow) {
                                    *d += wv * gv;
                                }
                            } else {
                                for (ox, &gv) in grow.iter().enumerate() {
                                    let idx = r0 + ox * stride;
                                    dw += gv * src[idx];
                                    dsrc[idx] += wv * gv;
                                }
                            }
                        }
                        dkernel.data_mut()[base + ky * s + kx] += dw;
                    }
                }
            }
        }
        for ic in 0..xd.c {
            let dsrc = &dpad[ic * ph * pw..(ic + 1) * ph * pw];
            let plane = dx.plane_mut(n, ic);
            for py in 0..ph {
                let sy = reflect(py as isize - pad as isize, xd.h);
                for px in 0..pw {
                    let sx = reflect(px as isize - pad as isize, xd.w);
                    plane[sy * xd.w + sx] += dsrc[py * pw + px];
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: dx.ensure_finite("conv2d_backward")?,
        dkernel: dkernel.ensure_finite("conv2d_backward")?,
        dbias,
    })
}

fn check_transpose<T: Scalar>(p: &ConvParams<T>, xd: Dims, op: &'static str) -> Result<()> {
    let k = p.kernel.dims();
    if k.h != 3 || k.w != 3 {
        return Err(Error::InvalidArgument(format!(
            "{op} requires a 3x3 kernel, got {}x{}",
            k.h, k.w
        )));
    }
    if p.bias.len() != k.n {
        return Err(Error::shape(
            op,
            format!("bias length {} for {} filters", p.bias.len(), k.n),
        ));
    }
    if xd.c != k.c {
        return Err(Error::shape(
            op,
            format!("input has {} channels, kernel expects {}", xd.c, k.c),
        ));
    }
    Ok(())
}

/// Output row/column hit by input index `i` and kernel tap `k`: `2i - 1 + k`.
#[inline]
fn up_index(i: usize, k: usize, len: usize) -> Option<usize> {
    let o = 2 * i + k;
    if o == 0 || o > len {
        None
    } else {
        Some(o - 1)
    }
}

/// Fractionally strided (stride 1/2) convolution with a 3x3 kernel.
///
/// Scatter form: input element `(ic, i, j)` adds `x * k[oc][ic][ky][kx]` to
/// output `(oc, 2i - 1 + ky, 2j - 1 + kx)`; taps falling outside `2h x 2w` are
/// dropped (crop 1, trailing output pad 1). For every output element the
/// contributions arrive in row-major order of the input elements, and the
/// bias is added last.
pub fn conv2d_transpose<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let xd = x.dims();
    check_transpose(p, xd, "conv2d_transpose")?;
    let out_c = p.kernel.dims().n;
    let od = Dims::new(xd.n, out_c, 2 * xd.h, 2 * xd.w);
    let kernel = p.kernel.data();
    let mut out = Tensor::zeros(od);

    for n in 0..xd.n {
        for oc in 0..out_c {
            let acc = out.plane_mut(n, oc);
            for ic in 0..xd.c {
                let src = x.plane(n, ic);
                let taps = &kernel[(oc * xd.c + ic) * 9..(oc * xd.c + ic + 1) * 9];
                for i in 0..xd.h {
                    for ky in 0..3 {
                        let Some(oy) = up_index(i, ky, od.h) else {
                            continue;
                        };
                        let dst = &mut acc[oy * od.w..(oy + 1) * od.w];
                        for j in 0..xd.w {
                            let v = src[i * xd.w + j];
                            for kx in 0..3 {
                                if let Some(ox) = up_index(j, kx, od.w) {
                                    dst[ox] += v * taps[ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
            let b = p.bias[oc];
            for v in acc.iter_mut() {
                *v += b;
            }
        }
    }
    out.ensure_finite("conv2d_transpose")
}

pub fn conv2d_transpose_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    dy: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let xd = x.dims();
    check_transpose(p, xd, "conv2d_transpose_backward")?;
    let out_c = p.kernel.dims().n;
    let od = Dims::new(xd.n, out_c, 2 * xd.h, 2 * xd.w);
    if dy.dims() != od {
        return Err(Error::shape(
            "conv2d_transpose_backward",
            format!("upstream {} for output {od}", dy.dims()),
        ));
    }
    let kernel = p.kernel.data();
    let mut dx = Tensor::zeros(xd);
    let mut dkernel = Tensor::zeros(p.kernel.dims());
    let mut dbias = vec![T::zero(); out_c];

    for n in 0..xd.n {
        for (oc, db) in dbias.iter_mut().enumerate() {
            let g = dy.plane(n, oc);
            *db = g.iter().fold(*db, |acc, &v| acc + v);
            for ic in 0..xd.c {
                let base = (oc * xd.c + ic) * 9;
                let taps = &kernel[base..base + 9];
                let src = x.plane(n, ic);
                let mut dk = [T::zero(); 9];
                let dsrc = dx.plane_mut(n, ic);
                for i in 0..xd.h {
                    for ky in 0..3 {
                        let Some(oy) = up_index(i, ky, od.h) else {
                            continue;
                        };
                        let grow = &g[oy * od.w..(oy + 1) * od.w];
                        for j in 0..xd.w {
                            let v = src[i * xd.w + j];
                            let mut acc = T::zero();
                            for kx in 0..3 {
                                if let Some(ox) = up_index(j, kx, od.w) {
                                    let gv = grow[ox];
                                    acc += gv * taps[ky * 3 + kx];
                                    dk[ky * 3 + kx] += gv * v;
                                }
                            }
                            dsrc[i * xd.w + j] += acc;
                        }
                    }
                }
                for (d, v) in dkernel.data_mut()[base..base + 9].iter_mut().zip(dk) {
                    *d += v;
                }
            }
        }
    }
    Ok(ConvGrads {
        dx: dx.ensure_finite("conv2d_transpose_backward")?,
        dkernel: dkernel.ensure_finite("conv2d_transpose_backward")?,
        dbias,
    })
}
