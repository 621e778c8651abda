//! PSNR over RGB and MS-SSIM over Rec. 601 luma.

use crate::error::{Error, Result};
use crate::image::ImageU8;

fn same_dims(op: &'static str, a: &ImageU8, b: &ImageU8) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::shape(
            op,
            format!(
                "{}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            ),
        ));
    }
    Ok(())
}

pub fn mse(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    same_dims("mse", a, b)?;
    let sum: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.data().len() as f64)
}

/// `10 log10(255^2 / MSE)` over all pixels and channels; identical images
/// give `f64::INFINITY`.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / m).log10())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsSsimParams {
    pub scales: usize,
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        MsSsimParams {
            scales: 5,
            weights: vec![0.0448, 0.2856, 0.3001, 0.2363, 0.1333],
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl MsSsimParams {
    /// Number of scales usable for an image whose smaller side is `min_dim`:
    /// scale `k` (1-based) needs `min_dim >= window * 2^(k-1)`.
    pub fn usable_scales(&self, min_dim: usize) -> usize {
        (1..=self.scales)
            .take_while(|&k| min_dim >= self.window << (k - 1))
            .count()
    }

    /// Exponents for `scales` levels: the published weights when all levels
    /// are used, otherwise the leading weights renormalized to sum to one.
    pub fn effective_weights(&self, scales: usize) -> Vec<f64> {
        let w = &self.weights[..scales];
        if scales == self.weights.len() {
            return w.to_vec();
        }
        let sum: f64 = w.iter().sum();
        w.iter().map(|v| v / sum).collect()
    }

    /// Gaussian taps at integer offsets, normalized to sum to one.
    pub fn window_1d(&self) -> Vec<f64> {
        let r = (self.window / 2) as i64;
        let g: Vec<f64> = (-r..=r)
            .map(|x| (-((x * x) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Rec. 601 luma as a `w x h` f64 plane.
pub fn luma(img: &ImageU8) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// 2x2 box average, then decimate; odd trailing rows/columns are dropped.
pub fn downsample(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (nw, nh) = (w / 2, h / 2);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let i = 2 * y * w + 2 * x;
            out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) / 4.0);
        }
    }
    (out, nw, nh)
}

/// Separable valid-mode filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let ow = w + 1 - k;
    let oh = h + 1 - k;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let src = &plane[y * w + x..y * w + x + k];
            rows[y * ow + x] = src.iter().zip(taps).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| rows[(y + i) * ow + x] * taps[i]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean contrast-structure and mean full SSIM of one scale.
fn scale_stats(a: &[f64], b: &[f64], w: usize, h: usize, p: &MsSsimParams) -> (f64, f64) {
    let taps = p.window_1d();
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let (mu_a, ow, oh) = filter_valid(a, w, h, &taps);
    let (mu_b, ..) = filter_valid(b, w, h, &taps);
    let (aa, ..) = filter_valid(&prod(a, a), w, h, &taps);
    let (bb, ..) = filter_valid(&prod(b, b), w, h, &taps);
    let (ab, ..) = filter_valid(&prod(a, b), w, h, &taps);
    let n = (ow * oh) as f64;
    let (mut cs_sum, mut ssim_sum) = (0.0, 0.0);
    for i in 0..ow * oh {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs_sum += cs;
        ssim_sum += l * cs;
    }
    (cs_sum / n, ssim_sum / n)
}

/// `sign(v) * |v|^e`, keeping the product inside `[-1, 1]`.
pub(crate) fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

/// Multi-scale SSIM on luma. Images smaller than `window * 2^(scales-1)`
/// use fewer scales with renormalized weights.
pub fn ms_ssim(a: &ImageU8, b: &ImageU8, p: &MsSsimParams) -> Result<f64> {
    same_dims("ms_ssim", a, b)?;
    if p.scales == 0 || p.weights.len() < p.scales || p.window.is_multiple_of(2) {
        return Err(Error::InvalidArgument("bad MS-SSIM parameters".into()));
    }
    let scales = p.usable_scales(a.width().min(a.height()));
    if scales == 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is smaller than the {}x{} MS-SSIM window",
            a.width(),
            a.height(),
            p.window,
            p.window
        )));
    }
    let weights = p.effective_weights(scales);
    let (mut pa, mut pb) = (luma(a), luma(b));
    let (mut w, mut h) = (a.width(), a.height());
    let mut value = 1.0;
    for (j, &e) in weights.iter().enumerate() {
        let (cs, ssim) = scale_stats(&pa, &pb, w, h, p);
        if j + 1 == scales {
            value *= signed_pow(ssim, e);
        } else {
            value *= signed_pow(cs, e);
            let (na, nw, nh) = downsample(&pa, w, h);
            pb = downsample(&pb, w, h).0;
            pa = na;
            w = nw;
            h = nh;
        }
    }
    Ok(value)
}
