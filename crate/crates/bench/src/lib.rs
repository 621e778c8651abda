//! Shared fixtures for the criterion benches.

use edms_core::image::ImageU8;
use edms_core::nets::{init_weights, NetConfig};
use edms_core::ops::ConvParams;
use edms_core::{Dims, Tensor, WeightSet};

/// Deterministic pseudo-random floats in [-1, 1).
pub fn noise(len: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 40) as f32 / (1u64 << 23) as f32 - 1.0
        })
        .collect()
}

pub fn tensor(dims: Dims, seed: u64) -> Tensor<f32> {
    Tensor::from_vec(dims, noise(dims.len(), seed)).unwrap()
}

pub fn conv(in_c: usize, out_c: usize, size: usize, stride: usize) -> ConvParams {
    let kernel = tensor(Dims::new(out_c, in_c, size, size), 7);
    ConvParams::new(kernel, vec![0.0; out_c], stride).unwrap()
}

/// Smooth image with an edge, so the codec sees realistic statistics.
pub fn photo(w: usize, h: usize) -> ImageU8 {
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let v = 128.0 + 90.0 * ((x as f32 * 0.11) + (y as f32 * 0.07)).sin();
            let edge = if x > w / 2 { 40.0 } else { 0.0 };
            for c in 0..3 {
                data.push((v + edge - 25.0 * c as f32).clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageU8::new(w, h, data).unwrap()
}

pub fn toy_weights() -> WeightSet {
    init_weights(&NetConfig::toy(4), 1).unwrap()
}
