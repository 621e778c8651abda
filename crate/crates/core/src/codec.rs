//! The two transmitted layers.
//!
//! * Compact layer: lossless. Each channel is scanned in raster order and the
//!   median edge detector (MED) prediction error is coded modulo 256 with one
//!   adaptive model per channel.
//! * Residual layer: scalar quantization with step `Q` (round half away from
//!   zero), zigzag mapping, a 256-symbol model per channel and a shared
//!   escape model for magnitudes that do not fit one token.

use crate::entropy::{AdaptiveModel, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};
use crate::image::ImageU8;

/// MED / LOCO-I predictor from the left, upper and upper-left neighbours.
#[inline]
pub fn med_predict(left: u8, up: u8, up_left: u8) -> u8 {
    let (lo, hi) = (left.min(up), left.max(up));
    if up_left <= lo {
        hi
    } else if up_left >= hi {
        lo
    } else {
        (left as i16 + up as i16 - up_left as i16) as u8
    }
}

/// Prediction for pixel `(x, y)` of channel `c`; missing neighbours read 0.
#[inline]
fn predict_at(img: &ImageU8, x: usize, y: usize, c: usize) -> u8 {
    let left = if x > 0 { img.get(x - 1, y, c) } else { 0 };
    let up = if y > 0 { img.get(x, y - 1, c) } else { 0 };
    let up_left = if x > 0 && y > 0 {
        img.get(x - 1, y - 1, c)
    } else {
        0
    };
    med_predict(left, up, up_left)
}

pub fn encode_compact(img: &ImageU8) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for c in 0..3 {
        let mut model = AdaptiveModel::new(256);
        for y in 0..img.height() {
            for x in 0..img.width() {
                let err = img.get(x, y, c).wrapping_sub(predict_at(img, x, y, c));
                enc.encode_symbol(&mut model, err as usize);
            }
        }
    }
    enc.finish()
}

pub fn decode_compact(bytes: &[u8], width: usize, height: usize) -> Result<ImageU8> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "compact image dims {width}x{height}"
        )));
    }
    let mut img = ImageU8::filled(width, height, [0; 3]);
    let mut dec = RangeDecoder::new(bytes)?;
    for c in 0..3 {
        let mut model = AdaptiveModel::new(256);
        for y in 0..height {
            for x in 0..width {
                let err = dec.decode_symbol(&mut model)? as u8;
                let v = predict_at(&img, x, y, c).wrapping_add(err);
                img.data_mut()[(y * width + x) * 3 + c] = v;
            }
        }
    }
    Ok(img)
}

/// Residual quantizer step, `1..=64`. `Q = 1` is lossless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QuantSpec(u16);

impl QuantSpec {
    pub const LOSSLESS: QuantSpec = QuantSpec(1);

    pub fn new(q: u16) -> Result<Self> {
        if !(1..=64).contains(&q) {
            return Err(Error::InvalidArgument(format!(
                "Q must be in 1..=64, got {q}"
            )));
        }
        Ok(QuantSpec(q))
    }

    pub fn step(&self) -> u16 {
        self.0
    }

    /// Largest quantized magnitude a residual in `[-255, 255]` can produce.
    pub fn max_level(&self) -> i16 {
        let q = self.0 as i32;
        ((255 + q / 2) / q) as i16
    }

    #[inline]
    pub fn quantize(&self, r: i16) -> i16 {
        let q = self.0 as i32;
        let m = (r as i32).abs();
        let level = (m + q / 2) / q;
        (r.signum() as i32 * level) as i16
    }

    #[inline]
    pub fn dequantize(&self, level: i16) -> i16 {
        level * self.0 as i16
    }
}

/// Per-pixel signed RGB residual, interleaved like [`ImageU8`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResidualPlane {
    width: usize,
    height: usize,
    data: Vec<i16>,
}

impl ResidualPlane {
    pub fn new(width: usize, height: usize, data: Vec<i16>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "residual",
                format!("{} values for {width}x{height}x3", data.len()),
            ));
        }
        Ok(ResidualPlane {
            width,
            height,
            data,
        })
    }

    /// `original - synthesis` per channel.
    pub fn difference(original: &ImageU8, synthesis: &ImageU8) -> Result<Self> {
        if original.width() != synthesis.width() || original.height() != synthesis.height() {
            return Err(Error::shape("residual", "image and synthesis dims differ"));
        }
        let data = original
            .data()
            .iter()
            .zip(synthesis.data())
            .map(|(&a, &b)| a as i16 - b as i16)
            .collect();
        ResidualPlane::new(original.width(), original.height(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[i16] {
        &self.data
    }

    /// `clamp(base + residual, 0, 255)`.
    pub fn apply(&self, base: &ImageU8) -> Result<ImageU8> {
        if base.width() != self.width || base.height() != self.height {
            return Err(Error::shape("residual", "base and residual dims differ"));
        }
        let data = base
            .data()
            .iter()
            .zip(&self.data)
            .map(|(&b, &r)| (b as i16 + r).clamp(0, 255) as u8)
            .collect();
        ImageU8::new(self.width, self.height, data)
    }
}

pub fn quantize_residual(r: &ResidualPlane, q: QuantSpec) -> ResidualPlane {
    ResidualPlane {
        width: r.width,
        height: r.height,
        data: r.data.iter().map(|&v| q.quantize(v)).collect(),
    }
}

/// Levels back to residual values, `level * Q`.
pub fn dequantize(levels: &ResidualPlane, q: QuantSpec) -> ResidualPlane {
    ResidualPlane {
        width: levels.width,
        height: levels.height,
        data: levels.data.iter().map(|&v| q.dequantize(v)).collect(),
    }
}

#[inline]
pub fn zigzag(level: i16) -> u16 {
    if level <= 0 {
        (-2 * level as i32) as u16
    } else {
        (2 * level as i32 - 1) as u16
    }
}

#[inline]
pub fn unzigzag(u: u16) -> i16 {
    if u.is_multiple_of(2) {
        -((u / 2) as i16)
    } else {
        u.div_ceil(2) as i16
    }
}

const ESCAPE: usize = 255;

/// Quantizes `r` and entropy codes the levels.
pub fn encode_residual(r: &ResidualPlane, q: QuantSpec) -> Vec<u8> {
    let levels = quantize_residual(r, q);
    let mut enc = RangeEncoder::new();
    let mut escape = AdaptiveModel::new(256);
    let plane = r.width * r.height;
    for c in 0..3 {
        let mut model = AdaptiveModel::new(256);
        for p in 0..plane {
            let u = zigzag(levels.data[p * 3 + c]) as usize;
            let token = u.min(ESCAPE);
            enc.encode_symbol(&mut model, token);
            if token == ESCAPE {
                enc.encode_symbol(&mut escape, u - ESCAPE);
            }
        }
    }
    enc.finish()
}

/// Decodes a residual section to the dequantized plane.
pub fn decode_residual(
    bytes: &[u8],
    width: usize,
    height: usize,
    q: QuantSpec,
) -> Result<ResidualPlane> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut escape = AdaptiveModel::new(256);
    let plane = width * height;
    let max = q.max_level();
    let mut data = vec![0i16; plane * 3];
    for c in 0..3 {
        let mut model = AdaptiveModel::new(256);
        for p in 0..plane {
            let mut u = dec.decode_symbol(&mut model)?;
            if u == ESCAPE {
                u += dec.decode_symbol(&mut escape)?;
            }
            let level = unzigzag(u as u16);
            if level.abs() > max {
                return Err(Error::format(
                    "residual section",
                    format!("level {level} outside +-{max} for Q={}", q.step()),
                ));
            }
            data[p * 3 + c] = q.dequantize(level);
        }
    }
    ResidualPlane::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn med_cases() {
        assert_eq!(med_predict(10, 20, 5), 20);
        assert_eq!(med_predict(10, 20, 25), 10);
        assert_eq!(med_predict(10, 20, 15), 15);
        assert_eq!(med_predict(0, 0, 0), 0);
        assert_eq!(med_predict(255, 250, 251), 254);
    }

    #[test]
    fn single_pixel_codes_raw_values() {
        let img = ImageU8::new(1, 1, vec![17, 200, 3]).unwrap();
        let bytes = encode_compact(&img);
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for v in [17, 200, 3] {
            assert_eq!(dec.decode_symbol(&mut AdaptiveModel::new(256)).unwrap(), v);
        }
        assert_eq!(decode_compact(&bytes, 1, 1).unwrap(), img);
    }

    #[test]
    fn constant_image_is_tiny() {
        let img = ImageU8::filled(32, 32, [90, 140, 33]);
        let bytes = encode_compact(&img);
        assert!(bytes.len() < 200, "{}", bytes.len());
        assert_eq!(decode_compact(&bytes, 32, 32).unwrap(), img);
    }

    #[test]
    fn truncated_compact_errors() {
        let data: Vec<u8> = (0..16 * 16 * 3).map(|i| (i * 97 % 251) as u8).collect();
        let img = ImageU8::new(16, 16, data).unwrap();
        let bytes = encode_compact(&img);
        assert!(matches!(
            decode_compact(&bytes[..bytes.len() - 10], 16, 16),
            Err(Error::Truncated)
        ));
    }

    #[test]
    fn quantizer_cases() {
        let q4 = QuantSpec::new(4).unwrap();
        assert_eq!(q4.quantize(0), 0);
        assert_eq!(q4.quantize(5), 1);
        assert_eq!(q4.dequantize(q4.quantize(5)), 4);
        assert_eq!(q4.quantize(-6), -2);
        assert_eq!(q4.quantize(2), 1);
        assert_eq!(q4.quantize(-2), -1);
        for r in -255..=255 {
            assert_eq!(
                QuantSpec::LOSSLESS.dequantize(QuantSpec::LOSSLESS.quantize(r)),
                r
            );
        }
        assert!(QuantSpec::new(0).is_err());
        assert!(QuantSpec::new(65).is_err());
    }

    #[test]
    fn quantization_error_bound() {
        for q in 1..=64u16 {
            let spec = QuantSpec::new(q).unwrap();
            for r in -255i16..=255 {
                let level = spec.quantize(r);
                assert!(level.abs() <= spec.max_level());
                let err = (r - spec.dequantize(level)).abs();
                assert!(err as u16 <= q.div_ceil(2), "q={q} r={r} err={err}");
            }
        }
    }

    #[test]
    fn zigzag_mapping() {
        assert_eq!(zigzag(0), 0);
        assert_eq!(zigzag(1), 1);
        assert_eq!(zigzag(-1), 2);
        assert_eq!(zigzag(2), 3);
        assert_eq!(zigzag(-128), 256);
        for v in -255..=255 {
            assert_eq!(unzigzag(zigzag(v)), v);
        }
    }

    #[test]
    fn escape_path_round_trips() {
        let r = ResidualPlane::new(2, 1, vec![-128, 255, -255, 127, 0, 1]).unwrap();
        let bytes = encode_residual(&r, QuantSpec::LOSSLESS);
        assert_eq!(
            decode_residual(&bytes, 2, 1, QuantSpec::LOSSLESS).unwrap(),
            r
        );
    }

    #[test]
    fn zero_residual_is_under_one_percent_of_raw() {
        let r = ResidualPlane::new(64, 64, vec![0; 64 * 64 * 3]).unwrap();
        let bytes = encode_residual(&r, QuantSpec::LOSSLESS);
        assert!(bytes.len() * 100 < 64 * 64 * 3, "{}", bytes.len());
    }

    #[test]
    fn out_of_range_level_is_rejected() {
        // Level 255 is legal for Q=1 but not for Q=4 (max 64).
        let r = ResidualPlane::new(1, 1, vec![255, 0, 0]).unwrap();
        let bytes = encode_residual(&r, QuantSpec::LOSSLESS);
        assert!(matches!(
            decode_residual(&bytes, 1, 1, QuantSpec::new(4).unwrap()),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn compact_round_trip(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut x = seed | 1;
            let data: Vec<u8> = (0..w * h * 3).map(|_| {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                (x >> 24) as u8
            }).collect();
            let img = ImageU8::new(w, h, data).unwrap();
            prop_assert_eq!(decode_compact(&encode_compact(&img), w, h).unwrap(), img);
        }

        #[test]
        fn residual_round_trip_equals_dequantized(
            vals in proptest::collection::vec(-255i16..=255, 3..300),
            q in 1u16..=64,
        ) {
            let n = vals.len() / 3;
            let r = ResidualPlane::new(n, 1, vals[..n * 3].to_vec()).unwrap();
            let q = QuantSpec::new(q).unwrap();
            let bytes = encode_residual(&r, q);
            let back = decode_residual(&bytes, n, 1, q).unwrap();
            prop_assert_eq!(back, dequantize(&quantize_residual(&r, q), q));
        }
    }
}
