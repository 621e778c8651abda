//! Layered encode and decode with encoder/decoder-matched synthesis.

use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::codec::{
    decode_compact, decode_residual, dequantize, encode_compact, encode_residual,
    quantize_residual, QuantSpec, ResidualPlane,
};
use crate::container::{Container, Flags, HASH_LEN, HEADER_LEN};
use crate::error::{Error, Result};
use crate::image::{ClassMap, ImageU8};
use crate::metrics::{ms_ssim, psnr, MsSsimParams};
use crate::nets::{
    forward_compnet, forward_finenet, forward_smapnet, infer_config, NetName, DOWN_FACTOR,
};
use crate::segmenter::{colorize, forward_segmenter, Palette};
use crate::tensor::Tensor;
use crate::weights::{hex, WeightSet};

pub const MIN_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    pub q: QuantSpec,
    pub embed_synth_hash: bool,
    /// `false` feeds the raw segment to FineNet (the ablation mode).
    pub enhance: bool,
}

impl EncodeOptions {
    pub fn new(q: QuantSpec) -> Self {
        EncodeOptions {
            q,
            embed_synth_hash: false,
            enhance: true,
        }
    }

    fn flags(&self) -> Flags {
        let mut f = Flags::empty();
        f.set(Flags::SYNTH_HASH, self.embed_synth_hash);
        f.set(Flags::NO_ENHANCE, !self.enhance);
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecStats {
    pub width: usize,
    pub height: usize,
    pub header_bytes: usize,
    pub compact_bytes: usize,
    pub residual_bytes: usize,
    pub hash_bytes: usize,
    pub total_bytes: usize,
    pub bpp: f64,
    /// Reconstruction quality; only known where the original is available.
    pub psnr_db: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub encode_s: Option<f64>,
    pub decode_s: Option<f64>,
    /// SHA-256 of the padded synthesis image.
    pub synth_hash: [u8; 32],
}

impl CodecStats {
    fn new(c: &Container, synth_hash: [u8; 32]) -> Self {
        let total = c.byte_len();
        let (w, h) = (c.width as usize, c.height as usize);
        CodecStats {
            width: w,
            height: h,
            header_bytes: HEADER_LEN,
            compact_bytes: c.compact.len(),
            residual_bytes: c.residual.len(),
            hash_bytes: if c.synth_hash.is_some() { HASH_LEN } else { 0 },
            total_bytes: total,
            bpp: bpp(total, w, h),
            psnr_db: None,
            ms_ssim: None,
            encode_s: None,
            decode_s: None,
            synth_hash,
        }
    }

    pub fn synth_hash8(&self) -> String {
        hex(&self.synth_hash[..HASH_LEN])
    }

    fn score(&mut self, original: &ImageU8, decoded: &ImageU8) -> Result<()> {
        self.psnr_db = Some(psnr(original, decoded)?);
        self.ms_ssim = ms_ssim(original, decoded, &MsSsimParams::default()).ok();
        Ok(())
    }
}

pub fn bpp(total_bytes: usize, width: usize, height: usize) -> f64 {
    8.0 * total_bytes as f64 / (width * height) as f64
}

/// Everything the decoder can rebuild from the compact layer alone.
#[derive(Clone, Debug)]
pub struct Synthesis {
    /// Normalized up-sampled compact image at padded size.
    pub up: Tensor<f32>,
    pub segment: ClassMap,
    /// Normalized colorized segment.
    pub seg_in: Tensor<f32>,
    /// Segment actually fed to FineNet (enhanced and clamped, or `seg_in`).
    pub seg_used: Tensor<f32>,
    pub image: ImageU8,
}

impl Synthesis {
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.image.data()).into()
    }
}

/// Checks that `w` holds the given networks and returns its class count.
pub fn require_networks(w: &WeightSet, nets: &[NetName]) -> Result<usize> {
    for net in nets {
        if !w.contains_prefix(net.prefix()) {
            return Err(Error::MissingWeight(format!("{}.*", net.prefix())));
        }
    }
    Ok(infer_config(w)?.classes)
}

/// Checks that `w` holds all four networks and returns its class count.
pub fn check_weights(w: &WeightSet) -> Result<usize> {
    require_networks(w, &NetName::ALL)
}

/// The segment the decoder extracts from the compact image: the normalized
/// up-sampled image, the class map and its normalized colorization.
pub fn segment_layer(
    compact: &ImageU8,
    padded_w: usize,
    padded_h: usize,
    w: &WeightSet,
) -> Result<(Tensor<f32>, ClassMap, Tensor<f32>)> {
    let classes = require_networks(w, &[NetName::Segmenter])?;
    let palette = Palette::standard(classes)?;
    let up = compact.upsample_normalized(padded_h, padded_w)?;
    let segment = forward_segmenter(&up, w, classes)?;
    let seg_in = colorize(&segment, &palette)?.to_tensor();
    Ok((up, segment, seg_in))
}

/// Runs the shared decoder-side path from the quantized compact image.
pub fn synthesize(
    compact: &ImageU8,
    padded_w: usize,
    padded_h: usize,
    w: &WeightSet,
    enhance: bool,
) -> Result<Synthesis> {
    let (up, segment, seg_in) = segment_layer(compact, padded_w, padded_h, w)?;
    let seg_used = if enhance {
        forward_smapnet(&seg_in, w)?.map(|v| v.clamp(-1.0, 1.0))
    } else {
        seg_in.clone()
    };
    let image = ImageU8::from_tensor(&forward_finenet(&up, &seg_used, w)?)?;
    Ok(Synthesis {
        up,
        segment,
        seg_in,
        seg_used,
        image,
    })
}

/// Padded size and the compact image of one input.
pub fn compact_layer(img: &ImageU8, w: &WeightSet) -> Result<(ImageU8, ImageU8)> {
    let padded = img.pad_to_multiple(DOWN_FACTOR);
    let compact = ImageU8::from_tensor(&forward_compnet(&padded.to_tensor(), w)?)?;
    Ok((padded, compact))
}

#[derive(Clone, Debug)]
pub struct Encoded {
    pub bytes: Vec<u8>,
    pub stats: CodecStats,
    /// Decoder output, computed at the encoder for free.
    pub reconstruction: ImageU8,
}

pub fn encode(img: &ImageU8, w: &WeightSet, opts: EncodeOptions) -> Result<Encoded> {
    let start = Instant::now();
    let (iw, ih) = (img.width(), img.height());
    if iw < MIN_DIM || ih < MIN_DIM {
        return Err(Error::InvalidArgument(format!(
            "image {iw}x{ih} is smaller than {MIN_DIM}x{MIN_DIM}"
        )));
    }
    let (width, height) = match (u16::try_from(iw), u16::try_from(ih)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "image {iw}x{ih} exceeds the container limit of 65535"
            )))
        }
    };
    check_weights(w)?;
    let (padded, compact) = compact_layer(img, w)?;
    let compact_bytes = encode_compact(&compact);
    let synth = synthesize(&compact, padded.width(), padded.height(), w, opts.enhance)?;
    let residual = ResidualPlane::difference(&padded, &synth.image)?;
    let residual_bytes = encode_residual(&residual, opts.q);
    let hash = synth.hash();
    let container = Container {
        flags: opts.flags(),
        q: opts.q,
        width,
        height,
        weight_digest: w.digest_prefix(),
        compact: compact_bytes,
        residual: residual_bytes,
        synth_hash: opts
            .embed_synth_hash
            .then(|| hash[..HASH_LEN].try_into().unwrap()),
    };
    let bytes = container.to_bytes()?;
    let reconstruction = dequantize(&quantize_residual(&residual, opts.q), opts.q)
        .apply(&synth.image)?
        .crop(iw, ih)?;
    let mut stats = CodecStats::new(&container, hash);
    stats.encode_s = Some(start.elapsed().as_secs_f64());
    stats.score(img, &reconstruction)?;
    Ok(Encoded {
        bytes,
        stats,
        reconstruction,
    })
}

fn check_digest(c: &Container, w: &WeightSet) -> Result<()> {
    let actual = w.digest_prefix();
    if c.weight_digest != actual {
        return Err(Error::DigestMismatch {
            expected: hex(&c.weight_digest),
            actual: hex(&actual),
        });
    }
    Ok(())
}

fn padded_dims(c: &Container) -> (usize, usize) {
    let up = |v: u16| (v as usize).div_ceil(DOWN_FACTOR) * DOWN_FACTOR;
    (up(c.width), up(c.height))
}

fn rebuild(c: &Container, w: &WeightSet) -> Result<Synthesis> {
    let (pw, ph) = padded_dims(c);
    let compact = decode_compact(&c.compact, pw / DOWN_FACTOR, ph / DOWN_FACTOR)?;
    synthesize(&compact, pw, ph, w, !c.flags.contains(Flags::NO_ENHANCE))
}

pub fn decode(bytes: &[u8], w: &WeightSet) -> Result<(ImageU8, CodecStats)> {
    let start = Instant::now();
    let c = Container::parse(bytes)?;
    check_digest(&c, w)?;
    let synth = rebuild(&c, w)?;
    let hash = synth.hash();
    if let Some(expected) = &c.synth_hash {
        if expected[..] != hash[..HASH_LEN] {
            return Err(Error::SynthesisMismatch {
                expected: hex(expected),
                actual: hex(&hash[..HASH_LEN]),
            });
        }
    }
    let (pw, ph) = padded_dims(&c);
    let residual = decode_residual(&c.residual, pw, ph, c.q)?;
    let img = residual
        .apply(&synth.image)?
        .crop(c.width as usize, c.height as usize)?;
    let mut stats = CodecStats::new(&c, hash);
    stats.decode_s = Some(start.elapsed().as_secs_f64());
    Ok((img, stats))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub matched: bool,
    pub expected: [u8; HASH_LEN],
    /// `None` when the synthesis could not be rebuilt at all.
    pub actual: Option<[u8; HASH_LEN]>,
    pub detail: Option<String>,
    pub header_bytes: usize,
    pub compact_bytes: usize,
    pub residual_bytes: usize,
    pub hash_bytes: usize,
    pub total_bytes: usize,
    pub bpp: f64,
}

impl VerifyReport {
    /// Sum of the per-section bpp contributions.
    pub fn section_bpp(&self, width: usize, height: usize) -> [f64; 4] {
        [
            self.header_bytes,
            self.compact_bytes,
            self.residual_bytes,
            self.hash_bytes,
        ]
        .map(|b| bpp(b, width, height))
    }
}

/// Rebuilds the synthesis and compares it with the embedded hash. Faults in
/// the sections are reported as a mismatch; only an unusable header or the
/// wrong model is an error.
pub fn verify_matched(bytes: &[u8], w: &WeightSet) -> Result<VerifyReport> {
    let c = Container::parse(bytes)?;
    let expected = c.synth_hash.ok_or_else(|| {
        Error::InvalidArgument("container has no synthesis hash to verify".into())
    })?;
    check_digest(&c, w)?;
    let (actual, detail) = match rebuild(&c, w) {
        Ok(s) => (Some(s.hash()[..HASH_LEN].try_into().unwrap()), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let total = c.byte_len();
    Ok(VerifyReport {
        matched: actual == Some(expected),
        expected,
        actual,
        detail,
        header_bytes: HEADER_LEN,
        compact_bytes: c.compact.len(),
        residual_bytes: c.residual.len(),
        hash_bytes: HASH_LEN,
        total_bytes: total,
        bpp: bpp(total, c.width as usize, c.height as usize),
    })
}
