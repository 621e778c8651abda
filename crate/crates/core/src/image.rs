//! 8-bit images, class maps, PNM I/O and the u8 <-> float conventions.

use std::io::{BufRead, Read, Write};

use crate::error::{Error, Result};
use crate::ops::bilinear_resize;
use crate::tensor::{Dims, Tensor};

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageU8 {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// Row-major per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClassMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// `u / 127.5 - 1`.
#[inline]
pub fn normalize(u: f32) -> f32 {
    u / 127.5 - 1.0
}

/// `clamp(round_half_away((v + 1) * 127.5), 0, 255)`.
#[inline]
pub fn denormalize(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(
                "image",
                format!("{} bytes for {width}x{height}x3", data.len()),
            ));
        }
        Ok(ImageU8 {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        ImageU8 {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `1x3xHxW` tensor of the raw values `0.0..=255.0`.
    pub fn to_tensor_raw(&self) -> Tensor<f32> {
        self.to_tensor_with(|u| u as f32)
    }

    /// `1x3xHxW` tensor in `[-1, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        self.to_tensor_with(|u| normalize(u as f32))
    }

    fn to_tensor_with(&self, f: impl Fn(u8) -> f32) -> Tensor<f32> {
        let plane = self.width * self.height;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = f(px[c]);
            }
        }
        Tensor::from_vec(Dims::new(1, 3, self.height, self.width), data)
            .expect("length matches dims")
    }

    /// Inverse of [`ImageU8::to_tensor`] using [`denormalize`].
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        let d = t.dims();
        if d.n != 1 || d.c != 3 {
            return Err(Error::shape("image", format!("expected 1x3xHxW, got {d}")));
        }
        let plane = d.plane();
        let mut data = vec![0u8; 3 * plane];
        for c in 0..3 {
            for (p, &v) in t.plane(0, c).iter().enumerate() {
                data[p * 3 + c] = denormalize(v);
            }
        }
        ImageU8::new(d.w, d.h, data)
    }

    /// Bilinear resampling of the raw values followed by normalization.
    pub fn upsample_normalized(&self, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
        let up = bilinear_resize(&self.to_tensor_raw(), out_h, out_w)?;
        Ok(up.map(normalize))
    }

    /// Reflect-pads on the bottom and right so both dims are multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> ImageU8 {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        if w == self.width && h == self.height {
            return self.clone();
        }
        let mut out = ImageU8::filled(w, h, [0; 3]);
        for y in 0..h {
            let sy = crate::ops::reflect(y as isize, self.height);
            for x in 0..w {
                let sx = crate::ops::reflect(x as isize, self.width);
                out.set_pixel(x, y, self.pixel(sx, sy));
            }
        }
        out
    }

    /// Top-left `width x height` window.
    pub fn crop(&self, width: usize, height: usize) -> Result<ImageU8> {
        if width > self.width || height > self.height {
            return Err(Error::shape(
                "crop",
                format!("{width}x{height} from {}x{}", self.width, self.height),
            ));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            let row = y * self.width * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        ImageU8::new(width, height, data)
    }

    pub fn write_ppm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_ppm(r: impl Read) -> Result<ImageU8> {
        let (width, height, data) = read_pnm(r, b"P6", 3)?;
        ImageU8::new(width, height, data)
    }
}

impl ClassMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "class map",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        Ok(ClassMap {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Self {
        ClassMap {
            width,
            height,
            data: vec![class; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        self.data[y * self.width + x] = class;
    }

    pub fn max_class(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }

    /// Binary PGM (P5, maxval 255) holding the raw class indices.
    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn read_pgm(r: impl Read) -> Result<ClassMap> {
        let (width, height, data) = read_pnm(r, b"P5", 1)?;
        ClassMap::new(width, height, data)
    }
}

fn read_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let buf = r.fill_buf()?;
        if buf.is_empty() {
            break;
        }
        let b = buf[0];
        if b == b'#' && tok.is_empty() {
            let mut line = Vec::new();
            r.read_until(b'\n', &mut line)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            r.consume(1);
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b as char);
        r.consume(1);
    }
    if tok.is_empty() {
        return Err(Error::Truncated);
    }
    Ok(tok)
}

/// Reads a binary PNM with maxval 255. The single whitespace byte after the
/// maxval is consumed by [`read_token`].
fn read_pnm(r: impl Read, magic: &[u8; 2], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = std::io::BufReader::new(r);
    let m = read_token(&mut r)?;
    if m.as_bytes() != magic {
        return Err(Error::format(
            "pnm",
            format!("expected {}, found {m}", String::from_utf8_lossy(magic)),
        ));
    }
    let mut num = || -> Result<usize> {
        let t = read_token(&mut r)?;
        t.parse()
            .map_err(|_| Error::format("pnm", format!("bad header field `{t}`")))
    };
    let (width, height, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(Error::format("pnm", format!("maxval {maxval} unsupported")));
    }
    let mut data = vec![0u8; width * height * channels];
    r.read_exact(&mut data).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated,
        _ => Error::Io(e),
    })?;
    Ok((width, height, data))
}
