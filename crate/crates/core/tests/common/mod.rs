//! Independent reference implementations. Everything here is written
//! directly from the definitions in f64 and shares no code with the crate
//! beyond reading weights and images.
#![allow(dead_code)]

use edms_core::image::{ClassMap, ImageU8};
use edms_core::{Dims, Tensor, WeightSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One `c x h x w` feature map.
#[derive(Clone, Debug)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub v: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Map {
        Map {
            c,
            h,
            w,
            v: vec![0.0; c * h * w],
        }
    }

    pub fn of(t: &Tensor<f32>) -> Map {
        let d = t.dims();
        assert_eq!(d.n, 1);
        Map {
            c: d.c,
            h: d.h,
            w: d.w,
            v: t.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.v[(c * self.h + y) * self.w + x]
    }

    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.v[(c * self.h + y) * self.w + x]
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Map {
        self.v.iter_mut().for_each(|x| *x = f(*x));
        self
    }

    pub fn add(mut self, o: &Map) -> Map {
        for (a, b) in self.v.iter_mut().zip(&o.v) {
            *a += b;
        }
        self
    }

    pub fn concat(&self, o: &Map) -> Map {
        let mut v = self.v.clone();
        v.extend_from_slice(&o.v);
        Map {
            c: self.c + o.c,
            h: self.h,
            w: self.w,
            v,
        }
    }

    pub fn max_abs_diff(&self, t: &Tensor<f32>) -> f64 {
        assert_eq!(t.len(), self.v.len());
        self.v
            .iter()
            .zip(t.data())
            .map(|(a, &b)| (a - b as f64).abs())
            .fold(0.0, f64::max)
    }
}

/// Mirror index without repeating the edge sample.
pub fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

pub struct Kernel {
    pub out_c: usize,
    pub in_c: usize,
    pub s: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Kernel {
    pub fn load(ws: &WeightSet, layer: &str) -> Kernel {
        let k = ws.get(&format!("{layer}.weight")).unwrap();
        let d = k.dims();
        Kernel {
            out_c: d.n,
            in_c: d.c,
            s: d.h,
            w: k.data().iter().map(|&x| x as f64).collect(),
            b: ws
                .get(&format!("{layer}.bias"))
                .unwrap()
                .data()
                .iter()
                .map(|&x| x as f64)
                .collect(),
        }
    }

    pub fn tap(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.w[((o * self.in_c + i) * self.s + ky) * self.s + kx]
    }
}

/// Direct-sum convolution over a mirror-padded input.
pub fn conv(x: &Map, k: &Kernel, stride: usize) -> Map {
    assert_eq!(x.c, k.in_c);
    let pad = (k.s as i64 - 1) / 2;
    let (oh, ow) = (x.h.div_ceil(stride), x.w.div_ceil(stride));
    let mut out = Map::zeros(k.out_c, oh, ow);
    for o in 0..k.out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..k.in_c {
                    for ky in 0..k.s {
                        for kx in 0..k.s {
                            let sy = mirror((oy * stride + ky) as i64 - pad, x.h);
                            let sx = mirror((ox * stride + kx) as i64 - pad, x.w);
                            acc += k.tap(o, i, ky, kx) * x.get(i, sy, sx);
                        }
                    }
                }
                *out.at_mut(o, oy, ox) = acc + k.b[o];
            }
        }
    }
    out
}

/// Transposed 3x3 convolution written as zero insertion followed by a
/// zero-padded correlation with the flipped kernel.
pub fn conv_transpose(x: &Map, k: &Kernel) -> Map {
    assert_eq!(k.s, 3);
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut z = Map::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                *z.at_mut(c, 2 * y, 2 * xx) = x.get(c, y, xx);
            }
        }
    }
    let mut out = Map::zeros(k.out_c, h2, w2);
    for o in 0..k.out_c {
        for oy in 0..h2 {
            for ox in 0..w2 {
                let mut acc = k.b[o];
                for i in 0..k.in_c {
                    for ty in 0..3 {
                        for tx in 0..3 {
                            let (zy, zx) = (oy as i64 - 1 + ty as i64, ox as i64 - 1 + tx as i64);
                            if zy < 0 || zx < 0 || zy >= h2 as i64 || zx >= w2 as i64 {
                                continue;
                            }
                            acc += k.tap(o, i, 2 - ty, 2 - tx) * z.get(i, zy as usize, zx as usize);
                        }
                    }
                }
                *out.at_mut(o, oy, ox) = acc;
            }
        }
    }
    out
}

pub fn instance_norm(x: &Map, ws: &WeightSet, layer: &str) -> Map {
    let gamma = ws.get(&format!("{layer}.gamma")).unwrap().data().to_vec();
    let beta = ws.get(&format!("{layer}.beta")).unwrap().data().to_vec();
    let n = (x.h * x.w) as f64;
    let mut out = x.clone();
    for c in 0..x.c {
        let plane = &x.v[c * x.h * x.w..(c + 1) * x.h * x.w];
        let mean = plane.iter().sum::<f64>() / n;
        let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for (o, v) in out.v[c * x.h * x.w..(c + 1) * x.h * x.w]
            .iter_mut()
            .zip(plane)
        {
            *o = gamma[c] as f64 * (v - mean) / (var + 1e-5).sqrt() + beta[c] as f64;
        }
    }
    out
}

pub fn relu(x: Map) -> Map {
    x.map(|v| v.max(0.0))
}

fn conv_in_relu(x: &Map, ws: &WeightSet, layer: &str, stride: usize) -> Map {
    relu(instance_norm(
        &conv(x, &Kernel::load(ws, layer), stride),
        ws,
        layer,
    ))
}

/// FineNet spelled out layer by layer.
pub fn finenet(up: &Map, seg: &Map, ws: &WeightSet) -> Map {
    let mut h = up.concat(seg);
    h = conv_in_relu(&h, ws, "finenet.c0", 1);
    for l in ["finenet.c1", "finenet.c2", "finenet.c3"] {
        h = conv_in_relu(&h, ws, l, 2);
    }
    for r in 0..9 {
        let a = format!("finenet.res{r}.a");
        let b = format!("finenet.res{r}.b");
        let y = conv_in_relu(&h, ws, &a, 1);
        let y = instance_norm(&conv(&y, &Kernel::load(ws, &b), 1), ws, &b);
        h = h.add(&y);
    }
    for u in 0..3 {
        let l = format!("finenet.up{u}");
        h = relu(instance_norm(
            &conv_transpose(&h, &Kernel::load(ws, &l)),
            ws,
            &l,
        ));
    }
    conv(&h, &Kernel::load(ws, "finenet.out"), 1).map(f64::tanh)
}

/// SMapNet with its weight-shared recursion unrolled.
pub fn smapnet(seg: &Map, ws: &WeightSet) -> Map {
    let x0 = conv_in_relu(seg, ws, "smapnet.entry", 1);
    let a = Kernel::load(ws, "smapnet.unit.a");
    let b = Kernel::load(ws, "smapnet.unit.b");
    let mut x = x0.clone();
    for _ in 0..9 {
        let y = conv(&relu(conv(&x, &a, 1)), &b, 1);
        x = relu(x0.clone().add(&y));
    }
    conv(&x, &Kernel::load(ws, "smapnet.out"), 1)
}

pub fn compnet(x: &Map, ws: &WeightSet) -> Map {
    let mut h = conv_in_relu(x, ws, "compnet.c0", 1);
    for l in ["compnet.c1", "compnet.c2", "compnet.c3"] {
        h = conv_in_relu(&h, ws, l, 2);
    }
    conv(&h, &Kernel::load(ws, "compnet.out"), 1).map(f64::tanh)
}

/// Nearest color by exhaustive search, first index on ties.
pub fn nearest_palette(img: &ImageU8, colors: &[[u8; 3]]) -> ClassMap {
    let mut out = ClassMap::filled(img.width(), img.height(), 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.pixel(x, y);
            let mut best = (u32::MAX, 0usize);
            for (i, c) in colors.iter().enumerate() {
                let d: u32 = (0..3)
                    .map(|k| (p[k] as i32 - c[k] as i32).pow(2) as u32)
                    .sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            out.set(x, y, best.1 as u8);
        }
    }
    out
}

/// Plain MS-SSIM: 2-D window sums, no separability, explicit moments.
pub fn ms_ssim(a: &ImageU8, b: &ImageU8) -> f64 {
    const W: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let lum = |img: &ImageU8| -> Vec<Vec<f64>> {
        (0..img.height())
            .map(|y| {
                (0..img.width())
                    .map(|x| {
                        let p = img.pixel(x, y);
                        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
                    })
                    .collect()
            })
            .collect()
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in win.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut x = lum(a);
    let mut y = lum(b);
    let min_dim = a.width().min(a.height());
    let mut scales = 0;
    while scales < 5 && min_dim >= 11 << scales {
        scales += 1;
    }
    assert!(scales > 0);
    let wsum: f64 = W[..scales].iter().sum();
    let weights: Vec<f64> = if scales == 5 {
        W.to_vec()
    } else {
        W[..scales].iter().map(|w| w / wsum).collect()
    };
    let mut result = 1.0;
    for (s, &e) in weights.iter().enumerate() {
        let (h, w) = (x.len(), x[0].len());
        let (mut cs_sum, mut ss_sum, mut count) = (0.0, 0.0, 0.0);
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let (p, q, g) = (x[oy + i][ox + j], y[oy + i][ox + j], win[i][j]);
                        mx += g * p;
                        my += g * q;
                        xx += g * p * p;
                        yy += g * q * q;
                        xy += g * p * q;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let cs = (2.0 * cov + c2) / (vx + vy + c2);
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                cs_sum += cs;
                ss_sum += l * cs;
                count += 1.0;
            }
        }
        let v = if s + 1 == scales {
            ss_sum / count
        } else {
            cs_sum / count
        };
        result *= v.signum() * v.abs().powf(e);
        let half = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..m.len() / 2)
                .map(|i| {
                    (0..m[0].len() / 2)
                        .map(|j| {
                            (m[2 * i][2 * j]
                                + m[2 * i + 1][2 * j]
                                + m[2 * i][2 * j + 1]
                                + m[2 * i + 1][2 * j + 1])
                                / 4.0
                        })
                        .collect()
                })
                .collect()
        };
        x = half(&x);
        y = half(&y);
    }
    result
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageU8 {
    ImageU8::new(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
}

/// Smooth gradients with a few hard edges.
pub fn structured_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageU8 {
    let (fx, fy) = (rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3));
    let phase: f64 = rng.gen_range(0.0..6.0);
    let edge = rng.gen_range(0..w.max(1));
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let base = 127.5 + 100.0 * ((x as f64 * fx + y as f64 * fy) + phase).sin();
            let step = if x >= edge { 40.0 } else { 0.0 };
            for c in 0..3 {
                data.push((base + step - 20.0 * c as f64).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageU8::new(w, h, data).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tensor_of(m: &Map) -> Tensor<f32> {
    Tensor::from_vec(
        Dims::new(1, m.c, m.h, m.w),
        m.v.iter().map(|&v| v as f32).collect(),
    )
    .unwrap()
}
