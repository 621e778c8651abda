//! Seeded synthetic scenes with exact per-pixel labels.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::{ClassMap, ImageU8};

pub const NOISE_SIGMA: f64 = 4.0;
const MAX_SHAPES: usize = 4;
const JITTER: i32 = 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub image: ImageU8,
    pub classes: ClassMap,
}

/// Base color of a class. Fixed across seeds so separately generated sets
/// share one appearance model.
pub fn class_color(class: u8) -> [u8; 3] {
    const TABLE: [[u8; 3]; 8] = [
        [96, 112, 128],
        [200, 60, 50],
        [60, 170, 70],
        [50, 80, 200],
        [220, 200, 60],
        [170, 70, 190],
        [60, 190, 200],
        [230, 140, 40],
    ];
    match TABLE.get(class as usize) {
        Some(&c) => c,
        None => {
            let h = (class as u32).wrapping_mul(0x9e37_79b9);
            [(h >> 24) as u8, (h >> 16) as u8, (h >> 8) as u8]
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
    Circle { cx: f32, cy: f32, r: f32 },
    Triangle { p: [(f32, f32); 3] },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Shape {
        let s = size as f32;
        let min = (s / 8.0).max(1.0);
        let extent = rng.gen_range(min..=(s / 2.0).max(min));
        let cx = rng.gen_range(0.0..s);
        let cy = rng.gen_range(0.0..s);
        match rng.gen_range(0..3) {
            0 => {
                let aspect = rng.gen_range(0.5f32..2.0);
                let (hw, hh) = (extent * aspect.sqrt() / 2.0, extent / aspect.sqrt() / 2.0);
                Shape::Rect {
                    x0: cx - hw,
                    y0: cy - hh,
                    x1: cx + hw,
                    y1: cy + hh,
                }
            }
            1 => Shape::Circle {
                cx,
                cy,
                r: extent / 2.0,
            },
            _ => {
                let mut vertex = || {
                    (
                        cx + rng.gen_range(-extent..extent) * 0.75,
                        cy + rng.gen_range(-extent..extent) * 0.75,
                    )
                };
                Shape::Triangle {
                    p: [vertex(), vertex(), vertex()],
                }
            }
        }
    }

    /// Occupancy test at a pixel center.
    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Circle { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Triangle { p } => {
                let edge = |a: (f32, f32), b: (f32, f32)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let d = [edge(p[0], p[1]), edge(p[1], p[2]), edge(p[2], p[0])];
                d.iter().all(|&v| v >= 0.0) || d.iter().all(|&v| v <= 0.0)
            }
        }
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: [u8; 3]) -> [i32; 3] {
    let j = rng.gen_range(-JITTER..=JITTER);
    base.map(|v| v as i32 + j)
}

/// Renders `count` labelled `size x size` scenes over `classes` classes.
pub fn gen_dataset(seed: u64, count: usize, size: usize, classes: usize) -> Result<Vec<Sample>> {
    if !(2..=256).contains(&classes) {
        return Err(Error::InvalidArgument(format!(
            "need 2..=256 classes, got {classes}"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("positive sigma");
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut labels = ClassMap::filled(size, size, 0);
        let mut color = vec![jittered(&mut rng, class_color(0)); size * size];
        let shapes = rng.gen_range(0..=MAX_SHAPES);
        for _ in 0..shapes {
            let class = rng.gen_range(1..classes) as u8;
            let shape = Shape::random(&mut rng, size);
            let rgb = jittered(&mut rng, class_color(class));
            for y in 0..size {
                for x in 0..size {
                    if shape.contains(x as f32 + 0.5, y as f32 + 0.5) {
                        labels.set(x, y, class);
                        color[y * size + x] = rgb;
                    }
                }
            }
        }
        let mut data = Vec::with_capacity(size * size * 3);
        for px in &color {
            for &v in px {
                let n: f64 = noise.sample(&mut rng);
                data.push((v as f64 + n).round().clamp(0.0, 255.0) as u8);
            }
        }
        out.push(Sample {
            image: ImageU8::new(size, size, data)?,
            classes: labels,
        });
    }
    Ok(out)
}

/// Seeded permutation of `0..n`.
pub(crate) fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        write(&mut f)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes `NNNN.ppm` / `NNNN.pgm` pairs into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, s) in samples.iter().enumerate() {
        write_atomic(&dir.join(format!("{i:04}.ppm")), |f| s.image.write_ppm(f))?;
        write_atomic(&dir.join(format!("{i:04}.pgm")), |f| s.classes.write_pgm(f))?;
    }
    Ok(())
}

/// Image files in `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every `*.ppm` in `dir` with its `*.pgm` label map.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            let image = ImageU8::read_ppm(BufReader::new(fs::File::open(&p)?))?;
            let label_path = p.with_extension("pgm");
            let classes =
                ClassMap::read_pgm(BufReader::new(fs::File::open(&label_path).map_err(
                    |e| Error::InvalidArgument(format!("{}: {e}", label_path.display())),
                )?))?;
            if classes.width() != image.width() || classes.height() != image.height() {
                return Err(Error::shape(
                    "read_dataset",
                    format!("{} label map size differs from image", p.display()),
                ));
            }
            Ok(Sample { image, classes })
        })
        .collect()
}
