//! Segment extraction run identically at both ends, plus palette helpers
//! and segment-quality scores.

use crate::error::{Error, Result};
use crate::image::{ClassMap, ImageU8};
use crate::nets::forward_segmenter_logits;
use crate::tensor::Tensor;
use crate::weights::WeightSet;

/// Class colors. Entry `i` spreads the bits of `i` over the high bits of
/// R, G and B in turn (the widely published PASCAL VOC label colormap):
/// `0 -> (0,0,0)`, `1 -> (128,0,0)`, `2 -> (0,128,0)`, `3 -> (128,128,0)`, ...
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
}

const fn label_color(index: usize) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = index;
    let mut j = 0;
    while j < 8 {
        let mut ch = 0;
        while ch < 3 {
            rgb[ch] |= (((c >> ch) & 1) as u8) << (7 - j);
            ch += 1;
        }
        c >>= 3;
        j += 1;
    }
    rgb
}

impl Palette {
    /// The first `classes` colors of the label colormap.
    pub fn standard(classes: usize) -> Result<Palette> {
        if !(2..=256).contains(&classes) {
            return Err(Error::InvalidArgument(format!(
                "palette needs 2..=256 classes, got {classes}"
            )));
        }
        Ok(Palette {
            colors: (0..classes).map(label_color).collect(),
        })
    }

    pub fn from_colors(colors: Vec<[u8; 3]>) -> Result<Palette> {
        if colors.len() < 2 || colors.len() > 256 {
            return Err(Error::InvalidArgument(format!(
                "palette needs 2..=256 colors, got {}",
                colors.len()
            )));
        }
        for (i, a) in colors.iter().enumerate() {
            if colors[..i].contains(a) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate palette color {a:?}"
                )));
            }
        }
        Ok(Palette { colors })
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.colors.get(class as usize).copied()
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }
}

/// Argmax over the class logits; ties go to the smallest index.
pub fn argmax_classes(logits: &Tensor<f32>) -> Result<ClassMap> {
    let d = logits.dims();
    if d.n != 1 || d.c < 2 {
        return Err(Error::shape(
            "argmax",
            format!("expected 1xLxHxW with L >= 2, got {d}"),
        ));
    }
    let mut data = vec![0u8; d.plane()];
    for (p, out) in data.iter_mut().enumerate() {
        let mut best = logits.data()[p];
        for c in 1..d.c {
            let v = logits.data()[c * d.plane() + p];
            if v > best {
                best = v;
                *out = c as u8;
            }
        }
    }
    ClassMap::new(d.w, d.h, data)
}

/// Per-pixel classes of a normalized `1x3xHxW` image.
pub fn forward_segmenter(img: &Tensor<f32>, w: &WeightSet, classes: usize) -> Result<ClassMap> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "segmenter needs at least 2 classes, got {classes}"
        )));
    }
    let logits = forward_segmenter_logits(img, w)?;
    if logits.dims().c != classes {
        return Err(Error::shape(
            "forward_segmenter",
            format!(
                "weights produce {} classes, expected {classes}",
                logits.dims().c
            ),
        ));
    }
    argmax_classes(&logits)
}

pub fn colorize(m: &ClassMap, p: &Palette) -> Result<ImageU8> {
    let mut data = Vec::with_capacity(m.data().len() * 3);
    for &c in m.data() {
        let rgb = p.color(c).ok_or_else(|| {
            Error::InvalidArgument(format!("class {c} outside a {}-color palette", p.len()))
        })?;
        data.extend_from_slice(&rgb);
    }
    ImageU8::new(m.width(), m.height(), data)
}

/// Nearest palette entry per pixel by squared RGB distance; ties go to the
/// smallest index.
pub fn snap_to_palette(img: &ImageU8, p: &Palette) -> ClassMap {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| {
            let mut best = (u32::MAX, 0u8);
            for (i, c) in p.colors().iter().enumerate() {
                let d: u32 = (0..3)
                    .map(|k| {
                        let e = px[k] as i32 - c[k] as i32;
                        (e * e) as u32
                    })
                    .sum();
                if d < best.0 {
                    best = (d, i as u8);
                }
            }
            best.1
        })
        .collect();
    ClassMap::new(img.width(), img.height(), data).expect("one class per pixel")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentScores {
    pub pixel_accuracy: f64,
    /// Mean IoU over the classes present in the ground truth.
    pub mean_iou: f64,
}

pub fn segment_scores(pred: &ClassMap, truth: &ClassMap, classes: usize) -> Result<SegmentScores> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::shape(
            "segment_scores",
            format!(
                "{}x{} vs {}x{}",
                pred.width(),
                pred.height(),
                truth.width(),
                truth.height()
            ),
        ));
    }
    let n = truth.data().len();
    if n == 0 {
        return Err(Error::shape("segment_scores", "empty maps"));
    }
    let mut inter = vec![0usize; classes.max(256)];
    let mut union = vec![0usize; classes.max(256)];
    let mut present = vec![false; classes.max(256)];
    let mut correct = 0;
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        present[t as usize] = true;
        if p == t {
            correct += 1;
            inter[t as usize] += 1;
            union[t as usize] += 1;
        } else {
            union[t as usize] += 1;
            union[p as usize] += 1;
        }
    }
    let ious: Vec<f64> = (0..present.len())
        .filter(|&c| present[c])
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    Ok(SegmentScores {
        pixel_accuracy: correct as f64 / n as f64,
        mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn palette_leading_entries() {
        let p = Palette::standard(5).unwrap();
        assert_eq!(
            p.colors(),
            &[
                [0, 0, 0],
                [128, 0, 0],
                [0, 128, 0],
                [128, 128, 0],
                [0, 0, 128]
            ]
        );
        let full = Palette::standard(256).unwrap();
        assert_eq!(full.color(255), Some([224, 224, 192]));
        assert!(Palette::from_colors(full.colors().to_vec()).is_ok());
        assert!(Palette::standard(1).is_err());
        assert!(Palette::from_colors(vec![[1, 2, 3], [1, 2, 3]]).is_err());
    }

    #[test]
    fn zero_logits_pick_class_zero() {
        let logits = Tensor::zeros(Dims::new(1, 4, 3, 2));
        let m = argmax_classes(&logits).unwrap();
        assert!(m.data().iter().all(|&c| c == 0));
    }

    #[test]
    fn argmax_prefers_first_of_equal_maxima() {
        let logits =
            Tensor::from_vec(Dims::new(1, 3, 1, 2), vec![0.0, 1.0, 2.0, 5.0, 2.0, 5.0]).unwrap();
        assert_eq!(argmax_classes(&logits).unwrap().data(), &[1, 1]);
    }

    #[test]
    fn checkerboard_colorize() {
        let m = ClassMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        let p = Palette::from_colors(vec![[0, 0, 0], [255, 255, 255]]).unwrap();
        let img = colorize(&m, &p).unwrap();
        assert_eq!(
            img.data(),
            &[0, 0, 0, 255, 255, 255, 255, 255, 255, 0, 0, 0]
        );
        assert_eq!(snap_to_palette(&img, &p), m);
        let bad = ClassMap::new(1, 1, vec![2]).unwrap();
        assert!(colorize(&bad, &p).is_err());
    }

    #[test]
    fn snap_ties_go_to_lower_index() {
        let p = Palette::from_colors(vec![[0, 0, 0], [100, 0, 0], [200, 0, 0]]).unwrap();
        let img = ImageU8::new(1, 1, vec![150, 0, 0]).unwrap();
        assert_eq!(snap_to_palette(&img, &p).data(), &[1]);
    }

    #[test]
    fn score_cases() {
        let t = ClassMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        let s = segment_scores(&t, &t, 2).unwrap();
        assert_eq!((s.pixel_accuracy, s.mean_iou), (1.0, 1.0));

        let zeros = ClassMap::filled(2, 2, 0);
        let ones = ClassMap::filled(2, 2, 1);
        let s = segment_scores(&ones, &zeros, 2).unwrap();
        assert_eq!((s.pixel_accuracy, s.mean_iou), (0.0, 0.0));

        let s = segment_scores(&zeros, &t, 2).unwrap();
        assert_eq!(s.pixel_accuracy, 0.5);
        assert_eq!(s.mean_iou, 0.25);

        assert!(segment_scores(&ClassMap::filled(1, 2, 0), &t, 2).is_err());
    }

    #[test]
    fn segmenter_class_count_is_checked() {
        let cfg = crate::nets::NetConfig::toy(4);
        let w = crate::nets::init_weights(&cfg, 0).unwrap();
        let img = Tensor::zeros(Dims::new(1, 3, 5, 6));
        let m = forward_segmenter(&img, &w, 4).unwrap();
        assert_eq!((m.width(), m.height()), (6, 5));
        assert!(forward_segmenter(&img, &w, 3).is_err());
        assert!(forward_segmenter(&img, &w, 1).is_err());
    }
}
