use std::fmt::Write as _;
use std::io::Write;

use anyhow::Result;

pub const ROW_HEADER: &str = "image,variant,q,bpp,psnr_db,ms_ssim,enc_s,dec_s,synth_hash8";
pub const RD_HEADER: &str = "variant,q,images,bpp,psnr_db,ms_ssim,enc_s,dec_s";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    WithEnhancement,
    WithoutEnhancement,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::WithEnhancement => "with-enhancement",
            Variant::WithoutEnhancement => "without-enhancement",
        }
    }

    pub fn enhance(self) -> bool {
        self == Variant::WithEnhancement
    }
}

/// One per-image result. Unknown fields print as empty cells.
#[derive(Clone, Debug, Default)]
pub struct Row {
    pub image: String,
    pub variant: Option<Variant>,
    pub q: u16,
    pub bpp: Option<f64>,
    pub psnr_db: Option<f64>,
    pub ms_ssim: Option<f64>,
    pub enc_s: Option<f64>,
    pub dec_s: Option<f64>,
    pub synth_hash8: Option<String>,
}

fn cell(v: Option<f64>, prec: usize) -> String {
    match v {
        None => String::new(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) => format!("{x:.prec$}"),
    }
}

impl Row {
    pub fn csv(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            self.image,
            self.variant.map_or("", Variant::name),
            self.q,
            cell(self.bpp, 6),
            cell(self.psnr_db, 4),
            cell(self.ms_ssim, 6),
            cell(self.enc_s, 4),
            cell(self.dec_s, 4),
            self.synth_hash8.as_deref().unwrap_or(""),
        );
        s
    }
}

/// Set means for one (variant, q) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RdPoint {
    pub variant: Variant,
    pub q: u16,
    pub images: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub ms_ssim: Option<f64>,
    pub enc_s: f64,
    pub dec_s: f64,
}

impl RdPoint {
    /// Means over the successful rows of one (variant, q) group.
    pub fn from_rows(variant: Variant, q: u16, rows: &[&Row]) -> Option<RdPoint> {
        let ok: Vec<&&Row> = rows.iter().filter(|r| r.bpp.is_some()).collect();
        if ok.is_empty() {
            return None;
        }
        let n = ok.len() as f64;
        let mean =
            |f: &dyn Fn(&Row) -> Option<f64>| ok.iter().filter_map(|r| f(r)).sum::<f64>() / n;
        let ms: Vec<f64> = ok.iter().filter_map(|r| r.ms_ssim).collect();
        Some(RdPoint {
            variant,
            q,
            images: ok.len(),
            bpp: mean(&|r| r.bpp),
            psnr_db: mean(&|r| r.psnr_db),
            ms_ssim: (ms.len() == ok.len()).then(|| ms.iter().sum::<f64>() / n),
            enc_s: mean(&|r| r.enc_s),
            dec_s: mean(&|r| r.dec_s),
        })
    }

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.variant.name(),
            self.q,
            self.images,
            cell(Some(self.bpp), 6),
            cell(Some(self.psnr_db), 4),
            cell(self.ms_ssim, 6),
            cell(Some(self.enc_s), 4),
            cell(Some(self.dec_s), 4),
        )
    }
}

pub fn write_lines(
    w: &mut dyn Write,
    header: &str,
    lines: impl IntoIterator<Item = String>,
) -> Result<()> {
    writeln!(w, "{header}")?;
    for l in lines {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_psnr_prints_as_inf() {
        let r = Row {
            image: "0000".into(),
            variant: Some(Variant::WithEnhancement),
            q: 1,
            bpp: Some(12.5),
            psnr_db: Some(f64::INFINITY),
            ms_ssim: Some(1.0),
            enc_s: Some(0.25),
            dec_s: None,
            synth_hash8: Some("00ff".into()),
        };
        assert_eq!(
            r.csv(),
            "0000,with-enhancement,1,12.500000,inf,1.000000,0.2500,,00ff"
        );
    }

    #[test]
    fn rd_point_means_skip_failures() {
        let a = Row {
            bpp: Some(2.0),
            psnr_db: Some(30.0),
            ms_ssim: Some(0.9),
            enc_s: Some(1.0),
            dec_s: Some(1.0),
            ..Row::default()
        };
        let b = Row {
            bpp: Some(4.0),
            psnr_db: Some(40.0),
            ms_ssim: Some(0.8),
            enc_s: Some(3.0),
            dec_s: Some(1.0),
            ..Row::default()
        };
        let failed = Row::default();
        let p = RdPoint::from_rows(Variant::WithoutEnhancement, 4, &[&a, &b, &failed]).unwrap();
        assert_eq!(p.images, 2);
        assert_eq!(p.bpp, 3.0);
        assert_eq!(p.psnr_db, 35.0);
        assert!((p.ms_ssim.unwrap() - 0.85).abs() < 1e-12);
        assert!(RdPoint::from_rows(Variant::WithEnhancement, 1, &[&failed]).is_none());
    }
}
