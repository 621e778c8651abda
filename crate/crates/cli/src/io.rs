use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use edms_core::image::ImageU8;
use edms_core::WeightSet;
use tempfile::NamedTempFile;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| Ok(w.write_all(bytes)?))
}

pub fn read_image(path: &Path) -> Result<ImageU8> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    ImageU8::read_ppm(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn write_image(path: &Path, img: &ImageU8) -> Result<()> {
    write_atomic(path, |w| Ok(img.write_ppm(w)?))
}

pub fn read_weights(path: &Path) -> Result<WeightSet> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    WeightSet::load(BufReader::new(f))
        .with_context(|| format!("loading weights {}", path.display()))
}

pub fn write_weights(path: &Path, w: &WeightSet) -> Result<()> {
    write_atomic(path, |out| Ok(w.save(out)?))
}
