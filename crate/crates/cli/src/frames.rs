use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cvip::codec::Frame;

/// Every `.png` in `dir`, sorted by file name.
pub fn read_png_dir(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
    paths.sort();
    ensure!(!paths.is_empty(), "no PNG frames in {}", dir.display());
    paths
        .iter()
        .map(|p| {
            let img = image::open(p).with_context(|| format!("reading {}", p.display()))?.to_rgb8();
            let (w, h) = img.dimensions();
            Ok(Frame::new(w as usize, h as usize, img.into_raw())?)
        })
        .collect()
}

/// Back-to-back RGB24 frames of the given size.
pub fn read_raw(path: &Path, width: usize, height: usize) -> Result<Vec<Frame>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let size = width * height * 3;
    ensure!(size > 0, "raw frames need a positive width and height");
    if bytes.is_empty() || bytes.len() % size != 0 {
        bail!("{} holds {} bytes, not a whole number of {width}x{height} RGB frames", path.display(), bytes.len());
    }
    bytes
        .chunks_exact(size)
        .map(|c| Ok(Frame::new(width, height, c.to_vec())?))
        .collect()
}

pub fn write_png(frame: &Frame, path: &Path) -> Result<()> {
    let img = image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.data.clone())
        .context("frame buffer does not match its size")?;
    img.save(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
