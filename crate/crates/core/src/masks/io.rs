use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use super::Mask;
use crate::{Error, Result};

/// Writes a single-channel 8-bit PNG: 255 = visible, 0 = hidden.
pub fn save_mask_png(path: &Path, m: &Mask) -> Result<()> {
    let img = GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        Luma([if m.is_visible(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    })
}

/// Reads a mask raster; values of 128 and above count as visible. Color
/// images are converted to luminance first.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let img = image::open(path)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .into_luma8();
    let (w, h) = img.dimensions();
    let grid = img.pixels().map(|p| (p.0[0] >= 128) as u8).collect();
    Mask::from_grid(h as usize, w as usize, grid)
}

/// Loads every PNG/JPEG in `dir`, in lexicographic filename order.
pub fn load_mask_dir(dir: &Path) -> Result<Vec<Mask>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| crate::data::is_image_path(p))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_mask_png(p)).collect()
}
