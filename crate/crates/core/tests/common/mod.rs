#![allow(dead_code)]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use innout::config::{merge_layers, RunConfig};

/// Smooth two-tone images with a disc, so that hidden regions are
/// predictable from their surroundings.
pub fn write_corpus(dir: &Path, count: usize, size: u32) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..count {
        let a = [(40 + 23 * i) % 256, (90 + 57 * i) % 256, (160 + 31 * i) % 256];
        let cx = (size as f64) * (0.3 + 0.4 * ((i * 7) % 10) as f64 / 10.0);
        let cy = (size as f64) * (0.3 + 0.4 * ((i * 3) % 10) as f64 / 10.0);
        let r = size as f64 * 0.2;
        let img = RgbImage::from_fn(size, size, |x, y| {
            let t = (x + y) as f64 / (2 * size) as f64;
            let inside = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) < r * r;
            let px = |c: usize| {
                let base = a[c] as f64 * (1.0 - t) + (255 - a[c]) as f64 * t;
                if inside {
                    255.0 - base
                } else {
                    base
                }
            };
            Rgb([px(0) as u8, px(1) as u8, px(2) as u8])
        });
        img.save(dir.join(format!("img_{i:03}.png"))).unwrap();
    }
    dir.to_path_buf()
}

pub fn config(pairs: &[(&str, &str)]) -> RunConfig {
    let ov: Vec<(String, String)> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::from_map(merge_layers(None, &ov).unwrap(), true).unwrap()
}
