use std::f64::consts::PI;

use rand::Rng as _;

use super::Mask;
use crate::rng::Rng;
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 10_000;

/// Hidden rectangle of exactly `hole_h`×`hole_w`, centered with offsets
/// rounded down.
pub fn make_center_rect_mask(img_h: usize, img_w: usize, hole_h: usize, hole_w: usize) -> Result<Mask> {
    if hole_h == 0 || hole_w == 0 || hole_h >= img_h || hole_w >= img_w {
        return Err(Error::invalid(format!(
            "hole {hole_h}x{hole_w} must be non-empty and smaller than the image {img_h}x{img_w}"
        )));
    }
    let top = (img_h - hole_h) / 2;
    let left = (img_w - hole_w) / 2;
    let mut m = Mask::filled(img_h, img_w, true);
    for y in top..top + hole_h {
        for x in left..left + hole_w {
            m.set(y, x, false);
        }
    }
    Ok(m)
}

/// A rectangle in normalized image coordinates, edges in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropBox {
    pub top: f64,
    pub left: f64,
    pub bottom: f64,
    pub right: f64,
}

impl CropBox {
    fn validate(&self) -> Result<()> {
        let inside = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.top, self.left, self.bottom, self.right].iter().all(|&v| inside(v)) {
            return Err(Error::invalid("crop box must lie within the unit square"));
        }
        if self.bottom <= self.top || self.right <= self.left {
            return Err(Error::invalid("crop box has zero area"));
        }
        Ok(())
    }
}

/// Outpainting mask whose visible region is `crop` rescaled to the grid.
/// Without a box, side lengths are drawn uniformly from [0.25, 0.9] of each
/// dimension and the position uniformly over valid placements.
pub fn make_random_rect_mask(
    img_h: usize,
    img_w: usize,
    crop: Option<CropBox>,
    rng: &mut Rng,
) -> Result<Mask> {
    if img_h == 0 || img_w == 0 {
        return Err(Error::invalid("image dimensions must be positive"));
    }
    if let Some(b) = crop {
        b.validate()?;
        let rows = ((b.top * img_h as f64).round() as usize, (b.bottom * img_h as f64).round() as usize);
        let cols = ((b.left * img_w as f64).round() as usize, (b.right * img_w as f64).round() as usize);
        if rows.1 <= rows.0 || cols.1 <= cols.0 {
            return Err(Error::invalid("crop box covers no whole pixel on this grid"));
        }
        let m = visible_rect(img_h, img_w, rows, cols);
        if m.is_degenerate() {
            return Err(Error::invalid("crop box leaves no hidden pixel"));
        }
        return Ok(m);
    }
    for _ in 0..MAX_ATTEMPTS {
        let rect_h = ((rng.random_range(0.25..=0.9) * img_h as f64).round() as usize).clamp(1, img_h);
        let rect_w = ((rng.random_range(0.25..=0.9) * img_w as f64).round() as usize).clamp(1, img_w);
        let top = rng.random_range(0..=img_h - rect_h);
        let left = rng.random_range(0..=img_w - rect_w);
        let m = visible_rect(img_h, img_w, (top, top + rect_h), (left, left + rect_w));
        if !m.is_degenerate() {
            return Ok(m);
        }
    }
    Err(Error::invalid(format!("cannot place a proper rectangle on a {img_h}x{img_w} grid")))
}

fn visible_rect(h: usize, w: usize, rows: (usize, usize), cols: (usize, usize)) -> Mask {
    let mut m = Mask::filled(h, w, false);
    for y in rows.0..rows.1 {
        for x in cols.0..cols.1 {
            m.set(y, x, true);
        }
    }
    m
}

/// Hole mask made of random-walk brush strokes, resampled until the visible
/// fraction lies in [0.3, 0.95]. Brush widths are drawn from [4, 32] px at
/// 256 px and scale down with smaller images.
pub fn make_irregular_mask(img_h: usize, img_w: usize, stroke_count: usize, rng: &mut Rng) -> Result<Mask> {
    if stroke_count == 0 {
        return Err(Error::invalid("stroke_count must be at least 1"));
    }
    if img_h < 4 || img_w < 4 {
        return Err(Error::invalid("irregular masks need at least a 4x4 grid"));
    }
    let short = img_h.min(img_w) as f64;
    let scale = (short / 256.0).min(1.0);
    for _ in 0..MAX_ATTEMPTS {
        let mut m = Mask::filled(img_h, img_w, true);
        for _ in 0..stroke_count {
            let mut y = rng.random_range(0.0..img_h as f64);
            let mut x = rng.random_range(0.0..img_w as f64);
            let width = (rng.random_range(4.0..=32.0) * scale).max(1.0);
            let mut angle = rng.random_range(0.0..2.0 * PI);
            let vertices = rng.random_range(4..=12);
            for _ in 0..vertices {
                angle += rng.random_range(-PI / 2.0..PI / 2.0);
                let len = rng.random_range(0.05..0.25) * short;
                let ny = (y + len * angle.sin()).clamp(0.0, (img_h - 1) as f64);
                let nx = (x + len * angle.cos()).clamp(0.0, (img_w - 1) as f64);
                stamp_segment(&mut m, (y, x), (ny, nx), width / 2.0);
                y = ny;
                x = nx;
            }
        }
        let f = m.visible_fraction();
        if (0.3..=0.95).contains(&f) {
            return Ok(m);
        }
    }
    Err(Error::invalid("could not draw an irregular mask within the visible-fraction bounds"))
}

fn stamp_segment(m: &mut Mask, from: (f64, f64), to: (f64, f64), radius: f64) {
    let len = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let steps = len.ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        stamp_disc(m, from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1), radius);
    }
}

fn stamp_disc(m: &mut Mask, cy: f64, cx: f64, radius: f64) {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let r = radius.ceil() as isize;
    let (iy, ix) = (cy.round() as isize, cx.round() as isize);
    for y in (iy - r).max(0)..=(iy + r).min(h - 1) {
        for x in (ix - r).max(0)..=(ix + r).min(w - 1) {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            if dy * dy + dx * dx <= radius * radius {
                m.set(y as usize, x as usize, false);
            }
        }
    }
}

const SPLINE_SAMPLES: usize = 256;
const FOV_RADIUS_DEG: f64 = 30.0;
const MAX_CONTROL_LATITUDE_DEG: f64 = 60.0;

/// Partial-panorama mask on an equirectangular grid (width = 2·height).
///
/// A cubic spline interpolates four control points: the image center plus
/// three points drawn uniformly (latitudes limited to ±60°). The visible
/// region is the union of 60°-field-of-view discs centered on 256 samples of
/// the curve; horizontal extent is stretched by 1/cos(latitude) of each row
/// and wraps around in longitude.
pub fn make_bspline_panorama_mask(img_h: usize, img_w: usize, rng: &mut Rng) -> Result<Mask> {
    if img_h < 2 || img_w != 2 * img_h {
        return Err(Error::invalid(format!(
            "panorama masks need width = 2 x height, got {img_h}x{img_w}"
        )));
    }
    let (h, w) = (img_h as f64, img_w as f64);
    let radius = FOV_RADIUS_DEG / 360.0 * w;
    let lat_band = MAX_CONTROL_LATITUDE_DEG / 180.0 * h;
    let center = ((img_h / 2) as f64, (img_w / 2) as f64);
    for _ in 0..MAX_ATTEMPTS {
        let mut points: Vec<(f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(h / 2.0 - lat_band..=h / 2.0 + lat_band),
                    rng.random_range(0.0..w),
                )
            })
            .collect();
        points.insert(rng.random_range(0..=3), center);
        let mut m = Mask::filled(img_h, img_w, false);
        let curve = interpolating_cubic(&points, SPLINE_SAMPLES);
        for &(sy, sx) in curve.iter().chain(points.iter()) {
            stamp_fov_disc(&mut m, sy, sx, radius);
        }
        if !m.is_degenerate() {
            return Ok(m);
        }
    }
    Err(Error::invalid("could not draw a proper panorama mask"))
}

/// Samples the cubic interpolating four points at chord-length parameters
/// (uniform parameters if two consecutive points coincide).
fn interpolating_cubic(points: &[(f64, f64)], samples: usize) -> Vec<(f64, f64)> {
    let n = points.len();
    let mut t = vec![0.0; n];
    for i in 1..n {
        let d = ((points[i].0 - points[i - 1].0).powi(2) + (points[i].1 - points[i - 1].1).powi(2)).sqrt();
        t[i] = t[i - 1] + d;
    }
    let distinct = (1..n).all(|i| t[i] - t[i - 1] > 1e-9);
    if distinct {
        let total = t[n - 1];
        t.iter_mut().for_each(|v| *v /= total);
    } else {
        t = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    }
    (0..samples)
        .map(|s| {
            let u = s as f64 / (samples - 1) as f64;
            let mut y = 0.0;
            let mut x = 0.0;
            for (i, p) in points.iter().enumerate() {
                let mut basis = 1.0;
                for (j, tj) in t.iter().enumerate() {
                    if j != i {
                        basis *= (u - tj) / (t[i] - tj);
                    }
                }
                y += basis * p.0;
                x += basis * p.1;
            }
            (y, x)
        })
        .collect()
}

fn stamp_fov_disc(m: &mut Mask, cy: f64, cx: f64, radius: f64) {
    let (h, w) = (m.height(), m.width());
    let y0 = (cy - radius).floor().max(0.0) as usize;
    let y1 = ((cy + radius).ceil() as isize).min(h as isize - 1);
    if y1 < 0 {
        return;
    }
    let cx = cx.rem_euclid(w as f64);
    for y in y0..=y1 as usize {
        let dy = y as f64 - cy;
        if dy.abs() > radius {
            continue;
        }
        let lat = (0.5 - (y as f64 + 0.5) / h as f64) * PI;
        let half = (radius * radius - dy * dy).sqrt() / lat.cos().max(1e-9);
        if half >= w as f64 / 2.0 {
            for x in 0..w {
                m.set(y, x, true);
            }
            continue;
        }
        for x in 0..w {
            let d = (x as f64 - cx).abs();
            if d.min(w as f64 - d) <= half {
                m.set(y, x, true);
            }
        }
    }
}
