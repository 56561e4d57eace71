//! Visibility masks: the mask families used for training and evaluation,
//! inversion, difficulty classification, and applying a mask to an image.
//!
//! Polarity is 1 = visible (kept), 0 = hidden (to be predicted) everywhere in
//! the crate.

mod generators;
mod io;

use std::fmt;
use std::str::FromStr;

use ndarray::Array3;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

pub use generators::{
    make_bspline_panorama_mask, make_center_rect_mask, make_irregular_mask,
    make_random_rect_mask, CropBox,
};
pub use io::{load_mask_dir, load_mask_png, save_mask_png};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    grid: Vec<u8>,
}

impl Mask {
    /// Builds a mask from a row-major 0/1 grid. Degenerate (all-visible or
    /// all-hidden) grids are accepted here; only the generators reject them.
    pub fn from_grid(height: usize, width: usize, grid: Vec<u8>) -> Result<Mask> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask dimensions must be positive"));
        }
        if grid.len() != height * width {
            return Err(Error::invalid(format!(
                "mask grid has {} cells, expected {}x{}",
                grid.len(),
                height,
                width
            )));
        }
        if let Some(bad) = grid.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask cell value {bad} is not 0 or 1")));
        }
        Ok(Mask {
            height,
            width,
            grid,
        })
    }

    pub fn filled(height: usize, width: usize, visible: bool) -> Mask {
        Mask {
            height,
            width,
            grid: vec![visible as u8; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn grid(&self) -> &[u8] {
        &self.grid
    }

    pub fn is_visible(&self, y: usize, x: usize) -> bool {
        self.grid[y * self.width + x] == 1
    }

    pub(crate) fn set(&mut self, y: usize, x: usize, visible: bool) {
        self.grid[y * self.width + x] = visible as u8;
    }

    pub fn visible_count(&self) -> usize {
        self.grid.iter().filter(|&&v| v == 1).count()
    }

    /// True when the mask has no visible or no hidden pixel.
    pub fn is_degenerate(&self) -> bool {
        let v = self.visible_count();
        v == 0 || v == self.grid.len()
    }

    pub fn visible_fraction(&self) -> f64 {
        self.visible_count() as f64 / self.grid.len() as f64
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            grid: self.grid.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn difficulty(&self) -> DifficultyClass {
        DifficultyClass::from_visible_fraction(self.visible_fraction())
    }

    /// The grid as 0.0/1.0 values, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.grid.iter().map(|&v| v as f64).collect()
    }
}

pub fn invert_mask(m: &Mask) -> Mask {
    m.inverted()
}

pub fn visible_fraction(m: &Mask) -> f64 {
    m.visible_fraction()
}

pub fn classify_difficulty(m: &Mask) -> DifficultyClass {
    m.difficulty()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Inpainting,
    Outpainting,
}

impl TaskKind {
    pub fn opposite(self) -> TaskKind {
        match self {
            TaskKind::Inpainting => TaskKind::Outpainting,
            TaskKind::Outpainting => TaskKind::Inpainting,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Inpainting => "inpainting",
            TaskKind::Outpainting => "outpainting",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inpainting" | "in" => Ok(TaskKind::Inpainting),
            "outpainting" | "out" => Ok(TaskKind::Outpainting),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}

/// Difficulty by visible area. Ordered `Extreme < Difficult < Easy`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyClass {
    Extreme,
    Difficult,
    Easy,
}

impl DifficultyClass {
    pub const ALL: [DifficultyClass; 3] = [
        DifficultyClass::Easy,
        DifficultyClass::Difficult,
        DifficultyClass::Extreme,
    ];

    /// Below 20% visible is extreme, below 40% difficult, the rest easy.
    pub fn from_visible_fraction(fraction: f64) -> DifficultyClass {
        if fraction < 0.20 {
            DifficultyClass::Extreme
        } else if fraction < 0.40 {
            DifficultyClass::Difficult
        } else {
            DifficultyClass::Easy
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyClass::Extreme => "extreme",
            DifficultyClass::Difficult => "difficult",
            DifficultyClass::Easy => "easy",
        }
    }
}

impl fmt::Display for DifficultyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DifficultyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "extreme" => Ok(DifficultyClass::Extreme),
            "difficult" => Ok(DifficultyClass::Difficult),
            "easy" => Ok(DifficultyClass::Easy),
            other => Err(Error::invalid(format!("unknown difficulty '{other}'"))),
        }
    }
}

/// How hidden pixels are filled before the image reaches the model.
#[derive(Clone, Debug, PartialEq)]
pub enum FillMode {
    /// Each hidden channel value drawn uniformly from the 256 8-bit levels.
    UniformNoise,
    /// One value per channel, or a single value for all channels.
    Constant(Vec<f64>),
}

impl FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "noise" {
            return Ok(FillMode::UniformNoise);
        }
        let Some(rest) = s.strip_prefix("constant") else {
            return Err(Error::invalid(format!("unknown fill mode '{s}'")));
        };
        let rest = rest.trim_start_matches(':');
        if rest.is_empty() {
            return Ok(FillMode::Constant(vec![0.0]));
        }
        let values = rest
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad fill value '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FillMode::Constant(values))
    }
}

impl fmt::Display for FillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillMode::UniformNoise => f.write_str("noise"),
            FillMode::Constant(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "constant:{}", parts.join(","))
            }
        }
    }
}

/// Copies visible pixels bit-exactly and fills hidden ones per `fill`.
/// `image` is (height, width, channels) in [0, 1].
pub fn apply_mask(image: &Array3<f64>, m: &Mask, fill: &FillMode, rng: &mut Rng) -> Result<Array3<f64>> {
    let (h, w, c) = image.dim();
    if (h, w) != (m.height, m.width) {
        return Err(Error::invalid(format!(
            "mask is {}x{} but image is {}x{}",
            m.height, m.width, h, w
        )));
    }
    if let FillMode::Constant(v) = fill {
        if v.len() != 1 && v.len() != c {
            return Err(Error::invalid(format!(
                "constant fill has {} values for {} channels",
                v.len(),
                c
            )));
        }
    }
    let mut out = image.clone();
    for y in 0..h {
        for x in 0..w {
            if m.is_visible(y, x) {
                continue;
            }
            for ch in 0..c {
                out[[y, x, ch]] = match fill {
                    FillMode::UniformNoise => rng.random_range(0..=255u32) as f64 / 255.0,
                    FillMode::Constant(v) => v[if v.len() == 1 { 0 } else { ch }],
                };
            }
        }
    }
    Ok(out)
}

/// The mask families used by the experiments. Each has a native task; asking
/// for the other task yields the inverted mask.
#[derive(Clone, Debug)]
pub enum MaskFamily {
    /// Hidden centered rectangle of fixed size.
    CenterRect { hole_h: usize, hole_w: usize },
    /// Visible rectangle of random size and position.
    RandomRect,
    /// Hidden random brush strokes.
    Irregular { strokes: usize },
    /// Visible b-spline trail over an equirectangular panorama.
    BsplinePanorama,
    /// Hole masks loaded from an external corpus, drawn uniformly.
    Corpus(Vec<Mask>),
}

impl MaskFamily {
    pub fn name(&self) -> &'static str {
        match self {
            MaskFamily::CenterRect { .. } => "center-rect",
            MaskFamily::RandomRect => "random-rect",
            MaskFamily::Irregular { .. } => "irregular",
            MaskFamily::BsplinePanorama => "bspline-panorama",
            MaskFamily::Corpus(_) => "corpus",
        }
    }

    pub fn native_task(&self) -> TaskKind {
        match self {
            MaskFamily::CenterRect { .. } | MaskFamily::Irregular { .. } | MaskFamily::Corpus(_) => {
                TaskKind::Inpainting
            }
            MaskFamily::RandomRect | MaskFamily::BsplinePanorama => TaskKind::Outpainting,
        }
    }

    pub fn sample_native(&self, h: usize, w: usize, rng: &mut Rng) -> Result<Mask> {
        match self {
            MaskFamily::CenterRect { hole_h, hole_w } => make_center_rect_mask(h, w, *hole_h, *hole_w),
            MaskFamily::RandomRect => make_random_rect_mask(h, w, None, rng),
            MaskFamily::Irregular { strokes } => make_irregular_mask(h, w, *strokes, rng),
            MaskFamily::BsplinePanorama => make_bspline_panorama_mask(h, w, rng),
            MaskFamily::Corpus(masks) => {
                if masks.is_empty() {
                    return Err(Error::invalid("mask corpus is empty"));
                }
                let m = &masks[rng.random_range(0..masks.len())];
                if (m.height, m.width) != (h, w) {
                    return Err(Error::invalid(format!(
                        "corpus mask is {}x{}, images are {}x{}",
                        m.height, m.width, h, w
                    )));
                }
                Ok(m.clone())
            }
        }
    }

    /// A mask for `task`: the native mask, inverted when `task` is not the
    /// family's native task.
    pub fn sample(&self, task: TaskKind, h: usize, w: usize, rng: &mut Rng) -> Result<Mask> {
        let m = self.sample_native(h, w, rng)?;
        Ok(if task == self.native_task() { m } else { m.inverted() })
    }
}
