//! Image ingestion: directory scanning, deterministic train/test splits,
//! augmentation, and assembly of (image, mask, masked image) batches.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::RgbImage;
use ndarray::{s, Array3, Array4};
use rand::Rng as _;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::masks::{apply_mask, FillMode, Mask, MaskFamily, TaskKind};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmentations {
    pub random_crop: bool,
    pub random_flip: bool,
    pub grayscale: bool,
    pub grayscale_prob: f64,
    /// Smallest crop area as a fraction of the source image.
    pub crop_min_area: f64,
}

impl Augmentations {
    pub fn none() -> Self {
        Augmentations {
            random_crop: false,
            random_flip: false,
            grayscale: false,
            grayscale_prob: 0.1,
            crop_min_area: 0.875,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.random_crop || self.random_flip || self.grayscale)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// (height, width)
    pub resize_to: (usize, usize),
    pub split: Split,
    pub split_seed: u64,
    pub test_fraction: f64,
    pub augment: Augmentations,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, resize_to: (usize, usize)) -> Self {
        DatasetSpec {
            root: root.into(),
            resize_to,
            split: Split::Train,
            split_seed: 0,
            test_fraction: 0.1,
            augment: Augmentations::none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    /// All decodable images, sorted by file name.
    pub entries: Vec<ManifestEntry>,
    /// Files with an image extension that failed to decode.
    pub skipped: Vec<String>,
    /// True when `train.txt`/`test.txt` decided the split.
    pub official_split: bool,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn is_image_path(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Hash split: a file is in the test split when the hash of
/// (seed, file name) falls below `test_fraction`.
pub fn assign_split(name: &str, split_seed: u64, test_fraction: f64) -> Split {
    let mut h = Sha256::new();
    h.update(split_seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    let u = (u64::from_le_bytes(b) >> 11) as f64 / (1u64 << 53) as f64;
    if u < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}

fn read_list(path: &Path) -> Result<Option<HashSet<String>>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
    ))
}

pub fn decode(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.into_rgb8())
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn scan(spec: &DatasetSpec, keep: bool) -> Result<(DatasetManifest, Vec<RgbImage>)> {
    let root = &spec.root;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let train_list = read_list(&root.join("train.txt"))?;
    let test_list = read_list(&root.join("test.txt"))?;
    let official = train_list.is_some() || test_list.is_some();

    let decoded: Vec<(PathBuf, Result<RgbImage>)> =
        paths.into_par_iter().map(|p| { let d = decode(&p); (p, d) }).collect();

    let mut entries = Vec::new();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for (path, img) in decoded {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        match img {
            Ok(img) => {
                let split = match (&test_list, &train_list) {
                    (Some(test), _) => if test.contains(&name) { Split::Test } else { Split::Train },
                    (None, Some(train)) => if train.contains(&name) { Split::Train } else { Split::Test },
                    (None, None) => assign_split(&name, spec.split_seed, spec.test_fraction),
                };
                entries.push(ManifestEntry { name, path, split });
                if keep {
                    images.push(img);
                }
            }
            Err(e) => {
                log::warn!("skipping undecodable image: {e}");
                skipped.push(name);
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::DatasetEmpty(root.clone()));
    }
    Ok((
        DatasetManifest {
            entries,
            skipped,
            official_split: official,
        },
        images,
    ))
}

/// Sorted manifest of the decodable images under `spec.root`, with split
/// assignments.
pub fn scan_dataset(spec: &DatasetSpec) -> Result<DatasetManifest> {
    scan(spec, false).map(|(m, _)| m)
}

pub fn flip_horizontal(img: &Array3<f64>) -> Array3<f64> {
    img.slice(s![.., ..;-1, ..]).to_owned()
}

/// Luminance replicated across all channels.
pub fn to_grayscale(img: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = img.dim();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let l = if c >= 3 {
                0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]]
            } else {
                img[[y, x, 0]]
            };
            let l = l.clamp(0.0, 1.0);
            for ch in 0..c {
                out[[y, x, ch]] = l;
            }
        }
    }
    out
}

fn to_array(img: &RgbImage) -> Array3<f64> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
    })
}

/// Crops (optionally), resizes to `spec.resize_to`, then flips and converts
/// to grayscale at random, returning (h, w, 3) values in [0, 1].
pub fn load_and_augment(img: &RgbImage, spec: &DatasetSpec, rng: &mut Rng) -> Result<Array3<f64>> {
    let (th, tw) = spec.resize_to;
    if th == 0 || tw == 0 {
        return Err(Error::invalid("resize target must be positive"));
    }
    let aug = &spec.augment;
    let (w, h) = img.dimensions();
    let source = if aug.random_crop {
        let area = rng.random_range(aug.crop_min_area.clamp(0.0, 1.0)..=1.0);
        let side = area.sqrt();
        let ch = ((h as f64 * side).round() as u32).clamp(1, h);
        let cw = ((w as f64 * side).round() as u32).clamp(1, w);
        let y = rng.random_range(0..=h - ch);
        let x = rng.random_range(0..=w - cw);
        imageops::crop_imm(img, x, y, cw, ch).to_image()
    } else {
        img.clone()
    };
    let resized = if source.dimensions() == (tw as u32, th as u32) {
        source
    } else {
        imageops::resize(&source, tw as u32, th as u32, FilterType::Triangle)
    };
    let mut out = to_array(&resized);
    if aug.random_flip && rng.random_bool(0.5) {
        out = flip_horizontal(&out);
    }
    if aug.grayscale && rng.random_bool(aug.grayscale_prob.clamp(0.0, 1.0)) {
        out = to_grayscale(&out);
    }
    Ok(out)
}

/// The decoded images of one split, kept in memory.
pub struct Dataset {
    pub spec: DatasetSpec,
    pub names: Vec<String>,
    pub images: Vec<RgbImage>,
    pub skipped: usize,
}

impl Dataset {
    pub fn load(spec: &DatasetSpec) -> Result<Dataset> {
        Self::load_split(spec, Some(spec.split))
    }

    /// `None` keeps every decodable image regardless of split.
    pub fn load_split(spec: &DatasetSpec, split: Option<Split>) -> Result<Dataset> {
        let (manifest, images) = scan(spec, true)?;
        let mut names = Vec::new();
        let mut kept = Vec::new();
        for (e, img) in manifest.entries.into_iter().zip(images) {
            if split.is_none_or(|s| s == e.split) {
                names.push(e.name);
                kept.push(img);
            }
        }
        if kept.is_empty() {
            return Err(Error::DatasetEmpty(spec.root.clone()));
        }
        Ok(Dataset {
            spec: spec.clone(),
            names,
            images: kept,
            skipped: manifest.skipped.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One batch member: the source image and the seed of its random stream.
#[derive(Clone, Copy)]
pub struct BatchItem<'a> {
    pub image: &'a RgbImage,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// (b, h, w, c) in [0, 1]
    pub images: Array4<f64>,
    /// (b, h, w), 1 = visible
    pub masks: Array3<f64>,
    pub masked_images: Array4<f64>,
    pub mask_list: Vec<Mask>,
    pub task: TaskKind,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.mask_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask_list.is_empty()
    }
}

const STREAM_AUGMENT: u64 = 0;
const STREAM_MASK: u64 = 1;
const STREAM_FILL: u64 = 2;

/// The three independent random streams of one item.
pub fn item_streams(seed: u64) -> (Rng, Rng, Rng) {
    let make = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };
    (make(STREAM_AUGMENT), make(STREAM_MASK), make(STREAM_FILL))
}

/// Builds a batch for `task`. Each item's augmentation, mask and fill come
/// from its own seed, so parallel assembly gives the same result as serial.
pub fn make_batch(
    items: &[BatchItem<'_>],
    spec: &DatasetSpec,
    task: TaskKind,
    family: &MaskFamily,
    fill: &FillMode,
) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::invalid("a batch needs at least one item"));
    }
    let (h, w) = spec.resize_to;
    let parts: Vec<(Array3<f64>, Mask, Array3<f64>)> = items
        .par_iter()
        .map(|item| {
            let (mut aug_rng, mut mask_rng, mut fill_rng) = item_streams(item.seed);
            let img = load_and_augment(item.image, spec, &mut aug_rng)?;
            let mask = family.sample(task, h, w, &mut mask_rng)?;
            let masked = apply_mask(&img, &mask, fill, &mut fill_rng)?;
            Ok((img, mask, masked))
        })
        .collect::<Result<_>>()?;
    let b = parts.len();
    let mut images = Array4::zeros((b, h, w, 3));
    let mut masks = Array3::zeros((b, h, w));
    let mut masked_images = Array4::zeros((b, h, w, 3));
    let mut mask_list = Vec::with_capacity(b);
    for (i, (img, mask, masked)) in parts.into_iter().enumerate() {
        images.slice_mut(s![i, .., .., ..]).assign(&img);
        masked_images.slice_mut(s![i, .., .., ..]).assign(&masked);
        masks
            .slice_mut(s![i, .., ..])
            .assign(&Array3::from_shape_vec((1, h, w), mask.to_f64()).unwrap().slice(s![0, .., ..]));
        mask_list.push(mask);
    }
    Ok(Batch {
        images,
        masks,
        masked_images,
        mask_list,
        task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::make_center_rect_mask;

    fn write_images(dir: &Path, names: &[&str], size: u32) {
        for (i, n) in names.iter().enumerate() {
            let img = RgbImage::from_fn(size, size, |x, y| {
                image::Rgb([(x * 7 + i as u32 * 30) as u8, (y * 5) as u8, ((x + y) * 3) as u8])
            });
            img.save(dir.join(n)).unwrap();
        }
    }

    #[test]
    fn manifest_is_sorted_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["b.png", "a.png"], 8);
        std::fs::write(dir.path().join("notes.md"), "x").unwrap();
        let spec = DatasetSpec::new(dir.path(), (8, 8));
        let m = scan_dataset(&spec).unwrap();
        let names: Vec<_> = m.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["a.png", "b.png"]);
        let again = scan_dataset(&spec).unwrap();
        assert_eq!(m.entries, again.entries);
    }

    #[test]
    fn undecodable_files_are_counted() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["ok.png"], 8);
        std::fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        let m = scan_dataset(&DatasetSpec::new(dir.path(), (8, 8))).unwrap();
        assert_eq!(m.entries.len(), 1);
        assert_eq!(m.skipped, vec!["broken.png".to_string()]);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            scan_dataset(&DatasetSpec::new(dir.path(), (8, 8))),
            Err(Error::DatasetEmpty(_))
        ));
    }

    #[test]
    fn hash_split_proportion() {
        let count = |seed| {
            (0..100)
                .filter(|i| assign_split(&format!("img_{i:05}.png"), seed, 0.1) == Split::Test)
                .count()
        };
        assert!((5..=15).contains(&count(0)), "{} test files", count(0));
        // Across seeds the split behaves like Binomial(100, 0.1).
        let mean = (0..200).map(count).sum::<usize>() as f64 / 200.0;
        assert!((9.0..=11.0).contains(&mean), "mean test size {mean}");
    }

    #[test]
    fn official_split_file_overrides_hash() {
        let dir = tempfile::tempdir().unwrap();
        write_images(dir.path(), &["a.png", "b.png", "c.png"], 8);
        std::fs::write(dir.path().join("test.txt"), "b.png\n").unwrap();
        let m = scan_dataset(&DatasetSpec::new(dir.path(), (8, 8))).unwrap();
        assert!(m.official_split);
        let test: Vec<_> = m.split(Split::Test).map(|e| e.name.as_str()).collect();
        assert_eq!(test, ["b.png"]);
        assert_eq!(m.split(Split::Train).count(), 2);
    }

    #[test]
    fn augmentation_contracts() {
        let img = RgbImage::from_fn(20, 16, |x, y| image::Rgb([(x * 12) as u8, (y * 15) as u8, 200]));
        let mut spec = DatasetSpec::new(".", (8, 10));
        let a = load_and_augment(&img, &spec, &mut crate::rng::from_seed(1)).unwrap();
        let b = load_and_augment(&img, &spec, &mut crate::rng::from_seed(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (8, 10, 3));
        assert_eq!(flip_horizontal(&flip_horizontal(&a)), a);

        let g = to_grayscale(&a);
        for y in 0..8 {
            for x in 0..10 {
                assert_eq!(g[[y, x, 0]], g[[y, x, 1]]);
                assert_eq!(g[[y, x, 1]], g[[y, x, 2]]);
            }
        }

        spec.augment = Augmentations {
            random_crop: true,
            random_flip: true,
            grayscale: true,
            grayscale_prob: 0.5,
            crop_min_area: 0.875,
        };
        for seed in 0..20 {
            let out = load_and_augment(&img, &spec, &mut crate::rng::from_seed(seed)).unwrap();
            assert_eq!(out.dim(), (8, 10, 3));
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn batches_match_elementwise_recomputation() {
        let imgs: Vec<RgbImage> = (0..8)
            .map(|i| RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 8) as u8, (y * 8) as u8, i * 30])))
            .collect();
        let spec = DatasetSpec::new(".", (32, 32));
        let items: Vec<BatchItem> = imgs
            .iter()
            .enumerate()
            .map(|(i, image)| BatchItem { image, seed: 100 + i as u64 })
            .collect();
        let fam = MaskFamily::CenterRect { hole_h: 16, hole_w: 16 };
        let batch = make_batch(&items, &spec, TaskKind::Outpainting, &fam, &FillMode::UniformNoise).unwrap();
        assert_eq!(batch.images.dim(), (8, 32, 32, 3));
        assert_eq!(batch.masks.dim(), (8, 32, 32));
        let hole = make_center_rect_mask(32, 32, 16, 16).unwrap();
        for (i, item) in items.iter().enumerate() {
            assert_eq!(batch.mask_list[i], hole.inverted());
            assert!(batch.mask_list[i].is_visible(16, 16));
            let (mut a, _, mut f) = item_streams(item.seed);
            let img = load_and_augment(item.image, &spec, &mut a).unwrap();
            let masked = apply_mask(&img, &batch.mask_list[i], &FillMode::UniformNoise, &mut f).unwrap();
            assert_eq!(batch.masked_images.slice(s![i, .., .., ..]), masked);
        }
        let again = make_batch(&items, &spec, TaskKind::Outpainting, &fam, &FillMode::UniformNoise).unwrap();
        assert_eq!(again.masked_images, batch.masked_images);
        assert!(batch.masked_images.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn full_size_batch_shapes() {
        let img = RgbImage::from_pixel(256, 256, image::Rgb([10, 20, 30]));
        let items: Vec<BatchItem> = (0..8).map(|i| BatchItem { image: &img, seed: i }).collect();
        let spec = DatasetSpec::new(".", (256, 256));
        let fam = MaskFamily::CenterRect { hole_h: 128, hole_w: 128 };
        let b = make_batch(&items, &spec, TaskKind::Inpainting, &fam, &FillMode::UniformNoise).unwrap();
        assert_eq!(b.images.dim(), (8, 256, 256, 3));
        assert_eq!(b.masks.dim(), (8, 256, 256));
        assert_eq!(b.masked_images.dim(), (8, 256, 256, 3));
        assert!(make_batch(&[], &spec, TaskKind::Inpainting, &fam, &FillMode::UniformNoise).is_err());
    }
}
