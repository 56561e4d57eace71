//! The work behind each command-line subcommand.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::autograd::no_grad;
use crate::config::RunConfig;
use crate::data::{item_streams, load_and_augment, make_batch, Augmentations, Batch, BatchItem, Dataset, DatasetSpec, Split};
use crate::features::{FeatureExtractor, RandomEmbedding};
use crate::masks::{apply_mask, load_mask_png, save_mask_png, DifficultyClass, Mask, MaskFamily, TaskKind};
use crate::metrics::{bucketed_report, EvalItem, EvalReport};
use crate::model::{generator_input, Generator};
use crate::rng::{self, derive_seed, purpose};
use crate::train::list_checkpoints;
use crate::{Error, Result};

pub const MASK_MANIFEST: &str = "manifest.csv";
pub const REPORT_FILE: &str = "report.json";

/// One row of a mask corpus manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub filename: String,
    pub family: String,
    pub seed: u64,
    pub visible_fraction: f64,
    pub difficulty: DifficultyClass,
}

/// Parses a generator family name as used on the command line.
pub fn parse_family(name: &str, hole: Option<(usize, usize)>, size: (usize, usize), strokes: usize) -> Result<MaskFamily> {
    Ok(match name {
        "center-rect" => {
            let (hh, hw) = hole.unwrap_or((size.0 / 2, size.1 / 2));
            MaskFamily::CenterRect { hole_h: hh, hole_w: hw }
        }
        "random-rect" => MaskFamily::RandomRect,
        "irregular" => MaskFamily::Irregular { strokes },
        "bspline-panorama" => MaskFamily::BsplinePanorama,
        other => {
            return Err(Error::invalid(format!(
                "unknown mask family {other:?} (center-rect, random-rect, irregular, bspline-panorama)"
            )))
        }
    })
}

/// Writes `count` masks for `task` as `mask_00000.png`, ... plus
/// `manifest.csv`. Mask `k` is drawn from its own stream, so the corpus
/// depends only on the seed.
pub fn gen_masks(
    family: &MaskFamily,
    task: TaskKind,
    count: usize,
    (h, w): (usize, usize),
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<MaskRecord>> {
    if count == 0 {
        return Err(Error::invalid("mask count must be at least 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let mask_seed = derive_seed(seed, &[purpose::MASKS, k as u64]);
        let m = family.sample(task, h, w, &mut rng::from_seed(mask_seed))?;
        let filename = format!("mask_{k:05}.png");
        save_mask_png(&out_dir.join(&filename), &m)?;
        records.push(MaskRecord {
            filename,
            family: family.name().to_string(),
            seed: mask_seed,
            visible_fraction: m.visible_fraction(),
            difficulty: m.difficulty(),
        });
    }
    write_mask_manifest(&out_dir.join(MASK_MANIFEST), &records)?;
    Ok(records)
}

pub fn write_mask_manifest(path: &Path, records: &[MaskRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::format(path, e)
    }
}

pub fn read_mask_manifest(path: &Path) -> Result<Vec<MaskRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Masks with their manifest labels. `source` is a manifest file, a
/// directory holding one, or a plain directory of mask images.
pub fn load_mask_source(source: &Path) -> Result<Vec<(String, Mask)>> {
    let manifest = if source.is_dir() { source.join(MASK_MANIFEST) } else { source.to_path_buf() };
    if manifest.is_file() {
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let records = read_mask_manifest(&manifest)?;
        if records.is_empty() {
            return Err(Error::format(&manifest, "manifest lists no masks"));
        }
        return records
            .into_iter()
            .map(|r| {
                let m = load_mask_png(&dir.join(&r.filename))?;
                if m.difficulty() != r.difficulty {
                    return Err(Error::format(
                        &manifest,
                        format!("{} is labeled {} but its visible area says {}", r.filename, r.difficulty, m.difficulty()),
                    ));
                }
                Ok((r.filename, m))
            })
            .collect();
    }
    if !source.is_dir() {
        return Err(Error::io(source, std::io::Error::new(std::io::ErrorKind::NotFound, "no masks here")));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(source)
        .map_err(|e| Error::io(source, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| crate::data::is_image_path(p))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("{} holds no mask images", source.display())));
    }
    paths
        .iter()
        .map(|p| Ok((p.file_name().unwrap().to_string_lossy().to_string(), load_mask_png(p)?)))
        .collect()
}

/// A checkpoint directory: the given one, or the latest checkpoint when
/// `path` is a run directory.
pub fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    if path.join("generator.tensors").is_file() {
        return Ok(path.to_path_buf());
    }
    if path.join("checkpoints").is_dir() {
        if let Some(latest) = list_checkpoints(path)?.pop() {
            return Ok(latest);
        }
    }
    Err(Error::Incompatible(format!("{} is neither a checkpoint nor a run with checkpoints", path.display())))
}

/// The run directory a checkpoint belongs to, when laid out as
/// `<run>/checkpoints/<checkpoint>`.
pub fn run_dir_of(checkpoint: &Path) -> Option<PathBuf> {
    let parent = checkpoint.parent()?;
    (parent.file_name()? == "checkpoints").then(|| parent.parent().map(Path::to_path_buf)).flatten()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::All),
            _ => Err(Error::invalid(format!("unknown split {s:?} (train, test, all)"))),
        }
    }
}

pub struct EvaluateArgs<'a> {
    /// Effective configuration: model shape, image size, fill and seeds.
    pub config: &'a RunConfig,
    pub checkpoint: &'a Path,
    pub data_root: &'a Path,
    pub split: EvalSplit,
    /// Masks to pair with the sorted test images, cycling if shorter.
    /// Without them masks are sampled for the target task.
    pub masks: Option<&'a Path>,
    pub batch_size: usize,
}

/// Runs the generator over the test images and builds the report.
pub fn evaluate(args: &EvaluateArgs<'_>) -> Result<EvalReport> {
    let c = args.config;
    let checkpoint = resolve_checkpoint(args.checkpoint)?;
    let generator = Generator::load(c.generator.clone(), &checkpoint.join("generator.tensors"))?;
    let mut spec = c.data.clone();
    spec.root = args.data_root.to_path_buf();
    spec.augment = Augmentations::none();
    let split = match args.split {
        EvalSplit::Train => Some(Split::Train),
        EvalSplit::Test => Some(Split::Test),
        EvalSplit::All => None,
    };
    let data = Dataset::load_split(&spec, split)?;
    let (h, w) = spec.resize_to;
    let masks: Vec<Mask> = match args.masks {
        Some(src) => {
            let loaded = load_mask_source(src)?;
            if let Some((name, m)) = loaded.iter().find(|(_, m)| (m.height(), m.width()) != (h, w)) {
                return Err(Error::invalid(format!(
                    "mask {name} is {}x{}, evaluation images are {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
            (0..data.len()).map(|k| loaded[k % loaded.len()].1.clone()).collect()
        }
        None => Vec::new(),
    };
    let family = c.masks.family((h, w))?;
    let extractor = RandomEmbedding::new(c.eval.extractor_seed);
    let mut items = Vec::with_capacity(data.len());
    let bs = args.batch_size.max(1);
    for start in (0..data.len()).step_by(bs) {
        let end = (start + bs).min(data.len());
        let batch_items: Vec<BatchItem> = (start..end)
            .map(|k| BatchItem {
                image: &data.images[k],
                seed: derive_seed(c.seed, &[purpose::EVAL, k as u64]),
            })
            .collect();
        let mut batch = if masks.is_empty() {
            make_batch(&batch_items, &spec, c.target, &family, &c.fill)?
        } else {
            batch_with_masks(&batch_items, &spec, &masks[start..end], c)?
        };
        let pred = {
            let _g = no_grad();
            generator.forward(&generator_input(&batch.masked_images, &batch.masks)?)?
        };
        let pred: Array4<f64> = pred.value().clone().into_dimensionality().expect("4-d output");
        for (j, m) in batch.mask_list.drain(..).enumerate() {
            items.push(EvalItem {
                id: data.names[start + j].clone(),
                real: batch.images.slice(s![j, .., .., ..]).to_owned(),
                generated: pred.slice(s![j, .., .., ..]).to_owned(),
                mask: m,
            });
        }
    }
    bucketed_report(&items, &extractor as &dyn FeatureExtractor, c.eval.composite)
}

/// A batch whose item `j` uses `masks[j]` as given, never inverted.
fn batch_with_masks(items: &[BatchItem<'_>], spec: &DatasetSpec, masks: &[Mask], c: &RunConfig) -> Result<Batch> {
    let (h, w) = spec.resize_to;
    let n = items.len();
    let mut images = Array4::zeros((n, h, w, 3));
    let mut masked_images = Array4::zeros((n, h, w, 3));
    let mut mask_grid = Array3::zeros((n, h, w));
    for (j, (it, m)) in items.iter().zip(masks).enumerate() {
        let (mut aug, _, mut fill) = item_streams(it.seed);
        let img = load_and_augment(it.image, spec, &mut aug)?;
        let masked = apply_mask(&img, m, &c.fill, &mut fill)?;
        images.slice_mut(s![j, .., .., ..]).assign(&img);
        masked_images.slice_mut(s![j, .., .., ..]).assign(&masked);
        for ((y, x), v) in mask_grid.slice_mut(s![j, .., ..]).indexed_iter_mut() {
            *v = if m.is_visible(y, x) { 1.0 } else { 0.0 };
        }
    }
    Ok(Batch {
        images,
        masks: mask_grid,
        masked_images,
        mask_list: masks.to_vec(),
        task: c.target,
    })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    if !file.is_file() {
        return Err(Error::MissingReport(file));
    }
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    EvalReport::from_json(&text).map_err(|e| Error::format(&file, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub run: String,
    pub psnr: f64,
    pub ssim: f64,
    pub fid: Option<f64>,
    pub extractor_id: String,
}

/// The comparison table as text and CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Per metric (PSNR, SSIM, FID), the index of the best row when there
    /// is more than one row.
    pub best: [Option<usize>; 3],
    pub comparable: bool,
}

fn best_by(values: &[Option<f64>], higher: bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        if v.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) => {
                if higher {
                    v > b
                } else {
                    v < b
                }
            }
        };
        if better {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn compare(runs: &[(String, EvalReport)]) -> Result<Comparison> {
    if runs.is_empty() {
        return Err(Error::invalid("report needs at least one run"));
    }
    let rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(name, r)| ComparisonRow {
            run: name.clone(),
            psnr: r.summary.psnr_mean,
            ssim: r.summary.ssim_mean,
            fid: r.summary.fid_overall.fid,
            extractor_id: r.summary.extractor_id.clone(),
        })
        .collect();
    let best = if rows.len() > 1 {
        [
            best_by(&rows.iter().map(|r| Some(r.psnr)).collect::<Vec<_>>(), true),
            best_by(&rows.iter().map(|r| Some(r.ssim)).collect::<Vec<_>>(), true),
            best_by(&rows.iter().map(|r| r.fid).collect::<Vec<_>>(), false),
        ]
    } else {
        [None; 3]
    };
    let comparable = rows.iter().all(|r| r.extractor_id == rows[0].extractor_id);
    Ok(Comparison { rows, best, comparable })
}

fn fmt_metric(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => if x > 0.0 { "inf" } else { "-inf" }.to_string(),
        Some(x) => format!("{x:.digits$}"),
        None => "n/a".to_string(),
    }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mark = |col: usize, i: usize| if self.best[col] == Some(i) { "*" } else { "" };
        let mut table = vec![["run".to_string(), "PSNR".to_string(), "SSIM".to_string(), "FID".to_string()]];
        for (i, r) in self.rows.iter().enumerate() {
            table.push([
                r.run.clone(),
                format!("{}{}", fmt_metric(Some(r.psnr), 2), mark(0, i)),
                format!("{}{}", fmt_metric(Some(r.ssim), 4), mark(1, i)),
                format!("{}{}", fmt_metric(r.fid, 2), mark(2, i)),
            ]);
        }
        let widths: Vec<usize> = (0..4).map(|c| table.iter().map(|r| r[c].len()).max().unwrap()).collect();
        let mut out = String::new();
        for (n, r) in table.iter().enumerate() {
            let line = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            out.push_str(line.trim_end());
            out.push('\n');
            if n == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 6));
                out.push('\n');
            }
        }
        if self.rows.len() > 1 {
            out.push_str("* best in column (PSNR, SSIM higher; FID lower)\n");
        }
        if !self.comparable {
            let ids: Vec<String> = self.rows.iter().map(|r| format!("{}: {}", r.run, r.extractor_id)).collect();
            out.push_str(&format!(
                "note: FID values come from different feature extractors and are not comparable ({})\n",
                ids.join(", ")
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "psnr_mean", "ssim_mean", "fid", "extractor_id", "best"]).unwrap();
        for (i, r) in self.rows.iter().enumerate() {
            let best: Vec<&str> = ["psnr", "ssim", "fid"]
                .iter()
                .zip(self.best)
                .filter(|(_, b)| *b == Some(i))
                .map(|(n, _)| *n)
                .collect();
            w.write_record([
                r.run.clone(),
                fmt_metric(Some(r.psnr), 6),
                fmt_metric(Some(r.ssim), 6),
                fmt_metric(r.fid, 6),
                r.extractor_id.clone(),
                best.join(";"),
            ])
            .unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

/// Reads each run's report and writes `comparison.txt` and `comparison.csv`
/// into `out_dir`.
pub fn report(runs: &[PathBuf], out_dir: &Path) -> Result<Comparison> {
    let mut loaded = Vec::with_capacity(runs.len());
    for r in runs {
        let name = r
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .filter(|n| n != REPORT_FILE)
            .or_else(|| r.parent().and_then(|p| p.file_name()).map(|n| n.to_string_lossy().to_string()))
            .unwrap_or_else(|| r.display().to_string());
        loaded.push((name, read_report(r)?));
    }
    let cmp = compare(&loaded)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let txt = out_dir.join("comparison.txt");
    fs::write(&txt, cmp.to_text()).map_err(|e| Error::io(&txt, e))?;
    let csv_path = out_dir.join("comparison.csv");
    fs::write(&csv_path, cmp.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(cmp)
}
