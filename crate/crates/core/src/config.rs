//! Flat `key = value` run configuration with named presets.
//!
//! Values are layered: built-in defaults, then a preset, then the config
//! file, then command-line overrides. Every problem found while parsing or
//! validating is collected and reported together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{Augmentations, DatasetSpec};
use crate::losses::{LossBundle, Stage};
use crate::masks::{load_mask_dir, FillMode, MaskFamily, TaskKind};
use crate::model::{CriticConfig, GeneratorConfig};
use crate::nn::AdamConfig;
use crate::schedule::{epoch_schedule_adapter, Schedule, Strategy};
use crate::{Error, Result};

/// Environment variable naming the default directory for run outputs.
pub const OUT_ROOT_ENV: &str = "INNOUT_OUT_ROOT";

/// Every accepted key with its default. `auto` defers to a value derived
/// from other keys.
const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("run.name", "run"),
    ("run.out_dir", "auto"),
    ("data.root", ""),
    ("data.resize", "256x256"),
    ("data.augment", "crop,flip,gray"),
    ("data.split_seed", "0"),
    ("data.test_fraction", "0.1"),
    ("schedule.strategy", "innout"),
    ("schedule.target", "inpainting"),
    ("schedule.n_pretrain", "auto"),
    ("schedule.k_finetune", "auto"),
    ("schedule.epochs", "0"),
    ("schedule.split", "0.5"),
    ("schedule.reset_optimizer", "true"),
    ("masks.family", "center-rect"),
    ("masks.hole", "auto"),
    ("masks.strokes", "6"),
    ("masks.dir", ""),
    ("masks.fill", "noise"),
    ("model.base_channels", "32"),
    ("model.downsample_stages", "3"),
    ("model.dilated_blocks", "4"),
    ("model.context_norm", "true"),
    ("critic.base_channels", "32"),
    ("critic.downsample_stages", "4"),
    ("loss.recon_weight", "1.0"),
    ("loss.adv_weight", "0.001"),
    ("loss.mrf_weight", "0.05"),
    ("loss.gp_weight", "10"),
    ("loss.svl_gamma", "0.9"),
    ("loss.finetune_svl", "true"),
    ("loss.mrf_bandwidth", "0.5"),
    ("loss.mrf_patch", "3"),
    ("loss.feature_seed", "0"),
    ("optim.lr", "0.0001"),
    ("optim.beta1", "0.5"),
    ("optim.beta2", "0.9"),
    ("train.batch_size", "8"),
    ("train.n_critic", "5"),
    ("train.checkpoint_every", "5000"),
    ("train.log_every", "1"),
    ("eval.every", "0"),
    ("eval.images", "16"),
    ("eval.extractor_seed", "0"),
    ("eval.composite", "true"),
];

const PRESETS: &[(&str, &str)] = &[
    (
        "cub-inpaint-40k",
        "schedule.target = inpainting
         schedule.n_pretrain = 40000
         schedule.k_finetune = 40000
         data.resize = 256x256
         masks.family = center-rect
         masks.hole = 128x128
         train.batch_size = 8",
    ),
    (
        "cub-inpaint-20k-40k",
        "preset = cub-inpaint-40k
         schedule.n_pretrain = 20000",
    ),
    (
        "celeba-outpaint-45k",
        "schedule.target = outpainting
         schedule.n_pretrain = 45000
         schedule.k_finetune = 45000
         data.resize = 256x256
         masks.family = random-rect
         train.batch_size = 8",
    ),
    (
        "celeba-outpaint-25k-60k",
        "preset = celeba-outpaint-45k
         schedule.n_pretrain = 25000
         schedule.k_finetune = 60000",
    ),
    (
        "panorama-45k",
        "schedule.target = outpainting
         schedule.n_pretrain = 45000
         schedule.k_finetune = 45000
         data.resize = 128x256
         masks.family = bspline-panorama
         train.batch_size = 4",
    ),
    (
        "irregular-30ep",
        "schedule.target = inpainting
         schedule.epochs = 30
         schedule.split = 0.5
         data.resize = 256x256
         masks.family = irregular
         train.batch_size = 8",
    ),
    (
        "tiny",
        "data.resize = 32x32
         model.base_channels = 8
         model.downsample_stages = 2
         model.dilated_blocks = 1
         critic.base_channels = 8
         critic.downsample_stages = 2
         loss.mrf_patch = 1
         train.batch_size = 2
         train.checkpoint_every = 5
         eval.images = 8",
    ),
    (
        "tiny-inpaint",
        "preset = tiny
         schedule.target = inpainting
         schedule.n_pretrain = 10
         schedule.k_finetune = 10
         masks.family = center-rect
         masks.hole = 16x16",
    ),
    (
        "tiny-outpaint",
        "preset = tiny
         schedule.target = outpainting
         schedule.n_pretrain = 10
         schedule.k_finetune = 10
         masks.family = random-rect",
    ),
    (
        "tiny-panorama",
        "preset = tiny
         data.resize = 32x64
         schedule.target = outpainting
         schedule.n_pretrain = 10
         schedule.k_finetune = 10
         masks.family = bspline-panorama",
    ),
    (
        "tiny-irregular",
        "preset = tiny
         schedule.target = inpainting
         schedule.epochs = 4
         schedule.split = 0.5
         masks.family = irregular
         masks.strokes = 3",
    ),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// `(key, value, line number)` triples; blank lines and `#` comments skipped.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String, usize)>, Vec<String>> {
    let mut out = Vec::new();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((k.trim().to_string(), v.trim().to_string(), i + 1)),
            _ => problems.push(format!("line {}: expected `key = value`, got {raw:?}", i + 1)),
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(problems)
    }
}

fn default_map() -> BTreeMap<String, String> {
    KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn apply_preset(map: &mut BTreeMap<String, String>, name: &str, depth: usize, problems: &mut Vec<String>) {
    let Some((_, text)) = PRESETS.iter().find(|(n, _)| *n == name) else {
        problems.push(format!("preset: unknown preset {name:?} (known: {})", preset_names().join(", ")));
        return;
    };
    if depth > 4 {
        problems.push(format!("preset: {name:?} nests too deeply"));
        return;
    }
    for (k, v, _) in parse_pairs(text).expect("built-in presets parse") {
        if k == "preset" {
            apply_preset(map, &v, depth + 1, problems);
        } else {
            map.insert(k, v);
        }
    }
}

/// Merges the layers into a complete key map, rejecting unknown keys.
/// `file` is `(label, text)` of the config file, if any.
pub fn merge_layers(file: Option<(&str, &str)>, overrides: &[(String, String)]) -> Result<BTreeMap<String, String>> {
    let (map, problems) = merge_collect(file, overrides);
    if problems.is_empty() {
        Ok(map)
    } else {
        Err(Error::Config(problems))
    }
}

fn merge_collect(file: Option<(&str, &str)>, overrides: &[(String, String)]) -> (BTreeMap<String, String>, Vec<String>) {
    let mut problems = Vec::new();
    let mut layers: Vec<(String, String, String)> = Vec::new();
    if let Some((label, text)) = file {
        match parse_pairs(text) {
            Ok(pairs) => layers.extend(pairs.into_iter().map(|(k, v, l)| (k, v, format!("{label}:{l}")))),
            Err(p) => problems.extend(p.into_iter().map(|p| format!("{label}: {p}"))),
        }
    }
    layers.extend(overrides.iter().map(|(k, v)| (k.clone(), v.clone(), "command line".to_string())));

    let mut map = default_map();
    // A preset named anywhere is applied underneath the explicit values.
    let presets: Vec<&str> = layers.iter().filter(|(k, _, _)| k == "preset").map(|(_, v, _)| v.as_str()).collect();
    if let Some(last) = presets.last() {
        apply_preset(&mut map, last, 0, &mut problems);
    }
    for (k, v, origin) in &layers {
        if k == "preset" {
            continue;
        }
        if map.contains_key(k) {
            map.insert(k.clone(), v.clone());
        } else {
            problems.push(format!("{k}: unknown key ({origin})"));
        }
    }
    (map, problems)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskChoice {
    CenterRect { hole: Option<(usize, usize)> },
    RandomRect,
    Irregular { strokes: usize },
    BsplinePanorama,
    Dir(PathBuf),
}

impl MaskChoice {
    /// Resolves the family for `(h, w)` images. A centered hole defaults to
    /// half of each side.
    pub fn family(&self, (h, w): (usize, usize)) -> Result<MaskFamily> {
        Ok(match self {
            MaskChoice::CenterRect { hole } => {
                let (hh, hw) = hole.unwrap_or((h / 2, w / 2));
                MaskFamily::CenterRect { hole_h: hh, hole_w: hw }
            }
            MaskChoice::RandomRect => MaskFamily::RandomRect,
            MaskChoice::Irregular { strokes } => MaskFamily::Irregular { strokes: *strokes },
            MaskChoice::BsplinePanorama => MaskFamily::BsplinePanorama,
            MaskChoice::Dir(d) => MaskFamily::Corpus(load_mask_dir(d)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleLength {
    Iterations { n_pretrain: u64, k_finetune: u64 },
    Epochs { epochs: u64, split: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub recon_weight: f64,
    pub adv_weight: f64,
    pub mrf_weight: f64,
    pub gp_weight: f64,
    pub svl_gamma: f64,
    /// Keep the distance-decayed weights during fine-tuning.
    pub finetune_svl: bool,
    pub mrf_bandwidth: f64,
    pub mrf_patch: usize,
    pub feature_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_critic: usize,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub reset_optimizer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// 0 disables periodic evaluation.
    pub every: u64,
    pub images: usize,
    pub extractor_seed: u64,
    pub composite: bool,
}

/// A fully validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    pub name: String,
    pub out_dir: PathBuf,
    pub data: DatasetSpec,
    pub strategy: Strategy,
    pub target: TaskKind,
    pub length: ScheduleLength,
    pub masks: MaskChoice,
    pub fill: FillMode,
    pub generator: GeneratorConfig,
    pub critic: CriticConfig,
    pub loss: LossConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// The merged key map, as echoed into the run directory.
    pub entries: BTreeMap<String, String>,
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
    problems: Vec<String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> &str {
        self.map.get(key).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Option<T> {
        let v = self.raw(key);
        match v.parse() {
            Ok(x) => Some(x),
            Err(_) => {
                self.problems.push(format!("{key}: expected {what}, got {v:?}"));
                None
            }
        }
    }

    fn num<T: std::str::FromStr + Default>(&mut self, key: &str) -> T {
        self.parse(key, "a number").unwrap_or_default()
    }

    fn float(&mut self, key: &str) -> f64 {
        match self.parse::<f64>(key, "a number") {
            Some(x) if x.is_finite() => x,
            Some(x) => {
                self.problems.push(format!("{key}: must be finite, got {x}"));
                0.0
            }
            None => 0.0,
        }
    }

    fn flag(&mut self, key: &str) -> bool {
        self.parse(key, "true or false").unwrap_or(false)
    }

    fn positive(&mut self, key: &str) -> usize {
        let v: usize = self.num(key);
        if v == 0 && self.problems.iter().all(|p| !p.starts_with(key)) {
            self.problems.push(format!("{key}: must be positive"));
        }
        v
    }

    fn size(&mut self, key: &str) -> Option<(usize, usize)> {
        let v = self.raw(key).to_string();
        let parsed = match v.split_once('x') {
            Some((h, w)) => h.trim().parse().ok().zip(w.trim().parse().ok()),
            None => v.trim().parse().ok().map(|s| (s, s)),
        };
        match parsed {
            Some((h, w)) if h > 0 && w > 0 => Some((h, w)),
            _ => {
                self.problems.push(format!("{key}: expected HxW or a single size, got {v:?}"));
                None
            }
        }
    }

    fn fail(&mut self, key: &str, msg: impl std::fmt::Display) {
        self.problems.push(format!("{key}: {msg}"));
    }
}

fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

impl RunConfig {
    /// Loads `path` (if any), applies overrides and validates. `require_data`
    /// demands `data.root`, which training needs and evaluation does not.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)], require_data: bool) -> Result<RunConfig> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let label = path.map(|p| p.display().to_string()).unwrap_or_default();
        let (map, mut problems) = merge_collect(text.as_deref().map(|t| (label.as_str(), t)), overrides);
        match RunConfig::from_map(map, require_data) {
            Ok(c) if problems.is_empty() => Ok(c),
            Ok(_) => Err(Error::Config(problems)),
            Err(Error::Config(more)) => {
                problems.extend(more);
                Err(Error::Config(problems))
            }
            Err(e) => Err(e),
        }
    }

    /// Parses an echoed config back into a run configuration.
    pub fn from_echo(text: &str) -> Result<RunConfig> {
        RunConfig::from_map(merge_layers(Some(("config.echo", text)), &[])?, false)
    }

    pub fn from_map(map: BTreeMap<String, String>, require_data: bool) -> Result<RunConfig> {
        let mut r = Reader {
            map: &map,
            problems: Vec::new(),
        };
        let seed = r.num("seed");
        let name = r.raw("run.name").to_string();
        if name.is_empty() || name.contains(['/', '\\']) {
            r.fail("run.name", "must be a non-empty name without path separators");
        }
        let out_dir = match r.raw("run.out_dir") {
            "auto" | "" => default_out_root().join(&name),
            p => PathBuf::from(p),
        };

        let root = r.raw("data.root").to_string();
        if root.is_empty() && require_data {
            r.fail("data.root", "is required (path to the training image folder)");
        }
        let resize = r.size("data.resize").unwrap_or((256, 256));
        let mut augment = Augmentations::none();
        for part in r.raw("data.augment").to_string().split(',').map(str::trim) {
            match part {
                "none" | "" => {}
                "crop" => augment.random_crop = true,
                "flip" => augment.random_flip = true,
                "gray" | "grayscale" => augment.grayscale = true,
                other => r.fail("data.augment", format!("unknown augmentation {other:?} (crop, flip, gray, none)")),
            }
        }
        let mut data = DatasetSpec::new(root, resize);
        data.augment = augment;
        data.split_seed = r.num("data.split_seed");
        data.test_fraction = r.float("data.test_fraction");
        if !(0.0..1.0).contains(&data.test_fraction) {
            r.fail("data.test_fraction", "must lie in [0, 1)");
        }

        let strategy = r.parse("schedule.strategy", "innout or baseline").unwrap_or(Strategy::InNOut);
        let target = r.parse("schedule.target", "inpainting or outpainting").unwrap_or(TaskKind::Inpainting);
        let epochs: u64 = r.num("schedule.epochs");
        let split = r.float("schedule.split");
        let length = if epochs > 0 {
            if !(split > 0.0 && split < 1.0) {
                r.fail("schedule.split", "must lie strictly between 0 and 1");
            }
            ScheduleLength::Epochs { epochs, split }
        } else {
            let default = match target {
                TaskKind::Inpainting => 40000,
                TaskKind::Outpainting => 45000,
            };
            let mut iters = |key: &str| match r.raw(key) {
                "auto" => default,
                _ => r.num(key),
            };
            let n_pretrain = iters("schedule.n_pretrain");
            let k_finetune = iters("schedule.k_finetune");
            if n_pretrain + k_finetune == 0 {
                r.fail("schedule.k_finetune", "the schedule has no iterations");
            }
            ScheduleLength::Iterations { n_pretrain, k_finetune }
        };

        let masks = match r.raw("masks.family") {
            "center-rect" => MaskChoice::CenterRect {
                hole: match r.raw("masks.hole") {
                    "auto" => None,
                    _ => r.size("masks.hole"),
                },
            },
            "random-rect" => MaskChoice::RandomRect,
            "irregular" => MaskChoice::Irregular {
                strokes: r.positive("masks.strokes"),
            },
            "bspline-panorama" => MaskChoice::BsplinePanorama,
            "dir" => {
                let d = r.raw("masks.dir").to_string();
                if d.is_empty() {
                    r.fail("masks.dir", "is required when masks.family = dir");
                }
                MaskChoice::Dir(PathBuf::from(d))
            }
            other => {
                let other = other.to_string();
                r.fail(
                    "masks.family",
                    format!("unknown family {other:?} (center-rect, random-rect, irregular, bspline-panorama, dir)"),
                );
                MaskChoice::RandomRect
            }
        };
        if let MaskChoice::CenterRect { hole: Some((hh, hw)) } = masks {
            if hh > resize.0 || hw > resize.1 {
                r.fail("masks.hole", format!("{hh}x{hw} exceeds the {}x{} image", resize.0, resize.1));
            }
        }
        let fill = r.parse("masks.fill", "noise or constant:v[,v,v]").unwrap_or(FillMode::UniformNoise);

        let generator = GeneratorConfig {
            base_channels: r.num("model.base_channels"),
            downsample_stages: r.num("model.downsample_stages"),
            dilated_blocks: r.num("model.dilated_blocks"),
            use_context_normalization: r.flag("model.context_norm"),
            input_channels: 4,
        };
        if let Err(e) = generator.validate() {
            r.fail("model", e);
        }
        let critic = CriticConfig {
            base_channels: r.num("critic.base_channels"),
            downsample_stages: r.num("critic.downsample_stages"),
        };
        if let Err(e) = critic.validate() {
            r.fail("critic", e);
        }
        for (key, stages) in [
            ("model.downsample_stages", generator.downsample_stages),
            ("critic.downsample_stages", critic.downsample_stages),
        ] {
            let f = 1usize.checked_shl(stages as u32).unwrap_or(0);
            if f == 0 || !resize.0.is_multiple_of(f) || !resize.1.is_multiple_of(f) {
                r.fail(key, format!("data.resize {}x{} must be divisible by 2^{stages}", resize.0, resize.1));
            }
        }

        let loss = LossConfig {
            recon_weight: r.float("loss.recon_weight"),
            adv_weight: r.float("loss.adv_weight"),
            mrf_weight: r.float("loss.mrf_weight"),
            gp_weight: r.float("loss.gp_weight"),
            svl_gamma: r.float("loss.svl_gamma"),
            finetune_svl: r.flag("loss.finetune_svl"),
            mrf_bandwidth: r.float("loss.mrf_bandwidth"),
            mrf_patch: r.positive("loss.mrf_patch"),
            feature_seed: r.num("loss.feature_seed"),
        };
        if let Err(Error::Config(p)) = LossBundle::new(Stage::Finetune, loss.recon_weight, loss.adv_weight, loss.mrf_weight)
        {
            r.problems.extend(p);
        }
        if loss.gp_weight < 0.0 {
            r.fail("loss.gp_weight", "must be non-negative");
        }
        if !(loss.svl_gamma > 0.0 && loss.svl_gamma < 1.0) {
            r.fail("loss.svl_gamma", "must lie strictly between 0 and 1");
        }
        if !(loss.mrf_bandwidth > 0.0) {
            r.fail("loss.mrf_bandwidth", "must be positive");
        }

        let optim = AdamConfig {
            lr: r.float("optim.lr"),
            beta1: r.float("optim.beta1"),
            beta2: r.float("optim.beta2"),
            ..AdamConfig::default()
        };
        if !(optim.lr > 0.0) {
            r.fail("optim.lr", "must be positive");
        }
        for (k, b) in [("optim.beta1", optim.beta1), ("optim.beta2", optim.beta2)] {
            if !(0.0..1.0).contains(&b) {
                r.fail(k, "must lie in [0, 1)");
            }
        }

        let train = TrainConfig {
            batch_size: r.positive("train.batch_size"),
            n_critic: r.num("train.n_critic"),
            checkpoint_every: r.num("train.checkpoint_every"),
            log_every: r.positive("train.log_every") as u64,
            reset_optimizer: r.flag("schedule.reset_optimizer"),
        };
        let eval = EvalConfig {
            every: r.num("eval.every"),
            images: r.num("eval.images"),
            extractor_seed: r.num("eval.extractor_seed"),
            composite: r.flag("eval.composite"),
        };
        if eval.every > 0 && eval.images < 2 {
            r.fail("eval.images", "periodic evaluation needs at least 2 images");
        }
        if resize.0 < 8 || resize.1 < 8 {
            r.fail("data.resize", "images must be at least 8x8");
        }

        let problems = r.problems;
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        Ok(RunConfig {
            seed,
            name,
            out_dir,
            data,
            strategy,
            target,
            length,
            masks,
            fill,
            generator,
            critic,
            loss,
            optim,
            train,
            eval,
            entries: map,
        })
    }

    pub fn pretrain_bundle(&self) -> Result<LossBundle> {
        LossBundle::pretrain(self.loss.recon_weight)
    }

    pub fn finetune_bundle(&self) -> Result<LossBundle> {
        LossBundle::new(Stage::Finetune, self.loss.recon_weight, self.loss.adv_weight, self.loss.mrf_weight)
    }

    /// The iteration schedule; epoch budgets need the epoch length.
    pub fn schedule(&self, iters_per_epoch: u64) -> Result<Schedule> {
        let (p, f) = (self.pretrain_bundle()?, self.finetune_bundle()?);
        match self.length {
            ScheduleLength::Iterations { n_pretrain, k_finetune } => {
                Schedule::new(self.target, self.strategy, n_pretrain, k_finetune, p, f)
            }
            ScheduleLength::Epochs { epochs, split } => {
                epoch_schedule_adapter(epochs, split, iters_per_epoch, self.strategy, self.target, p, f)
            }
        }
    }

    /// Canonical `key = value` text, one line per key in sorted order.
    pub fn echo(&self) -> String {
        echo_map(&self.entries)
    }
}

pub fn echo_map(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Splits `key=value` as given on the command line.
pub fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected key=value, got {s:?}")),
    }
}
