//! The optimization loop: batches per the schedule, critic and generator
//! updates, periodic evaluation, checkpoints and resumption.
//!
//! Every random draw is keyed by the run seed and the iteration, so the
//! state that has to be saved is just the weights and the optimizer moments.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::{grad, no_grad, Var};
use crate::config::RunConfig;
use crate::data::{make_batch, Batch, BatchItem, Dataset, DatasetSpec, Split};
use crate::features::{mrf_feature_net, FeatureExtractor, RandomConvNet, RandomEmbedding};
use crate::losses::{batch_weight_maps, critic_losses, idmrf_loss, reconstruction_loss, total_loss, LossParts, Stage};
use crate::masks::{MaskFamily, TaskKind};
use crate::metrics::{bucketed_report, EvalItem};
use crate::model::{composite_output, generator_input, Critic, Generator};
use crate::nn::Adam;
use crate::rng::{self, derive_seed, purpose};
use crate::schedule::Schedule;
use crate::{Error, Result};

pub const VERSION: &str = concat!("innout ", env!("CARGO_PKG_VERSION"));

const CHECKPOINT_PREFIX: &str = "iter_";

/// One row of `logs/metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub stage: Stage,
    pub task: TaskKind,
    pub total: f64,
    pub recon: f64,
    pub adv: Option<f64>,
    pub mrf: Option<f64>,
    pub critic: Option<f64>,
    pub wasserstein: Option<f64>,
    pub gp: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub fid: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub task: TaskKind,
    pub start: u64,
    pub end: u64,
    pub recon_weight: f64,
    pub adv_weight: f64,
    pub mrf_weight: f64,
    pub critic_steps: usize,
}

/// `manifest.json`: what was run and how far it got.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub strategy: String,
    pub target_task: TaskKind,
    pub n_pretrain: u64,
    pub k_finetune: u64,
    pub stage_boundary: u64,
    pub stages: Vec<StageRecord>,
    pub dataset_root: PathBuf,
    pub dataset_images: usize,
    pub dataset_skipped: usize,
    pub mask_family: String,
    pub batch_size: usize,
    pub optimizer: String,
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub reset_optimizer_at_boundary: bool,
    pub generator_parameters: usize,
    pub critic_parameters: usize,
    pub eval_extractor: Option<String>,
    pub completed_iterations: u64,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointState {
    version: String,
    /// The next iteration to run.
    iteration: u64,
    seed: u64,
    stage: Stage,
}

struct EvalSet {
    batch: Batch,
    extractor: RandomEmbedding,
}

/// A training run bound to its run directory.
pub struct Trainer {
    config: RunConfig,
    schedule: Schedule,
    dataset: Dataset,
    family: MaskFamily,
    generator: Generator,
    critic: Critic,
    opt_g: Adam,
    opt_c: Adam,
    mrf_net: RandomConvNet,
    eval_set: Option<EvalSet>,
    next: u64,
    run_dir: PathBuf,
    permutations: HashMap<u64, Vec<usize>>,
    last_checkpoint: Option<PathBuf>,
    checkpoints: Vec<PathBuf>,
}

/// What a call to [`Trainer::run_until`] produced.
#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
    pub completed: u64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

const CSV_HEADER: &str = "iteration,stage,task,total,recon,adv,mrf,critic,wasserstein,gp,psnr,ssim,fid";

impl LogRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.stage,
            self.task,
            self.total,
            self.recon,
            opt(self.adv),
            opt(self.mrf),
            opt(self.critic),
            opt(self.wasserstein),
            opt(self.gp),
            opt(self.psnr),
            opt(self.ssim),
            opt(self.fid)
        )
    }
}

/// Reads `logs/metrics.csv` of a run.
pub fn read_metrics(run_dir: &Path) -> Result<Vec<LogRow>> {
    let path = run_dir.join("logs").join("metrics.csv");
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::format(&path, e.to_string())))
        .collect()
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Checkpoint directories of a run, oldest first.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = run_dir.join("checkpoints");
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<(u64, PathBuf)> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let it = name.strip_prefix(CHECKPOINT_PREFIX)?.parse().ok()?;
            Some((it, e.path()))
        })
        .collect();
    out.sort();
    Ok(out.into_iter().map(|(_, p)| p).collect())
}

/// The eval split, or the training images when no test split exists.
fn load_eval_images(spec: &DatasetSpec, train: &Dataset) -> Result<Dataset> {
    match Dataset::load_split(spec, Some(Split::Test)) {
        Ok(d) if !d.is_empty() => Ok(d),
        _ => Ok(Dataset {
            spec: spec.clone(),
            names: train.names.clone(),
            images: train.images.clone(),
            skipped: 0,
        }),
    }
}

impl Trainer {
    /// Creates the run directory and a fresh run. Fails if the directory
    /// already holds a run.
    pub fn create(config: RunConfig) -> Result<Trainer> {
        let run_dir = config.out_dir.clone();
        if run_dir.join("manifest.json").exists() {
            return Err(Error::invalid(format!(
                "{} already holds a run; resume it or pick another run.out_dir",
                run_dir.display()
            )));
        }
        let t = Trainer::build(config, run_dir)?;
        create_dir(&t.run_dir.join("checkpoints"))?;
        create_dir(&t.run_dir.join("logs"))?;
        write_atomic(&t.run_dir.join("config.echo"), t.config.echo().as_bytes())?;
        let metrics = t.run_dir.join("logs").join("metrics.csv");
        fs::write(&metrics, format!("{CSV_HEADER}\n")).map_err(|e| Error::io(&metrics, e))?;
        let events = t.run_dir.join("logs").join("events.log");
        fs::write(&events, "").map_err(|e| Error::io(&events, e))?;
        t.write_manifest("running")?;
        Ok(t)
    }

    /// Reopens a run from its directory at `checkpoint`, or at its latest
    /// checkpoint. Without any checkpoint the run restarts from iteration 0.
    pub fn resume(run_dir: &Path, checkpoint: Option<&Path>) -> Result<Trainer> {
        let echo = run_dir.join("config.echo");
        let text = fs::read_to_string(&echo).map_err(|e| Error::io(&echo, e))?;
        let mut config = RunConfig::from_echo(&text)?;
        config.out_dir = run_dir.to_path_buf();
        let mut t = Trainer::build(config, run_dir.to_path_buf())?;
        let ck = match checkpoint {
            Some(c) => Some(c.to_path_buf()),
            None => list_checkpoints(run_dir)?.pop(),
        };
        if let Some(ck) = ck {
            t.load_checkpoint(&ck)?;
        }
        t.truncate_metrics()?;
        t.log_event(&format!("resumed at iteration {}", t.next))?;
        Ok(t)
    }

    fn build(config: RunConfig, run_dir: PathBuf) -> Result<Trainer> {
        let dataset = Dataset::load_split(&config.data, Some(Split::Train))?;
        if dataset.is_empty() {
            return Err(Error::DatasetEmpty(config.data.root.clone()));
        }
        let batch = config.train.batch_size as u64;
        let iters_per_epoch = (dataset.len() as u64).div_ceil(batch);
        let schedule = config.schedule(iters_per_epoch)?;
        let family = config.masks.family(config.data.resize_to)?;
        let generator = Generator::new(config.generator.clone(), config.seed)?;
        let critic = Critic::new(config.critic.clone(), 3, config.seed)?;
        let opt_g = Adam::new(config.optim, generator.params());
        let opt_c = Adam::new(config.optim, critic.params());
        let mrf_net = mrf_feature_net(config.loss.feature_seed);
        let eval_set = if config.eval.every > 0 {
            let imgs = load_eval_images(&config.data, &dataset)?;
            let mut spec = config.data.clone();
            spec.augment = crate::data::Augmentations::none();
            let n = config.eval.images.min(imgs.len());
            if n < 2 {
                return Err(Error::InsufficientSamples { needed: 2, got: n });
            }
            let items: Vec<BatchItem> = (0..n)
                .map(|k| BatchItem {
                    image: &imgs.images[k],
                    seed: derive_seed(config.seed, &[purpose::EVAL, k as u64]),
                })
                .collect();
            Some(EvalSet {
                batch: make_batch(&items, &spec, schedule.target_task(), &family, &config.fill)?,
                extractor: RandomEmbedding::new(config.eval.extractor_seed),
            })
        } else {
            None
        };
        Ok(Trainer {
            config,
            schedule,
            dataset,
            family,
            generator,
            critic,
            opt_g,
            opt_c,
            mrf_net,
            eval_set,
            next: 0,
            run_dir,
            permutations: HashMap::new(),
            last_checkpoint: None,
            checkpoints: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    /// The next iteration to run.
    pub fn iteration(&self) -> u64 {
        self.next
    }

    fn critic_steps(&self, stage: Stage) -> usize {
        let bundle = match stage {
            Stage::Pretrain => self.schedule.pretrain_loss(),
            Stage::Finetune => self.schedule.finetune_loss(),
        };
        if bundle.is_adversarial() {
            self.config.train.n_critic
        } else {
            0
        }
    }

    fn manifest(&self, status: &str) -> RunManifest {
        let stages = self
            .schedule
            .stages()
            .into_iter()
            .map(|(stage, task, start, end)| {
                let b = match stage {
                    Stage::Pretrain => self.schedule.pretrain_loss(),
                    Stage::Finetune => self.schedule.finetune_loss(),
                };
                StageRecord {
                    stage,
                    task,
                    start,
                    end,
                    recon_weight: b.recon_weight(),
                    adv_weight: b.adv_weight(),
                    mrf_weight: b.mrf_weight(),
                    critic_steps: self.critic_steps(stage),
                }
            })
            .collect();
        let o = self.config.optim;
        RunManifest {
            name: self.config.name.clone(),
            version: VERSION.to_string(),
            seed: self.config.seed,
            strategy: self.schedule.strategy().to_string(),
            target_task: self.schedule.target_task(),
            n_pretrain: self.schedule.n_pretrain(),
            k_finetune: self.schedule.k_finetune(),
            stage_boundary: self.schedule.n_pretrain(),
            stages,
            dataset_root: self.config.data.root.clone(),
            dataset_images: self.dataset.len(),
            dataset_skipped: self.dataset.skipped,
            mask_family: self.family.name().to_string(),
            batch_size: self.config.train.batch_size,
            optimizer: "adam".to_string(),
            learning_rate: o.lr,
            betas: (o.beta1, o.beta2),
            reset_optimizer_at_boundary: self.config.train.reset_optimizer,
            generator_parameters: self.generator.params().scalar_count(),
            critic_parameters: self.critic.params().scalar_count(),
            eval_extractor: self.eval_set.as_ref().map(|e| e.extractor.id().to_string()),
            completed_iterations: self.next,
            status: status.to_string(),
        }
    }

    fn write_manifest(&self, status: &str) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.manifest(status)).expect("manifest serializes");
        write_atomic(&self.run_dir.join("manifest.json"), json.as_bytes())
    }

    fn log_event(&self, msg: &str) -> Result<()> {
        log::info!("{msg}");
        let path = self.run_dir.join("logs").join("events.log");
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{msg}").map_err(|e| Error::io(&path, e))
    }

    /// Drops metric rows at or after the resume point.
    fn truncate_metrics(&self) -> Result<()> {
        let path = self.run_dir.join("logs").join("metrics.csv");
        let text = fs::read_to_string(&path).unwrap_or_default();
        let mut out = format!("{CSV_HEADER}\n");
        for line in text.lines().skip(1) {
            let it: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
            if it.is_some_and(|i| i < self.next) {
                out.push_str(line);
                out.push('\n');
            }
        }
        write_atomic(&path, out.as_bytes())
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        let n = self.dataset.len();
        let seed = self.config.seed;
        self.permutations.retain(|&e, _| e + 1 >= epoch);
        self.permutations.entry(epoch).or_insert_with(|| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::stream(seed, &[purpose::EPOCH_PERMUTATION, epoch]));
            idx
        })
    }

    /// Item indices and seeds for iteration `i`: consecutive positions in
    /// the stream of per-epoch permutations.
    fn batch_for(&mut self, i: u64) -> Result<Batch> {
        let n = self.dataset.len() as u64;
        let b = self.config.train.batch_size as u64;
        let mut picks = Vec::with_capacity(b as usize);
        for k in 0..b {
            let pos = i * b + k;
            let idx = self.permutation(pos / n)[(pos % n) as usize];
            picks.push((idx, derive_seed(self.config.seed, &[purpose::ITEM, i, k])));
        }
        let items: Vec<BatchItem> = picks
            .iter()
            .map(|&(idx, seed)| BatchItem {
                image: &self.dataset.images[idx],
                seed,
            })
            .collect();
        let task = self.schedule.task_for_iteration(i)?;
        make_batch(&items, &self.config.data, task, &self.family, &self.config.fill)
    }

    fn abort(&self, i: u64, reason: String) -> Error {
        let _ = self.log_event(&format!("abort at iteration {i}: {reason}"));
        let _ = self.write_manifest("aborted");
        Error::TrainingAbort {
            iteration: i,
            reason,
            last_checkpoint: self.last_checkpoint.clone(),
        }
    }

    fn step(&mut self, i: u64) -> Result<LogRow> {
        let stage = self.schedule.stage_for_iteration(i)?;
        let bundle = *self.schedule.loss_bundle_for_iteration(i)?;
        if i == self.schedule.n_pretrain() && i > 0 && self.config.train.reset_optimizer {
            self.opt_g.reset();
            self.opt_c.reset();
        }
        let batch = self.batch_for(i)?;
        let task = batch.task;
        let real = Var::constant(batch.images.clone().into_dyn());
        let input = generator_input(&batch.masked_images, &batch.masks)?;

        let mut critic_log = None;
        for step in 0..self.critic_steps(stage) {
            let fake = {
                let _g = no_grad();
                let pred = self.generator.forward(&input)?;
                composite_output(&pred, &real, &batch.masks)?
            };
            let mut r = rng::stream(self.config.seed, &[purpose::GRADIENT_PENALTY, i, step as u64]);
            let critic = &self.critic;
            let cl = critic_losses(|x| critic.forward(x), &real, &fake, self.config.loss.gp_weight, &mut r)
                .map_err(|e| self.abort(i, format!("critic update failed: {e}")))?;
            let grads = grad(&cl.critic_loss, &self.critic.params().vars(), false);
            self.opt_c.step(self.critic.params_mut(), &grads)?;
            critic_log = Some((cl.critic_loss.item(), cl.wasserstein, cl.gradient_penalty.item()));
        }

        let gamma = match stage {
            Stage::Pretrain => Some(self.config.loss.svl_gamma),
            Stage::Finetune => self.config.loss.finetune_svl.then_some(self.config.loss.svl_gamma),
        };
        let weights = batch_weight_maps(&batch.mask_list, gamma)?;
        let pred = self.generator.forward(&input)?;
        let recon = reconstruction_loss(&pred, &real, &weights)?;
        let needs_composite = stage == Stage::Finetune && (bundle.adv_weight() > 0.0 || bundle.mrf_weight() > 0.0);
        let comp = if needs_composite { Some(composite_output(&pred, &real, &batch.masks)?) } else { None };
        let adv = match (&comp, stage == Stage::Finetune && bundle.adv_weight() > 0.0) {
            (Some(c), true) => Some(self.critic.forward(c)?.mean().neg()),
            _ => None,
        };
        let mrf = match (&comp, stage == Stage::Finetune && bundle.mrf_weight() > 0.0) {
            (Some(c), true) => {
                let target = {
                    let _g = no_grad();
                    self.mrf_net.forward(&real)
                };
                Some(idmrf_loss(&self.mrf_net.forward(c), &target, self.config.loss.mrf_bandwidth, self.config.loss.mrf_patch)?)
            }
            _ => None,
        };
        let parts = LossParts { recon, adv, mrf };
        let total = total_loss(&bundle, &parts)?;
        let value = total.item();
        if !value.is_finite() {
            return Err(self.abort(i, format!("generator loss is {value}")));
        }
        let grads = grad(&total, &self.generator.params().vars(), false);
        if grads.iter().any(|g| g.value().iter().any(|v| !v.is_finite())) {
            return Err(self.abort(i, "generator gradient is not finite".to_string()));
        }
        self.opt_g.step(self.generator.params_mut(), &grads)?;

        Ok(LogRow {
            iteration: i,
            stage,
            task,
            total: value,
            recon: parts.recon.item(),
            adv: parts.adv.as_ref().map(Var::item),
            mrf: parts.mrf.as_ref().map(Var::item),
            critic: critic_log.map(|c| c.0),
            wasserstein: critic_log.map(|c| c.1),
            gp: critic_log.map(|c| c.2),
            psnr: None,
            ssim: None,
            fid: None,
        })
    }

    /// PSNR, SSIM and FID of the current generator on the fixed eval batch.
    pub fn evaluate_now(&self) -> Result<Option<(f64, f64, Option<f64>)>> {
        let Some(ev) = &self.eval_set else {
            return Ok(None);
        };
        let pred = {
            let _g = no_grad();
            self.generator.forward(&generator_input(&ev.batch.masked_images, &ev.batch.masks)?)?
        };
        let pred: Array4<f64> = pred.value().clone().into_dimensionality().expect("4-d output");
        let items: Vec<EvalItem> = ev
            .batch
            .mask_list
            .iter()
            .enumerate()
            .map(|(k, m)| EvalItem {
                id: k.to_string(),
                real: ev.batch.images.slice(s![k, .., .., ..]).to_owned(),
                generated: pred.slice(s![k, .., .., ..]).to_owned(),
                mask: m.clone(),
            })
            .collect();
        let report = bucketed_report(&items, &ev.extractor, self.config.eval.composite)?;
        let s = report.summary;
        Ok(Some((s.psnr_mean, s.ssim_mean, s.fid_overall.fid)))
    }

    fn save_checkpoint(&mut self) -> Result<PathBuf> {
        let dir = self.run_dir.join("checkpoints");
        let name = format!("{CHECKPOINT_PREFIX}{:08}", self.next);
        let tmp = dir.join(format!(".{name}.tmp"));
        let dest = dir.join(&name);
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        create_dir(&tmp)?;
        self.generator.save(&tmp.join("generator.tensors"))?;
        self.critic.save(&tmp.join("critic.tensors"))?;
        self.opt_g.save(&tmp.join("adam_generator.tensors"), self.generator.params().names())?;
        self.opt_c.save(&tmp.join("adam_critic.tensors"), self.critic.params().names())?;
        let stage = if self.next < self.schedule.n_pretrain() { Stage::Pretrain } else { Stage::Finetune };
        let state = CheckpointState {
            version: VERSION.to_string(),
            iteration: self.next,
            seed: self.config.seed,
            stage,
        };
        let state_path = tmp.join("state.json");
        fs::write(&state_path, serde_json::to_string_pretty(&state).unwrap()).map_err(|e| Error::io(&state_path, e))?;
        let echo = tmp.join("config.echo");
        fs::write(&echo, self.config.echo()).map_err(|e| Error::io(&echo, e))?;
        if dest.exists() {
            fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        }
        fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
        self.log_event(&format!("checkpoint {} at iteration {}", dest.display(), self.next))?;
        self.write_manifest("running")?;
        self.last_checkpoint = Some(dest.clone());
        self.checkpoints.push(dest.clone());
        Ok(dest)
    }

    fn load_checkpoint(&mut self, dir: &Path) -> Result<()> {
        let state_path = dir.join("state.json");
        let text = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: CheckpointState =
            serde_json::from_str(&text).map_err(|e| Error::format(&state_path, e.to_string()))?;
        if state.seed != self.config.seed {
            return Err(Error::Incompatible(format!(
                "checkpoint seed {} differs from run seed {}",
                state.seed, self.config.seed
            )));
        }
        if state.iteration > self.schedule.total() {
            return Err(Error::Incompatible(format!(
                "checkpoint at iteration {} is past the {}-iteration schedule",
                state.iteration,
                self.schedule.total()
            )));
        }
        self.generator.params_mut().load(&dir.join("generator.tensors"))?;
        self.critic.params_mut().load(&dir.join("critic.tensors"))?;
        self.opt_g.load(&dir.join("adam_generator.tensors"))?;
        self.opt_c.load(&dir.join("adam_critic.tensors"))?;
        self.next = state.iteration;
        self.last_checkpoint = Some(dir.to_path_buf());
        Ok(())
    }

    fn append_row(&self, file: &mut File, row: &LogRow) -> Result<()> {
        writeln!(file, "{}", row.csv_line()).map_err(|e| Error::io(self.run_dir.join("logs/metrics.csv"), e))
    }

    /// Runs iterations until `end` (exclusive, capped at the schedule
    /// length). Checkpoints every `train.checkpoint_every` iterations, at the
    /// stage boundary and at the end of the schedule.
    pub fn run_until(&mut self, end: u64) -> Result<TrainOutcome> {
        let end = end.min(self.schedule.total());
        let metrics = self.run_dir.join("logs").join("metrics.csv");
        let mut file = OpenOptions::new().append(true).open(&metrics).map_err(|e| Error::io(&metrics, e))?;
        let mut rows = Vec::new();
        let first_checkpoint = self.checkpoints.len();
        let boundary = self.schedule.n_pretrain();
        while self.next < end {
            let i = self.next;
            if i == 0 || i == boundary {
                let stage = self.schedule.stage_for_iteration(i)?;
                let task = self.schedule.task_for_iteration(i)?;
                self.log_event(&format!("stage {stage} begins at iteration {i}: task {task}"))?;
            }
            let mut row = self.step(i)?;
            let every = self.config.eval.every;
            if every > 0 && ((i + 1).is_multiple_of(every) || i + 1 == self.schedule.total()) {
                if let Some((p, s, f)) = self.evaluate_now()? {
                    row.psnr = Some(p);
                    row.ssim = Some(s);
                    row.fid = f;
                }
            }
            if (i + 1).is_multiple_of(self.config.train.log_every) || row.psnr.is_some() {
                self.append_row(&mut file, &row)?;
            }
            rows.push(row);
            self.next = i + 1;
            let c = self.config.train.checkpoint_every;
            if (c > 0 && self.next.is_multiple_of(c)) || self.next == boundary || self.next == self.schedule.total() {
                self.save_checkpoint()?;
            }
        }
        file.flush().map_err(|e| Error::io(&metrics, e))?;
        if self.next == self.schedule.total() {
            self.log_event(&format!("training complete after {} iterations", self.next))?;
            self.write_manifest("completed")?;
        }
        Ok(TrainOutcome {
            rows,
            checkpoints: self.checkpoints[first_checkpoint..].to_vec(),
            completed: self.next,
        })
    }

    pub fn run(&mut self) -> Result<TrainOutcome> {
        self.run_until(u64::MAX)
    }
}

/// Creates a run and trains it to completion.
pub fn run_training(config: RunConfig) -> Result<TrainOutcome> {
    Trainer::create(config)?.run()
}
