use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use innout::commands::{self, EvalSplit, EvaluateArgs};
use innout::config::{self, parse_override, RunConfig};
use innout::masks::TaskKind;
use innout::train::{run_training, Trainer};
use innout::{Error, Result};

#[derive(Parser)]
#[command(name = "innout", version, about = "Opposite-task pretraining for image inpainting and outpainting")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a mask corpus with a manifest.
    GenMasks(GenMasksArgs),
    /// Train a run from a config file, a preset and overrides.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a report.
    Evaluate(EvalArgs),
    /// Compare the reports of several runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenMasksArgs {
    /// center-rect, random-rect, irregular or bspline-panorama
    #[arg(long)]
    family: String,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// HxW or a single side length.
    #[arg(long, default_value = "256", value_parser = parse_size)]
    size: (usize, usize),
    /// Hole size for center-rect, HxW; defaults to half of each side.
    #[arg(long, value_parser = parse_size)]
    hole: Option<(usize, usize)>,
    #[arg(long, default_value_t = 6)]
    strokes: usize,
    /// Task the masks are for; the family's other task gets inverted masks.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset applied under the file and overrides.
    #[arg(long)]
    preset: Option<String>,
    /// Override a key, `--set key=value`; repeatable.
    #[arg(long = "set", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
}

impl ConfigArgs {
    fn is_empty(&self) -> bool {
        self.config.is_none() && self.preset.is_none() && self.overrides.is_empty()
    }

    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        if let Some(p) = &self.preset {
            o.push(("preset".to_string(), p.clone()));
        }
        o.extend(self.overrides.iter().cloned());
        o
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; overrides run.out_dir.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue a run from its latest checkpoint, or from the given
    /// checkpoint directory.
    #[arg(long, conflicts_with_all = ["config", "preset", "overrides", "out_dir"])]
    resume: Option<PathBuf>,
    /// List the built-in presets and exit.
    #[arg(long)]
    list_presets: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory, or a run directory to use its latest checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Config for the model and data; defaults to the checkpoint's own.
    #[command(flatten)]
    config: ConfigArgs,
    /// Image folder; defaults to data.root.
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, test or all
    #[arg(long, default_value = "test")]
    split: String,
    /// Mask manifest or mask directory; masks are sampled when absent.
    #[arg(long)]
    masks: Option<PathBuf>,
    /// Report path; defaults to report.json in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    batch_size: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories or report files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for comparison.txt and comparison.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parsed = match s.split_once('x') {
        Some((h, w)) => h.parse().ok().zip(w.parse().ok()),
        None => s.parse().ok().map(|v| (v, v)),
    };
    match parsed {
        Some((h, w)) if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(format!("expected HxW or a single size, got {s:?}")),
    }
}

fn out_root() -> PathBuf {
    std::env::var_os(config::OUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn gen_masks(a: GenMasksArgs) -> Result<()> {
    let family = commands::parse_family(&a.family, a.hole, a.size, a.strokes)?;
    let task = match &a.task {
        Some(t) => t.parse::<TaskKind>()?,
        None => family.native_task(),
    };
    let records = commands::gen_masks(&family, task, a.count, a.size, a.seed, &a.out)?;
    let mut counts = std::collections::BTreeMap::new();
    for r in &records {
        *counts.entry(r.difficulty).or_insert(0usize) += 1;
    }
    let hist: Vec<String> = counts.iter().map(|(d, n)| format!("{d} {n}")).collect();
    println!("wrote {} {} masks to {} ({})", records.len(), family.name(), a.out.display(), hist.join(", "));
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    if a.list_presets {
        for p in config::preset_names() {
            println!("{p}");
        }
        return Ok(());
    }
    let outcome = if let Some(path) = &a.resume {
        let (run_dir, ck) = if path.join("generator.tensors").is_file() {
            let run = commands::run_dir_of(path)
                .ok_or_else(|| Error::invalid(format!("{} is not inside a run directory", path.display())))?;
            (run, Some(path.clone()))
        } else {
            (path.clone(), None)
        };
        let mut t = Trainer::resume(&run_dir, ck.as_deref())?;
        println!("resuming {} at iteration {}", run_dir.display(), t.iteration());
        t.run()?
    } else {
        let mut overrides = a.config.overrides();
        if let Some(d) = &a.out_dir {
            overrides.push(("run.out_dir".to_string(), d.display().to_string()));
        }
        let c = RunConfig::load(a.config.config.as_deref(), &overrides, true)?;
        log::debug!("merged config:\n{}", c.echo());
        println!("training into {}", c.out_dir.display());
        run_training(c)?
    };
    let last = outcome.rows.last();
    println!(
        "completed {} iterations{}",
        outcome.completed,
        last.map(|r| format!(", final total loss {:.6}", r.total)).unwrap_or_default()
    );
    Ok(())
}

fn checkpoint_config(checkpoint: &Path) -> Result<RunConfig> {
    let ck = commands::resolve_checkpoint(checkpoint)?;
    let candidates = [Some(ck.join("config.echo")), commands::run_dir_of(&ck).map(|r| r.join("config.echo"))];
    for c in candidates.into_iter().flatten() {
        if c.is_file() {
            let text = std::fs::read_to_string(&c).map_err(|e| Error::io(&c, e))?;
            return RunConfig::from_echo(&text);
        }
    }
    Err(Error::Config(vec![format!(
        "no config.echo found for {}; pass --config or --preset",
        ck.display()
    )]))
}

fn evaluate(a: EvalArgs) -> Result<()> {
    let config = if a.config.is_empty() {
        checkpoint_config(&a.checkpoint)?
    } else {
        RunConfig::load(a.config.config.as_deref(), &a.config.overrides(), false)?
    };
    let data_root = a.data.clone().unwrap_or_else(|| config.data.root.clone());
    if data_root.as_os_str().is_empty() {
        return Err(Error::Config(vec!["data.root: no evaluation images given (pass --data)".to_string()]));
    }
    let split: EvalSplit = a.split.parse()?;
    let report = commands::evaluate(&EvaluateArgs {
        config: &config,
        checkpoint: &a.checkpoint,
        data_root: &data_root,
        split,
        masks: a.masks.as_deref(),
        batch_size: a.batch_size,
    })?;
    let out = match a.out {
        Some(o) => o,
        None => {
            let ck = commands::resolve_checkpoint(&a.checkpoint)?;
            commands::run_dir_of(&ck).unwrap_or(ck).join(commands::REPORT_FILE)
        }
    };
    commands::write_report(&out, &report)?;
    let s = &report.summary;
    println!(
        "{} images: PSNR {:.3} ({} exact), SSIM {:.4}, FID {} -> {}",
        s.n,
        s.psnr_mean,
        s.psnr_inf_count,
        s.ssim_mean,
        s.fid_overall.fid.map(|f| format!("{f:.3}")).unwrap_or_else(|| "n/a".into()),
        out.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.unwrap_or_else(|| out_root().join("comparison"));
    let cmp = commands::report(&a.runs, &out)?;
    print!("{}", cmp.to_text());
    println!("written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::GenMasks(a) => gen_masks(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(problems) => {
                    eprintln!("error: invalid configuration");
                    for p in problems {
                        eprintln!("  {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
