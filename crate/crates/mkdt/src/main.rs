use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use mkdt::checkpoint::Checkpoint;
use mkdt::config::ExperimentConfig;
use mkdt::format::write_dataset;
use mkdt::run::{check_run, read_runs_csv, run_matrix, train_run, write_report};
use mkdt::Rayon;
use mkdt_core::backbone::Backbone;
use mkdt_core::data::{generate_synthetic_dataset, stratified_actor_folds, Dataset, SplitPlan, SynthConfig};
use mkdt_core::eval::{evaluate_accuracy, evaluate_teacher};
use mkdt_core::matrix::{prepare_run, RunMode, RunSpec};
use mkdt_core::{Executor, Serial};
use serde_json::json;

/// Multi-view knowledge distillation: data generation, training, evaluation
/// and leave-one-view-out experiment matrices.
#[derive(Parser)]
#[command(name = "mkdt", version)]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides `train.seed` (or the generator seed for gen-data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run everything on one thread, in order.
    #[arg(long, global = true)]
    serial: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset and write it to --out.
    GenData {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        views: usize,
        #[arg(long, default_value_t = 10)]
        actors: usize,
        /// Clips per actor per class.
        #[arg(long, default_value_t = 3)]
        clips: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f32,
    },
    /// Train one run (held-out view, fold, mode).
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// `multi_view_distilled` or `single_view_baseline`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Score a checkpoint on a split's held-out view.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Every (test view, fold, mode) run plus per-run and summary CSVs.
    Matrix,
    /// Render the single-view vs multi-view table from a matrix's runs.csv.
    Report {
        /// Defaults to `<out>/runs.csv`.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long, default_value = "synthetic")]
        dataset_label: String,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Held-out view id; defaults to the config's `run` or the first view.
    #[arg(long)]
    test_view: Option<u32>,
    /// Actor fold index, from 0.
    #[arg(long)]
    fold: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("this command needs --config <path>"))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_spec(cfg: &ExperimentConfig, dataset: &Dataset, args: &RunArgs, mode: Option<&str>) -> Result<RunSpec> {
    let base =
        cfg.run.unwrap_or(RunSpec { test_view: dataset.view_ids()[0], fold: 0, mode: RunMode::MultiViewDistilled });
    Ok(RunSpec {
        test_view: args.test_view.unwrap_or(base.test_view),
        fold: args.fold.unwrap_or(base.fold),
        mode: mode.map(RunMode::parse).transpose()?.unwrap_or(base.mode),
    })
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { classes, views, actors, clips, frames, height, width, noise } => {
            let out = cli.out.as_ref().ok_or_else(|| anyhow!("gen-data needs --out <dir>"))?;
            let synth = SynthConfig {
                n_classes: *classes,
                n_views: *views,
                n_actors: *actors,
                clips_per_actor_per_class: *clips,
                frames: *frames,
                height: *height,
                width: *width,
                view_noise: *noise,
                seed: cli.seed.unwrap_or(0),
            };
            synth.validate()?;
            let dataset = generate_synthetic_dataset(&synth)?;
            let manifest = write_dataset(out, &dataset)?;
            println!("{}", manifest.display());
        }
        Command::Train { run: args, mode } => {
            let cfg = load_config(&cli)?;
            let dataset = cfg.dataset.load()?;
            let spec = resolve_spec(&cfg, &dataset, args, mode.as_deref())?;
            check_run(&cfg, &dataset, &spec)?;
            let dir = cfg.out.join(spec.name());
            let artifacts = if cli.serial {
                train_run(&cfg, &dataset, spec, &dir, &Serial)?
            } else {
                train_run(&cfg, &dataset, spec, &dir, &Rayon)?
            };
            println!(
                "{}: accuracy {:.4} (best epoch {})",
                spec.name(),
                artifacts.result.accuracy,
                artifacts.result.best_epoch
            );
            println!("{}", artifacts.dir.display());
        }
        Command::Eval { checkpoint, run: args } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let cfg = load_config(&cli)?;
            let dataset = cfg.dataset.load()?;
            let spec = resolve_spec(&cfg, &dataset, args, None)?;
            let report = if cli.serial {
                evaluate(&cfg, &dataset, &ckpt, spec, &Serial)?
            } else {
                evaluate(&cfg, &dataset, &ckpt, spec, &Rayon)?
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Matrix => {
            let cfg = load_config(&cli)?;
            let dataset = cfg.dataset.load()?;
            let outcome = run_matrix(&cfg, &dataset, cli.serial)?;
            for s in &outcome.summaries {
                println!("view {} {}: {:.4} ± {:.4} over {} folds", s.view, s.mode.as_str(), s.mean, s.std, s.runs);
            }
            if RunMode::ALL.iter().all(|m| cfg.matrix.modes.contains(m)) {
                print!("\n{}", write_report(&cfg.out, &outcome.runs, "synthetic")?);
            }
            println!("{}", outcome.summary_csv.display());
        }
        Command::Report { runs, dataset_label } => {
            let runs_path = match (runs, &cli.out) {
                (Some(p), _) => p.clone(),
                (None, Some(out)) => out.join("runs.csv"),
                (None, None) => bail!("report needs --runs <path> or --out <dir>"),
            };
            let runs = read_runs_csv(&runs_path)?;
            let dir = runs_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            print!("{}", write_report(dir, &runs, dataset_label)?);
        }
    }
    Ok(())
}

fn evaluate<E: Executor>(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    ckpt: &Checkpoint,
    spec: RunSpec,
    exec: &E,
) -> Result<serde_json::Value> {
    let backbone = Backbone::new(ckpt.backbone.clone())?;
    if ckpt.backbone.input[0] != cfg.preprocess.frames {
        bail!("checkpoint expects {} frames, preprocess.frames is {}", ckpt.backbone.input[0], cfg.preprocess.frames);
    }
    let folds = stratified_actor_folds(dataset.actors(), cfg.matrix.k_folds, cfg.matrix.fold_seed)?;
    let plan = SplitPlan::new(dataset.view_ids(), spec.test_view, &folds, spec.fold)?;
    let data = prepare_run(dataset, &plan, RunMode::MultiViewDistilled, cfg.baseline_views, &cfg.preprocess)?;
    let student = evaluate_accuracy(&backbone, &ckpt.student, &data.val, exec).context("scoring the student")?;
    let teacher = match &ckpt.teacher {
        Some(tp) => {
            let t = evaluate_teacher(&backbone, tp, &data.val_train_views, exec)?;
            Some(json!({"fused": t.fused, "per_view": t.per_view}))
        }
        None => None,
    };
    Ok(json!({
        "test_view": spec.test_view,
        "fold": spec.fold,
        "epoch": ckpt.epoch,
        "student": {"overall": student.overall, "per_view": student.per_view},
        "teacher": teacher,
    }))
}
