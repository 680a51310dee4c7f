//! Training runs with on-disk artifacts, and the experiment matrix.
//!
//! A run directory holds `config.json` (the resolved configuration including
//! the run spec), `metrics.ndjson`, the last and best epoch checkpoints
//! (`epoch_NNN.ckpt`) and `result.json`. The matrix writes one run directory
//! per (test view, fold, mode) plus `runs.csv` and `summary.csv`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mkdt_core::data::{stratified_actor_folds, Dataset, SplitPlan};
use mkdt_core::eval::TeacherAccuracy;
use mkdt_core::matrix::{aggregate, execute_run, plan_runs, RunMode, RunResult, RunSpec, Summary};
use mkdt_core::report::ReportTable;
use mkdt_core::train::{LossRecord, TrainSink, Weights};
use mkdt_core::{Executor, Serial};
use rayon::prelude::*;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{csv_err, io, Error, Result};
use crate::exec::Rayon;
use crate::metrics::{Kind, MetricsWriter};

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub metrics: PathBuf,
    pub last_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    /// Checkpoints written over the run, one per epoch, before pruning.
    pub checkpoints_written: usize,
    /// Final student accuracy per held-out view.
    pub per_view: BTreeMap<u32, f64>,
    pub result: RunResult,
}

fn sink_err(e: impl std::fmt::Display) -> mkdt_core::Error {
    mkdt_core::Error::Sink(e.to_string())
}

/// Writes metrics lines and per-epoch checkpoints, keeping only the last and
/// the best one on disk.
struct ArtifactSink<'a> {
    dir: &'a Path,
    dataset: &'a Dataset,
    config: &'a ExperimentConfig,
    metrics: MetricsWriter<BufWriter<File>>,
    last: Option<PathBuf>,
    best: Option<PathBuf>,
    written: usize,
}

impl TrainSink for ArtifactSink<'_> {
    fn on_step(&mut self, record: &LossRecord) -> mkdt_core::Result<()> {
        self.metrics.write(Kind::Step, record).map_err(sink_err)
    }

    fn on_epoch(&mut self, record: &LossRecord, weights: &Weights, best: bool) -> mkdt_core::Result<()> {
        self.metrics.write(Kind::Epoch, record).map_err(sink_err)?;
        self.metrics.flush().map_err(sink_err)?;
        let path = self.dir.join(format!("epoch_{:03}.ckpt", record.epoch));
        Checkpoint {
            n_classes: self.dataset.n_classes(),
            view_ids: self.dataset.view_ids().to_vec(),
            backbone: self.config.backbone.clone(),
            epoch: record.epoch,
            teacher: weights.teacher.clone(),
            student: weights.student.clone(),
        }
        .save(&path)
        .map_err(sink_err)?;
        self.written += 1;
        let old = [self.last.replace(path.clone()), if best { self.best.replace(path) } else { None }];
        for p in old.into_iter().flatten() {
            if Some(&p) != self.last.as_ref() && Some(&p) != self.best.as_ref() && p.exists() {
                fs::remove_file(&p).map_err(sink_err)?;
            }
        }
        Ok(())
    }
}

fn teacher_json(t: &TeacherAccuracy) -> serde_json::Value {
    json!({"fused": t.fused, "per_view": t.per_view, "samples": t.samples})
}

/// Checks that `spec` names a valid split of `dataset` under `config`.
pub fn check_run(config: &ExperimentConfig, dataset: &Dataset, spec: &RunSpec) -> Result<()> {
    config.validate()?;
    config.check_dataset(dataset)?;
    let folds = stratified_actor_folds(dataset.actors(), config.matrix.k_folds, config.matrix.fold_seed)?;
    SplitPlan::new(dataset.view_ids(), spec.test_view, &folds, spec.fold)?;
    Ok(())
}

/// Trains one run into `dir`.
pub fn train_run<E: Executor>(
    config: &ExperimentConfig,
    dataset: &Dataset,
    spec: RunSpec,
    dir: &Path,
    exec: &E,
) -> Result<RunArtifacts> {
    check_run(config, dataset, &spec)?;
    fs::create_dir_all(dir).map_err(io(dir))?;
    let snapshot = ExperimentConfig { run: Some(spec), ..config.clone() };
    let config_path = dir.join("config.json");
    fs::write(&config_path, snapshot.to_json()).map_err(io(&config_path))?;
    let metrics_path = dir.join("metrics.ndjson");
    let file = File::create(&metrics_path).map_err(io(&metrics_path))?;
    let mut sink = ArtifactSink {
        dir,
        dataset,
        config,
        metrics: MetricsWriter::new(BufWriter::new(file)),
        last: None,
        best: None,
        written: 0,
    };
    let settings = config.settings();
    let result =
        execute_run(dataset, &settings, config.matrix.k_folds, config.matrix.fold_seed, spec, exec, &mut sink)?;
    sink.metrics.flush().map_err(io(&metrics_path))?;

    let per_view = BTreeMap::from([(spec.test_view, result.accuracy)]);
    let summary = json!({
        "run": spec.name(),
        "test_view": spec.test_view,
        "fold": spec.fold,
        "mode": spec.mode.as_str(),
        "accuracy": result.accuracy,
        "per_view": per_view,
        "best_epoch": result.best_epoch,
        "baseline_view": result.baseline_view,
        "teacher": result.teacher.as_ref().map(|t| json!({"train": teacher_json(&t.train), "val": teacher_json(&t.val)})),
    });
    let result_path = dir.join("result.json");
    fs::write(&result_path, serde_json::to_string_pretty(&summary).expect("json") + "\n").map_err(io(&result_path))?;

    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        config: config_path,
        metrics: metrics_path,
        last_checkpoint: sink.last.expect("at least one epoch"),
        best_checkpoint: sink.best.expect("at least one epoch"),
        checkpoints_written: sink.written,
        per_view,
        result,
    })
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub runs: Vec<(RunSpec, f64)>,
    pub summaries: Vec<Summary>,
    pub runs_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Runs every planned (test view, fold, mode) combination into
/// `config.out`. Runs execute concurrently unless `serial` is set; each run
/// stays deterministic either way. Fails after writing the CSVs of the
/// successful runs if any run failed.
pub fn run_matrix(config: &ExperimentConfig, dataset: &Dataset, serial: bool) -> Result<MatrixOutcome> {
    config.validate()?;
    config.check_dataset(dataset)?;
    let specs = plan_runs(dataset, config.matrix.k_folds, &config.matrix.modes, config.matrix.views.as_deref())?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(io(out))?;
    let one = |spec: &RunSpec| -> Result<RunArtifacts> {
        let dir = out.join(spec.name());
        if serial {
            train_run(config, dataset, *spec, &dir, &Serial)
        } else {
            train_run(config, dataset, *spec, &dir, &Rayon)
        }
    };
    let results: Vec<Result<RunArtifacts>> =
        if serial { specs.iter().map(one).collect() } else { specs.par_iter().map(one).collect() };

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (spec, r) in specs.iter().zip(results) {
        match r {
            Ok(a) => runs.push((*spec, a.result.accuracy)),
            Err(e) => failures.push(format!("{}: {e}", spec.name())),
        }
    }
    let runs_csv = out.join("runs.csv");
    write_runs_csv(&runs_csv, &runs)?;
    let rows: Vec<(u32, RunMode, f64)> = runs.iter().map(|(s, a)| (s.test_view, s.mode, *a)).collect();
    let summaries = aggregate(&rows);
    let summary_csv = out.join("summary.csv");
    write_summary_csv(&summary_csv, &summaries)?;
    if !failures.is_empty() {
        return Err(Error::Config(format!("{} run(s) failed:\n{}", failures.len(), failures.join("\n"))));
    }
    Ok(MatrixOutcome { runs, summaries, runs_csv, summary_csv })
}

pub fn write_runs_csv(path: &Path, runs: &[(RunSpec, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["view", "mode", "fold", "accuracy"]).map_err(csv_err(path))?;
    for (s, a) in runs {
        w.write_record([s.test_view.to_string(), s.mode.as_str().into(), s.fold.to_string(), a.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<(RunSpec, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers != vec!["view", "mode", "fold", "accuracy"] {
        return Err(crate::error::format_err(path, "expected header view,mode,fold,accuracy"));
    }
    let mut runs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let bad = |what: &str| crate::error::format_err(path, format!("row {}: bad {what}", i + 1));
        let spec = RunSpec {
            test_view: rec[0].parse().map_err(|_| bad("view"))?,
            mode: RunMode::parse(&rec[1]).map_err(|_| bad("mode"))?,
            fold: rec[2].parse().map_err(|_| bad("fold"))?,
        };
        runs.push((spec, rec[3].parse().map_err(|_| bad("accuracy"))?));
    }
    Ok(runs)
}

pub fn write_summary_csv(path: &Path, summaries: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["view", "mode", "mean", "std"]).map_err(csv_err(path))?;
    for s in summaries {
        w.write_record([s.view.to_string(), s.mode.as_str().into(), s.mean.to_string(), s.std.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io(path))
}

/// Single-view vs multi-view table of a matrix's runs, as text and CSV files
/// in `out`; returns the text.
pub fn write_report(out: &Path, runs: &[(RunSpec, f64)], dataset_label: &str) -> Result<String> {
    let rows: Vec<(u32, RunMode, f64)> = runs.iter().map(|(s, a)| (s.test_view, s.mode, *a)).collect();
    let table = ReportTable::from_summaries(
        "Testing accuracies (%) with single-view and multi-view training, mean ± std over folds",
        dataset_label,
        &aggregate(&rows),
    )?;
    let text = table.to_text()?;
    for (name, body) in [("report.txt", text.clone()), ("report.csv", table.to_csv()?)] {
        let p = out.join(name);
        fs::write(&p, body).map_err(io(&p))?;
    }
    Ok(text)
}
