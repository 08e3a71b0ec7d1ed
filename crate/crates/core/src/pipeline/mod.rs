//! Configuration, persistence and the end-to-end commands.
//!
//! Every command reads a [`PipelineConfig`] and writes below its
//! `output_dir`:
//!
//! ```text
//! dataset/   generate
//! solve/     solve
//! train/     train: stage_NN.{tlf,json}, model.tlf, progress.json, loss.csv, matrix.json
//! eval/      evaluate: report.json, transect CSVs
//! predict/   predict
//! ```

pub mod config;
pub mod render;
pub mod store;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};
use crate::metrics::{error_summary, transect, ErrorSummary};
use crate::model::ModelState;
use crate::scenario::{rasterize_mask, FieldSolver, SplitKind, TaskDataset};
use crate::tlf::{Container, Record};
use crate::trainer::{forgetting_report, predict_samples, run_sequence_from, ForgettingReport, SequenceProgress, TrainingLog};

pub use config::{EnvironmentConfig, EvalSpec, PipelineConfig};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "profile".into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub dataset_dir: PathBuf,
    /// (task id, sample count)
    pub tasks: Vec<(usize, usize)>,
    /// Contents of the checksum index.
    pub checksums: String,
}

/// Generates (or finishes generating) every configured task into
/// `output_dir/dataset`.
pub fn cmd_generate(cfg: &PipelineConfig) -> Result<GenerateReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.join("dataset");
    ensure_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let oracle = cfg.oracle()?;
    let (_, datasets) = store::generate_dataset(&dir, &cfg.dataset, &oracle, cfg.oracle.clip_db)?;
    let checksums = fs::read_to_string(dir.join(store::CHECKSUMS)).map_err(|e| Error::io(dir.join(store::CHECKSUMS), e))?;
    Ok(GenerateReport {
        dataset_dir: dir,
        tasks: datasets.iter().map(|d| (d.task_id, d.samples.len())).collect(),
        checksums,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldOutput {
    pub field_path: PathBuf,
    pub render_path: PathBuf,
    pub seconds: f64,
}

fn write_field_outputs(dir: &Path, name: &str, field: &crate::acoustics::TLField, mask: &crate::scenario::MaskGrid, seconds: f64) -> Result<FieldOutput> {
    ensure_dir(dir)?;
    let field_path = dir.join(format!("{name}.tlf"));
    let render_path = dir.join(format!("{name}.pgm"));
    let mut c = Container::new();
    c.push(Record::field("field", field));
    c.push(Record::mask("mask", mask));
    c.write(&field_path)?;
    render::write_pgm(&render_path, field)?;
    Ok(FieldOutput {
        field_path,
        render_path,
        seconds,
    })
}

/// One oracle solve for a bathymetry CSV of `range_m,depth_m` knots.
pub fn cmd_solve(cfg: &PipelineConfig, bathy_csv: &Path) -> Result<FieldOutput> {
    cfg.validate()?;
    let bathy = BathymetryProfile::from_csv_path(bathy_csv, cfg.grid.range_max, cfg.grid.depth_max)?;
    let mask = rasterize_mask(&bathy, &cfg.grid)?;
    let oracle = cfg.oracle()?;
    let start = Instant::now();
    let field = oracle.solve(&bathy)?;
    let seconds = start.elapsed().as_secs_f64();
    write_field_outputs(&cfg.output_dir.join("solve"), &stem(bathy_csv), &field, &mask, seconds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_dir: PathBuf,
    pub resumed_from_stage: usize,
    pub log: TrainingLog,
    pub forgetting: ForgettingReport,
}

pub const PROGRESS: &str = "progress.json";

pub fn stage_checkpoint(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage:02}.tlf"))
}

/// Progress as of the end of `stage`; `progress.json` is a copy of the latest.
pub fn stage_progress(dir: &Path, stage: usize) -> PathBuf {
    dir.join(format!("stage_{stage:02}.json"))
}

/// Runs the task sequence over a generated dataset, checkpointing after
/// every stage. A rerun picks up after the last completed stage.
pub fn cmd_train(cfg: &PipelineConfig, dataset_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let (_, datasets) = store::load_dataset(dataset_dir)?;
    let dir = cfg.output_dir.join("train");
    ensure_dir(&dir)?;
    let progress_path = dir.join(PROGRESS);
    let (mut state, progress) = if progress_path.exists() {
        let progress: SequenceProgress = store::read_json(&progress_path)?;
        let state = ModelState::load(&stage_checkpoint(&dir, progress.stages_done))?;
        (state, progress)
    } else {
        (ModelState::new(cfg.model.clone(), cfg.train.seed)?, SequenceProgress::default())
    };
    if state.model.config != cfg.model {
        return Err(Error::Config(format!("{} holds a checkpoint with a different model config", dir.display())));
    }
    let resumed_from_stage = progress.stages_done;
    let flush = |state: &ModelState, p: &SequenceProgress| -> Result<()> {
        state.save(&stage_checkpoint(&dir, p.stages_done))?;
        write_json(&stage_progress(&dir, p.stages_done), p)?;
        write_json(&progress_path, p)?;
        write_text(&dir.join("loss.csv"), &p.log.loss_csv())?;
        write_json(&dir.join("matrix.json"), &forgetting_report(&p.log))
    };
    let progress = match run_sequence_from(&mut state, &datasets, &cfg.train, progress, flush) {
        Ok(p) => p,
        Err(e) => {
            // best effort: the original error matters more than this write
            let _ = state.save(&dir.join("diagnostic.tlf"));
            return Err(e);
        }
    };
    state.save(&dir.join("model.tlf"))?;
    Ok(TrainReport {
        train_dir: dir,
        resumed_from_stage,
        forgetting: forgetting_report(&progress.log),
        log: progress.log,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEvaluation {
    pub task_id: usize,
    pub test_ssim: f64,
    pub test_ssim_water: f64,
    pub train_ssim: f64,
    pub mean_abs_db: f64,
    pub rmse_db: f64,
    pub p95_abs_db: f64,
    pub samples: Vec<ErrorSummary>,
    pub transect_files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub fields: usize,
    pub inference_seconds_per_field: f64,
    pub oracle_seconds_per_field: f64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: Vec<TaskEvaluation>,
    pub mean_test_ssim: f64,
    pub timing: Option<TimingReport>,
}

fn split_summaries(state: &ModelState, ds: &TaskDataset, kind: SplitKind, cfg: &PipelineConfig) -> Result<Vec<(usize, crate::acoustics::TLField, ErrorSummary)>> {
    let idx = ds.indices(kind);
    let preds = predict_samples(state, ds, idx, cfg.oracle.clip_db)?;
    idx.iter()
        .zip(preds)
        .map(|(&i, p)| {
            let s = &ds.samples[i];
            let summary = error_summary(&p, &s.field, &s.mask, &cfg.eval.ssim)?;
            Ok((i, p, summary))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Scores a checkpoint on the test split of every task it has statistics
/// for, writes transects and times single-shot inference.
pub fn cmd_evaluate(cfg: &PipelineConfig, checkpoint: &Path, dataset_dir: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let state = ModelState::load(checkpoint)?;
    let (_, datasets) = store::load_dataset(dataset_dir)?;
    let dir = cfg.output_dir.join("eval");
    ensure_dir(&dir)?;
    let mut tasks = Vec::new();
    for ds in datasets.iter().filter(|d| state.norm_stats.contains_key(&d.task_id)) {
        let test = split_summaries(&state, ds, SplitKind::Test, cfg)?;
        let train = split_summaries(&state, ds, SplitKind::Train, cfg)?;
        let mut transect_files = Vec::new();
        if let Some((i, pred, _)) = test.first() {
            for &depth in &cfg.eval.probe_depths {
                let t = transect(pred, &ds.samples[*i].field, depth)?;
                let path = dir.join(format!("transect_task{:02}_sample{:04}_{}m.csv", ds.task_id, i, depth.round()));
                write_text(&path, &render::transect_csv(&t))?;
                transect_files.push(path);
            }
        }
        tasks.push(TaskEvaluation {
            task_id: ds.task_id,
            test_ssim: mean(test.iter().map(|t| t.2.ssim)),
            test_ssim_water: mean(test.iter().map(|t| t.2.ssim_water)),
            train_ssim: mean(train.iter().map(|t| t.2.ssim)),
            mean_abs_db: mean(test.iter().map(|t| t.2.mean_abs_db)),
            rmse_db: mean(test.iter().map(|t| t.2.rmse_db)),
            p95_abs_db: mean(test.iter().map(|t| t.2.p95_abs_db)),
            samples: test.into_iter().map(|t| t.2).collect(),
            transect_files,
        });
    }
    let timing = time_inference(&state, &datasets, cfg.eval.timing_fields, cfg.oracle.clip_db)?;
    let report = EvalReport {
        mean_test_ssim: mean(tasks.iter().map(|t| t.test_ssim)),
        tasks,
        timing,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Wall-clock single-field inference over up to `n` masks (test splits
/// first) against the oracle time recorded when those fields were generated.
pub fn time_inference(state: &ModelState, datasets: &[TaskDataset], n: usize, clip_db: f64) -> Result<Option<TimingReport>> {
    let picks: Vec<(&TaskDataset, usize)> = datasets
        .iter()
        .filter(|d| state.norm_stats.contains_key(&d.task_id))
        .flat_map(|d| d.indices(SplitKind::Test).iter().map(move |&i| (d, i)))
        .chain(datasets.iter().filter(|d| state.norm_stats.contains_key(&d.task_id)).flat_map(|d| {
            [SplitKind::Val, SplitKind::Train].into_iter().flat_map(move |k| d.indices(k).iter().map(move |&i| (d, i)))
        }))
        .take(n)
        .collect();
    if picks.is_empty() {
        return Ok(None);
    }
    let start = Instant::now();
    for (d, i) in &picks {
        state.predict_tl(&d.samples[*i].mask, d.task_id, clip_db)?;
    }
    let inference = start.elapsed().as_secs_f64() / picks.len() as f64;
    let oracle = mean(picks.iter().map(|(d, i)| d.samples[*i].solve_seconds));
    Ok(Some(TimingReport {
        fields: picks.len(),
        inference_seconds_per_field: inference,
        oracle_seconds_per_field: oracle,
        speedup: oracle / inference,
    }))
}

/// Single-shot prediction for a bathymetry CSV. Uses the statistics of
/// `task_id`, or of the lowest task id in the checkpoint.
pub fn cmd_predict(cfg: &PipelineConfig, checkpoint: &Path, bathy_csv: &Path, task_id: Option<usize>) -> Result<FieldOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let state = ModelState::load(checkpoint)?;
    let grid_shape = state.model.config.input_shape;
    if grid_shape != cfg.grid.shape() {
        return Err(Error::Config(format!("checkpoint expects a {grid_shape:?} grid, config has {:?}", cfg.grid.shape())));
    }
    let task = match task_id {
        Some(t) => t,
        None => *state.norm_stats.keys().next().ok_or_else(|| Error::Config("checkpoint has no normalization statistics".into()))?,
    };
    let bathy = BathymetryProfile::from_csv_path(bathy_csv, cfg.grid.range_max, cfg.grid.depth_max)?;
    let mask = rasterize_mask(&bathy, &cfg.grid)?;
    let field = state.predict_tl(&mask, task, cfg.oracle.clip_db)?;
    let seconds = start.elapsed().as_secs_f64();
    write_field_outputs(&cfg.output_dir.join("predict"), &stem(bathy_csv), &field, &mask, seconds)
}
