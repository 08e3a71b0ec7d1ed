//! Sequential task training with early stopping and exemplar replay.
//!
//! For each task in order: train on it with early stopping on its validation
//! split, then add a random exemplar set of the *previous* task to the replay
//! buffer, retrain on the buffer, and score every task seen so far on its test
//! split.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustics::TLField;
use crate::error::{Error, Result};
use crate::metrics::{ssim, SsimConfig};
use crate::model::{masks_to_tensor, ModelState, RcCan};
use crate::scenario::{normalize, sample_seed, NormStats, Sample, SplitKind, TaskDataset};
use crate::tensor::{mse_loss, AdamW, AdamWConfig, LrSchedule, Tensor4};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub replay_epochs: usize,
    /// Exemplars kept per task; 0 disables replay.
    pub exemplars_per_task: usize,
    pub seed: u64,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    /// Start each task and each replay phase with fresh optimizer moments.
    pub reset_optimizer: bool,
    pub ssim: SsimConfig,
    pub clip_db: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 200,
            patience: 100,
            batch_size: 4,
            replay_epochs: 50,
            exemplars_per_task: 8,
            seed: 0,
            schedule: LrSchedule::default(),
            optimizer: AdamWConfig::default(),
            reset_optimizer: false,
            ssim: SsimConfig::default(),
            clip_db: 200.0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs, patience and batch size must be at least 1".into()));
        }
        self.schedule.validate()?;
        self.optimizer.validate()?;
        self.ssim.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogSplit {
    Train,
    Val,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub stage: usize,
    pub task: usize,
    pub epoch: usize,
    pub split: LogSplit,
    pub loss: f64,
}

/// Epoch whose checkpoint was kept for a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub stage: usize,
    pub task: usize,
    pub epoch: usize,
    pub val_loss: f64,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub entries: Vec<LossEntry>,
    pub best: Vec<BestCheckpoint>,
    /// Task ids in sequence order.
    pub tasks: Vec<usize>,
    /// `matrix[s][j]`: mean test SSIM of task `j` after stage `s`, for `j <= s`.
    pub matrix: Vec<Vec<f64>>,
}

impl TrainingLog {
    /// `stage,task,epoch,split,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("stage,task,epoch,split,loss\n");
        for e in &self.entries {
            let split = match e.split {
                LogSplit::Train => "train",
                LogSplit::Val => "val",
                LogSplit::Replay => "replay",
            };
            let _ = writeln!(out, "{},{},{},{},{:e}", e.stage, e.task, e.epoch, split, e.loss);
        }
        out
    }

    pub fn losses(&self, stage: usize, split: LogSplit) -> Vec<f64> {
        self.entries.iter().filter(|e| e.stage == stage && e.split == split).map(|e| e.loss).collect()
    }
}

/// Per-task forgetting: best SSIM seen on the task at any stage minus its
/// SSIM after the last stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub tasks: Vec<usize>,
    pub forgetting: Vec<f64>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn forgetting_report(log: &TrainingLog) -> ForgettingReport {
    let n = log.matrix.len();
    let forgetting = (0..n)
        .map(|j| {
            let best = (j..n).map(|s| log.matrix[s][j]).fold(f64::NEG_INFINITY, f64::max);
            (best - log.matrix[n - 1][j]).max(0.0)
        })
        .collect();
    ForgettingReport {
        tasks: log.tasks[..n].to_vec(),
        forgetting,
        matrix: log.matrix.clone(),
    }
}

/// Early-stopping bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: Option<usize>,
    pub counter: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            counter: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.counter = 0;
            StopDecision::Improved
        } else {
            self.counter += 1;
            if self.counter >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// A training sample pointer: task id and index into that task's samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub task: usize,
    pub sample: usize,
}

/// Uniform sample without replacement of `min(m, |train|)` training items.
pub fn construct_exemplar_set(dataset: &TaskDataset, m: usize, seed: u64) -> Vec<Exemplar> {
    let train = dataset.indices(SplitKind::Train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::index::sample(&mut rng, train.len(), m.min(train.len()))
        .into_iter()
        .map(|k| Exemplar {
            task: dataset.task_id,
            sample: train[k],
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    /// One exemplar set per earlier task, in sequence order.
    pub sets: Vec<Vec<Exemplar>>,
}

impl ReplayBuffer {
    /// Concatenation of the given sets.
    pub fn from_sets(sets: Vec<Vec<Exemplar>>) -> Self {
        ReplayBuffer { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn items(&self) -> impl Iterator<Item = &Exemplar> {
        self.sets.iter().flatten()
    }

    pub fn task_tags(&self) -> Vec<usize> {
        let mut tags: Vec<usize> = self.items().map(|e| e.task).collect();
        tags.dedup();
        tags
    }
}

fn seed_for(seed: u64, stage: usize, purpose: usize) -> u64 {
    sample_seed(sample_seed(seed, stage), purpose)
}

const SHUFFLE: usize = 0;
const EXEMPLARS: usize = 1;
const REPLAY: usize = 2;

fn find_task<'a>(tasks: &'a [TaskDataset], id: usize) -> Result<&'a TaskDataset> {
    tasks
        .iter()
        .find(|t| t.task_id == id)
        .ok_or_else(|| Error::Config(format!("replay buffer refers to unknown task {id}")))
}

/// Normalized training pair ready for batching.
struct Item<'a> {
    sample: &'a Sample,
    target: Vec<f32>,
}

fn item<'a>(sample: &'a Sample, stats: &NormStats) -> Result<Item<'a>> {
    let target = normalize(&sample.field, stats)?.into_iter().map(|v| v as f32).collect();
    Ok(Item { sample, target })
}

fn batch_tensors(items: &[&Item]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let masks: Vec<_> = items.iter().map(|i| &i.sample.mask).collect();
    let x = masks_to_tensor::<f32>(&masks)?;
    let mut t = Vec::with_capacity(x.len());
    for i in items {
        t.extend_from_slice(&i.target);
    }
    let y = Tensor4::from_vec(x.shape, t)?;
    Ok((x, y))
}

/// Creates optimizer moments if there are none or the hyperparameters changed.
fn ensure_optimizer(state: &mut ModelState, spec: &TrainSpec) -> Result<()> {
    if state.optimizer.as_ref().is_none_or(|o| o.config != spec.optimizer) {
        state.optimizer = Some(AdamW::new(spec.optimizer, &state.model.params())?);
    }
    Ok(())
}

/// One pass over `items` in shuffled mini-batches; returns the mean loss.
fn run_epoch(state: &mut ModelState, items: &[Item], spec: &TrainSpec, rng: &mut ChaCha8Rng, epoch: usize, what: &str) -> Result<f64> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let batches: Vec<&[usize]> = order.chunks(spec.batch_size).collect();
    let mut total = 0.0;
    for (b, idx) in batches.iter().enumerate() {
        let group: Vec<&Item> = idx.iter().map(|&i| &items[i]).collect();
        let (x, y) = batch_tensors(&group)?;
        state.model.zero_grad();
        let loss = state.model.loss_and_grad(&x, &y)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite {what} loss at epoch {epoch}, batch {b}")));
        }
        let lr = spec.schedule.lr(epoch as f64 + b as f64 / batches.len() as f64);
        ensure_optimizer(state, spec)?;
        let ModelState { model, optimizer, .. } = state;
        let opt = optimizer.as_mut().expect("optimizer exists");
        opt.step(&mut model.params_mut(), lr)?;
        state.step += 1;
        total += loss * idx.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Eval-mode loss over `items`.
fn eval_loss(model: &RcCan<f32>, items: &[Item], batch: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in items.chunks(batch.max(1)) {
        let group: Vec<&Item> = chunk.iter().collect();
        let (x, y) = batch_tensors(&group)?;
        let pred = model.forward(&x)?;
        total += mse_loss(&pred, &y)?.0 * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Trains on one task with early stopping and leaves `state` at the
/// checkpoint with the lowest validation loss.
pub fn train_task(state: &mut ModelState, dataset: &TaskDataset, spec: &TrainSpec, stage: usize, log: &mut TrainingLog) -> Result<BestCheckpoint> {
    spec.validate()?;
    if dataset.samples.is_empty() {
        return Err(Error::Config(format!("task {} has no samples", dataset.task_id)));
    }
    let grid = dataset.grid();
    if grid.shape() != state.model.config.input_shape {
        return Err(Error::shape("dataset grid vs model input", &grid.shape(), &state.model.config.input_shape));
    }
    state.norm_stats.insert(dataset.task_id, dataset.norm);
    if spec.reset_optimizer {
        state.optimizer = None;
    }
    let build = |kind| -> Result<Vec<Item>> { dataset.indices(kind).iter().map(|&i| item(&dataset.samples[i], &dataset.norm)).collect() };
    let train = build(SplitKind::Train)?;
    let val = build(SplitKind::Val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(spec.seed, stage, SHUFFLE));
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut best_model = state.model.clone();
    let mut epochs_run = 0;
    for epoch in 0..spec.epochs {
        let train_loss = run_epoch(state, &train, spec, &mut rng, epoch, "training")?;
        let val_loss = if val.is_empty() { eval_loss(&state.model, &train, spec.batch_size)? } else { eval_loss(&state.model, &val, spec.batch_size)? };
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss on task {} at epoch {epoch}", dataset.task_id)));
        }
        for (split, loss) in [(LogSplit::Train, train_loss), (LogSplit::Val, val_loss)] {
            log.entries.push(LossEntry {
                stage,
                task: dataset.task_id,
                epoch,
                split,
                loss,
            });
        }
        epochs_run = epoch + 1;
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best_model = state.model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    state.model = best_model;
    let best = BestCheckpoint {
        stage,
        task: dataset.task_id,
        epoch: stopper.best_epoch.unwrap_or(0),
        val_loss: stopper.best,
        epochs_run,
    };
    log.best.push(best.clone());
    Ok(best)
}

/// `N_replay` epochs over the buffer. Each exemplar is normalized with its
/// own task's statistics. An empty buffer leaves `state` untouched.
pub fn replay_train(state: &mut ModelState, buffer: &ReplayBuffer, tasks: &[TaskDataset], spec: &TrainSpec, stage: usize, log: &mut TrainingLog) -> Result<()> {
    if buffer.is_empty() || spec.replay_epochs == 0 {
        return Ok(());
    }
    spec.validate()?;
    let items = buffer
        .items()
        .map(|e| {
            let task = find_task(tasks, e.task)?;
            let sample = task
                .samples
                .get(e.sample)
                .ok_or_else(|| Error::Config(format!("exemplar {} out of range for task {}", e.sample, e.task)))?;
            item(sample, state.stats(e.task)?)
        })
        .collect::<Result<Vec<_>>>()?;
    if spec.reset_optimizer {
        state.optimizer = None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(spec.seed, stage, REPLAY));
    let task = log.tasks.get(stage).copied().unwrap_or(usize::MAX);
    for epoch in 0..spec.replay_epochs {
        let loss = run_epoch(state, &items, spec, &mut rng, epoch, "replay")?;
        log.entries.push(LossEntry {
            stage,
            task,
            epoch,
            split: LogSplit::Replay,
            loss,
        });
    }
    Ok(())
}

/// Predicted fields for the given samples of a task.
pub fn predict_samples(state: &ModelState, dataset: &TaskDataset, indices: &[usize], clip_db: f64) -> Result<Vec<TLField>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(8) {
        let masks: Vec<_> = chunk.iter().map(|&i| &dataset.samples[i].mask).collect();
        out.extend(state.predict_batch(&masks, dataset.task_id, clip_db)?);
    }
    Ok(out)
}

/// Mean SSIM of predictions against ground truth over a split.
pub fn split_ssim(state: &ModelState, dataset: &TaskDataset, kind: SplitKind, spec: &TrainSpec) -> Result<f64> {
    let idx = dataset.indices(kind);
    if idx.is_empty() {
        return Err(Error::Config(format!("task {} has an empty {kind:?} split", dataset.task_id)));
    }
    let preds = predict_samples(state, dataset, idx, spec.clip_db)?;
    let mut total = 0.0;
    for (p, &i) in preds.iter().zip(idx) {
        total += ssim(p, &dataset.samples[i].field, &spec.ssim)?;
    }
    Ok(total / idx.len() as f64)
}

/// Where a (possibly resumed) sequence stands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceProgress {
    pub stages_done: usize,
    pub buffer: ReplayBuffer,
    pub log: TrainingLog,
}

/// Runs every remaining stage. `on_stage` is called after each stage with
/// the updated model and progress, e.g. to write a checkpoint.
pub fn run_sequence_from(
    state: &mut ModelState,
    tasks: &[TaskDataset],
    spec: &TrainSpec,
    mut progress: SequenceProgress,
    mut on_stage: impl FnMut(&ModelState, &SequenceProgress) -> Result<()>,
) -> Result<SequenceProgress> {
    spec.validate()?;
    progress.log.tasks = tasks.iter().map(|t| t.task_id).collect();
    for stage in progress.stages_done..tasks.len() {
        train_task(state, &tasks[stage], spec, stage, &mut progress.log)?;
        if stage > 0 && spec.exemplars_per_task > 0 {
            let prev = &tasks[stage - 1];
            let set = construct_exemplar_set(prev, spec.exemplars_per_task, seed_for(spec.seed, stage, EXEMPLARS));
            progress.buffer.sets.push(set);
        }
        replay_train(state, &progress.buffer, tasks, spec, stage, &mut progress.log)?;
        let row = tasks[..=stage].iter().map(|t| split_ssim(state, t, SplitKind::Test, spec)).collect::<Result<Vec<_>>>()?;
        progress.log.matrix.push(row);
        progress.stages_done = stage + 1;
        on_stage(state, &progress)?;
    }
    Ok(progress)
}

pub fn run_sequence(state: &mut ModelState, tasks: &[TaskDataset], spec: &TrainSpec) -> Result<TrainingLog> {
    Ok(run_sequence_from(state, tasks, spec, SequenceProgress::default(), |_, _| Ok(()))?.log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_counter_semantics() {
        let mut s = EarlyStopping::new(2);
        let losses = [1.0, 0.9, 0.95, 0.96, 0.5];
        let mut stopped_at = None;
        for (e, &l) in losses.iter().enumerate() {
            if s.observe(e, l) == StopDecision::Stop {
                stopped_at = Some(e);
                break;
            }
        }
        assert_eq!(stopped_at, Some(3));
        assert_eq!(s.best_epoch, Some(1));
        assert_eq!(s.best, 0.9);
    }

    #[test]
    fn forgetting_of_single_task_is_zero() {
        let log = TrainingLog {
            tasks: vec![1],
            matrix: vec![vec![0.8]],
            ..Default::default()
        };
        assert_eq!(forgetting_report(&log).forgetting, vec![0.0]);
        let log = TrainingLog {
            tasks: vec![1, 2, 3],
            matrix: vec![vec![0.8], vec![0.9, 0.7], vec![0.6, 0.75, 0.8]],
            ..Default::default()
        };
        let f = forgetting_report(&log).forgetting;
        assert!((f[0] - 0.3).abs() < 1e-12 && f[1] == 0.0 && f[2] == 0.0);
    }

    #[test]
    fn loss_csv_header() {
        let mut log = TrainingLog::default();
        log.entries.push(LossEntry {
            stage: 0,
            task: 1,
            epoch: 2,
            split: LogSplit::Val,
            loss: 0.5,
        });
        assert_eq!(log.loss_csv(), "stage,task,epoch,split,loss\n0,1,2,val,5e-1\n");
    }
}
