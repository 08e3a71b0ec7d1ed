use oceantl::acoustics::TLField;
use oceantl::bathymetry::BathymetryProfile;
use oceantl::grid::GridSpec;
use oceantl::model::{ModelConfig, ModelState};
use oceantl::scenario::{build_task_datasets, DatasetConfig, FieldSolver, TaskConfig, TaskDataset};
use oceantl::trainer::{replay_train, run_sequence, train_task, LogSplit, ReplayBuffer, TrainSpec, TrainingLog};
use oceantl::Result;

/// Cheap stand-in for the ray oracle: spreading loss plus a term that
/// depends on the local water depth, so the mask matters.
struct Analytic(GridSpec);

impl FieldSolver for Analytic {
    fn grid(&self) -> GridSpec {
        self.0
    }

    fn solve(&self, bathy: &BathymetryProfile) -> Result<TLField> {
        let g = self.0;
        let mut f = TLField::filled(g, 0.0, 200.0);
        for i in 0..g.n_range {
            let r = (i as f64 + 1.0) / g.n_range as f64 * g.range_max;
            let h = bathy.depth_at(r);
            for j in 0..g.n_depth {
                let z = j as f64 / (g.n_depth - 1) as f64 * g.depth_max;
                let tl = if z > h { 200.0 } else { 10.0 * r.log10() + 30.0 * (z / h) + 5.0 * (3000.0 / h).ln() };
                f.set(i, j, tl as f32);
            }
        }
        Ok(f)
    }
}

fn grid() -> GridSpec {
    GridSpec {
        n_range: 32,
        n_depth: 32,
        ..GridSpec::desk()
    }
}

fn datasets(ids: &[(usize, u64)], count: usize) -> Vec<TaskDataset> {
    let tasks = ids
        .iter()
        .map(|&(id, seed)| {
            let mut t = TaskConfig::standard(id, seed).unwrap();
            t.count = count;
            t
        })
        .collect();
    let cfg = DatasetConfig {
        tasks,
        ..DatasetConfig::standard(0)
    };
    build_task_datasets(&cfg, &Analytic(grid())).unwrap()
}

fn tiny_state(seed: u64) -> ModelState {
    let cfg = ModelConfig {
        input_shape: grid().shape(),
        encoder_channels: vec![4, 8, 8, 8],
        latent_dim: 16,
        init_seed: seed,
        ..ModelConfig::default()
    };
    ModelState::new(cfg, seed).unwrap()
}

fn spec() -> TrainSpec {
    TrainSpec {
        epochs: 6,
        patience: 6,
        batch_size: 2,
        replay_epochs: 3,
        exemplars_per_task: 2,
        seed: 3,
        ..TrainSpec::default()
    }
}

#[test]
fn training_reduces_the_loss() {
    let data = datasets(&[(1, 1)], 8);
    let mut state = tiny_state(0);
    let mut log = TrainingLog::default();
    let s = TrainSpec { epochs: 15, patience: 15, ..spec() };
    train_task(&mut state, &data[0], &s, 0, &mut log).unwrap();
    let train = log.losses(0, LogSplit::Train);
    assert_eq!(train.len(), 15);
    assert!(train[14] < 0.5 * train[0], "{train:?}");
}

#[test]
fn early_stopping_keeps_the_best_validation_checkpoint() {
    let data = datasets(&[(1, 1)], 10);
    let mut state = tiny_state(0);
    let mut log = TrainingLog::default();
    let s = TrainSpec { epochs: 12, patience: 2, ..spec() };
    let best = train_task(&mut state, &data[0], &s, 0, &mut log).unwrap();
    let val = log.losses(0, LogSplit::Val);
    let min = val.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(best.val_loss, min);
    assert_eq!(val[best.epoch], min);
    assert!(best.epochs_run <= best.epoch + 3);
}

#[test]
fn zero_exemplars_is_plain_sequential_training() {
    let data = datasets(&[(1, 1), (2, 2), (4, 4)], 6);
    let s = TrainSpec { exemplars_per_task: 0, ..spec() };

    let mut with_replay_code = tiny_state(0);
    let log = run_sequence(&mut with_replay_code, &data, &s).unwrap();
    assert!(log.losses(1, LogSplit::Replay).is_empty());

    let mut plain = tiny_state(0);
    let mut plain_log = TrainingLog::default();
    for (stage, d) in data.iter().enumerate() {
        train_task(&mut plain, d, &s, stage, &mut plain_log).unwrap();
    }
    assert_eq!(with_replay_code.model, plain.model);
    assert_eq!(with_replay_code.optimizer, plain.optimizer);
    assert_eq!(log.entries, plain_log.entries);
}

#[test]
fn empty_buffer_replay_changes_nothing() {
    let data = datasets(&[(1, 1)], 6);
    let mut state = tiny_state(0);
    let mut log = TrainingLog::default();
    train_task(&mut state, &data[0], &spec(), 0, &mut log).unwrap();
    let before = (state.clone(), log.clone());
    replay_train(&mut state, &ReplayBuffer::default(), &data, &spec(), 1, &mut log).unwrap();
    assert_eq!(state.model, before.0.model);
    assert_eq!(state.step, before.0.step);
    assert_eq!(log, before.1);
}

#[test]
fn sequences_are_reproducible_and_replay_is_logged() {
    let data = datasets(&[(1, 1), (2, 2)], 6);
    let run = || {
        let mut state = tiny_state(7);
        let log = run_sequence(&mut state, &data, &spec()).unwrap();
        (state, log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(a.model, b.model);
    assert_eq!(la.matrix.len(), 2);
    assert_eq!(la.matrix[1].len(), 2);
    assert_eq!(la.losses(1, LogSplit::Replay).len(), 3);
    assert!(la.losses(0, LogSplit::Replay).is_empty());
}

#[test]
fn shifting_the_seamount_changes_the_prediction() {
    let data = datasets(&[(1, 1)], 8);
    let mut state = tiny_state(0);
    train_task(&mut state, &data[0], &spec(), 0, &mut TrainingLog::default()).unwrap();
    let mask = &data[0].samples[0].mask;
    let g = mask.grid;
    let k = 3;
    // move the profile k columns downrange, repeating the first column
    let shifted: Vec<u8> = (0..g.n_range)
        .flat_map(|i| {
            let src = i.saturating_sub(k);
            mask.values[src * g.n_depth..(src + 1) * g.n_depth].to_vec()
        })
        .collect();
    let shifted = oceantl::scenario::MaskGrid::new(g, shifted).unwrap();
    assert_ne!(shifted, *mask);
    let a = state.predict_tl(mask, 1, 200.0).unwrap();
    let b = state.predict_tl(&shifted, 1, 200.0).unwrap();
    let diff: f64 = a.values.iter().zip(&b.values).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt();
    assert!(diff > 0.0);
}
