//! Task datasets: (mask, field) pairs per bathymetry family, their splits and
//! normalization statistics.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustics::{compute_tl_field, discretize_profile, LayeredMedium, OracleConfig, SoundSpeedProfile, SourceSpec, TLField};
use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

use super::families::{draw_specs, Family, FamilyBounds, ScenarioSpec};
use super::mask::{rasterize_mask, MaskGrid};

/// Mean and standard deviation (dB) used to standardize fields.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Population statistics over every cell of `fields`.
    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a TLField>) -> Result<Self> {
        let (mut n, mut sum) = (0usize, 0.0f64);
        let fields: Vec<&TLField> = fields.into_iter().collect();
        for f in &fields {
            n += f.values.len();
            sum += f.values.iter().map(|&v| v as f64).sum::<f64>();
        }
        if n == 0 {
            return Err(Error::Config("cannot compute statistics of an empty set".into()));
        }
        let mean = sum / n as f64;
        let var = fields
            .iter()
            .flat_map(|f| f.values.iter())
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        let stats = NormStats { mean, std: var.sqrt() };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.std > 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(Error::Config(format!(
                "degenerate normalization (mean {}, std {})",
                self.mean, self.std
            )));
        }
        Ok(())
    }
}

/// (TL - mean) / std, cell by cell.
pub fn normalize(field: &TLField, stats: &NormStats) -> Result<Vec<f64>> {
    stats.validate()?;
    Ok(field.values.iter().map(|&v| (v as f64 - stats.mean) / stats.std).collect())
}

/// Inverse of [`normalize`].
pub fn denormalize(values: &[f64], grid: &GridSpec, stats: &NormStats, clip_db: f64) -> Result<TLField> {
    stats.validate()?;
    let out = values.iter().map(|&v| (v * stats.std + stats.mean) as f32).collect();
    TLField::new(*grid, out, clip_db)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(0.0..=1.0).contains(f)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.train <= 0.0 {
            return Err(Error::Config(format!("split fractions {all:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

/// Sample indices of each split, each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded random partition of `0..n`. When `n >= 3` and a fraction is
    /// positive, validation and test get at least one sample each.
    pub fn random(n: usize, fractions: &SplitFractions, seed: u64) -> Result<Self> {
        fractions.validate()?;
        if n == 0 {
            return Err(Error::Config("cannot split an empty dataset".into()));
        }
        let mut n_val = (fractions.val * n as f64).round() as usize;
        let mut n_test = (fractions.test * n as f64).round() as usize;
        if n >= 3 {
            if fractions.val > 0.0 {
                n_val = n_val.max(1);
            }
            if fractions.test > 0.0 {
                n_test = n_test.max(1);
            }
        }
        while n_val + n_test >= n {
            if n_test >= n_val && n_test > 0 {
                n_test -= 1;
            } else {
                n_val -= 1;
            }
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5151_7E57_0000_0001));
        let mut val = idx[..n_val].to_vec();
        let mut test = idx[n_val..n_val + n_test].to_vec();
        let mut train = idx[n_val + n_test..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Ok(Split { train, val, test })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every index below `n` appears in exactly one split.
    pub fn is_partition_of(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub spec: ScenarioSpec,
    pub mask: MaskGrid,
    pub field: TLField,
    /// Wall-clock seconds the oracle spent on this field.
    pub solve_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset {
    pub task_id: usize,
    pub family: Family,
    pub samples: Vec<Sample>,
    pub split: Split,
    /// Statistics of the training split.
    pub norm: NormStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl TaskDataset {
    pub fn new(task_id: usize, family: Family, samples: Vec<Sample>, split: Split) -> Result<Self> {
        if !split.is_partition_of(samples.len()) {
            return Err(Error::Config(format!("task {task_id}: split is not a partition of {} samples", samples.len())));
        }
        if split.train.is_empty() {
            return Err(Error::Config(format!("task {task_id}: empty training split")));
        }
        let norm = NormStats::from_fields(split.train.iter().map(|&i| &samples[i].field))?;
        Ok(TaskDataset {
            task_id,
            family,
            samples,
            split,
            norm,
        })
    }

    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.split.train,
            SplitKind::Val => &self.split.val,
            SplitKind::Test => &self.split.test,
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.samples[0].field.grid
    }
}

/// Anything that turns a bottom profile into a ground-truth field.
pub trait FieldSolver: Sync {
    fn grid(&self) -> GridSpec;
    fn solve(&self, bathy: &BathymetryProfile) -> Result<TLField>;
}

/// The layered ray/beam solver for a fixed environment and source.
#[derive(Clone, Debug)]
pub struct RayOracle {
    pub medium: LayeredMedium,
    pub source: SourceSpec,
    pub grid: GridSpec,
    pub config: OracleConfig,
}

impl RayOracle {
    pub fn new(profile: &SoundSpeedProfile, n_layers: usize, source: SourceSpec, grid: GridSpec, config: OracleConfig) -> Result<Self> {
        let medium = discretize_profile(profile, grid.depth_max, n_layers)?;
        Ok(RayOracle {
            medium,
            source,
            grid,
            config,
        })
    }
}

impl FieldSolver for RayOracle {
    fn grid(&self) -> GridSpec {
        self.grid
    }

    fn solve(&self, bathy: &BathymetryProfile) -> Result<TLField> {
        compute_tl_field(&self.medium, bathy, &self.source, &self.grid, &self.config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub task_id: usize,
    pub family: Family,
    pub count: usize,
    pub seed: u64,
    /// Overrides the dataset-wide bounds for this task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<FamilyBounds>,
}

impl TaskConfig {
    /// Task `D_i` with its default family and count.
    pub fn standard(task_id: usize, seed: u64) -> Result<Self> {
        let family = Family::for_task(task_id).ok_or_else(|| Error::Config(format!("no standard task {task_id}")))?;
        Ok(TaskConfig {
            task_id,
            family,
            count: family.default_count(),
            seed,
            bounds: None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub bounds: FamilyBounds,
}

impl DatasetConfig {
    /// D1..D7 with the default counts; task `i` uses seed `seed + i`.
    pub fn standard(seed: u64) -> Self {
        DatasetConfig {
            tasks: (1..=7).map(|i| TaskConfig::standard(i, seed.wrapping_add(i as u64)).unwrap()).collect(),
            split: SplitFractions::default(),
            bounds: FamilyBounds::default(),
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.split.validate()?;
        self.bounds.validate(grid.depth_max)?;
        for t in &self.tasks {
            if t.count == 0 {
                return Err(Error::Config(format!("task {} has no samples", t.task_id)));
            }
            if t.family == Family::External {
                return Err(Error::Config("external profiles are solved one at a time, not as a task".into()));
            }
            if let Some(b) = &t.bounds {
                b.validate(grid.depth_max)?;
            }
        }
        Ok(())
    }

    /// The specs of every task, in config order.
    pub fn specs(&self, grid: &GridSpec) -> Result<Vec<Vec<ScenarioSpec>>> {
        self.tasks
            .iter()
            .map(|t| draw_specs(t.family, t.bounds.as_ref().unwrap_or(&self.bounds), grid.range_max, t.count, t.seed))
            .collect()
    }
}

/// Rasterizes and solves one spec.
pub fn solve_spec(spec: &ScenarioSpec, solver: &dyn FieldSolver) -> Result<Sample> {
    let wrap = |e: Error| Error::Scenario {
        spec: serde_json::to_string(spec).unwrap_or_else(|_| format!("{spec:?}")),
        source: Box::new(e),
    };
    let grid = solver.grid();
    let bathy = spec.profile(grid.range_max, grid.depth_max).map_err(wrap)?;
    let mask = rasterize_mask(&bathy, &grid).map_err(wrap)?;
    let start = Instant::now();
    let field = solver.solve(&bathy).map_err(wrap)?;
    let solve_seconds = start.elapsed().as_secs_f64();
    Ok(Sample {
        spec: spec.clone(),
        mask,
        field,
        solve_seconds,
    })
}

/// Generates every configured task. Samples are solved in parallel; the
/// output order is the config order.
pub fn build_task_datasets(config: &DatasetConfig, solver: &dyn FieldSolver) -> Result<Vec<TaskDataset>> {
    let grid = solver.grid();
    config.validate(&grid)?;
    let specs = config.specs(&grid)?;
    let jobs: Vec<(usize, &ScenarioSpec)> = specs
        .iter()
        .enumerate()
        .flat_map(|(t, list)| list.iter().map(move |s| (t, s)))
        .collect();
    let solved: Vec<Sample> = jobs
        .par_iter()
        .map(|(_, spec)| solve_spec(spec, solver))
        .collect::<Result<_>>()?;
    let mut solved = solved.into_iter();
    config
        .tasks
        .iter()
        .map(|t| {
            let samples: Vec<Sample> = solved.by_ref().take(t.count).collect();
            let split = Split::random(samples.len(), &config.split, t.seed)?;
            TaskDataset::new(t.task_id, t.family, samples, split)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: Vec<f32>) -> TLField {
        let grid = GridSpec {
            n_range: values.len(),
            n_depth: 1,
            range_max: 1.0,
            depth_max: 1.0,
        };
        TLField::new(grid, values, 200.0).unwrap()
    }

    #[test]
    fn constant_field_has_no_statistics() {
        let f = field(vec![50.0; 6]);
        assert!(matches!(NormStats::from_fields([&f]), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_is_exact_to_a_microdecibel() {
        let f = field(vec![31.5, 77.25, 200.0, 64.125, 99.0]);
        let stats = NormStats::from_fields([&f]).unwrap();
        let z = normalize(&f, &stats).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);
        let back = denormalize(&z, &f.grid, &stats, 200.0).unwrap();
        for (a, b) in back.values.iter().zip(&f.values) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn splits_partition() {
        for n in 1..60 {
            let s = Split::random(n, &SplitFractions::default(), n as u64).unwrap();
            assert!(s.is_partition_of(n));
            assert!(!s.train.is_empty());
            if n >= 3 {
                assert!(!s.val.is_empty() && !s.test.is_empty());
            }
        }
        let s = Split::random(40, &SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (32, 4, 4));
        assert_eq!(s, Split::random(40, &SplitFractions::default(), 1).unwrap());
    }

    #[test]
    fn standard_config_counts() {
        let cfg = DatasetConfig::standard(0);
        let specs = cfg.specs(&GridSpec::desk()).unwrap();
        let counts: Vec<usize> = specs.iter().map(|s| s.len()).collect();
        assert_eq!(counts, vec![75, 35, 30, 20, 20, 20, 10]);
    }
}
