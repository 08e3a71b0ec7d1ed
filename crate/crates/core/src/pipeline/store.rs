//! On-disk dataset layout.
//!
//! ```text
//! <dir>/manifest.json          grid, specs, seeds, splits, norm stats, completion flags
//! <dir>/checksums.sha256       sha256 of every sample file, sorted by path
//! <dir>/timings.json           oracle wall time per sample (not checksummed)
//! <dir>/task_01/sample_0000.tlf  records "mask", "field" and "spec.json"
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::scenario::{solve_spec, DatasetConfig, Family, FieldSolver, NormStats, Sample, ScenarioSpec, Split, TaskDataset};
use crate::tlf::{Container, Record};

pub const MANIFEST: &str = "manifest.json";
pub const CHECKSUMS: &str = "checksums.sha256";
pub const TIMINGS: &str = "timings.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub file: String,
    pub spec: ScenarioSpec,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub task_id: usize,
    pub family: Family,
    pub seed: u64,
    pub split: Split,
    /// Present once every sample of the task is complete.
    pub norm: Option<NormStats>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub grid: GridSpec,
    pub clip_db: f64,
    pub tasks: Vec<TaskManifest>,
}

impl Manifest {
    pub fn is_complete(&self) -> bool {
        self.tasks.iter().all(|t| t.norm.is_some() && t.samples.iter().all(|s| s.complete))
    }
}

pub fn sample_file(task_id: usize, index: usize) -> String {
    format!("task_{task_id:02}/sample_{index:04}.tlf")
}

pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    let mut c = Container::new();
    c.push(Record::mask("mask", &sample.mask));
    c.push(Record::field("field", &sample.field));
    c.push(Record::bytes("spec.json", &serde_json::to_vec(&sample.spec)?));
    c.write(path)
}

pub fn read_sample(path: &Path, grid: GridSpec, clip_db: f64) -> Result<Sample> {
    let c = Container::read(path)?;
    let mask = c.require("mask", path)?.to_mask(grid)?;
    let field = c.require("field", path)?.to_field(grid, clip_db)?;
    let spec = serde_json::from_slice(&c.require("spec.json", path)?.to_bytes()?)?;
    Ok(Sample {
        spec,
        mask,
        field,
        solve_seconds: 0.0,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.partial");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `sha256  relative/path` lines for every sample file, sorted by path.
pub fn checksum_index(dir: &Path, manifest: &Manifest) -> Result<String> {
    let mut files: Vec<&str> = manifest.tasks.iter().flat_map(|t| t.samples.iter().map(|s| s.file.as_str())).collect();
    files.sort_unstable();
    let mut out = String::new();
    for f in files {
        out.push_str(&format!("{}  {f}\n", sha256_file(&dir.join(f))?));
    }
    Ok(out)
}

fn fresh_manifest(config: &DatasetConfig, grid: GridSpec, clip_db: f64) -> Result<Manifest> {
    let specs = config.specs(&grid)?;
    let tasks = config
        .tasks
        .iter()
        .zip(specs)
        .map(|(t, specs)| {
            Ok(TaskManifest {
                task_id: t.task_id,
                family: t.family,
                seed: t.seed,
                split: Split::random(specs.len(), &config.split, t.seed)?,
                norm: None,
                samples: specs
                    .into_iter()
                    .enumerate()
                    .map(|(index, spec)| SampleEntry {
                        index,
                        file: sample_file(t.task_id, index),
                        spec,
                        complete: false,
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Manifest { grid, clip_db, tasks })
}

/// Solves every configured sample into `dir`, skipping samples a previous
/// run already completed, and returns the loaded datasets. The manifest is
/// rewritten after each task so an interrupted run can resume.
pub fn generate_dataset(dir: &Path, config: &DatasetConfig, solver: &dyn FieldSolver, clip_db: f64) -> Result<(Manifest, Vec<TaskDataset>)> {
    let grid = solver.grid();
    config.validate(&grid)?;
    let mut manifest = fresh_manifest(config, grid, clip_db)?;
    let manifest_path = dir.join(MANIFEST);
    if manifest_path.exists() {
        let previous: Manifest = read_json(&manifest_path)?;
        if previous.grid != grid || previous.tasks.len() != manifest.tasks.len() {
            return Err(Error::Config(format!("{} was generated with a different configuration", dir.display())));
        }
        for (t, p) in manifest.tasks.iter_mut().zip(&previous.tasks) {
            for (s, ps) in t.samples.iter_mut().zip(&p.samples) {
                if ps.spec != s.spec {
                    return Err(Error::Config(format!("{}: {} was generated from a different spec", dir.display(), s.file)));
                }
                s.complete = ps.complete;
            }
        }
    }
    let timings_path = dir.join(TIMINGS);
    let mut timings: BTreeMap<String, f64> = if timings_path.exists() { read_json(&timings_path)? } else { BTreeMap::new() };
    let mut datasets = Vec::with_capacity(manifest.tasks.len());
    for ti in 0..manifest.tasks.len() {
        let task = &manifest.tasks[ti];
        fs::create_dir_all(dir.join(format!("task_{:02}", task.task_id))).map_err(|e| Error::io(dir, e))?;
        let samples: Vec<(Sample, bool)> = task
            .samples
            .par_iter()
            .map(|entry| {
                let path = dir.join(&entry.file);
                if entry.complete {
                    if let Ok(s) = read_sample(&path, grid, clip_db) {
                        return Ok((s, false));
                    }
                }
                let s = solve_spec(&entry.spec, solver)?;
                write_sample(&path, &s)?;
                Ok((s, true))
            })
            .collect::<Result<_>>()?;
        let task = &mut manifest.tasks[ti];
        let mut plain = Vec::with_capacity(samples.len());
        for (entry, (mut sample, solved)) in task.samples.iter_mut().zip(samples) {
            entry.complete = true;
            if solved {
                timings.insert(entry.file.clone(), sample.solve_seconds);
            }
            sample.solve_seconds = timings.get(&entry.file).copied().unwrap_or(0.0);
            plain.push(sample);
        }
        let ds = TaskDataset::new(task.task_id, task.family, plain, task.split.clone())?;
        task.norm = Some(ds.norm);
        datasets.push(ds);
        write_json(&manifest_path, &manifest)?;
        write_json(&timings_path, &timings)?;
    }
    let sums = checksum_index(dir, &manifest)?;
    fs::write(dir.join(CHECKSUMS), sums).map_err(|e| Error::io(dir.join(CHECKSUMS), e))?;
    Ok((manifest, datasets))
}

/// Reads a complete dataset directory back.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<TaskDataset>)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if !manifest.is_complete() {
        return Err(Error::Config(format!("{} is incomplete; rerun generate to finish it", dir.display())));
    }
    let timings_path = dir.join(TIMINGS);
    let timings: BTreeMap<String, f64> = if timings_path.exists() { read_json(&timings_path)? } else { BTreeMap::new() };
    let datasets = manifest
        .tasks
        .iter()
        .map(|t| {
            let samples = t
                .samples
                .iter()
                .map(|e| {
                    let mut s = read_sample(&dir.join(&e.file), manifest.grid, manifest.clip_db)?;
                    s.solve_seconds = timings.get(&e.file).copied().unwrap_or(0.0);
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            TaskDataset::new(t.task_id, t.family, samples, t.split.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, datasets))
}

pub fn task_dir(dir: &Path, task_id: usize) -> PathBuf {
    dir.join(format!("task_{task_id:02}"))
}
