//! Transmission-loss fields from Gaussian beams centred on traced rays.
//!
//! Each ray segment is sampled where it crosses a receiver column. A receiver
//! at vertical offset `dz` from the crossing sees the beam at normal distance
//! `n = |dz| cos` and along-ray offset `a = dz sin`, so the beam footprint is
//! evaluated at arc length `s + a`. Beam width grows linearly with arc length.
//! At every reflection the incoming segment is continued straight past the
//! boundary and the outgoing segment is continued straight back behind it;
//! these virtual legs carry the image-beam tails that would otherwise be cut
//! off at the boundary, so the pressure-release surface gets an exact node.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

use super::kernel::{add_coherent, add_incoherent, BeamSample, BeamShape};
use super::rays::{trace_rays, RayEvent, RayPath, SourceSpec, TraceConfig};
use super::ssp::LayeredMedium;

/// Transmission loss (dB re 1 m) on a receiver grid, row-major (range, depth).
#[derive(Clone, Debug, PartialEq)]
pub struct TLField {
    pub grid: GridSpec,
    pub values: Vec<f32>,
    /// Values at or above this are clipped (no energy); sub-bottom cells hold it.
    pub clip_db: f64,
}

impl TLField {
    pub fn new(grid: GridSpec, values: Vec<f32>, clip_db: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape("TL field values", &[values.len()], &grid.shape()));
        }
        Ok(TLField { grid, values, clip_db })
    }

    pub fn filled(grid: GridSpec, value: f32, clip_db: f64) -> Self {
        TLField {
            values: vec![value; grid.len()],
            grid,
            clip_db,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[self.grid.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        let k = self.grid.index(i, j);
        self.values[k] = v;
    }

    /// Values along the receiver row nearest `depth`.
    pub fn transect(&self, depth: f64) -> Option<Vec<f32>> {
        let j = self.grid.nearest_depth_index(depth)?;
        Some((0..self.grid.n_range).map(|i| self.get(i, j)).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summation {
    /// Complex pressures are added before taking the magnitude.
    #[default]
    Coherent,
    /// Beam intensities are added; no interference.
    Incoherent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub summation: Summation,
    pub clip_db: f64,
    /// Pressure magnitude floor applied before the logarithm.
    pub pressure_floor: f64,
    /// Beam half-width growth (radians); `None` uses one vertical grid
    /// spacing at 1 km range.
    pub beam_spread: Option<f64>,
    /// Receivers beyond this many beam widths from a ray are skipped.
    pub beam_cutoff: f64,
    /// Arc length (m) below which spreading and beam width are frozen.
    pub min_arc_length: f64,
    pub trace: TraceConfig,
    /// Evaluate receiver columns on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            summation: Summation::Coherent,
            clip_db: 200.0,
            pressure_floor: 1e-10,
            beam_spread: None,
            beam_cutoff: 4.0,
            min_arc_length: 1.0,
            trace: TraceConfig::default(),
            parallel: true,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_db > 0.0) {
            return Err(Error::Config(format!("clip_db must be positive, got {}", self.clip_db)));
        }
        if !(self.pressure_floor > 0.0) {
            return Err(Error::Config("pressure_floor must be positive".into()));
        }
        if !(self.beam_cutoff > 0.0) || !(self.min_arc_length > 0.0) {
            return Err(Error::Config("beam_cutoff and min_arc_length must be positive".into()));
        }
        if let Some(b) = self.beam_spread {
            if !(b > 0.0) {
                return Err(Error::Config(format!("beam_spread must be positive, got {b}")));
            }
        }
        Ok(())
    }

    pub fn spread(&self, grid: &GridSpec) -> f64 {
        self.beam_spread.unwrap_or(grid.depth_step() / 1000.0)
    }
}

/// A straight leg sampled column by column.
#[derive(Clone, Copy, Debug)]
struct Leg {
    x: f64,
    z: f64,
    s: f64,
    tau: f64,
    dir: (f64, f64),
    speed: f64,
    refl: f64,
    length: f64,
    /// Include a column that lies exactly on the far end.
    closed: bool,
}

/// Ray state where a leg crosses a receiver column.
#[derive(Clone, Copy, Debug)]
struct Crossing {
    z: f64,
    s: f64,
    tau: f64,
    cos: f64,
    sin: f64,
    speed: f64,
    refl: f64,
}

fn push_crossings(leg: &Leg, grid: &GridSpec, columns: &mut [Vec<Crossing>]) {
    let tx = leg.dir.0;
    if tx == 0.0 || leg.length <= 0.0 {
        return;
    }
    let x_end = leg.x + leg.length * tx;
    let dx = grid.range_step();
    let n = grid.n_range;
    let in_leg = |xi: f64| -> bool {
        if tx > 0.0 {
            xi >= leg.x && (xi < x_end || (leg.closed && xi <= x_end))
        } else {
            xi <= leg.x && (xi > x_end || (leg.closed && xi >= x_end))
        }
    };
    let (lo, hi) = if tx > 0.0 { (leg.x, x_end) } else { (x_end, leg.x) };
    let i_lo = ((lo / dx).floor() as isize - 1).max(0) as usize;
    let i_hi = (((hi / dx).ceil() as isize) + 1).clamp(0, n as isize - 1) as usize;
    if i_lo > i_hi {
        return;
    }
    let mut emit = |i: usize| {
        let xi = grid.range_at(i);
        if in_leg(xi) {
            let u = (xi - leg.x) / tx;
            columns[i].push(Crossing {
                z: leg.z + u * leg.dir.1,
                s: leg.s + u,
                tau: leg.tau + u / leg.speed,
                cos: tx.abs(),
                sin: leg.dir.1,
                speed: leg.speed,
                refl: leg.refl,
            });
        }
    };
    // keep each column's crossings in travel order
    if tx > 0.0 {
        (i_lo..=i_hi).for_each(&mut emit);
    } else {
        (i_lo..=i_hi).rev().for_each(&mut emit);
    }
}

/// Length of a straight continuation beyond a reflection after which the
/// beam no longer reaches the water side of the boundary.
fn continuation_length(
    dir: (f64, f64),
    slope: f64,
    s_vertex: f64,
    reach: f64,
    forward: bool,
) -> f64 {
    let g = dir.0.abs() * (dir.1 - slope * dir.0).abs();
    if forward {
        if g > reach {
            reach * s_vertex / (g - reach)
        } else {
            f64::INFINITY
        }
    } else {
        reach * s_vertex / (g + reach)
    }
}

fn range_room(x: f64, tx: f64, range_max: f64) -> f64 {
    if tx > 0.0 {
        (range_max - x) / tx
    } else if tx < 0.0 {
        x / -tx
    } else {
        0.0
    }
}

fn collect_legs(rays: &[RayPath], grid: &GridSpec, reach: f64, columns: &mut [Vec<Crossing>]) {
    let range_max = grid.range_max;
    // a little extra continuation keeps the tails symmetric despite the
    // arc-length dependence of the beam width
    let reach = 1.25 * reach;
    for ray in rays {
        let pts = &ray.points;
        for k in 0..pts.len().saturating_sub(1) {
            let p = &pts[k];
            let q = &pts[k + 1];
            if p.event.is_reflection() && k > 0 {
                // outgoing leg continued backward behind the boundary
                let len = continuation_length(p.direction, p.boundary_slope, p.path_length, reach, false)
                    .min(range_room(p.range, -p.direction.0, range_max))
                    .min(p.path_length);
                let leg = Leg {
                    x: p.range - len * p.direction.0,
                    z: p.depth - len * p.direction.1,
                    s: p.path_length - len,
                    tau: p.travel_time - len / p.speed,
                    dir: p.direction,
                    speed: p.speed,
                    refl: p.reflection,
                    length: len,
                    closed: false,
                };
                push_crossings(&leg, grid, columns);
            }
            push_crossings(
                &Leg {
                    x: p.range,
                    z: p.depth,
                    s: p.path_length,
                    tau: p.travel_time,
                    dir: p.direction,
                    speed: p.speed,
                    refl: p.reflection,
                    length: q.path_length - p.path_length,
                    closed: q.event == RayEvent::RangeExit,
                },
                grid,
                columns,
            );
            if q.event.is_reflection() {
                // incoming leg continued forward past the boundary
                let len = continuation_length(p.direction, q.boundary_slope, q.path_length, reach, true)
                    .min(range_room(q.range, p.direction.0, range_max));
                let leg = Leg {
                    x: q.range,
                    z: q.depth,
                    s: q.path_length,
                    tau: q.travel_time,
                    dir: p.direction,
                    speed: p.speed,
                    refl: p.reflection,
                    length: len,
                    closed: true,
                };
                push_crossings(&leg, grid, columns);
            }
        }
    }
}

struct BeamParams {
    shape: BeamShape,
    /// Amplitude normalization so that a fan of beams reproduces 1/sqrt(r).
    norm: f64,
    summation: Summation,
}

fn accumulate_column(
    crossings: &[Crossing],
    depths: &[f64],
    beam: &BeamParams,
    re: &mut [f64],
    im: &mut [f64],
) {
    let Some(&last) = depths.last() else { return };
    let spread = 1.0 / beam.shape.inv_spread;
    let reach = beam.shape.cutoff * spread;
    let dz = depths.get(1).map_or(1.0, |d1| d1 - depths[0]);
    for c in crossings {
        let half = if c.cos > reach * c.sin.abs() {
            reach * (c.s + beam.shape.s_min) / (c.cos - reach * c.sin.abs())
        } else {
            f64::INFINITY
        };
        let lo = c.z - half;
        let hi = c.z + half;
        if hi < 0.0 || lo > last {
            continue;
        }
        let j_lo = ((lo / dz).floor().max(0.0) as usize).min(depths.len());
        let j_hi = ((hi / dz).ceil() as usize + 1).min(depths.len());
        if j_lo >= j_hi {
            continue;
        }
        let sample = BeamSample {
            z: c.z,
            s: c.s,
            tau: c.tau,
            cos: c.cos,
            sin: c.sin,
            slowness: 1.0 / c.speed,
            gain: beam.norm * c.refl,
        };
        let rows = j_lo..j_hi;
        match beam.summation {
            Summation::Coherent => add_coherent(
                &depths[rows.clone()],
                &mut re[rows.clone()],
                &mut im[rows],
                &sample,
                &beam.shape,
            ),
            Summation::Incoherent => add_incoherent(&depths[rows.clone()], &mut re[rows], &sample, &beam.shape),
        }
    }
}

/// Solves the forward problem: rays through `env` over `bathy` from `src`,
/// sampled on `grid`.
pub fn compute_tl_field(
    env: &LayeredMedium,
    bathy: &BathymetryProfile,
    src: &SourceSpec,
    grid: &GridSpec,
    cfg: &OracleConfig,
) -> Result<TLField> {
    cfg.validate()?;
    grid.validate()?;
    check_grid(grid, bathy)?;
    let rays = trace_rays(env, bathy, src, &cfg.trace)?;
    field_from_rays(&rays, bathy, src, grid, cfg)
}

pub(crate) fn check_grid(grid: &GridSpec, bathy: &BathymetryProfile) -> Result<()> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    if !close(grid.range_max, bathy.domain_range()) || !close(grid.depth_max, bathy.domain_depth()) {
        return Err(Error::Config(format!(
            "grid extent {} m x {} m does not match the bathymetry domain {} m x {} m",
            grid.range_max,
            grid.depth_max,
            bathy.domain_range(),
            bathy.domain_depth()
        )));
    }
    Ok(())
}

/// Number of receiver rows strictly above the bottom in column `i`; a row
/// lying exactly on the bottom belongs to the sea floor, as in the mask.
pub(crate) fn water_rows(grid: &GridSpec, bathy: &BathymetryProfile, i: usize) -> usize {
    let bottom = bathy.depth_at(grid.range_at(i));
    (0..grid.n_depth).take_while(|&j| grid.depth_at(j) < bottom).count()
}

/// Builds the field from already traced rays.
pub fn field_from_rays(
    rays: &[RayPath],
    bathy: &BathymetryProfile,
    src: &SourceSpec,
    grid: &GridSpec,
    cfg: &OracleConfig,
) -> Result<TLField> {
    let spread = cfg.spread(grid);
    let dtheta = src.angle_step();
    let norm = match cfg.summation {
        Summation::Coherent => dtheta / ((2.0 * PI).sqrt() * spread),
        Summation::Incoherent => (dtheta / (PI.sqrt() * spread)).sqrt(),
    };
    let beam = BeamParams {
        shape: BeamShape {
            inv_spread: 1.0 / spread,
            cutoff: cfg.beam_cutoff,
            s_min: cfg.min_arc_length,
            omega: 2.0 * PI * src.frequency,
        },
        norm,
        summation: cfg.summation,
    };
    let depths = grid.depth_axis();

    let mut columns: Vec<Vec<Crossing>> = vec![Vec::new(); grid.n_range];
    collect_legs(rays, grid, cfg.beam_cutoff * spread, &mut columns);

    let clip = cfg.clip_db;
    let floor = cfg.pressure_floor;
    let solve_column = |(i, crossings): (usize, &Vec<Crossing>)| -> Vec<f32> {
        let rows = water_rows(grid, bathy, i);
        let mut re = vec![0.0; rows];
        let mut im = vec![0.0; rows];
        accumulate_column(crossings, &depths[..rows], &beam, &mut re, &mut im);
        (0..grid.n_depth)
            .map(|j| {
                if j >= rows {
                    return clip as f32;
                }
                let tl = match cfg.summation {
                    Summation::Coherent => -20.0 * re[j].hypot(im[j]).max(floor).log10(),
                    Summation::Incoherent => -10.0 * re[j].max(floor * floor).log10(),
                };
                tl.min(clip) as f32
            })
            .collect()
    };
    let cols: Vec<Vec<f32>> = if cfg.parallel {
        columns.par_iter().enumerate().map(solve_column).collect()
    } else {
        columns.iter().enumerate().map(solve_column).collect()
    };
    let values = cols.into_iter().flatten().collect();
    if let Some(bad) = rays.iter().find(|r| r.points.iter().any(|p| !p.path_length.is_finite())) {
        return Err(Error::Numeric(format!("ray {} has a non-finite path length", bad.index)));
    }
    TLField::new(*grid, values, clip)
}
