//! Field comparison: SSIM, probe-depth transects and dB error summaries.

use serde::{Deserialize, Serialize};

use crate::acoustics::TLField;
use crate::error::{Error, Result};
use crate::scenario::MaskGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimConfig {
    /// Side of the square Gaussian window, in cells.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`; `None` uses max - min of the reference field.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.window >= 1 && self.sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range.is_none_or(|l| l > 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SSIM configuration {self:?}")))
        }
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    fn range_for(&self, reference: &[f64]) -> Result<f64> {
        if let Some(l) = self.dynamic_range {
            return Ok(l);
        }
        let (lo, hi) = reference.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let l = hi - lo;
        if l > 0.0 && l.is_finite() {
            Ok(l)
        } else {
            Err(Error::Domain(format!("reference field has no dynamic range ({lo} to {hi}); set it explicitly")))
        }
    }
}

/// Local SSIM at every position where the window fits entirely, on a
/// row-major `rows x cols` array, plus the `L` that was used.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub rows: usize,
    pub cols: usize,
    pub dynamic_range: f64,
    pub values: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

fn check_window(shape: [usize; 2], cfg: &SsimConfig) -> Result<()> {
    if shape.iter().any(|&n| n < cfg.window) {
        return Err(Error::shape("SSIM window larger than field", &shape, &[cfg.window, cfg.window]));
    }
    Ok(())
}

/// Separable "valid" filtering of a `rows x cols` array.
fn filter_valid(x: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (or, oc) = (rows - w + 1, cols - w + 1);
    let mut tmp = vec![0.0; rows * oc];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        for c in 0..oc {
            tmp[r * oc + c] = taps.iter().zip(&row[c..c + w]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for r in 0..or {
        for (k, t) in taps.iter().enumerate() {
            let src = &tmp[(r + k) * oc..(r + k + 1) * oc];
            for (o, s) in out[r * oc..(r + 1) * oc].iter_mut().zip(src) {
                *o += t * s;
            }
        }
    }
    out
}

/// SSIM map of two equally shaped arrays; `b` is the reference for `L`.
pub fn ssim_map(a: &[f64], b: &[f64], shape: [usize; 2], cfg: &SsimConfig) -> Result<SsimMap> {
    cfg.validate()?;
    let [rows, cols] = shape;
    if a.len() != rows * cols || b.len() != rows * cols {
        return Err(Error::shape("SSIM inputs", &[a.len(), b.len()], &shape));
    }
    check_window(shape, cfg)?;
    let l = cfg.range_for(b)?;
    let (c1, c2) = ((cfg.k1 * l).powi(2), (cfg.k2 * l).powi(2));
    let taps = cfg.taps();
    let prod = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>();
    let mu_a = filter_valid(a, rows, cols, &taps);
    let mu_b = filter_valid(b, rows, cols, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), rows, cols, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), rows, cols, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), rows, cols, &taps);
    let values = (0..mu_a.len())
        .map(|k| {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = aa[k] - ma * ma;
            let vb = bb[k] - mb * mb;
            let cov = ab[k] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Ok(SsimMap {
        rows: rows - cfg.window + 1,
        cols: cols - cfg.window + 1,
        dynamic_range: l,
        values,
    })
}

fn as_f64(field: &TLField) -> Vec<f64> {
    field.values.iter().map(|&v| v as f64).collect()
}

fn check_same_grid(a: &TLField, b: &TLField) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::shape("field grids", &a.grid.shape(), &b.grid.shape()));
    }
    Ok(())
}

/// Mean local SSIM of `pred` against `truth` over the whole grid.
pub fn ssim(pred: &TLField, truth: &TLField, cfg: &SsimConfig) -> Result<f64> {
    check_same_grid(pred, truth)?;
    Ok(ssim_map(&as_f64(pred), &as_f64(truth), truth.grid.shape(), cfg)?.mean())
}

/// Mean local SSIM over windows centred on water cells.
pub fn ssim_water(pred: &TLField, truth: &TLField, mask: &MaskGrid, cfg: &SsimConfig) -> Result<f64> {
    check_same_grid(pred, truth)?;
    let map = ssim_map(&as_f64(pred), &as_f64(truth), truth.grid.shape(), cfg)?;
    let half = cfg.window / 2;
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..map.rows {
        for c in 0..map.cols {
            if mask.is_water(r + half, c + half) {
                sum += map.values[r * map.cols + c];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Domain("no water cells under the SSIM window centres".into()));
    }
    Ok(sum / n as f64)
}

/// Range series at the grid row nearest a probe depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transect {
    pub probe_depth: f64,
    pub row: usize,
    /// Depth of `row`, which is what was actually sampled.
    pub row_depth: f64,
    pub ranges: Vec<f64>,
    pub tl_pred: Vec<f64>,
    pub tl_true: Vec<f64>,
}

pub fn transect(pred: &TLField, truth: &TLField, probe_depth: f64) -> Result<Transect> {
    check_same_grid(pred, truth)?;
    let grid = truth.grid;
    let row = grid
        .nearest_depth_index(probe_depth)
        .ok_or_else(|| Error::Domain(format!("probe depth {probe_depth} m outside [0, {}] m", grid.depth_max)))?;
    let col = |f: &TLField| (0..grid.n_range).map(|i| f.get(i, row) as f64).collect();
    Ok(Transect {
        probe_depth,
        row,
        row_depth: grid.depth_at(row),
        ranges: grid.range_axis(),
        tl_pred: col(pred),
        tl_true: col(truth),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub water_cells: usize,
    pub mean_abs_db: f64,
    pub rmse_db: f64,
    pub p95_abs_db: f64,
    pub ssim: f64,
    pub ssim_water: f64,
    pub dynamic_range: f64,
}

/// dB errors over water cells (mask 0) plus full-grid and water SSIM.
pub fn error_summary(pred: &TLField, truth: &TLField, mask: &MaskGrid, cfg: &SsimConfig) -> Result<ErrorSummary> {
    check_same_grid(pred, truth)?;
    if mask.grid != truth.grid {
        return Err(Error::shape("mask vs field", &mask.grid.shape(), &truth.grid.shape()));
    }
    let mut abs: Vec<f64> = pred
        .values
        .iter()
        .zip(&truth.values)
        .zip(&mask.values)
        .filter(|(_, &m)| m == 0)
        .map(|((&p, &t), _)| (p as f64 - t as f64).abs())
        .collect();
    if abs.is_empty() {
        return Err(Error::Domain("mask has no water cells".into()));
    }
    let n = abs.len();
    let mean_abs_db = abs.iter().sum::<f64>() / n as f64;
    let rmse_db = (abs.iter().map(|d| d * d).sum::<f64>() / n as f64).sqrt();
    abs.sort_by(f64::total_cmp);
    let p95_abs_db = abs[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    let map = ssim_map(&as_f64(pred), &as_f64(truth), truth.grid.shape(), cfg)?;
    Ok(ErrorSummary {
        water_cells: n,
        mean_abs_db,
        rmse_db,
        p95_abs_db,
        ssim: map.mean(),
        ssim_water: ssim_water(pred, truth, mask, cfg)?,
        dynamic_range: map.dynamic_range,
    })
}

/// Direct evaluation of the SSIM definition, one window at a time with the
/// full 2-D weight table. Slow; used as an independent check of [`ssim_map`].
pub fn ssim_brute_force(a: &[f64], b: &[f64], shape: [usize; 2], cfg: &SsimConfig) -> Result<f64> {
    cfg.validate()?;
    let [rows, cols] = shape;
    check_window(shape, cfg)?;
    let l = cfg.range_for(b)?;
    let (c1, c2) = ((cfg.k1 * l).powi(2), (cfg.k2 * l).powi(2));
    let w = cfg.window;
    let c = (w as f64 - 1.0) / 2.0;
    let mut weights = vec![0.0; w * w];
    for u in 0..w {
        for v in 0..w {
            let d2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            weights[u * w + v] = (-d2 / (2.0 * cfg.sigma * cfg.sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|x| *x /= total);
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..=rows - w {
        for s in 0..=cols - w {
            let at = |x: &[f64], u: usize, v: usize| x[(r + u) * cols + s + v];
            let (mut ma, mut mb) = (0.0, 0.0);
            for u in 0..w {
                for v in 0..w {
                    ma += weights[u * w + v] * at(a, u, v);
                    mb += weights[u * w + v] * at(b, u, v);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for u in 0..w {
                for v in 0..w {
                    let (da, db) = (at(a, u, v) - ma, at(b, u, v) - mb);
                    va += weights[u * w + v] * da * da;
                    vb += weights[u * w + v] * db * db;
                    cov += weights[u * w + v] * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn grid(n: usize) -> GridSpec {
        GridSpec {
            n_range: n,
            n_depth: n,
            range_max: 1000.0,
            depth_max: 100.0,
        }
    }

    #[test]
    fn constants_closed_form() {
        let g = grid(16);
        let zero = TLField::filled(g, 0.0, 200.0);
        let one = TLField::filled(g, 1.0, 200.0);
        let cfg = SsimConfig {
            dynamic_range: Some(1.0),
            ..Default::default()
        };
        let c1 = 0.01f64.powi(2);
        assert!((ssim(&zero, &one, &cfg).unwrap() - c1 / (1.0 + c1)).abs() < 1e-15);
        assert!(ssim(&zero, &zero, &SsimConfig::default()).is_err());
    }

    #[test]
    fn taps_sum_to_one() {
        let t = SsimConfig::default().taps();
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(t[0], t[10]);
    }

    #[test]
    fn transect_row_and_errors() {
        let g = GridSpec::desk();
        let f = TLField::filled(g, 80.0, 200.0);
        let t = transect(&f, &f, 500.0).unwrap();
        assert_eq!(t.row, 43);
        assert!(t.tl_pred.iter().zip(&t.tl_true).all(|(a, b)| a == b));
        assert!(transect(&f, &f, 3500.0).is_err());
    }

    #[test]
    fn offset_summary() {
        let g = grid(20);
        let mut values = vec![0u8; g.len()];
        values[..20].fill(1);
        let mask = MaskGrid::new(g, values).unwrap();
        let truth = TLField::new(g, (0..400).map(|v| (v % 37) as f32 + 50.0).collect(), 200.0).unwrap();
        let same = error_summary(&truth, &truth, &mask, &SsimConfig::default()).unwrap();
        assert_eq!((same.mean_abs_db, same.rmse_db, same.p95_abs_db), (0.0, 0.0, 0.0));
        assert!((same.ssim - 1.0).abs() < 1e-12);
        let mut shifted = truth.clone();
        shifted.values.iter_mut().for_each(|v| *v += 3.0);
        // a large error confined to sub-bottom cells must not show up
        shifted.values[0] = 1000.0;
        let s = error_summary(&shifted, &truth, &mask, &SsimConfig::default()).unwrap();
        assert!((s.mean_abs_db - 3.0).abs() < 1e-12 && (s.rmse_db - 3.0).abs() < 1e-12);
        assert_eq!(s.water_cells, 380);
    }
}
