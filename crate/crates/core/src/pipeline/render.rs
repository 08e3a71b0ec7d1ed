//! Portable renders and text series.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::acoustics::TLField;
use crate::error::{Error, Result};
use crate::metrics::Transect;

/// Gray levels map `[0, 200]` dB linearly onto `[0, 255]`, so louder is
/// darker and the sub-bottom plateau is white.
pub const RENDER_DB_MAX: f64 = 200.0;

pub fn db_to_gray(db: f32) -> u8 {
    let v = (db as f64).clamp(0.0, RENDER_DB_MAX) / RENDER_DB_MAX * 255.0;
    v.round() as u8
}

/// Binary PGM (P5): one column per range, one row per depth, surface on top.
pub fn pgm_bytes(field: &TLField) -> Vec<u8> {
    let [nr, nd] = field.grid.shape();
    let mut out = format!("P5\n{nr} {nd}\n255\n").into_bytes();
    out.reserve(nr * nd);
    for j in 0..nd {
        for i in 0..nr {
            out.push(db_to_gray(field.get(i, j)));
        }
    }
    out
}

pub fn write_pgm(path: &Path, field: &TLField) -> Result<()> {
    fs::write(path, pgm_bytes(field)).map_err(|e| Error::io(path, e))
}

pub fn transect_csv(t: &Transect) -> String {
    let mut out = String::from("range_m,tl_pred_db,tl_true_db\n");
    for ((r, p), q) in t.ranges.iter().zip(&t.tl_pred).zip(&t.tl_true) {
        let _ = writeln!(out, "{r},{p},{q}");
    }
    out
}
