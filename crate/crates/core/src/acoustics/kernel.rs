//! Inner loop of the beam summation.
//!
//! The loop body is branch-free and uses polynomial `exp` and `sin_cos` so it
//! vectorizes. Wider instruction sets are picked at run time; every variant
//! performs the same IEEE operations in the same order (no fused multiply-add),
//! so the choice never changes the result.

use std::f64::consts::{LN_2, LOG2_E, TAU};

/// 1.5 * 2^52: adding and subtracting it rounds to the nearest integer.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Ray state at one column crossing, pre-scaled for the kernel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BeamSample {
    pub z: f64,
    pub s: f64,
    pub tau: f64,
    pub cos: f64,
    pub sin: f64,
    pub slowness: f64,
    /// Normalization times accumulated reflection coefficient.
    pub gain: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BeamShape {
    pub inv_spread: f64,
    pub cutoff: f64,
    pub s_min: f64,
    pub omega: f64,
}

/// e^y for y in roughly [-700, 0].
#[inline(always)]
pub(crate) fn exp_neg(y: f64) -> f64 {
    let y = y.max(-700.0);
    let kr = (y * LOG2_E + ROUND_MAGIC) - ROUND_MAGIC;
    let r = y - kr * LN_2;
    // Taylor to r^11 on |r| <= ln2 / 2
    let mut p = 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let k = (kr + ROUND_MAGIC).to_bits().wrapping_sub(ROUND_MAGIC.to_bits());
    p * f64::from_bits(k.wrapping_add(1023) << 52)
}

/// (sin x, cos x), absolute error below 1e-9 for |x| up to about 1e6.
#[inline(always)]
pub(crate) fn sin_cos(x: f64) -> (f64, f64) {
    let q = (x * (1.0 / TAU) + ROUND_MAGIC) - ROUND_MAGIC;
    let h = 0.5 * (x - q * TAU);
    let h2 = h * h;
    let mut s = -1.0 / 1_307_674_368_000.0;
    s = s * h2 + 1.0 / 6_227_020_800.0;
    s = s * h2 - 1.0 / 39_916_800.0;
    s = s * h2 + 1.0 / 362_880.0;
    s = s * h2 - 1.0 / 5_040.0;
    s = s * h2 + 1.0 / 120.0;
    s = s * h2 - 1.0 / 6.0;
    s = s * h2 + 1.0;
    let sh = s * h;
    let mut c = 1.0 / 20_922_789_888_000.0;
    c = c * h2 - 1.0 / 87_178_291_200.0;
    c = c * h2 + 1.0 / 479_001_600.0;
    c = c * h2 - 1.0 / 3_628_800.0;
    c = c * h2 + 1.0 / 40_320.0;
    c = c * h2 - 1.0 / 720.0;
    c = c * h2 + 1.0 / 24.0;
    c = c * h2 - 0.5;
    c = c * h2 + 1.0;
    (2.0 * sh * c, 1.0 - 2.0 * sh * sh)
}

#[inline(always)]
fn coherent_body(depths: &[f64], re: &mut [f64], im: &mut [f64], b: &BeamSample, shape: &BeamShape) {
    let k_half = 0.5 * shape.omega * b.slowness;
    for ((&zj, pr), pi) in depths.iter().zip(re.iter_mut()).zip(im.iter_mut()) {
        let dz = zj - b.z;
        let n = dz.abs() * b.cos;
        let a = dz * b.sin;
        let s = (b.s + a).max(shape.s_min);
        let inv_s = 1.0 / s;
        let x = n * inv_s * shape.inv_spread;
        let inside = if x <= shape.cutoff { 1.0 } else { 0.0 };
        let amp = inside * b.gain * inv_s.sqrt() * exp_neg(-0.5 * x * x);
        let phase = shape.omega * (b.tau + a * b.slowness) + k_half * n * n * inv_s;
        let (sn, cs) = sin_cos(phase);
        *pr += amp * cs;
        *pi += amp * sn;
    }
}

#[inline(always)]
fn incoherent_body(depths: &[f64], acc: &mut [f64], b: &BeamSample, shape: &BeamShape) {
    let gain2 = b.gain * b.gain;
    for (&zj, acc) in depths.iter().zip(acc.iter_mut()) {
        let dz = zj - b.z;
        let n = dz.abs() * b.cos;
        let s = (b.s + dz * b.sin).max(shape.s_min);
        let inv_s = 1.0 / s;
        let x = n * inv_s * shape.inv_spread;
        let inside = if x <= shape.cutoff { 1.0 } else { 0.0 };
        *acc += inside * gain2 * inv_s * exp_neg(-x * x);
    }
}

#[cfg(target_arch = "x86_64")]
mod wide {
    use super::*;

    #[target_feature(enable = "avx512f,avx512dq,avx512vl")]
    pub(super) fn coherent_avx512(d: &[f64], re: &mut [f64], im: &mut [f64], b: &BeamSample, s: &BeamShape) {
        coherent_body(d, re, im, b, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn coherent_avx2(d: &[f64], re: &mut [f64], im: &mut [f64], b: &BeamSample, s: &BeamShape) {
        coherent_body(d, re, im, b, s)
    }

    #[target_feature(enable = "avx512f,avx512dq,avx512vl")]
    pub(super) fn incoherent_avx512(d: &[f64], acc: &mut [f64], b: &BeamSample, s: &BeamShape) {
        incoherent_body(d, acc, b, s)
    }

    #[target_feature(enable = "avx2")]
    pub(super) fn incoherent_avx2(d: &[f64], acc: &mut [f64], b: &BeamSample, s: &BeamShape) {
        incoherent_body(d, acc, b, s)
    }
}

/// Adds one beam's complex pressure to the receivers at `depths`.
pub(crate) fn add_coherent(depths: &[f64], re: &mut [f64], im: &mut [f64], b: &BeamSample, shape: &BeamShape) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f")
            && std::arch::is_x86_feature_detected!("avx512dq")
            && std::arch::is_x86_feature_detected!("avx512vl")
        {
            // SAFETY: the required features were just detected
            return unsafe { wide::coherent_avx512(depths, re, im, b, shape) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above
            return unsafe { wide::coherent_avx2(depths, re, im, b, shape) };
        }
    }
    coherent_body(depths, re, im, b, shape)
}

/// Adds one beam's intensity to the receivers at `depths`.
pub(crate) fn add_incoherent(depths: &[f64], acc: &mut [f64], b: &BeamSample, shape: &BeamShape) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f")
            && std::arch::is_x86_feature_detected!("avx512dq")
            && std::arch::is_x86_feature_detected!("avx512vl")
        {
            // SAFETY: the required features were just detected
            return unsafe { wide::incoherent_avx512(depths, acc, b, shape) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above
            return unsafe { wide::incoherent_avx2(depths, acc, b, shape) };
        }
    }
    incoherent_body(depths, acc, b, shape)
}
