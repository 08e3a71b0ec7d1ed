//! Method-of-images reference for the ideal waveguide: isovelocity water,
//! flat bottom, line source.
//!
//! Image sources sit at `2jD + z_s` (|j| surface and |j| bottom reflections)
//! and at `2jD - z_s` (one more reflection off the boundary the image lies
//! beyond). The bare partial sums of this 2D series oscillate instead of
//! converging, so images are faded out with a cos² taper in |image depth| / D
//! over the upper half of the retained range. Mirror images about the surface
//! get equal weights, which keeps the pressure-release null exact.
//!
//! A ray fan of finite aperture cannot reproduce images whose eigenrays leave
//! the source steeper than the fan. With `aperture` set, each image is
//! weighted by the fraction of a Gaussian beam fan (angular width `spread`)
//! that covers its launch angle, which is what the beam solver converges to.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

use super::field::{Summation, TLField};
use super::rays::SourceSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApertureWeighting {
    /// Half-width of the launch fan plus half an angular ray spacing (radians).
    pub half_width: f64,
    /// Angular beam width (radians).
    pub spread: f64,
}

impl ApertureWeighting {
    /// Weighting matched to a source fan and beam spread.
    pub fn for_fan(src: &SourceSpec, spread: f64) -> Self {
        ApertureWeighting {
            half_width: 0.5 * src.aperture.to_radians() + 0.5 * src.angle_step(),
            spread,
        }
    }

    /// Launch elevations beyond this carry no weight (below 1e-18).
    fn outer(&self) -> f64 {
        (self.half_width + 9.0 * self.spread).min(0.5 * PI)
    }

    /// Launch elevations inside this carry full weight (to within 1e-18).
    fn inner(&self) -> f64 {
        (self.half_width - 9.0 * self.spread).max(0.0)
    }

    pub fn weight(&self, launch: f64) -> f64 {
        let phi = |x: f64| 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
        phi((self.half_width - launch) / self.spread) - phi((-self.half_width - launch) / self.spread)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageConfig {
    /// Images up to this many water depths away are retained.
    pub max_order: usize,
    pub aperture: Option<ApertureWeighting>,
    pub summation: Summation,
    pub surface_coefficient: f64,
    pub bottom_coefficient: f64,
    pub clip_db: f64,
    pub pressure_floor: f64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            max_order: 3200,
            aperture: None,
            summation: Summation::Coherent,
            surface_coefficient: -1.0,
            bottom_coefficient: 1.0,
            clip_db: 200.0,
            pressure_floor: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Image {
    depth: f64,
    sign: f64,
    /// Orientation preserved (even number of mirrorings).
    upright: bool,
}

/// Images sorted by depth.
fn images(src_depth: f64, water_depth: f64, cfg: &ImageConfig) -> Vec<Image> {
    let jmax = (cfg.max_order / 2 + 1) as i32;
    let (rs, rb) = (cfg.surface_coefficient, cfg.bottom_coefficient);
    let mut out = Vec::new();
    for j in -jmax..=jmax {
        let base = 2.0 * j as f64 * water_depth;
        let n = j.unsigned_abs() as i32;
        out.push(Image {
            depth: base + src_depth,
            sign: rs.powi(n) * rb.powi(n),
            upright: true,
        });
        // beyond the bottom for j >= 1, beyond the surface otherwise
        let (ns, nb) = if j >= 1 { (n - 1, n) } else { (n + 1, n) };
        out.push(Image {
            depth: base - src_depth,
            sign: rs.powi(ns) * rb.powi(nb),
            upright: false,
        });
    }
    let limit = cfg.max_order as f64 * water_depth;
    out.retain(|im| im.depth.abs() <= limit + src_depth);
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    out
}

/// Weight for an image `reach` water depths above or below the surface.
fn taper(reach: f64, max_order: usize) -> f64 {
    let half = max_order as f64 / 2.0;
    if max_order == 0 || reach <= half {
        1.0
    } else if reach >= 2.0 * half {
        0.0
    } else {
        (0.5 * PI * (reach - half) / half).cos().powi(2)
    }
}

struct Waveguide<'a> {
    images: Vec<Image>,
    water_depth: f64,
    k: f64,
    src: &'a SourceSpec,
    cfg: &'a ImageConfig,
}

impl<'a> Waveguide<'a> {
    fn new(water_depth: f64, speed: f64, src: &'a SourceSpec, cfg: &'a ImageConfig) -> Result<Self> {
        if !(water_depth > 0.0) {
            return Err(Error::Config(format!("water depth must be positive, got {water_depth}")));
        }
        if !(src.depth > 0.0 && src.depth < water_depth) {
            return Err(Error::Config(format!("source depth {} m outside the water", src.depth)));
        }
        if !(speed > 0.0) || !(src.frequency > 0.0) {
            return Err(Error::Config("speed and frequency must be positive".into()));
        }
        Ok(Waveguide {
            images: images(src.depth, water_depth, cfg),
            water_depth,
            k: 2.0 * PI * src.frequency / speed,
            src,
            cfg,
        })
    }

    fn tl(&self, range: f64, depth: f64) -> Result<f64> {
        let r = (range - self.src.range).abs();
        let z = depth;
        let cfg = self.cfg;
        let candidates = match &cfg.aperture {
            Some(ap) => {
                let span = if ap.outer() >= 0.5 * PI { f64::INFINITY } else { r * ap.outer().tan() };
                let lo = self.images.partition_point(|im| im.depth < z - span);
                let hi = self.images.partition_point(|im| im.depth <= z + span);
                &self.images[lo..hi]
            }
            None => &self.images[..],
        };
        let inner_slope = cfg.aperture.as_ref().map_or(0.0, |ap| ap.inner().tan());
        let mut p = Complex64::new(0.0, 0.0);
        let mut intensity = 0.0;
        for im in candidates {
            let dz = z - im.depth;
            let mut w = im.sign;
            match &cfg.aperture {
                Some(ap) => {
                    if dz.abs() > inner_slope * r {
                        // the launch is downward when the unfolded path descends
                        // through an upright image or ascends through a flipped one
                        let descends = dz > 0.0;
                        let down = descends == im.upright;
                        let elevation = dz.abs().atan2(r);
                        w *= ap.weight(if down { -elevation } else { elevation });
                    }
                }
                None => w *= taper(im.depth.abs() / self.water_depth, cfg.max_order),
            }
            if w == 0.0 {
                continue;
            }
            let dist = r.hypot(dz);
            if dist == 0.0 {
                return Err(Error::Domain(format!(
                    "receiver at range {range} m, depth {depth} m coincides with an image source"
                )));
            }
            match cfg.summation {
                Summation::Coherent => {
                    let (sn, cs) = (self.k * dist).sin_cos();
                    p += Complex64::new(cs, sn) * (w / dist.sqrt());
                }
                Summation::Incoherent => intensity += w * w / dist,
            }
        }
        let tl = match cfg.summation {
            Summation::Coherent => -20.0 * p.norm().max(cfg.pressure_floor).log10(),
            Summation::Incoherent => -10.0 * intensity.max(cfg.pressure_floor.powi(2)).log10(),
        };
        Ok(tl.min(cfg.clip_db))
    }
}

/// Reference transmission loss at one receiver for a flat bottom at
/// `water_depth` in water of uniform speed `speed`.
pub fn image_source_tl(
    range: f64,
    depth: f64,
    water_depth: f64,
    speed: f64,
    src: &SourceSpec,
    cfg: &ImageConfig,
) -> Result<f64> {
    Waveguide::new(water_depth, speed, src, cfg)?.tl(range, depth)
}

/// Reference field on `grid`. Rows at or below the bottom hold `clip_db`.
pub fn image_source_reference(
    grid: &GridSpec,
    water_depth: f64,
    speed: f64,
    src: &SourceSpec,
    cfg: &ImageConfig,
) -> Result<TLField> {
    grid.validate()?;
    if water_depth > grid.depth_max {
        return Err(Error::Config(format!("water depth {water_depth} m below the grid")));
    }
    let guide = Waveguide::new(water_depth, speed, src, cfg)?;
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.n_range {
        for j in 0..grid.n_depth {
            let z = grid.depth_at(j);
            let tl = if z >= water_depth {
                cfg.clip_db
            } else {
                guide.tl(grid.range_at(i), z)?
            };
            values.push(tl as f32);
        }
    }
    TLField::new(*grid, values, cfg.clip_db)
}

/// Cells fit for comparing a beam field against the reference: water cells
/// that are not clipped and lie more than `widths` local beam widths from any
/// clipped water cell below the surface (shadow zones, interior nulls). The
/// pressure-release null along the surface row is exact in both fields and
/// excludes nothing. The local beam width at a receiver is `spread` times its
/// distance from the source.
pub fn comparison_mask(
    reference: &TLField,
    water_depth: f64,
    src: &SourceSpec,
    spread: f64,
    widths: f64,
) -> Vec<bool> {
    let grid = &reference.grid;
    let clip = reference.clip_db as f32;
    let mut shadow = Vec::new();
    for i in 0..grid.n_range {
        for j in 0..grid.n_depth {
            let z = grid.depth_at(j);
            if z > 0.0 && z < water_depth && reference.get(i, j) >= clip {
                shadow.push((grid.range_at(i), z));
            }
        }
    }
    let mut keep = vec![false; grid.len()];
    for i in 0..grid.n_range {
        let x = grid.range_at(i);
        for j in 0..grid.n_depth {
            let z = grid.depth_at(j);
            if z >= water_depth || reference.get(i, j) >= clip {
                continue;
            }
            let reach = widths * spread * (x - src.range).hypot(z - src.depth);
            let r2 = reach * reach;
            keep[grid.index(i, j)] = shadow
                .iter()
                .all(|&(xs, zs)| (xs - x).powi(2) + (zs - z).powi(2) > r2);
        }
    }
    keep
}
