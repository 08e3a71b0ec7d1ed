//! Piecewise-straight ray tracing through a layered water column.
//!
//! Rays travel in straight lines inside each uniform layer, refract by Snell's
//! law at layer interfaces and reflect specularly at the surface and at the
//! piecewise-linear bottom. Depth grows downward; launch angles are measured
//! from the horizontal and are positive toward the surface.

use serde::{Deserialize, Serialize};

use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};

use super::ssp::LayeredMedium;

/// Steps shorter than this (m) count as stalled.
const TINY_STEP: f64 = 1e-7;
const MAX_STALLED_STEPS: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    /// Toward increasing range.
    #[default]
    Downrange,
    /// Toward decreasing range.
    Uprange,
}

/// Point source and its launch fan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Source depth (m).
    pub depth: f64,
    /// Source range (m); 0 for the usual left-edge source.
    #[serde(default)]
    pub range: f64,
    /// Frequency (Hz).
    pub frequency: f64,
    /// Number of launch angles.
    pub fan: usize,
    /// Full angular width of the fan (degrees), symmetric about horizontal.
    pub aperture: f64,
    #[serde(default)]
    pub heading: Heading,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            depth: 18.0,
            range: 0.0,
            frequency: 230.0,
            fan: 2001,
            aperture: 160.0,
            heading: Heading::Downrange,
        }
    }
}

impl SourceSpec {
    pub fn validate(&self, bathy: &BathymetryProfile) -> Result<()> {
        if self.fan < 2 {
            return Err(Error::Config(format!("fan needs at least 2 rays, got {}", self.fan)));
        }
        if !(self.aperture > 0.0 && self.aperture < 180.0) {
            return Err(Error::Config(format!(
                "aperture must lie in (0, 180) degrees, got {}",
                self.aperture
            )));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::Config(format!("frequency must be positive, got {}", self.frequency)));
        }
        if !(0.0..=bathy.domain_range()).contains(&self.range) {
            return Err(Error::Config(format!("source range {} outside the domain", self.range)));
        }
        let bottom = bathy.depth_at(self.range);
        if !(self.depth > 0.0 && self.depth < bottom) {
            return Err(Error::Config(format!(
                "source depth {} m is not inside the water column (bottom at {bottom} m)",
                self.depth
            )));
        }
        Ok(())
    }

    /// Launch angles in radians, ascending from the steepest downward ray.
    pub fn launch_angles(&self) -> Vec<f64> {
        let half = 0.5 * self.aperture.to_radians();
        let step = self.aperture.to_radians() / (self.fan - 1) as f64;
        (0..self.fan)
            .map(|n| if n + 1 == self.fan { half } else { -half + n as f64 * step })
            .collect()
    }

    /// Angular spacing between neighbouring rays (radians).
    pub fn angle_step(&self) -> f64 {
        self.aperture.to_radians() / (self.fan - 1) as f64
    }
}

/// What happened at a ray vertex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayEvent {
    Source,
    /// Refraction across a layer interface.
    Interface,
    /// Total internal reflection at a layer interface.
    TurningPoint,
    Surface,
    Bottom { segment: usize },
    RangeExit,
    PathLimit,
}

impl RayEvent {
    /// Events that fold the ray back on itself.
    pub fn is_reflection(&self) -> bool {
        matches!(
            self,
            RayEvent::Surface | RayEvent::Bottom { .. } | RayEvent::TurningPoint
        )
    }
}

/// A ray vertex together with the state of the segment leaving it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayPoint {
    pub range: f64,
    pub depth: f64,
    /// Cumulative path length (m).
    pub path_length: f64,
    /// Cumulative travel time (s).
    pub travel_time: f64,
    /// Product of reflection coefficients accumulated so far.
    pub reflection: f64,
    /// Unit direction (d_range, d_depth) of the outgoing segment.
    pub direction: (f64, f64),
    /// Sound speed on the outgoing segment.
    pub speed: f64,
    pub event: RayEvent,
    /// Slope d(depth)/d(range) of the reflecting boundary, for reflections.
    pub boundary_slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayPath {
    pub index: usize,
    /// Launch angle (radians, positive up).
    pub launch_angle: f64,
    pub points: Vec<RayPoint>,
}

impl RayPath {
    pub fn reflection_count(&self) -> usize {
        self.points.iter().filter(|p| p.event.is_reflection()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Maximum path length per ray (m); `None` picks a length that lets the
    /// steepest ray of the fan cross the whole domain.
    pub max_path_length: Option<f64>,
    /// Surface reflection coefficient (pressure release).
    pub surface_coefficient: f64,
    /// Bottom reflection coefficient (rigid).
    pub bottom_coefficient: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            max_path_length: None,
            surface_coefficient: -1.0,
            bottom_coefficient: 1.0,
        }
    }
}

impl TraceConfig {
    pub fn path_limit(&self, bathy: &BathymetryProfile, src: &SourceSpec) -> f64 {
        self.max_path_length.unwrap_or_else(|| {
            let half = (0.5 * src.aperture).to_radians();
            1.1 * bathy.domain_range() / half.cos() + 2.0 * bathy.domain_depth()
        })
    }
}

/// Traces every ray of the source fan.
pub fn trace_rays(
    env: &LayeredMedium,
    bathy: &BathymetryProfile,
    src: &SourceSpec,
    cfg: &TraceConfig,
) -> Result<Vec<RayPath>> {
    src.validate(bathy)?;
    check_domain(env, bathy)?;
    let limit = cfg.path_limit(bathy, src);
    src.launch_angles()
        .into_iter()
        .enumerate()
        .map(|(k, angle)| trace_one(env, bathy, src, cfg, k, angle, limit))
        .collect()
}

pub(crate) fn check_domain(env: &LayeredMedium, bathy: &BathymetryProfile) -> Result<()> {
    let d = env.domain_depth();
    if (d - bathy.domain_depth()).abs() > 1e-9 * d {
        return Err(Error::Config(format!(
            "medium depth {d} m does not match bathymetry domain depth {} m",
            bathy.domain_depth()
        )));
    }
    Ok(())
}

struct Tracer<'a> {
    bathy: &'a BathymetryProfile,
    ray: usize,
}

enum Hit {
    Interface,
    Surface,
    Bottom(usize),
    Floor,
    RangeExit,
    PathLimit,
}

impl Tracer<'_> {
    /// First bottom crossing along `p + t d` with `t` in `[0, t_max]`.
    fn bottom_hit(
        &self,
        p: (f64, f64),
        d: (f64, f64),
        t_max: f64,
        skip: Option<usize>,
    ) -> Option<(f64, usize)> {
        let knots = self.bathy.knots();
        let x_end = p.0 + t_max * d.0;
        let (lo, hi) = if d.0 >= 0.0 { (p.0, x_end) } else { (x_end, p.0) };
        let mut k = self.bathy.segment_index_at(lo);
        let mut best: Option<(f64, usize)> = None;
        while k + 1 < knots.len() {
            let seg = self.bathy.segment(k);
            if seg.start.0 > hi {
                break;
            }
            let n = seg.water_normal();
            let approach = d.0 * n.0 + d.1 * n.1;
            if approach < 0.0 {
                // solve p + t d = a + u (b - a)
                let e = (seg.end.0 - seg.start.0, seg.end.1 - seg.start.1);
                let denom = d.0 * e.1 - d.1 * e.0;
                if denom != 0.0 {
                    let w = (seg.start.0 - p.0, seg.start.1 - p.1);
                    let t = (w.0 * e.1 - w.1 * e.0) / denom;
                    let u = (w.0 * d.1 - w.1 * d.0) / denom;
                    let min_t = if skip == Some(k) { TINY_STEP } else { -1e-9 };
                    if (-1e-12..=1.0 + 1e-12).contains(&u)
                        && t >= min_t
                        && t <= t_max
                        && best.is_none_or(|b| t < b.0)
                    {
                        best = Some((t.max(0.0), k));
                    }
                }
            }
            k += 1;
        }
        best
    }
}

fn trace_one(
    env: &LayeredMedium,
    bathy: &BathymetryProfile,
    src: &SourceSpec,
    cfg: &TraceConfig,
    index: usize,
    angle: f64,
    limit: f64,
) -> Result<RayPath> {
    let tracer = Tracer { bathy, ray: index };
    let sign_x = match src.heading {
        Heading::Downrange => 1.0,
        Heading::Uprange => -1.0,
    };
    let mut d = (sign_x * angle.cos(), -angle.sin());
    let mut x = src.range;
    let mut z = src.depth;
    let mut layer = env.layer_of(z, d.1);
    let mut s = 0.0;
    let mut tau = 0.0;
    let mut refl = 1.0;
    let speeds = env.layer_speeds();
    let bounds = env.boundaries();
    let range_max = bathy.domain_range();
    let mut points = vec![RayPoint {
        range: x,
        depth: z,
        path_length: 0.0,
        travel_time: 0.0,
        reflection: refl,
        direction: d,
        speed: speeds[layer],
        event: RayEvent::Source,
        boundary_slope: 0.0,
    }];
    let mut last_bottom: Option<usize> = None;
    let mut stalled = 0usize;

    loop {
        let c = speeds[layer];
        // candidate step lengths
        let (t_iface, iface_is_surface, iface_is_floor) = if d.1 > 0.0 {
            ((bounds[layer + 1] - z) / d.1, false, layer + 1 == env.n_layers())
        } else if d.1 < 0.0 {
            ((bounds[layer] - z) / d.1, layer == 0, false)
        } else {
            (f64::INFINITY, false, false)
        };
        let t_iface = t_iface.max(0.0);
        let t_range = if d.0 > 0.0 {
            (range_max - x) / d.0
        } else if d.0 < 0.0 {
            -x / d.0
        } else {
            f64::INFINITY
        }
        .max(0.0);
        let t_limit = (limit - s).max(0.0);

        let mut t = t_iface;
        let mut hit = if iface_is_surface {
            Hit::Surface
        } else if iface_is_floor {
            Hit::Floor
        } else {
            Hit::Interface
        };
        if t_range < t {
            t = t_range;
            hit = Hit::RangeExit;
        }
        if t_limit < t {
            t = t_limit;
            hit = Hit::PathLimit;
        }
        if let Some((tb, k)) = tracer.bottom_hit((x, z), d, t + 1e-9, last_bottom) {
            if tb <= t + 1e-9 {
                t = tb;
                hit = Hit::Bottom(k);
            }
        }

        if t < TINY_STEP {
            stalled += 1;
            if stalled > MAX_STALLED_STEPS {
                let segment = bathy.segment_index_at(x);
                return Err(Error::RayStep {
                    ray: tracer.ray,
                    segment,
                    reason: format!(
                        "ray stalled at range {x:.3} m, depth {z:.3} m after {} vertices",
                        points.len()
                    ),
                });
            }
        } else {
            stalled = 0;
        }

        x += t * d.0;
        z += t * d.1;
        s += t;
        tau += t / c;
        let mut boundary_slope = 0.0;

        let event = match hit {
            Hit::RangeExit => {
                x = if d.0 > 0.0 { range_max } else { 0.0 };
                RayEvent::RangeExit
            }
            Hit::PathLimit => RayEvent::PathLimit,
            Hit::Surface => {
                z = 0.0;
                d.1 = -d.1;
                refl *= cfg.surface_coefficient;
                last_bottom = None;
                RayEvent::Surface
            }
            Hit::Floor => {
                z = bounds[env.n_layers()];
                d.1 = -d.1;
                refl *= cfg.bottom_coefficient;
                last_bottom = None;
                RayEvent::Bottom {
                    segment: bathy.segment_index_at(x),
                }
            }
            Hit::Bottom(k) => {
                let seg = bathy.segment(k);
                let n = seg.water_normal();
                let dn = d.0 * n.0 + d.1 * n.1;
                d = (d.0 - 2.0 * dn * n.0, d.1 - 2.0 * dn * n.1);
                let norm = d.0.hypot(d.1);
                d = (d.0 / norm, d.1 / norm);
                refl *= cfg.bottom_coefficient;
                last_bottom = Some(k);
                boundary_slope = (seg.end.1 - seg.start.1) / (seg.end.0 - seg.start.0);
                RayEvent::Bottom { segment: k }
            }
            Hit::Interface => {
                let next = if d.1 > 0.0 { layer + 1 } else { layer - 1 };
                z = if d.1 > 0.0 { bounds[layer + 1] } else { bounds[layer] };
                let c_next = speeds[next];
                last_bottom = None;
                if c_next == c {
                    layer = next;
                    RayEvent::Interface
                } else {
                    let cos_next = d.0.abs() * c_next / c;
                    if cos_next >= 1.0 {
                        d.1 = -d.1;
                        RayEvent::TurningPoint
                    } else {
                        let sin_next = (1.0 - cos_next * cos_next).sqrt();
                        d = (cos_next.copysign(d.0), sin_next.copysign(d.1));
                        layer = next;
                        RayEvent::Interface
                    }
                }
            }
        };

        if !matches!(event, RayEvent::Interface | RayEvent::TurningPoint) {
            layer = env.layer_of(z.clamp(0.0, env.domain_depth()), d.1);
        }
        points.push(RayPoint {
            range: x,
            depth: z,
            path_length: s,
            travel_time: tau,
            reflection: refl,
            direction: d,
            speed: speeds[layer],
            event,
            boundary_slope,
        });
        if matches!(event, RayEvent::RangeExit | RayEvent::PathLimit) {
            break;
        }
    }
    Ok(RayPath {
        index,
        launch_angle: angle,
        points,
    })
}
