//! Sound-speed profiles and their layered discretization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Munk,
    Isovelocity,
    Tabulated,
}

/// Depth-dependent sound speed c(z), constant in range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoundSpeedProfile {
    pub kind: ProfileKind,
    /// Reference speed (m/s); the isovelocity speed for `Isovelocity`.
    pub c_ref: f64,
    pub channel_axis_depth: f64,
    pub scale_depth: f64,
    pub epsilon: f64,
    /// (depth m, speed m/s) pairs for `Tabulated`.
    #[serde(default)]
    pub samples: Vec<(f64, f64)>,
}

impl Default for SoundSpeedProfile {
    fn default() -> Self {
        Self::munk()
    }
}

impl SoundSpeedProfile {
    /// Canonical Munk constants: axis at 1300 m, c = 1500 m/s there.
    pub fn munk() -> Self {
        SoundSpeedProfile {
            kind: ProfileKind::Munk,
            c_ref: 1500.0,
            channel_axis_depth: 1300.0,
            scale_depth: 1300.0,
            epsilon: 0.00737,
            samples: Vec::new(),
        }
    }

    pub fn isovelocity(c: f64) -> Self {
        SoundSpeedProfile {
            kind: ProfileKind::Isovelocity,
            c_ref: c,
            ..Self::munk()
        }
    }

    pub fn tabulated(samples: Vec<(f64, f64)>) -> Result<Self> {
        let p = SoundSpeedProfile {
            kind: ProfileKind::Tabulated,
            samples,
            ..Self::munk()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProfileKind::Munk => {
                if !(self.c_ref > 0.0 && self.scale_depth > 0.0 && self.epsilon >= 0.0) {
                    return Err(Error::Config(format!("invalid Munk constants {self:?}")));
                }
            }
            ProfileKind::Isovelocity => {
                if !(self.c_ref > 0.0 && self.c_ref.is_finite()) {
                    return Err(Error::Config(format!("invalid isovelocity speed {}", self.c_ref)));
                }
            }
            ProfileKind::Tabulated => {
                if self.samples.is_empty() {
                    return Err(Error::Config("tabulated profile has no samples".into()));
                }
                if self.samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return Err(Error::Config(
                        "tabulated profile depths must strictly increase".into(),
                    ));
                }
                if self.samples.iter().any(|s| !(s.1 > 0.0 && s.1.is_finite())) {
                    return Err(Error::Config("tabulated speeds must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Sound speed at `depth` (m).
    pub fn speed_at(&self, depth: f64) -> Result<f64> {
        if !(depth >= 0.0) {
            return Err(Error::Domain(format!("sound speed requested at depth {depth}")));
        }
        Ok(match self.kind {
            ProfileKind::Munk => munk_speed(depth, self.c_ref, self.channel_axis_depth, self.scale_depth, self.epsilon),
            ProfileKind::Isovelocity => self.c_ref,
            ProfileKind::Tabulated => {
                let s = &self.samples;
                if depth <= s[0].0 {
                    s[0].1
                } else if depth >= s[s.len() - 1].0 {
                    s[s.len() - 1].1
                } else {
                    let k = s.partition_point(|p| p.0 <= depth);
                    let (a, b) = (s[k - 1], s[k]);
                    a.1 + (depth - a.0) / (b.0 - a.0) * (b.1 - a.1)
                }
            }
        })
    }
}

/// Munk profile c(z) = c_ref [1 + eps (eta + exp(-eta) - 1)], eta = 2 (z - z_axis) / B.
pub fn munk_speed(depth: f64, c_ref: f64, axis_depth: f64, scale_depth: f64, epsilon: f64) -> f64 {
    let eta = 2.0 * (depth - axis_depth) / scale_depth;
    c_ref * (1.0 + epsilon * (eta + (-eta).exp() - 1.0))
}

/// The water column split into equal-thickness layers of uniform speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayeredMedium {
    /// n_layers + 1 speeds sampled at the layer boundaries.
    interface_speeds: Vec<f64>,
    /// n_layers + 1 boundary depths from 0 to the domain depth.
    boundaries: Vec<f64>,
    /// Uniform speed inside each layer (mean of its two interface speeds).
    layer_speeds: Vec<f64>,
}

impl LayeredMedium {
    pub fn n_layers(&self) -> usize {
        self.layer_speeds.len()
    }

    pub fn interface_speeds(&self) -> &[f64] {
        &self.interface_speeds
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn layer_speeds(&self) -> &[f64] {
        &self.layer_speeds
    }

    pub fn domain_depth(&self) -> f64 {
        self.boundaries[self.boundaries.len() - 1]
    }

    pub fn layer_thickness(&self) -> f64 {
        self.domain_depth() / self.n_layers() as f64
    }

    /// Layer containing `depth`; on a boundary the layer entered when moving
    /// in the direction of `dz` is returned.
    pub fn layer_of(&self, depth: f64, dz: f64) -> usize {
        let n = self.n_layers();
        let h = self.layer_thickness();
        let mut l = ((depth / h).floor().max(0.0) as usize).min(n - 1);
        // snap to the exact boundary table to avoid off-by-one from division
        while l + 1 < n && depth >= self.boundaries[l + 1] {
            l += 1;
        }
        while l > 0 && depth < self.boundaries[l] {
            l -= 1;
        }
        if dz < 0.0 && l > 0 && depth <= self.boundaries[l] {
            l -= 1;
        }
        l
    }
}

/// Samples `profile` at `n_layers + 1` equally spaced depths.
pub fn discretize_profile(
    profile: &SoundSpeedProfile,
    domain_depth: f64,
    n_layers: usize,
) -> Result<LayeredMedium> {
    if n_layers < 1 {
        return Err(Error::Config("need at least one layer".into()));
    }
    if !(domain_depth > 0.0) {
        return Err(Error::Config(format!("domain depth must be positive, got {domain_depth}")));
    }
    profile.validate()?;
    let boundaries: Vec<f64> = (0..=n_layers)
        .map(|k| {
            if k == n_layers {
                domain_depth
            } else {
                domain_depth * k as f64 / n_layers as f64
            }
        })
        .collect();
    let interface_speeds = boundaries
        .iter()
        .map(|&z| profile.speed_at(z))
        .collect::<Result<Vec<_>>>()?;
    let layer_speeds = interface_speeds
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]))
        .collect();
    Ok(LayeredMedium {
        interface_speeds,
        boundaries,
        layer_speeds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent scalar evaluation of the canonical formula.
    fn munk_oracle(z: f64) -> f64 {
        let eta = 2.0 * (z - 1300.0) / 1300.0;
        1500.0 * (1.0 + 0.00737 * (eta + f64::exp(-eta) - 1.0))
    }

    #[test]
    fn munk_axis_and_reference_values() {
        let p = SoundSpeedProfile::munk();
        assert_eq!(p.speed_at(1300.0).unwrap(), 1500.0);
        let c0 = p.speed_at(0.0).unwrap();
        assert!((c0 - munk_oracle(0.0)).abs() < 1e-12);
        assert!((c0 - 1548.5).abs() < 0.1, "{c0}");
        let c2600 = p.speed_at(2600.0).unwrap();
        assert!((c2600 - munk_oracle(2600.0)).abs() < 1e-12);
        assert!((c2600 - 1512.6).abs() < 0.1, "{c2600}");
    }

    #[test]
    fn negative_depth_is_a_domain_error() {
        assert!(matches!(
            SoundSpeedProfile::munk().speed_at(-1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn isovelocity_layers_are_constant() {
        let m = discretize_profile(&SoundSpeedProfile::isovelocity(1500.0), 3000.0, 24).unwrap();
        assert_eq!(m.interface_speeds().len(), 25);
        assert!(m.interface_speeds().iter().all(|&c| c == 1500.0));
        assert!(m.layer_speeds().iter().all(|&c| c == 1500.0));
    }

    #[test]
    fn munk_layers_are_uniform_with_minimum_near_axis() {
        let m = discretize_profile(&SoundSpeedProfile::munk(), 3000.0, 24).unwrap();
        let b = m.boundaries();
        assert_eq!(b.len(), 25);
        for (k, &z) in b.iter().enumerate() {
            assert!((z - 125.0 * k as f64).abs() < 1e-9);
        }
        let speeds = m.interface_speeds();
        let argmin = (0..speeds.len())
            .min_by(|&a, &c| speeds[a].partial_cmp(&speeds[c]).unwrap())
            .unwrap();
        let nearest_axis = (0..b.len())
            .min_by(|&a, &c| (b[a] - 1300.0).abs().partial_cmp(&(b[c] - 1300.0).abs()).unwrap())
            .unwrap();
        assert_eq!(argmin, nearest_axis);
        for (l, c) in m.layer_speeds().iter().enumerate() {
            assert_eq!(*c, 0.5 * (speeds[l] + speeds[l + 1]));
        }
    }

    #[test]
    fn layer_lookup_respects_direction_on_boundaries() {
        let m = discretize_profile(&SoundSpeedProfile::munk(), 3000.0, 24).unwrap();
        assert_eq!(m.layer_of(0.0, 1.0), 0);
        assert_eq!(m.layer_of(125.0, 1.0), 1);
        assert_eq!(m.layer_of(125.0, -1.0), 0);
        assert_eq!(m.layer_of(3000.0, 1.0), 23);
        assert_eq!(m.layer_of(2999.0, -1.0), 23);
    }

    #[test]
    fn tabulated_interpolates() {
        let p = SoundSpeedProfile::tabulated(vec![(0.0, 1500.0), (100.0, 1520.0)]).unwrap();
        assert_eq!(p.speed_at(50.0).unwrap(), 1510.0);
        assert_eq!(p.speed_at(500.0).unwrap(), 1520.0);
        assert!(SoundSpeedProfile::tabulated(vec![(10.0, 1500.0), (5.0, 1500.0)]).is_err());
    }
}
