//! Receiver grids over the range-depth plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform receiver grid covering `[0, range_max] x [0, depth_max]`.
///
/// Both end points are included, so the spacing is `extent / (n - 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_range: usize,
    pub n_depth: usize,
    pub range_max: f64,
    pub depth_max: f64,
}

impl GridSpec {
    /// 176 x 256 receivers over 100 km x 3000 m.
    pub fn desk() -> Self {
        GridSpec {
            n_range: 176,
            n_depth: 256,
            range_max: 100_000.0,
            depth_max: 3000.0,
        }
    }

    /// 1408 x 2049 receivers over 100 km x 3000 m.
    pub fn full() -> Self {
        GridSpec {
            n_range: 1408,
            n_depth: 2049,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_range < 2 || self.n_depth < 2 {
            return Err(Error::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.n_range, self.n_depth
            )));
        }
        if !(self.range_max > 0.0 && self.range_max.is_finite())
            || !(self.depth_max > 0.0 && self.depth_max.is_finite())
        {
            return Err(Error::Config(format!(
                "grid extents must be positive, got {} m x {} m",
                self.range_max, self.depth_max
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.n_range, self.n_depth]
    }

    pub fn len(&self) -> usize {
        self.n_range * self.n_depth
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range_step(&self) -> f64 {
        self.range_max / (self.n_range - 1) as f64
    }

    pub fn depth_step(&self) -> f64 {
        self.depth_max / (self.n_depth - 1) as f64
    }

    pub fn range_at(&self, i: usize) -> f64 {
        if i + 1 == self.n_range {
            self.range_max
        } else {
            i as f64 * self.range_step()
        }
    }

    pub fn depth_at(&self, j: usize) -> f64 {
        if j + 1 == self.n_depth {
            self.depth_max
        } else {
            j as f64 * self.depth_step()
        }
    }

    pub fn range_axis(&self) -> Vec<f64> {
        (0..self.n_range).map(|i| self.range_at(i)).collect()
    }

    pub fn depth_axis(&self) -> Vec<f64> {
        (0..self.n_depth).map(|j| self.depth_at(j)).collect()
    }

    /// Row index nearest to `depth`; ties round toward the deeper row.
    pub fn nearest_depth_index(&self, depth: f64) -> Option<usize> {
        if !(0.0..=self.depth_max).contains(&depth) {
            return None;
        }
        let j = (depth * (self.n_depth - 1) as f64 / self.depth_max).round() as usize;
        Some(j.min(self.n_depth - 1))
    }

    /// Row-major (range-major) flat index.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_depth + j
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `RANGExDEPTH` (e.g. `176x256`) over the default extents.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid must look like 176x256, got {s:?}")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid dimension {v:?}")))
        };
        let grid = GridSpec {
            n_range: parse(a)?,
            n_depth: parse(b)?,
            ..GridSpec::desk()
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_axes_are_uniform_and_closed() {
        let g = GridSpec::desk();
        let r = g.range_axis();
        assert_eq!(r.len(), 176);
        assert_eq!(r[0], 0.0);
        assert_eq!(*r.last().unwrap(), 100_000.0);
        let d = g.depth_axis();
        assert_eq!(*d.last().unwrap(), 3000.0);
        for w in d.windows(2) {
            assert!((w[1] - w[0] - g.depth_step()).abs() < 1e-9);
        }
    }

    #[test]
    fn probe_500m_snaps_to_row_43() {
        // 3000 / 255 = 11.7647 m; 500 / 11.7647 = 42.5 -> 43.
        let g = GridSpec::desk();
        assert_eq!(g.nearest_depth_index(500.0), Some(43));
        assert_eq!(g.nearest_depth_index(3500.0), None);
    }

    #[test]
    fn parses_grid_strings() {
        let g: GridSpec = "88x128".parse().unwrap();
        assert_eq!((g.n_range, g.n_depth), (88, 128));
        assert!("88".parse::<GridSpec>().is_err());
        assert!("1x128".parse::<GridSpec>().is_err());
    }
}
