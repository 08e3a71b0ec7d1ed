//! Binary bathymetry masks: 1 at and below the sea floor, 0 in the water.

use crate::acoustics::TLField;
use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct MaskGrid {
    pub grid: GridSpec,
    /// Row-major (range, depth), each 0 or 1.
    pub values: Vec<u8>,
}

impl MaskGrid {
    pub fn new(grid: GridSpec, values: Vec<u8>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::shape("mask values", &[values.len()], &grid.shape()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Domain("mask values must be 0 or 1".into()));
        }
        Ok(MaskGrid { grid, values })
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[self.grid.index(i, j)]
    }

    pub fn is_water(&self, i: usize, j: usize) -> bool {
        self.get(i, j) == 0
    }

    /// Index of the first sea-floor row in column `i` (`n_depth` if none).
    pub fn floor_row(&self, i: usize) -> usize {
        let n = self.grid.n_depth;
        let col = &self.values[i * n..(i + 1) * n];
        col.iter().position(|&v| v == 1).unwrap_or(n)
    }

    /// Each column is 0 down to the floor and 1 from there on.
    pub fn is_monotone(&self) -> bool {
        (0..self.grid.n_range).all(|i| {
            let n = self.grid.n_depth;
            let col = &self.values[i * n..(i + 1) * n];
            col.windows(2).all(|w| w[0] <= w[1])
        })
    }

    pub fn water_cells(&self) -> usize {
        self.values.iter().filter(|&&v| v == 0).count()
    }

    /// Sets every sea-floor cell of `field` to its clip level.
    pub fn apply_to(&self, field: &mut TLField) -> Result<()> {
        if field.grid != self.grid {
            return Err(Error::shape("mask vs field", &self.grid.shape(), &field.grid.shape()));
        }
        let clip = field.clip_db as f32;
        for (v, &m) in field.values.iter_mut().zip(&self.values) {
            if m == 1 {
                *v = clip;
            }
        }
        Ok(())
    }
}

/// Cell (i, j) is 1 iff the receiver depth is at or below the interpolated
/// bottom depth at that range.
pub fn rasterize_mask(bathy: &BathymetryProfile, grid: &GridSpec) -> Result<MaskGrid> {
    grid.validate()?;
    crate::acoustics::field::check_grid(grid, bathy)?;
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.n_range {
        let bottom = bathy.depth_at(grid.range_at(i));
        values.extend((0..grid.n_depth).map(|j| u8::from(grid.depth_at(j) >= bottom)));
    }
    Ok(MaskGrid { grid: *grid, values })
}
