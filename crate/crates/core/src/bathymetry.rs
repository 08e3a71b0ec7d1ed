//! Piecewise-linear ocean-bottom profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One straight piece of the bottom between two consecutive knots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BottomSegment {
    pub index: usize,
    pub start: (f64, f64),
    pub end: (f64, f64),
}

impl BottomSegment {
    /// Unit normal pointing up into the water column (depth grows downward).
    pub fn water_normal(&self) -> (f64, f64) {
        let dx = self.end.0 - self.start.0;
        let dz = self.end.1 - self.start.1;
        let len = dx.hypot(dz);
        (dz / len, -dx / len)
    }

    pub fn depth_at(&self, range: f64) -> f64 {
        let t = (range - self.start.0) / (self.end.0 - self.start.0);
        self.start.1 + t * (self.end.1 - self.start.1)
    }
}

/// Bottom depth as a function of range, linear between knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathymetryProfile {
    knots: Vec<(f64, f64)>,
    domain_range: f64,
    domain_depth: f64,
}

impl BathymetryProfile {
    pub fn new(knots: Vec<(f64, f64)>, domain_range: f64, domain_depth: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config(format!(
                "bathymetry needs at least 2 knots, got {}",
                knots.len()
            )));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::Config(format!(
                "first bathymetry knot must sit at range 0, got {}",
                knots[0].0
            )));
        }
        let last = knots[knots.len() - 1].0;
        if (last - domain_range).abs() > 1e-9 * domain_range.max(1.0) {
            return Err(Error::Config(format!(
                "last bathymetry knot must sit at the domain range {domain_range}, got {last}"
            )));
        }
        for (k, w) in knots.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config(format!(
                    "bathymetry knot ranges must strictly increase (knots {k} and {})",
                    k + 1
                )));
            }
        }
        for (k, &(r, d)) in knots.iter().enumerate() {
            if !(r.is_finite() && d.is_finite() && d > 0.0 && d <= domain_depth) {
                return Err(Error::Config(format!(
                    "bathymetry knot {k} at range {r} has depth {d} outside (0, {domain_depth}]"
                )));
            }
        }
        let mut knots = knots;
        let n = knots.len();
        knots[n - 1].0 = domain_range;
        Ok(BathymetryProfile {
            knots,
            domain_range,
            domain_depth,
        })
    }

    pub fn flat(depth: f64, domain_range: f64, domain_depth: f64) -> Result<Self> {
        Self::new(vec![(0.0, depth), (domain_range, depth)], domain_range, domain_depth)
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn domain_range(&self) -> f64 {
        self.domain_range
    }

    pub fn domain_depth(&self) -> f64 {
        self.domain_depth
    }

    pub fn segment(&self, index: usize) -> BottomSegment {
        BottomSegment {
            index,
            start: self.knots[index],
            end: self.knots[index + 1],
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = BottomSegment> + '_ {
        (0..self.knots.len() - 1).map(|k| self.segment(k))
    }

    /// Index of the segment containing `range` (clamped to the domain).
    pub fn segment_index_at(&self, range: f64) -> usize {
        let n = self.knots.len();
        match self
            .knots
            .binary_search_by(|k| k.0.partial_cmp(&range).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    /// Bottom depth at `range`, interpolated linearly and held constant
    /// outside the domain.
    pub fn depth_at(&self, range: f64) -> f64 {
        if range <= 0.0 {
            return self.knots[0].1;
        }
        if range >= self.domain_range {
            return self.knots[self.knots.len() - 1].1;
        }
        self.segment(self.segment_index_at(range)).depth_at(range)
    }

    /// Shallowest point of the profile.
    pub fn min_depth(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(f64::INFINITY, f64::min)
    }

    /// The same profile reflected about mid-range.
    pub fn mirrored(&self) -> Self {
        let knots = self
            .knots
            .iter()
            .rev()
            .map(|&(r, d)| (self.domain_range - r, d))
            .collect::<Vec<_>>();
        let mut knots = knots;
        knots[0].0 = 0.0;
        BathymetryProfile {
            knots,
            domain_range: self.domain_range,
            domain_depth: self.domain_depth,
        }
    }

    /// Reads `range_m,depth_m` rows; a header line is accepted.
    pub fn from_csv_reader<R: std::io::Read>(
        reader: R,
        domain_range: f64,
        domain_depth: f64,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut knots = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Config(format!("bathymetry csv: {e}")))?;
            if rec.len() < 2 {
                return Err(Error::Config(format!(
                    "bathymetry csv line {} needs two columns",
                    line + 1
                )));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(r), Ok(d)) => knots.push((r, d)),
                _ if line == 0 => continue,
                _ => {
                    return Err(Error::Config(format!(
                        "bathymetry csv line {} is not numeric",
                        line + 1
                    )))
                }
            }
        }
        Self::new(knots, domain_range, domain_depth)
    }

    pub fn from_csv_path(path: &Path, domain_range: f64, domain_depth: f64) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file, domain_range, domain_depth)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("range_m,depth_m\n");
        for (r, d) in &self.knots {
            out.push_str(&format!("{r},{d}\n"));
        }
        out
    }
}
