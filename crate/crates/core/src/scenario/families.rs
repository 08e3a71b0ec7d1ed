//! Parametric bathymetry families.
//!
//! Every sample is described by a [`ScenarioSpec`]: the family, the drawn
//! parameters and the seed they were drawn from. The profile is a pure
//! function of the spec and the domain, so a dataset can be rebuilt from its
//! manifest alone.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bathymetry::BathymetryProfile;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SeamountHeight,
    SeamountBase,
    SeamountGeneral,
    WedgeDown,
    WedgeUp,
    WedgeVee,
    DickinsLike,
    External,
}

impl Family {
    /// The family of task `D_i` in the canonical sequence.
    pub fn for_task(task_id: usize) -> Option<Family> {
        Some(match task_id {
            1 => Family::SeamountHeight,
            2 => Family::SeamountBase,
            3 => Family::SeamountGeneral,
            4 => Family::WedgeDown,
            5 => Family::WedgeUp,
            6 => Family::WedgeVee,
            7 => Family::DickinsLike,
            _ => return None,
        })
    }

    pub fn default_count(self) -> usize {
        match self {
            Family::SeamountHeight => 75,
            Family::SeamountBase => 35,
            Family::SeamountGeneral => 30,
            Family::WedgeDown | Family::WedgeUp | Family::WedgeVee => 20,
            Family::DickinsLike => 10,
            Family::External => 1,
        }
    }
}

/// Parameter bounds for the random families. Ranges in m, widths in m.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyBounds {
    pub floor_depth: f64,
    pub height_apex_depth: (f64, f64),
    pub height_base: (f64, f64),
    pub base_apex_depths: Vec<f64>,
    pub base_width: (f64, f64),
    pub base_center: f64,
    pub general_apex_depth: (f64, f64),
    pub general_width: (f64, f64),
    pub general_apex_range: (f64, f64),
    /// Deep and shallow end depths of the monotone wedges.
    pub wedge_deep: (f64, f64),
    pub wedge_shallow: (f64, f64),
    pub vee_start: (f64, f64),
    pub vee_turn_range: (f64, f64),
    /// Extra depth of the vee's turning knot below the deeper end.
    pub vee_turn_extra: (f64, f64),
    pub vee_end: (f64, f64),
    pub dickins_apex_depth: (f64, f64),
    pub dickins_half_width: (f64, f64),
    pub dickins_center: (f64, f64),
    pub dickins_knots: usize,
}

impl Default for FamilyBounds {
    fn default() -> Self {
        FamilyBounds {
            floor_depth: 3000.0,
            height_apex_depth: (500.0, 1600.0),
            height_base: (10_000.0, 30_000.0),
            base_apex_depths: vec![800.0, 1200.0],
            base_width: (5_000.0, 40_000.0),
            base_center: 20_000.0,
            general_apex_depth: (500.0, 1600.0),
            general_width: (5_000.0, 40_000.0),
            general_apex_range: (15_000.0, 60_000.0),
            wedge_deep: (2_400.0, 3_000.0),
            wedge_shallow: (800.0, 2_000.0),
            vee_start: (2_000.0, 2_400.0),
            vee_turn_range: (20_000.0, 60_000.0),
            vee_turn_extra: (100.0, 400.0),
            vee_end: (1_900.0, 2_300.0),
            dickins_apex_depth: (600.0, 1200.0),
            dickins_half_width: (8_000.0, 15_000.0),
            dickins_center: (25_000.0, 60_000.0),
            dickins_knots: 32,
        }
    }
}

impl FamilyBounds {
    pub fn validate(&self, domain_depth: f64) -> Result<()> {
        let ranges = [
            ("height_apex_depth", self.height_apex_depth),
            ("base_width", self.base_width),
            ("general_apex_depth", self.general_apex_depth),
            ("general_width", self.general_width),
            ("general_apex_range", self.general_apex_range),
            ("wedge_deep", self.wedge_deep),
            ("wedge_shallow", self.wedge_shallow),
            ("vee_start", self.vee_start),
            ("vee_turn_range", self.vee_turn_range),
            ("vee_turn_extra", self.vee_turn_extra),
            ("vee_end", self.vee_end),
            ("dickins_apex_depth", self.dickins_apex_depth),
            ("dickins_half_width", self.dickins_half_width),
            ("dickins_center", self.dickins_center),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("bound {name} = ({lo}, {hi}) is not an interval")));
            }
        }
        if !(self.floor_depth > 0.0 && self.floor_depth <= domain_depth) {
            return Err(Error::Config(format!("floor depth {} outside (0, {domain_depth}]", self.floor_depth)));
        }
        if self.base_apex_depths.is_empty() {
            return Err(Error::Config("base_apex_depths is empty".into()));
        }
        if !(2..=32).contains(&self.dickins_knots) {
            return Err(Error::Config(format!("dickins_knots must be in 2..=32, got {}", self.dickins_knots)));
        }
        Ok(())
    }
}

/// One bathymetry sample: family, drawn parameters and the seed used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub family: Family,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    /// Knot file for the external family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ScenarioSpec {
    pub fn new(family: Family, params: &[(&str, f64)], seed: u64) -> Self {
        ScenarioSpec {
            family,
            params: params.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            seed,
            path: None,
        }
    }

    pub fn external(path: PathBuf) -> Self {
        ScenarioSpec {
            family: Family::External,
            params: BTreeMap::new(),
            seed: 0,
            path: Some(path),
        }
    }

    pub fn param(&self, name: &str) -> Result<f64> {
        self.params.get(name).copied().ok_or_else(|| {
            Error::Config(format!("{:?} scenario is missing parameter `{name}`", self.family))
        })
    }

    /// Builds the profile this spec describes.
    pub fn profile(&self, domain_range: f64, domain_depth: f64) -> Result<BathymetryProfile> {
        let p = |k: &str| self.param(k);
        match self.family {
            Family::SeamountHeight | Family::SeamountBase | Family::SeamountGeneral => triangle(
                p("floor_depth")?,
                p("base_start")?,
                p("apex_range")?,
                p("apex_depth")?,
                p("base_end")?,
                domain_range,
                domain_depth,
            ),
            Family::WedgeDown | Family::WedgeUp => {
                let (a, b) = (p("start_depth")?, p("end_depth")?);
                check_depths(&[a, b], domain_depth)?;
                BathymetryProfile::new(vec![(0.0, a), (domain_range, b)], domain_range, domain_depth)
            }
            Family::WedgeVee => {
                let (a, x, t, b) = (p("start_depth")?, p("turn_range")?, p("turn_depth")?, p("end_depth")?);
                check_depths(&[a, t, b], domain_depth)?;
                if !(x > 0.0 && x < domain_range) {
                    return Err(Error::Config(format!("vee turning range {x} m outside the domain")));
                }
                BathymetryProfile::new(vec![(0.0, a), (x, t), (domain_range, b)], domain_range, domain_depth)
            }
            Family::DickinsLike => gaussian_ridge(
                p("floor_depth")?,
                p("center")?,
                p("apex_depth")?,
                p("half_width")?,
                p("knots")? as usize,
                domain_range,
                domain_depth,
            ),
            Family::External => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("external scenario needs a knot file".into()))?;
                BathymetryProfile::from_csv_path(path, domain_range, domain_depth)
            }
        }
    }
}

fn check_depths(depths: &[f64], domain_depth: f64) -> Result<()> {
    for &d in depths {
        if !(d > 0.0 && d <= domain_depth) {
            return Err(Error::Config(format!("depth {d} m outside (0, {domain_depth}]")));
        }
    }
    Ok(())
}

/// Triangular seamount on a flat floor, truncated to the domain.
fn triangle(
    floor: f64,
    base_start: f64,
    apex_range: f64,
    apex_depth: f64,
    base_end: f64,
    domain_range: f64,
    domain_depth: f64,
) -> Result<BathymetryProfile> {
    check_depths(&[floor, apex_depth], domain_depth)?;
    if !(base_start <= apex_range && apex_range <= base_end) {
        return Err(Error::Config(format!(
            "seamount knots out of order: {base_start}, {apex_range}, {base_end}"
        )));
    }
    let depth = |x: f64| -> f64 {
        if x <= base_start || x >= base_end {
            floor
        } else if x <= apex_range {
            if apex_range == base_start {
                apex_depth
            } else {
                floor + (apex_depth - floor) * (x - base_start) / (apex_range - base_start)
            }
        } else if base_end == apex_range {
            apex_depth
        } else {
            floor + (apex_depth - floor) * (base_end - x) / (base_end - apex_range)
        }
    };
    let mut xs: Vec<f64> = [0.0, base_start, apex_range, base_end, domain_range]
        .into_iter()
        .filter(|&x| (0.0..=domain_range).contains(&x))
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut knots: Vec<(f64, f64)> = xs.into_iter().map(|x| (x, depth(x))).collect();
    if let Some(apex) = knots.iter_mut().find(|k| k.0 == apex_range) {
        apex.1 = apex_depth;
    }
    BathymetryProfile::new(knots, domain_range, domain_depth)
}

/// Gaussian ridge `floor - h exp(-ln2 ((x - c) / w)^2)` sampled at `n` knots,
/// with `w` the half-width at half height.
fn gaussian_ridge(
    floor: f64,
    center: f64,
    apex_depth: f64,
    half_width: f64,
    n: usize,
    domain_range: f64,
    domain_depth: f64,
) -> Result<BathymetryProfile> {
    check_depths(&[floor, apex_depth], domain_depth)?;
    if !(2..=32).contains(&n) || !(half_width > 0.0) {
        return Err(Error::Config(format!("ridge needs 2..=32 knots and positive width (n={n}, w={half_width})")));
    }
    let h = floor - apex_depth;
    let depth = |x: f64| floor - h * (-std::f64::consts::LN_2 * ((x - center) / half_width).powi(2)).exp();
    let mut xs = vec![0.0, domain_range];
    if n > 2 {
        // interior knots over +-3 half-widths, always hitting the apex
        let lo = (center - 3.0 * half_width).max(0.0);
        let hi = (center + 3.0 * half_width).min(domain_range);
        let m = n - 2;
        for k in 0..m {
            let x = if m == 1 { center } else { lo + (hi - lo) * k as f64 / (m - 1) as f64 };
            xs.push(x.clamp(0.0, domain_range));
        }
        // move the nearest interior knot onto the apex
        let near = (2..xs.len())
            .min_by(|&a, &b| (xs[a] - center).abs().total_cmp(&(xs[b] - center).abs()))
            .unwrap();
        xs[near] = center.clamp(0.0, domain_range);
    }
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let knots = xs.into_iter().map(|x| (x, depth(x).min(domain_depth))).collect();
    BathymetryProfile::new(knots, domain_range, domain_depth)
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Derives the seed of sample `index` from a task seed (splitmix64).
pub fn sample_seed(task_seed: u64, index: usize) -> u64 {
    let mut z = task_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the parameters of one sample.
pub fn draw_spec(family: Family, bounds: &FamilyBounds, domain_range: f64, seed: u64) -> Result<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = bounds;
    let spec = match family {
        Family::SeamountHeight => ScenarioSpec::new(
            family,
            &[
                ("floor_depth", b.floor_depth),
                ("base_start", b.height_base.0),
                ("apex_range", 0.5 * (b.height_base.0 + b.height_base.1)),
                ("base_end", b.height_base.1),
                ("apex_depth", uniform(&mut rng, b.height_apex_depth)),
            ],
            seed,
        ),
        Family::SeamountBase => {
            let apex = b.base_apex_depths[rng.random_range(0..b.base_apex_depths.len())];
            let width = uniform(&mut rng, b.base_width);
            ScenarioSpec::new(
                family,
                &[
                    ("floor_depth", b.floor_depth),
                    ("base_start", (b.base_center - 0.5 * width).max(0.0)),
                    ("apex_range", b.base_center),
                    ("base_end", (b.base_center + 0.5 * width).min(domain_range)),
                    ("apex_depth", apex),
                    ("width", width),
                ],
                seed,
            )
        }
        Family::SeamountGeneral => {
            let apex = uniform(&mut rng, b.general_apex_depth);
            let width = uniform(&mut rng, b.general_width);
            let at = uniform(&mut rng, b.general_apex_range);
            ScenarioSpec::new(
                family,
                &[
                    ("floor_depth", b.floor_depth),
                    ("base_start", (at - 0.5 * width).max(0.0)),
                    ("apex_range", at),
                    ("base_end", (at + 0.5 * width).min(domain_range)),
                    ("apex_depth", apex),
                    ("width", width),
                ],
                seed,
            )
        }
        Family::WedgeDown | Family::WedgeUp => {
            let deep = uniform(&mut rng, b.wedge_deep);
            let shallow = uniform(&mut rng, b.wedge_shallow);
            let (start, end) = if family == Family::WedgeDown { (deep, shallow) } else { (shallow, deep) };
            ScenarioSpec::new(family, &[("start_depth", start), ("end_depth", end)], seed)
        }
        Family::WedgeVee => {
            let start = uniform(&mut rng, b.vee_start);
            let end = uniform(&mut rng, b.vee_end);
            let turn_range = uniform(&mut rng, b.vee_turn_range);
            let turn = (start.max(end) + uniform(&mut rng, b.vee_turn_extra)).min(b.floor_depth);
            ScenarioSpec::new(
                family,
                &[
                    ("start_depth", start),
                    ("turn_range", turn_range),
                    ("turn_depth", turn),
                    ("end_depth", end),
                ],
                seed,
            )
        }
        Family::DickinsLike => ScenarioSpec::new(
            family,
            &[
                ("floor_depth", b.floor_depth),
                ("center", uniform(&mut rng, b.dickins_center)),
                ("apex_depth", uniform(&mut rng, b.dickins_apex_depth)),
                ("half_width", uniform(&mut rng, b.dickins_half_width)),
                ("knots", b.dickins_knots as f64),
            ],
            seed,
        ),
        Family::External => {
            return Err(Error::Config("external scenarios are read from a knot file, not drawn".into()))
        }
    };
    Ok(spec)
}

/// Draws `n` specs of one family; sample `k` uses `sample_seed(seed, k)`.
pub fn draw_specs(family: Family, bounds: &FamilyBounds, domain_range: f64, n: usize, seed: u64) -> Result<Vec<ScenarioSpec>> {
    (0..n)
        .map(|k| draw_spec(family, bounds, domain_range, sample_seed(seed, k)))
        .collect()
}

fn profiles(family: Family, n: usize, seed: u64) -> Result<Vec<BathymetryProfile>> {
    let bounds = FamilyBounds::default();
    draw_specs(family, &bounds, 100_000.0, n, seed)?
        .iter()
        .map(|s| s.profile(100_000.0, 3000.0))
        .collect()
}

/// Triangular seamounts of varying height over a 100 km x 3000 m domain.
pub fn gen_seamount_height(n: usize, seed: u64) -> Result<Vec<BathymetryProfile>> {
    profiles(Family::SeamountHeight, n, seed)
}

/// Triangular seamounts of varying base width.
pub fn gen_seamount_base(n: usize, seed: u64) -> Result<Vec<BathymetryProfile>> {
    profiles(Family::SeamountBase, n, seed)
}

/// Triangular seamounts of varying height, width and position.
pub fn gen_seamount_general(n: usize, seed: u64) -> Result<Vec<BathymetryProfile>> {
    profiles(Family::SeamountGeneral, n, seed)
}

/// Smooth single-ridge stand-ins for surveyed seamount profiles.
pub fn gen_dickins_like(n: usize, seed: u64) -> Result<Vec<BathymetryProfile>> {
    profiles(Family::DickinsLike, n, seed)
}

/// One wedge profile. `params` holds `start_depth` and `end_depth`, plus
/// `turn_range` and `turn_depth` for the vee; missing values are drawn from
/// the default bounds with `seed`.
pub fn gen_wedge(kind: Family, params: &BTreeMap<String, f64>, seed: u64) -> Result<BathymetryProfile> {
    if !matches!(kind, Family::WedgeDown | Family::WedgeUp | Family::WedgeVee) {
        return Err(Error::Config(format!("{kind:?} is not a wedge family")));
    }
    let mut spec = draw_spec(kind, &FamilyBounds::default(), 100_000.0, seed)?;
    for (k, v) in params {
        if !spec.params.contains_key(k) {
            return Err(Error::Config(format!("unknown wedge parameter `{k}`")));
        }
        spec.params.insert(k.clone(), *v);
    }
    spec.profile(100_000.0, 3000.0)
}

/// The vee test case: 2180 m at 0 km, 2380 m at 40 km, 2100 m at 100 km.
pub fn vee_test_case() -> ScenarioSpec {
    ScenarioSpec::new(
        Family::WedgeVee,
        &[
            ("start_depth", 2180.0),
            ("turn_range", 40_000.0),
            ("turn_depth", 2380.0),
            ("end_depth", 2100.0),
        ],
        0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn height_family_bounds_and_count() {
        let ps = gen_seamount_height(75, 11).unwrap();
        assert_eq!(ps.len(), 75);
        for p in &ps {
            let apex = p.depth_at(20_000.0);
            assert!((500.0..=1600.0).contains(&apex));
            assert_eq!(p.depth_at(10_000.0), 3000.0);
            assert_eq!(p.depth_at(30_000.0), 3000.0);
            assert_eq!(p.min_depth(), apex);
        }
        assert_eq!(ps, gen_seamount_height(75, 11).unwrap());
        assert_ne!(ps, gen_seamount_height(75, 12).unwrap());
    }

    #[test]
    fn zero_height_seamount_is_flat() {
        let spec = ScenarioSpec::new(
            Family::SeamountHeight,
            &[
                ("floor_depth", 3000.0),
                ("base_start", 10_000.0),
                ("apex_range", 20_000.0),
                ("base_end", 30_000.0),
                ("apex_depth", 3000.0),
            ],
            0,
        );
        let p = spec.profile(100_000.0, 3000.0).unwrap();
        assert!(p.knots().iter().all(|k| k.1 == 3000.0));
    }

    #[test]
    fn base_family_apexes_and_widths() {
        let specs = draw_specs(Family::SeamountBase, &FamilyBounds::default(), 100_000.0, 35, 5).unwrap();
        for s in &specs {
            let apex = s.param("apex_depth").unwrap();
            assert!(apex == 800.0 || apex == 1200.0);
            let w = s.param("width").unwrap();
            assert!((5_000.0..=40_000.0).contains(&w));
        }
        // a 5 km base centred at 20 km
        let mut s = specs[0].clone();
        s.params.insert("base_start".into(), 17_500.0);
        s.params.insert("base_end".into(), 22_500.0);
        let p = s.profile(100_000.0, 3000.0).unwrap();
        let xs: Vec<f64> = p.knots().iter().map(|k| k.0).collect();
        assert_eq!(xs, vec![0.0, 17_500.0, 20_000.0, 22_500.0, 100_000.0]);
    }

    #[test]
    fn general_family_never_shallower_than_500() {
        for p in gen_seamount_general(100, 3).unwrap() {
            assert!(p.min_depth() >= 500.0);
        }
    }

    #[test]
    fn vee_defaults() {
        let p = vee_test_case().profile(100_000.0, 3000.0).unwrap();
        assert_eq!(p.knots(), &[(0.0, 2180.0), (40_000.0, 2380.0), (100_000.0, 2100.0)]);
    }

    #[test]
    fn wedges() {
        let flat: BTreeMap<String, f64> = [("start_depth".to_string(), 2000.0), ("end_depth".to_string(), 2000.0)].into();
        let p = gen_wedge(Family::WedgeDown, &flat, 0).unwrap();
        assert!(p.knots().iter().all(|k| k.1 == 2000.0));
        let down = gen_wedge(Family::WedgeDown, &BTreeMap::new(), 9).unwrap();
        assert!(down.knots()[0].1 > down.knots()[1].1);
        let swapped: BTreeMap<String, f64> = [
            ("start_depth".to_string(), down.knots()[1].1),
            ("end_depth".to_string(), down.knots()[0].1),
        ]
        .into();
        let up = gen_wedge(Family::WedgeUp, &swapped, 0).unwrap();
        assert_eq!(up, down.mirrored());
        let deep: BTreeMap<String, f64> = [("start_depth".to_string(), 3500.0)].into();
        assert!(matches!(gen_wedge(Family::WedgeDown, &deep, 0), Err(Error::Config(_))));
    }

    #[test]
    fn dickins_like_profiles() {
        let ps = gen_dickins_like(10, 1).unwrap();
        assert_eq!(ps.len(), 10);
        for p in &ps {
            assert!(p.knots().len() <= 32);
            assert!(p.knots().windows(2).all(|w| w[0].0 < w[1].0));
            let apex = p.min_depth();
            assert!((600.0 - 1e-9..=1200.0 + 1e-9).contains(&apex), "{apex}");
        }
    }
}
