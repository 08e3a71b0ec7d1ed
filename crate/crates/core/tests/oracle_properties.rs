use oceantl::acoustics::{discretize_profile, trace_rays, Heading, RayEvent, SoundSpeedProfile, SourceSpec, TraceConfig};
use oceantl::bathymetry::BathymetryProfile;
use proptest::prelude::*;

const R: f64 = 100_000.0;
const D: f64 = 3000.0;

fn munk_like(axis: f64, c_ref: f64) -> SoundSpeedProfile {
    let samples = (0..=60)
        .map(|k| {
            let z = D * k as f64 / 60.0;
            (z, oceantl::acoustics::ssp::munk_speed(z, c_ref, axis, 1300.0, 0.00737))
        })
        .collect();
    SoundSpeedProfile::tabulated(samples).unwrap()
}

fn fan(depth: f64, n: usize) -> SourceSpec {
    SourceSpec {
        depth,
        fan: n,
        ..SourceSpec::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn snell_invariant_across_interfaces(axis in 800.0..1800.0f64, c_ref in 1480.0..1520.0f64, zs in 10.0..2900.0f64) {
        let env = discretize_profile(&munk_like(axis, c_ref), D, 24).unwrap();
        let bathy = BathymetryProfile::flat(D, R, D).unwrap();
        let rays = trace_rays(&env, &bathy, &fan(zs, 41), &TraceConfig::default()).unwrap();
        for ray in &rays {
            for w in ray.points.windows(2) {
                if w[1].event != RayEvent::Interface {
                    continue;
                }
                let before = w[0].direction.0.abs() / w[0].speed;
                let after = w[1].direction.0.abs() / w[1].speed;
                prop_assert!((after - before).abs() <= 1e-12 * before, "ray {}: {before} vs {after}", ray.index);
            }
        }
    }

    #[test]
    fn amplitude_never_grows_along_a_ray(
        apex in 300.0..2800.0f64,
        centre in 20_000.0..80_000.0f64,
        half_base in 2_000.0..15_000.0f64,
        zs in 10.0..200.0f64,
    ) {
        let env = discretize_profile(&SoundSpeedProfile::munk(), D, 24).unwrap();
        let bathy = BathymetryProfile::new(
            vec![(0.0, D), (centre - half_base, D), (centre, apex), (centre + half_base, D), (R, D)],
            R,
            D,
        )
        .unwrap();
        let rays = trace_rays(&env, &bathy, &fan(zs, 61), &TraceConfig::default()).unwrap();
        for ray in &rays {
            let amp = |p: &oceantl::acoustics::RayPoint| p.reflection.abs() / p.path_length.max(1.0).sqrt();
            for w in ray.points.windows(2) {
                prop_assert!(w[1].path_length >= w[0].path_length);
                prop_assert!(amp(&w[1]) <= amp(&w[0]) * (1.0 + 1e-12), "ray {} grew at range {}", ray.index, w[1].range);
            }
        }
    }

    #[test]
    fn mirrored_source_retraces_mirrored_paths(
        d0 in 1500.0..3000.0f64,
        d1 in 800.0..3000.0f64,
        d2 in 1500.0..3000.0f64,
        x1 in 20_000.0..80_000.0f64,
        zs in 10.0..700.0f64,
    ) {
        let env = discretize_profile(&SoundSpeedProfile::munk(), D, 24).unwrap();
        let bathy = BathymetryProfile::new(vec![(0.0, d0), (x1, d1), (R, d2)], R, D).unwrap();
        let mirror = bathy.mirrored();
        let cfg = TraceConfig::default();
        let src = fan(zs, 21);
        let back = SourceSpec {
            range: R,
            heading: Heading::Uprange,
            ..src.clone()
        };
        let a = trace_rays(&env, &bathy, &src, &cfg).unwrap();
        let b = trace_rays(&env, &mirror, &back, &cfg).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (ra, rb) in a.iter().zip(&b) {
            prop_assert_eq!(ra.points.len(), rb.points.len(), "ray {}", ra.index);
            for (p, q) in ra.points.iter().zip(&rb.points) {
                prop_assert!((p.range - (R - q.range)).abs() < 1e-6, "ray {} range {} vs {}", ra.index, p.range, R - q.range);
                prop_assert!((p.depth - q.depth).abs() < 1e-6);
                prop_assert!((p.path_length - q.path_length).abs() < 1e-6);
                prop_assert_eq!(p.reflection, q.reflection);
            }
        }
    }
}

#[test]
fn flat_bottom_keeps_snell_invariant_through_reflections() {
    let env = discretize_profile(&SoundSpeedProfile::munk(), D, 24).unwrap();
    let bathy = BathymetryProfile::flat(D, R, D).unwrap();
    let rays = trace_rays(&env, &bathy, &fan(18.0, 81), &TraceConfig::default()).unwrap();
    for ray in &rays {
        let k0 = ray.points[0].direction.0.abs() / ray.points[0].speed;
        for p in &ray.points {
            let k = p.direction.0.abs() / p.speed;
            assert!((k - k0).abs() <= 1e-12 * k0, "ray {} at {:?}", ray.index, p.event);
        }
    }
}
