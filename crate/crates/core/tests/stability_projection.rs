use std::f64::consts::{FRAC_PI_4, PI, TAU};

use fpp_core::geodesic::passage_time;
use fpp_core::grid::{overwrite_uniform, sample_environment};
use fpp_core::model::make_weight_model;
use fpp_core::projection::{
    build_proj_table, convexity_check, project_value, proj_tile_gradient, signature_cluster, NestedGrids, ProjDomain,
    Signature, TileNorm,
};
use fpp_core::stability::{
    gradient, gradient_ratio_violations, interior_deltas, is_stable_point, level_sum, required_delta, scan_scales, tile_gradient, tile_stability,
    AngleGrid, ScanConfig, StabilityParams, TileGrid,
};
use fpp_core::{Axis, Edge, EnvironmentGrid, Point, RealPoint};
use proptest::prelude::*;
use rand::Rng;

fn params(delta: f64, step: f64, k: usize) -> StabilityParams {
    StabilityParams { delta, eta: PI / 4.0, step, k, epsilon: 0.1 }
}

fn scan_config(n: i64, j_min: u32, j_max: u32) -> ScanConfig {
    ScanConfig {
        n,
        j_min,
        j_max,
        m: 1,
        delta3: 0.05,
        params: params(0.3, 1.0, 4),
        lines_per_direction: 3,
        points_per_tile: 3,
        alpha_hat: 0.5,
        seed: 1,
    }
}

#[test]
fn stable_point_examples() {
    let env = EnvironmentGrid::constant(40, 1.0, 1.0).unwrap();
    let z = RealPoint::new(0.0, 0.0);
    assert!(is_stable_point(&env, z, 0.0, 3.0, 5, 0.0).unwrap());
    let noisy = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 12, 3).unwrap();
    assert!(is_stable_point(&noisy, z, 1.0, 2.0, 1, 0.0).unwrap());
}

#[test]
fn heavy_band_breaks_stability() {
    let env = EnvironmentGrid::constant(20, 1.0, 0.1).unwrap();
    let band: Vec<Edge> = (-20..=20)
        .flat_map(|y| (4..8).map(move |x| Edge::new(Point::new(x, y), Axis::Horizontal)))
        .collect();
    let banded = overwrite_uniform(&env, &band, 1.0, 1.0, 0).unwrap();
    let z = RealPoint::new(0.0, 0.0);
    // 0.4 for the first step, 4.4 for two
    assert!((passage_time(&banded, Point::new(0, 0), Point::new(8, 0), None).unwrap() - 4.4).abs() < 1e-12);
    assert!(!is_stable_point(&banded, z, 0.0, 4.0, 2, 0.5).unwrap());
    assert!(is_stable_point(&env, z, 0.0, 4.0, 2, 0.0).unwrap());
}

#[test]
fn tile_fraction_on_constant_grid_is_exhaustive_one() {
    let env = EnvironmentGrid::constant(30, 1.0, 1.0).unwrap();
    let grid = TileGrid::new(8, 1).unwrap();
    let p = params(0.5, 4.0, 3);
    for v in grid.tiles() {
        let verdict = tile_stability(&env, &grid, v, &p).unwrap();
        let oracle = grid
            .lattice_points(v)
            .iter()
            .all(|z| AngleGrid::from_spacing(p.eta).unwrap().angles().iter().all(|&t| {
                is_stable_point(&env, z.to_real(), t, p.step, p.k, p.delta).unwrap()
            }));
        assert_eq!(verdict.fraction == 1.0, oracle);
        assert!(verdict.stable);
    }
}

#[test]
fn vacuous_epsilon_and_reach_errors() {
    let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 20, 1).unwrap();
    let grid = TileGrid::new(8, 1).unwrap();
    let lax = StabilityParams { epsilon: 1.0, ..params(1e-6, 2.0, 2) };
    for v in grid.tiles() {
        assert!(tile_stability(&env, &grid, v, &lax).unwrap().stable);
    }
    assert!(tile_stability(&env, &grid, [1, 1], &params(0.3, 8.0, 4)).is_err());
}

#[test]
fn boosted_tile_is_nearly_stable() {
    let eps7 = 0.05;
    let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 24, 8).unwrap();
    let all: Vec<Edge> = env.edges().collect();
    let boosted = overwrite_uniform(&env, &all, 1.0 - eps7, 1.0, 2).unwrap();
    let grid = TileGrid::new(4, 1).unwrap();
    // axis steps of 4 differ from linear by at most eps7 per edge, plus one
    // unit of rounding slack in diagonal directions
    let slack = eps7 / (1.0 - eps7) + 2.0 / 4.0;
    for v in grid.tiles() {
        assert_eq!(tile_stability(&boosted, &grid, v, &params(slack, 4.0, 3)).unwrap().fraction, 1.0);
    }
}

#[test]
fn tile_gradient_is_the_centre_gradient() {
    let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 20, 5).unwrap();
    let grid = TileGrid::new(8, 2).unwrap();
    for v in grid.tiles() {
        let g = tile_gradient(&env, &grid, v, 0.7, 4.0).unwrap();
        assert_eq!(g, gradient(&env, grid.center(v), 0.7, 4.0).unwrap());
    }
    let flat = EnvironmentGrid::constant(20, 1.0, 1.0).unwrap();
    assert_eq!(tile_gradient(&flat, &grid, [1, 1], 0.0, 4.0).unwrap(), 1.0);
}

#[test]
fn constant_grid_scan_is_flat() {
    let env = EnvironmentGrid::constant(98, 1.0, 0.6).unwrap();
    let report = scan_scales(&env, &scan_config(32, 1, 3)).unwrap();
    assert!(report.scan.ratios.iter().all(|&r| r == 1.0));
    assert!(report.scan.unstable_fractions.iter().all(|f| *f == Some(0.0)));
    assert_eq!(report.unstable_fraction, 0.0);
    assert_eq!(report.scale, 1);
    assert!(report.unstable_set().is_empty());
    for g in &report.gradients {
        assert!(g.value > 0.0 && g.value <= 3.0 * env.b());
    }
}

#[test]
fn level_sums_never_decrease() {
    let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 98, 12).unwrap();
    let cfg = scan_config(32, 1, 3);
    let angles = AngleGrid::from_spacing(cfg.params.eta).unwrap();
    let sums: Vec<_> = (1..=3).map(|j| level_sum(&env, &cfg, &angles, j).unwrap()).collect();
    assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    let report = scan_scales(&env, &cfg).unwrap();
    let unstable = report.tiles.iter().filter(|t| !t.stable).count();
    assert_eq!(report.unstable_set().len(), unstable);
}

#[test]
fn gradient_ratios_on_stable_constant_points() {
    // if z is stable at (delta, l, k) then gradients over lengths in
    // [k l / 4, k l] agree within c0 (eta + delta + 1/k)
    let env = EnvironmentGrid::constant(40, 1.0, 1.0).unwrap();
    let (delta, step, k, c0) = (0.1, 2.0, 8usize, 8.0);
    let angles = AngleGrid::from_spacing(PI / 8.0).unwrap();
    let slack = c0 * (angles.spacing() + delta + 1.0 / k as f64);
    let z = RealPoint::new(0.3, -0.2);
    let mut violations = 0;
    for &theta in &angles.angles() {
        if !is_stable_point(&env, z, theta, step, k, delta).unwrap() {
            continue;
        }
        let lengths = [k as f64 * step / 4.0, k as f64 * step / 2.0, k as f64 * step];
        for &a in &lengths {
            for &b in &lengths {
                let r = gradient(&env, z, theta, a).unwrap() / gradient(&env, z, theta, b).unwrap();
                if r > 1.0 + slack || r < 1.0 / (1.0 + slack) {
                    violations += 1;
                }
            }
        }
    }
    assert_eq!(violations, 0);
    let params = StabilityParams { delta, eta: PI / 8.0, step, k, epsilon: 0.1 };
    assert_eq!(gradient_ratio_violations(&env, z, &params, c0).unwrap(), 0);
    // horizontal weights drift upward with x: stable, but gradients drift too
    let drift = EnvironmentGrid::from_fn(env.model(), 40, |e| match e.axis {
        Axis::Horizontal => 0.5 + 0.005 * e.origin.x.abs() as f64,
        Axis::Vertical => 1.0,
    })
    .unwrap();
    assert!(is_stable_point(&drift, z, 0.0, step, k, delta).unwrap());
    assert!(gradient_ratio_violations(&drift, z, &params, 0.01).unwrap() > 0);
}

#[test]
fn nearby_points_inherit_coarser_stability() {
    let model = make_weight_model("uniform", 1.0, &[]).unwrap();
    let base = sample_environment(&model, 40, 6).unwrap();
    let env = EnvironmentGrid::from_fn(&model, 40, |e| 0.9 + 0.1 * base.weight(e).unwrap()).unwrap();
    let (step, k, c, m, alpha_hat) = (2.0, 8usize, 4usize, 1.0, 0.9);
    let c1 = 4.0 * env.b() / alpha_hat;
    let z = RealPoint::new(0.0, 0.0);
    for theta in [0.0, PI / 2.0, PI, 1.5 * PI] {
        let times: Vec<f64> = (1..=k)
            .map(|kk| fpp_core::geodesic::pt_real(&env, z, z.add(RealPoint::polar(step * kk as f64, theta))).unwrap())
            .collect();
        let delta = required_delta(&times);
        let moved = z.add(RealPoint::polar(step * m, theta + PI / 2.0));
        let widened = delta + c1 * m / c as f64;
        assert!(is_stable_point(&env, moved, theta, c as f64 * step, k / c, widened).unwrap());
    }
}

#[test]
fn interior_points_of_smooth_lines() {
    // pieces within [1, 1 + delta] keep every interior point delta-stable;
    // the measured constant is reported
    let mut rng = fpp_core::seed::rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let delta = rng.gen_range(0.01..0.3);
        let k = rng.gen_range(2..10);
        let pieces: Vec<f64> = (0..40).map(|_| rng.gen_range(1.0..1.0 + delta)).collect();
        for d in interior_deltas(&pieces, k) {
            assert!(d <= delta + 1e-12);
            worst = worst.max(d / (delta * k as f64));
        }
    }
    eprintln!("measured interior constant {worst:.4}");
}

#[test]
fn projection_floor_examples() {
    assert_eq!(project_value(3.3, 2.0, 0.5), 3.0);
    assert_eq!(project_value(3.0, 2.0, 0.5), 3.0);
}

#[test]
fn table_sandwich_and_value_count() {
    let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 17, 2).unwrap();
    let grids = NestedGrids::new(16, 1, 2).unwrap();
    let eta1 = 0.05;
    let table = build_proj_table(&env, &grids, eta1, ProjDomain::Fine).unwrap();
    for e in table.entries() {
        let d = e.z.dist(e.w);
        assert!(e.value <= e.passage_time && e.passage_time - e.value <= eta1 * d);
        assert_eq!(e.value, project_value(e.passage_time, d, eta1));
    }
    assert!(table.distinct_levels() as f64 <= 3.0 * env.b() / eta1 + 1.0);
    let again = build_proj_table(&env, &grids, eta1, ProjDomain::Fine).unwrap();
    assert_eq!(table.to_csv(), again.to_csv());
}

#[test]
fn constant_table_is_constant_per_direction() {
    let env = EnvironmentGrid::constant(17, 1.0, 1.0).unwrap();
    let grids = NestedGrids::new(16, 1, 2).unwrap();
    let table = build_proj_table(&env, &grids, 0.1, ProjDomain::TileCenters).unwrap();
    let g = proj_tile_gradient(&table, [1, 1], 0.0).unwrap();
    assert!((g - 1.0).abs() <= 0.1);
    let norm = TileNorm::from_table(&table, [2, 2], AngleGrid::from_spacing(PI / 4.0).unwrap()).unwrap();
    assert_eq!(norm.eval(0.0, 20.0), 2.0 * norm.eval(0.0, 10.0));
    assert!((norm.eval(0.0, 10.0) - 10.0).abs() <= 1.0);
    assert!(norm.gradients.iter().all(|&x| x > 0.0 && x <= 3.0));
    let w = RealPoint::new(3.0, 0.0);
    assert_eq!(convexity_check(&norm, &[w], 0.0), (true, 1.0));
    let (ok, ratio) = convexity_check(&norm, &[w, w.scale(2.0)], 0.1);
    assert!(ok && ratio <= 1.1);
    let diag = RealPoint::polar(5.0, FRAC_PI_4);
    assert!(norm.of_vector(diag) <= 3.0 * diag.norm());
}

#[test]
fn clusters_of_constant_grids() {
    let grids = NestedGrids::new(8, 1, 1).unwrap();
    let sigs: Vec<Signature> = (0..5)
        .map(|s| {
            let env = EnvironmentGrid::constant(9, 1.0, 0.5).unwrap().with_seed(Some(s));
            Signature::new(&build_proj_table(&env, &grids, 0.2, ProjDomain::TileCenters).unwrap(), &[])
        })
        .collect();
    let c = signature_cluster(&sigs).unwrap();
    assert_eq!((c.members.len(), c.cluster_count), (5, 1));
    assert!(signature_cluster(&[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn floor_sandwich(pt in 0.0f64..30.0, d in 0.5f64..20.0, eta in 0.01f64..1.0) {
        let v = project_value(pt, d, eta);
        prop_assert!(v <= pt && pt - v <= eta * d + 1e-12);
    }

    #[test]
    fn required_delta_is_tight(times in prop::collection::vec(0.1f64..5.0, 1..8)) {
        let d = required_delta(&times);
        prop_assert!(fpp_core::stability::stable_profile(&times, d * (1.0 + 1e-12) + 1e-15));
    }

    #[test]
    fn nearest_angle_is_within_half_spacing(count in 1usize..64, theta in -10.0f64..10.0) {
        let g = AngleGrid::with_count(count).unwrap();
        let a = g.angle(g.nearest(theta));
        let gap = (theta - a).rem_euclid(TAU);
        prop_assert!(gap.min(TAU - gap) <= g.spacing() / 2.0 + 1e-9);
    }
}
