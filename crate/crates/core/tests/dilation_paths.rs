use fpp_core::dilation::{
    build_fav, identification_mismatches, make_plan, verify_fav, CorridorLayout, DilationParams, DilationPlan,
    EdgeClass,
};
use fpp_core::geodesic::{geodesic, l_path, path_weight};
use fpp_core::grid::sample_environment;
use fpp_core::model::make_weight_model;
use fpp_core::paths::{
    compare_lengths, decompose_excursions, detour_vertex, random_path, regularize, scale_down,
};
use fpp_core::{EnvironmentGrid, Point, Rect};
use proptest::prelude::*;

fn params(h: i64, j1: u32) -> DilationParams {
    DilationParams {
        n: 8,
        h,
        j1,
        eps6: 0.125,
        eps7: 0.1,
        spread: 4.0,
        eps1: 0.25,
        unstable: vec![],
        corridor_constant: 16.0,
    }
}

fn constant_bases(plan: &DilationPlan, c: f64) -> Vec<EnvironmentGrid> {
    let count = (plan.h() * plan.h()) as usize;
    vec![EnvironmentGrid::constant(plan.base_halfwidth(), 1.0, c).unwrap(); count]
}

fn signatures(plan: &DilationPlan) -> Vec<String> {
    vec!["base".to_string(); (plan.h() * plan.h()) as usize]
}

#[test]
fn plan_lengths_and_errors() {
    let plan = make_plan(params(2, 0)).unwrap();
    assert_eq!(plan.lengths, [80, 72, 64, 36, 32]);
    assert_eq!(plan.n1, 16);
    assert!(make_plan(DilationParams { eps6: 0.0, ..params(2, 0) }).is_err());
    assert!(make_plan(DilationParams { h: 1, ..params(2, 0) }).is_err());
    let too_many = DilationParams { unstable: vec![[1, 1], [1, 2], [2, 1]], ..params(2, 1) };
    assert!(make_plan(too_many).is_err());
    let json = serde_json::to_string(&plan).unwrap();
    assert!(json.contains("\"lengths\":[80,72,64,36,32]"));
}

#[test]
fn single_tile_corridor_is_the_frame() {
    let plan = make_plan(params(2, 0)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let star = layout.star_rect([1, 1]);
    for e in layout.edges_where(|c| c == EdgeClass::Exterior) {
        assert!(e.inside(&plan.region()));
        assert!(!e.inside(&star));
    }
}

#[test]
fn layout_partitions_the_grid() {
    for (h, j1) in [(2, 0), (2, 1), (4, 2)] {
        let plan = make_plan(params(h, j1)).unwrap();
        let layout = CorridorLayout::new(&plan);
        let c = layout.counts();
        let grid_edges = (2 * plan.grid_halfwidth * (2 * plan.grid_halfwidth + 1) * 2) as usize;
        assert_eq!(c.total, grid_edges);
        assert_eq!(c.block + c.interior + c.exterior + c.frame, c.total);
        let region = plan.region();
        let in_region = layout.edges_where(|_| true).iter().filter(|e| e.inside(&region)).count();
        assert_eq!(c.block + c.interior + c.exterior, in_region);
        assert!(c.exterior as f64 <= layout.exterior_bound());
    }
}

#[test]
fn constant_bases_give_constant_blocks() {
    let plan = make_plan(params(2, 1)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let fav = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 3, None).unwrap();
    for e in fav.grid.edges() {
        let w = fav.grid.weight(e).unwrap();
        match layout.edge_class(e) {
            EdgeClass::Block { .. } => assert_eq!(w, 0.8),
            _ => assert!((0.9..=1.0).contains(&w)),
        }
    }
    let again = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 3, None).unwrap();
    assert_eq!(fav.grid.to_json_string().unwrap(), again.grid.to_json_string().unwrap());
    let mut bad = signatures(&plan);
    bad[1] = "other".into();
    assert!(build_fav(&layout, &constant_bases(&plan, 0.8), &bad, 3, None).is_err());
    assert!(build_fav(&layout, &constant_bases(&plan, 0.8)[..3], &signatures(&plan)[..3], 3, None).is_err());
}

#[test]
fn measure_accounting_identity() {
    let model = make_weight_model("uniform", 1.0, &[]).unwrap();
    let plan = make_plan(DilationParams { unstable: vec![[2, 2]], ..params(2, 1) }).unwrap();
    let layout = CorridorLayout::new(&plan);
    let bases: Vec<_> = (0..4).map(|s| sample_environment(&model, plan.base_halfwidth(), s).unwrap()).collect();
    let log_base = -3.5;
    let fav = build_fav(&layout, &bases, &signatures(&plan), 1, Some(log_base)).unwrap();
    let c = layout.counts();
    let forced = c.exterior + c.interior + c.boosted;
    let expected = 4.0 * log_base + forced as f64 * 0.1f64.ln();
    assert!((fav.accounting.log_probability.unwrap() - expected).abs() < 1e-9);
    assert!(c.boosted > 0);
    assert_eq!(identification_mismatches(&layout, &fav.grid, &bases), 0);
}

#[test]
fn constant_plans_verify() {
    for h in [2, 4] {
        let plan = make_plan(params(h, 1)).unwrap();
        let layout = CorridorLayout::new(&plan);
        let fav = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 7, None).unwrap();
        let report = verify_fav(&fav.grid, &plan, 0.8, 0.0, 0.08).unwrap();
        assert!(report.passed(), "h={h}: {report:?}");
        let vacuous = verify_fav(&fav.grid, &plan, 0.8, 0.0, 3.0).unwrap();
        assert!(vacuous.passage_ok);
        let raised = EnvironmentGrid::from_fn(fav.grid.model(), fav.grid.halfwidth(), |e| {
            (fav.grid.weight(e).unwrap() + 0.05).min(1.0)
        })
        .unwrap();
        let higher = verify_fav(&raised, &plan, 0.8, 0.0, 0.08).unwrap();
        assert!(higher.passage_time >= report.passage_time && higher.exit_time >= report.exit_time);
    }
}

#[test]
fn decomposition_of_a_crossing() {
    let plan = make_plan(params(2, 1)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let region = plan.region();
    let inside = decompose_excursions(&[Point::new(0, 0), Point::new(1, 0), Point::new(1, 1)], &layout).unwrap();
    assert_eq!(inside.pieces.len(), 1);

    let path: Vec<Point> = (region.x_min..=region.x_max).map(|x| Point::new(x, 0)).collect();
    let dec = decompose_excursions(&path, &layout).unwrap();
    assert_eq!(dec.recompose(), path);
    // oracle: maximal runs of corridor vertices strictly between stars
    let mut runs = 0;
    let mut seen_star = false;
    let mut in_gap = false;
    for p in &path {
        if layout.star_of(*p).is_some() {
            if in_gap && seen_star {
                runs += 1;
            }
            seen_star = true;
            in_gap = false;
        } else {
            in_gap = true;
        }
    }
    let bridges = dec.pieces.iter().filter(|p| p.is_bridge()).count();
    assert_eq!(bridges, runs + 2);
    assert!(dec.pieces.windows(2).all(|w| w[0].is_bridge() != w[1].is_bridge()));
}

#[test]
fn straightening_bounds_bridge_weight() {
    let plan = make_plan(params(2, 1)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let fav = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 2, None).unwrap();
    let star = layout.star_rect([2, 2]);
    let gap_x = star.x_max + 1;
    let mut path = l_path(Point::new(0, 0), Point::new(star.x_max, 0));
    // wander up and down inside the corridor before coming back
    for y in (0..=5).chain((-3..5).rev()) {
        path.push(Point::new(gap_x, y));
    }
    path.push(Point::new(gap_x, -4));
    path.dedup();
    path.extend(l_path(Point::new(star.x_max, -4), plan.target()).into_iter());
    let mut clean = vec![path[0]];
    for p in path.into_iter().skip(1) {
        if *clean.last().unwrap() != p {
            clean.push(p);
        }
    }
    let r = regularize(&clean, &fav.grid, &layout, 32.0).unwrap();
    assert_eq!(r.path.first(), clean.first());
    assert_eq!(r.path.last(), clean.last());
    assert!(r.weight <= r.original_weight);
    let dec = decompose_excursions(&r.path, &layout).unwrap();
    for piece in dec.pieces.iter().filter(|p| p.is_bridge()) {
        let w = path_weight(&fav.grid, &piece.vertices).unwrap();
        assert!(w <= fav.grid.b() * piece.first().l1(piece.last()) as f64 + 1e-12);
    }
}

#[test]
fn geodesics_are_fixed_points() {
    let plan = make_plan(params(2, 0)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let fav = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 2, None).unwrap();
    let g = geodesic(&fav.grid, Point::new(0, 0), plan.target(), Some(plan.region())).unwrap();
    let r = regularize(&g.vertices, &fav.grid, &layout, 32.0).unwrap();
    assert_eq!(r.path, g.vertices);
    assert_eq!(r.ratio, 1.0);
    assert!(r.certified || r.bound <= 0.0);
}

#[test]
fn barrier_violations_are_rejected() {
    let plan = make_plan(params(2, 1)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let flat = EnvironmentGrid::constant(plan.grid_halfwidth, 1.0, 0.5).unwrap();
    let region = plan.region();
    let path: Vec<Point> = (0..=region.x_max).map(|x| Point::new(x, 0)).collect();
    assert!(regularize(&path, &flat, &layout, 32.0).is_err());
}

#[test]
fn scaled_paths_of_constant_plans() {
    for (h, j1) in [(2, 0), (4, 1)] {
        let plan = make_plan(params(h, j1)).unwrap();
        let layout = CorridorLayout::new(&plan);
        let bases = constant_bases(&plan, 0.8);
        let fav = build_fav(&layout, &bases, &signatures(&plan), 4, None).unwrap();
        let levels = plan.base_halfwidth().trailing_zeros() - j1;
        let straight = l_path(Point::new(0, 0), plan.target());
        let r = regularize(&straight, &fav.grid, &layout, 32.0).unwrap();
        let scaled = scale_down(&r.path, &layout, &bases[0], levels).unwrap();
        let dec = decompose_excursions(&r.path, &layout).unwrap();
        assert_eq!(scaled.pieces.len(), dec.excursion_count());
        for w in scaled.vertices.windows(2) {
            assert_eq!(w[0].l1(w[1]), 1);
        }
        for piece in &scaled.pieces {
            let g = geodesic(&bases[0], piece.start, piece.end, Some(Rect::centered(plan.base_halfwidth()))).unwrap();
            assert!((piece.base_path.weight - g.weight).abs() < 1e-12);
        }
        // constant blocks: scaled length tracks the target displacement
        let end = *scaled.vertices.last().unwrap();
        let start = scaled.vertices[0];
        let expected = plan.n1 as f64 / h as f64;
        assert!(((end.x - start.x) as f64 - expected).abs() <= expected * 0.5 + 2.0);
        let report = compare_lengths(&scaled, &fav.grid, &layout, r.original_weight, 0.15).unwrap();
        assert!(report.passed, "h={h} j1={j1}: {report:?}");
        let lax = compare_lengths(&scaled, &fav.grid, &layout, r.original_weight, 1.0).unwrap();
        assert!(lax.passed);
    }
}

#[test]
fn random_paths_stay_certified() {
    let plan = make_plan(params(2, 1)).unwrap();
    let layout = CorridorLayout::new(&plan);
    let fav = build_fav(&layout, &constant_bases(&plan, 0.8), &signatures(&plan), 9, None).unwrap();
    let mut rng = fpp_core::seed::rng(21);
    for _ in 0..20 {
        let path = random_path(&plan.region(), Point::new(0, 0), plan.target(), 3, &mut rng);
        assert!(path.windows(2).all(|w| w[0].l1(w[1]) == 1));
        assert!(path.iter().all(|p| plan.region().contains(*p)));
        let r = regularize(&path, &fav.grid, &layout, 32.0).unwrap();
        assert!(r.ratio >= r.bound);
        assert_eq!((r.path[0], *r.path.last().unwrap()), (Point::new(0, 0), plan.target()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn detour_vertices_respect_the_window(
        side in 0usize..4, along in -20i64..20, gap in 0i64..4, t in 1.0f64..6.0, seed in any::<u64>(),
    ) {
        let rect = Rect::centered(20);
        let on_side = |a: i64| match side {
            0 => Point::new(rect.x_min, a),
            1 => Point::new(rect.x_max, a),
            2 => Point::new(a, rect.y_min),
            _ => Point::new(a, rect.y_max),
        };
        let x = on_side(along);
        let y = on_side((along + gap).min(20));
        if let Some(z) = detour_vertex(&rect, x, y, t) {
            prop_assert!(rect.contains(z));
            for p in [x, y] {
                let d = z.to_real().dist(p.to_real());
                prop_assert!(d > t && d < 2.0 * t);
            }
            let env = sample_environment(&make_weight_model("uniform", 1.0, &[]).unwrap(), 21, seed).unwrap();
            let a = geodesic(&env, x, z, Some(rect)).unwrap().weight;
            let b = geodesic(&env, z, y, Some(rect)).unwrap().weight;
            prop_assert!(a + b <= 8.0 * env.b() * t);
        }
    }

    #[test]
    fn decompositions_recompose(seed in any::<u64>(), waypoints in 0usize..6) {
        let plan = make_plan(params(2, 2)).unwrap();
        let layout = CorridorLayout::new(&plan);
        let mut rng = fpp_core::seed::rng(seed);
        let path = random_path(&plan.region(), Point::new(0, 0), plan.target(), waypoints, &mut rng);
        let dec = decompose_excursions(&path, &layout).unwrap();
        prop_assert_eq!(dec.recompose(), path);
    }
}
