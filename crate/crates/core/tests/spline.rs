use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpcell_core::spline::{
    dense_flow, solve_interpolant, sparse_warp, ControlPointSet, Displacement, Point, RbfOrder,
    SplineSystem, WarpConfig,
};
use warpcell_core::Tensor;

/// Random sites at least 0.5 apart and not all on one line.
fn random_sites(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point> {
    loop {
        let mut sites: Vec<Point> = Vec::with_capacity(n);
        while sites.len() < n {
            let p = Point::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
            if sites.iter().all(|q| (p.x - q.x).hypot(p.y - q.y) >= 0.5) {
                sites.push(p);
            }
        }
        if SplineSystem::new(&sites, RbfOrder::ThinPlate, 0.0).is_ok() {
            return sites;
        }
    }
}

#[test]
fn interpolation_residual_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = rng.random_range(3..=25);
        let sites = random_sites(&mut rng, n);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let order = if case % 2 == 0 {
            RbfOrder::ThinPlate
        } else {
            RbfOrder::Linear
        };
        let s = solve_interpolant(&sites, &values, order, 0.0).unwrap();
        for (p, v) in sites.iter().zip(&values) {
            worst = worst.max((s.eval(*p) - v).abs());
        }
    }
    assert!(worst <= 1e-8, "worst residual {worst:e}");
}

#[test]
fn affine_data_needs_no_radial_part() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..200 {
        let n = rng.random_range(3..=25);
        let sites = random_sites(&mut rng, n);
        let (a, b, c) = (
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let values: Vec<f64> = sites.iter().map(|p| a * p.x + b * p.y + c).collect();
        let order = if case % 2 == 0 {
            RbfOrder::ThinPlate
        } else {
            RbfOrder::Linear
        };
        let s = solve_interpolant(&sites, &values, order, 0.0).unwrap();
        let w_max = s.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(w_max <= 1e-8, "case {case}: |w|inf = {w_max:e}");
        for (got, want) in s.affine.iter().zip([a, b, c]) {
            assert!((got - want).abs() <= 1e-8);
        }
    }
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
    Tensor::from_fn(&[h, w, c], |_| rng.random_range(-1.0..1.0))
}

#[test]
fn zero_displacement_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (h, w) in [(20, 20), (13, 17), (8, 30)] {
        let map = random_map(&mut rng, h, w, 3);
        for boundary in [true, false] {
            let cps = ControlPointSet::grid(h, w, 3, 3, boundary).unwrap();
            for order in [RbfOrder::ThinPlate, RbfOrder::Linear] {
                let cfg = WarpConfig {
                    order,
                    ..Default::default()
                };
                let out = sparse_warp(&map, &cps, &cfg).unwrap();
                let err = out
                    .data()
                    .iter()
                    .zip(map.data())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                assert!(err <= 1e-12, "{h}x{w} boundary={boundary}: {err:e}");
            }
        }
    }
}

#[test]
fn destinations_receive_source_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (h, w) = (20, 20);
    for _ in 0..50 {
        let map = random_map(&mut rng, h, w, 2);
        let grid = ControlPointSet::grid(h, w, 3, 3, true).unwrap();
        let disp: Vec<Displacement> = (0..9)
            .map(|_| {
                Displacement::new(
                    rng.random_range(-2..=2) as f64,
                    rng.random_range(-2..=2) as f64,
                )
            })
            .collect();
        let cps = grid.with_displacements(disp).unwrap();
        let order = if rng.random_bool(0.5) {
            RbfOrder::ThinPlate
        } else {
            RbfOrder::Linear
        };
        let out = sparse_warp(&map, &cps, &WarpConfig::exact(order)).unwrap();
        for (src, dst) in cps.interior().iter().zip(cps.destinations()) {
            for ch in 0..2 {
                let got = out.at3(dst.y as usize, dst.x as usize, ch);
                let want = map.at3(src.y as usize, src.x as usize, ch);
                assert!(
                    (got - want).abs() <= 1e-10,
                    "{src:?} -> {dst:?}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn nine_control_points_on_twenty_by_twenty() {
    let cps = ControlPointSet::grid(20, 20, 3, 3, true).unwrap();
    let got: Vec<(f64, f64)> = cps.interior().iter().map(|p| (p.y, p.x)).collect();
    let mut want = Vec::new();
    for y in [5.0, 10.0, 15.0] {
        for x in [5.0, 10.0, 15.0] {
            want.push((y, x));
        }
    }
    assert_eq!(got, want);
    assert_eq!(cps.boundary().len(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // The same displacement everywhere, without pinned boundary points, is a
    // pure translation: interior pixels away from the border read the input
    // shifted by the displacement.
    #[test]
    fn uniform_displacement_translates(dx in -3i32..=3, dy in -3i32..=3, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (16, 18);
        let map = random_map(&mut rng, h, w, 1);
        let cps = ControlPointSet::grid(h, w, 3, 3, false).unwrap();
        let cps = cps.with_displacements(vec![Displacement::new(dx as f64, dy as f64); 9]).unwrap();
        let flow = dense_flow(&cps, h, w, &WarpConfig::default()).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (fy, fx) = flow.at(y, x);
                prop_assert!((fy - dy as f64).abs() <= 1e-9 && (fx - dx as f64).abs() <= 1e-9);
            }
        }
        let out = sparse_warp(&map, &cps, &WarpConfig::default()).unwrap();
        for y in 3..h - 3 {
            for x in 3..w - 3 {
                let want = map.at3((y as i32 - dy) as usize, (x as i32 - dx) as usize, 0);
                prop_assert!((out.at3(y, x, 0) - want).abs() <= 1e-9);
            }
        }
    }
}
