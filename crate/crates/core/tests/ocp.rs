mod common;

use common::{dist, example, forced_example, rotation_system};
use mono_ph::linear_op::weighted_dot;
use mono_ph::monotone::{check_monotone, BoxSet};
use mono_ph::ocp::{
    assemble_m_opt, check_midpoint_convexity, cost_value, grad_j, kkt_residual, kkt_residual_parts, reduced_control,
    solve_kkt, CostSpec, OcpSpec, OracleOptions, StateCost,
};
use mono_ph::{Error, GridFunction, Layout, MonotoneMap, TimeGrid};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(rng: &mut ChaCha8Rng, layout: Layout, dim: usize, grid: &TimeGrid) -> GridFunction {
    GridFunction::from_fn(layout, dim, grid, |_, o| o.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0))).unwrap()
}

#[test]
fn gradient_vanishes_at_origin_and_copies_constant_state() {
    let spec = example(20, None);
    let g = spec.grid();
    let (gx, gu) = grad_j(&spec, &GridFunction::zeros(Layout::Nodes, 2, g), &GridFunction::zeros(Layout::Intervals, 1, g)).unwrap();
    assert!(gx.as_slice().iter().chain(gu.as_slice()).all(|v| *v == 0.0));
    let xbar = GridFunction::constant(Layout::Nodes, g, &[0.7, -0.2]).unwrap();
    let (gx, _) = grad_j(&spec, &xbar, &GridFunction::zeros(Layout::Intervals, 1, g)).unwrap();
    assert_eq!(gx, xbar);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let c_out = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    for state in [StateCost::Identity, StateCost::Output(c_out)] {
        let base = example(30, None);
        let spec = OcpSpec::new(
            base.sys().clone(),
            *base.grid(),
            base.forcing().clone(),
            base.x0().to_vec(),
            CostSpec::new(state, 1.5).unwrap(),
            None,
        )
        .unwrap();
        let g = spec.grid();
        for _ in 0..100 {
            let x = random_grid(&mut rng, Layout::Nodes, 2, g);
            let u = random_grid(&mut rng, Layout::Intervals, 1, g);
            let dx = random_grid(&mut rng, Layout::Nodes, 2, g);
            let du = random_grid(&mut rng, Layout::Intervals, 1, g);
            let h = 1e-6;
            let shift = |s: f64| {
                let xs: Vec<f64> = x.as_slice().iter().zip(dx.as_slice()).map(|(a, b)| a + s * b).collect();
                let us: Vec<f64> = u.as_slice().iter().zip(du.as_slice()).map(|(a, b)| a + s * b).collect();
                cost_value(
                    &spec,
                    &GridFunction::new(Layout::Nodes, 2, g, xs).unwrap(),
                    &GridFunction::new(Layout::Intervals, 1, g, us).unwrap(),
                )
                .unwrap()
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let (gx, gu) = grad_j(&spec, &x, &u).unwrap();
            let exact = mono_ph::timegrid::inner_product(&gx, &dx, g).unwrap()
                + mono_ph::timegrid::inner_product(&gu, &du, g).unwrap();
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "fd {fd} vs {exact}");
        }
    }
}

#[test]
fn gradient_is_strongly_monotone_with_min_one_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for alpha in [0.3, 1.5] {
        let base = example(15, None);
        let spec = OcpSpec::new(base.sys().clone(), *base.grid(), base.forcing().clone(), vec![0.0; 2], CostSpec::quadratic(alpha).unwrap(), None).unwrap();
        let g = spec.grid();
        let beta = alpha.min(1.0);
        for _ in 0..200 {
            let (x1, u1) = (random_grid(&mut rng, Layout::Nodes, 2, g), random_grid(&mut rng, Layout::Intervals, 1, g));
            let (x2, u2) = (random_grid(&mut rng, Layout::Nodes, 2, g), random_grid(&mut rng, Layout::Intervals, 1, g));
            let (g1x, g1u) = grad_j(&spec, &x1, &u1).unwrap();
            let (g2x, g2u) = grad_j(&spec, &x2, &u2).unwrap();
            let a = [x1.as_slice(), u1.as_slice()].concat();
            let b = [x2.as_slice(), u2.as_slice()].concat();
            let ga = [g1x.as_slice(), g1u.as_slice()].concat();
            let gb = [g2x.as_slice(), g2u.as_slice()].concat();
            let w = vec![g.dt(); a.len()];
            let dz: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            let dg: Vec<f64> = ga.iter().zip(&gb).map(|(p, q)| p - q).collect();
            let slack = weighted_dot(&dg, &dz, &w) - beta * weighted_dot(&dz, &dz, &w);
            assert!(slack >= -1e-10 * weighted_dot(&dz, &dz, &w).max(1.0));
        }
    }
}

#[test]
fn quadratic_costs_are_midpoint_convex() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
    for cost in [StateCost::Identity, StateCost::Output(c)] {
        assert!(check_midpoint_convexity(&cost, 2, &mut rng, 1000, 10.0).passed);
    }
}

#[test]
fn spec_validation() {
    let base = example(10, None);
    assert!(CostSpec::quadratic(0.0).is_err());
    assert!(base.with_input(GridFunction::zeros(Layout::Intervals, 2, base.grid()), vec![0.0; 3]).is_err());
    assert!(base.with_input(GridFunction::zeros(Layout::Nodes, 2, base.grid()), vec![0.0; 2]).is_err());
    assert!(base.with_bounds(Some(BoxSet::new(vec![0.1], vec![1.0]).unwrap())).is_err());
    assert!(base.with_bounds(Some(BoxSet::symmetric(vec![1.0, 1.0]).unwrap())).is_err());
}

#[test]
fn zero_data_gives_zero_point() {
    let spec = example(50, None).with_input(GridFunction::zeros(Layout::Intervals, 2, example(50, None).grid()), vec![0.0; 2]).unwrap();
    let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
    assert!(p.open_u_state().iter().all(|v| *v == 0.0));
    assert!(p.mu.as_slice().iter().all(|v| *v == 0.0));
    let m = assemble_m_opt(&spec).unwrap();
    assert!(m.eval(&vec![0.0; m.dim()]).unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn unconstrained_oracle_solves_the_optimality_system() {
    for spec in [example(200, None), forced_example(200, None)] {
        let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
        assert!(kkt_residual(&spec, &p) <= 1e-8, "residual {}", kkt_residual(&spec, &p));
        let m = assemble_m_opt(&spec).unwrap();
        let r = m.eval(&p.open_u_state()).unwrap();
        assert!(mono_ph::weighted_norm(&r, m.weights()) <= 1e-8);
        let u_opt = reduced_control(&spec, p.lambda.as_slice());
        assert!(dist(&u_opt, p.u_star.as_slice(), &vec![spec.grid().dt(); u_opt.len()]) <= 1e-8);
    }
}

#[test]
fn constrained_oracle_is_feasible_and_stationary() {
    for spec in [example(200, Some(1.0)), forced_example(200, Some(0.5))] {
        let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
        assert!(p.u_star.as_slice().iter().all(|u| (-1.0..=1.0).contains(u)));
        let parts = kkt_residual_parts(&spec, &p).unwrap();
        assert!(parts.total <= 1e-8, "{parts:?}");
        let u_opt = reduced_control(&spec, p.lambda.as_slice());
        assert!(dist(&u_opt, p.u_star.as_slice(), &vec![spec.grid().dt(); u_opt.len()]) <= 1e-8);
        assert!(p.active_set_fraction(spec.bounds()) > 0.0);
    }
}

#[test]
fn constrained_oracle_hits_the_bound_on_the_example() {
    let spec = example(200, Some(1.0));
    let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
    let u = p.u_star.as_slice();
    assert!(u.iter().any(|v| *v == 1.0 || *v == -1.0));
    assert!(u.iter().all(|v| v.abs() <= 1.0));
}

#[test]
fn wide_box_matches_unconstrained_oracle() {
    let free = solve_kkt(&forced_example(100, None), &OracleOptions::default()).unwrap();
    let boxed = solve_kkt(&forced_example(100, Some(1e3)), &OracleOptions::default()).unwrap();
    let w = vec![0.01; free.u_star.as_slice().len()];
    assert!(dist(free.u_star.as_slice(), boxed.u_star.as_slice(), &w) <= 1e-8);
}

#[test]
fn different_starts_agree() {
    let spec = forced_example(100, Some(0.8));
    let a = solve_kkt(&spec, &OracleOptions::default()).unwrap();
    let start = vec![0.8; 100];
    let b = solve_kkt(&spec, &OracleOptions { initial_u: Some(start), ..Default::default() }).unwrap();
    let w = vec![0.01; 303];
    assert!(dist(&[a.x_star.as_slice(), a.u_star.as_slice()].concat(), &[b.x_star.as_slice(), b.u_star.as_slice()].concat(), &w) <= 1e-7);
}

#[test]
fn residual_responds_to_perturbations() {
    let spec = example(200, None);
    let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
    let base = kkt_residual_parts(&spec, &p).unwrap();
    let delta = 1e-3;
    let mut q = p.clone();
    let mut u = q.u_star.as_slice().to_vec();
    u[57] += delta;
    q.u_star = GridFunction::new(Layout::Intervals, 1, spec.grid(), u).unwrap();
    let parts = kkt_residual_parts(&spec, &q).unwrap();
    let expected = spec.alpha() * delta * spec.grid().dt().sqrt();
    assert!(((parts.adjoint - base.adjoint) / expected - 1.0).abs() < 1e-3, "{parts:?}");

    let mut zero = p.clone();
    for g in [&mut zero.x_star, &mut zero.u_star, &mut zero.lambda, &mut zero.mu] {
        *g = GridFunction::zeros(g.layout(), g.dim(), spec.grid());
    }
    zero.lambda0 = vec![0.0; 2];
    let x0_norm = spec.x0().iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(kkt_residual(&spec, &zero) >= x0_norm);
}

#[test]
fn kkt_maps_are_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for spec in [forced_example(200, None), forced_example(200, Some(1.0))] {
        let m = assemble_m_opt(&spec).unwrap();
        let report = check_monotone(&m, &mut rng, 1000, 10.0, 1e-10);
        assert!(report.passed, "{}", report.to_text());
    }
}

#[test]
fn custom_cost_has_no_oracle() {
    struct Quartic;
    impl mono_ph::ocp::SmoothConvex for Quartic {
        fn value(&self, x: &[f64]) -> f64 {
            x.iter().map(|v| v.powi(4)).sum::<f64>() / 4.0
        }
        fn gradient(&self, x: &[f64], out: &mut [f64]) {
            out.iter_mut().zip(x).for_each(|(o, v)| *o = v.powi(3));
        }
    }
    let base = example(10, None);
    let spec = OcpSpec::new(
        rotation_system(),
        *base.grid(),
        base.forcing().clone(),
        vec![0.0; 2],
        CostSpec::new(StateCost::Custom(std::sync::Arc::new(Quartic)), 1.0).unwrap(),
        None,
    )
    .unwrap();
    assert!(matches!(solve_kkt(&spec, &OracleOptions::default()), Err(Error::Unsupported(_))));
}

#[test]
fn oracle_files_round_trip() {
    let spec = example(20, Some(1.0));
    let p = solve_kkt(&spec, &OracleOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let summary = p.write_dir(&spec, dir.path()).unwrap();
    assert!(summary.residual <= 1e-8);
    for f in ["x_star.csv", "u_star.csv", "lambda.csv", "lambda0.csv", "mu.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(json.get("active_set_fraction").is_some() && json.get("iterations").is_some());
    let u = std::fs::read_to_string(dir.path().join("u_star.csv")).unwrap();
    assert_eq!(u.lines().count(), 21);
}
