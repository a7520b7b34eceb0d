use mono_ph::linear_op::weighted_dot;
use mono_ph::monotone::{moreau_complement, project_box, BoxSet};
use mono_ph::timegrid::{inner_product, norm};
use mono_ph::{build_c, build_c_star, GridFunction, Layout, SystemMatrices, TimeGrid};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn grid_fn(layout: Layout, dim: usize, grid: &TimeGrid, data: Vec<f64>) -> GridFunction {
    GridFunction::new(layout, dim, grid, data).unwrap()
}

fn layouts() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::Nodes), Just(Layout::Intervals)]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn inner_product_is_bilinear_and_symmetric(
        n in 2usize..12, dim in 1usize..4, layout in layouts(), horizon in 0.1f64..5.0,
        seed in prop::collection::vec(-5.0f64..5.0, 3 * 13 * 4), s in -3.0f64..3.0,
    ) {
        let grid = TimeGrid::new(horizon, n).unwrap();
        let len = layout.samples(&grid) * dim;
        let a = grid_fn(layout, dim, &grid, seed[..len].to_vec());
        let b = grid_fn(layout, dim, &grid, seed[len..2 * len].to_vec());
        let c = grid_fn(layout, dim, &grid, seed[2 * len..3 * len].to_vec());
        let ab = inner_product(&a, &b, &grid).unwrap();
        prop_assert!((ab - inner_product(&b, &a, &grid).unwrap()).abs() <= 1e-12 * ab.abs().max(1.0));
        let combo: Vec<f64> = a.as_slice().iter().zip(c.as_slice()).map(|(x, y)| s * x + y).collect();
        let combo = grid_fn(layout, dim, &grid, combo);
        let lhs = inner_product(&combo, &b, &grid).unwrap();
        let rhs = s * ab + inner_product(&c, &b, &grid).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        let na = norm(&a, &grid).unwrap();
        let nb = norm(&b, &grid).unwrap();
        prop_assert!(ab.abs() <= na * nb * (1.0 + 1e-12) + 1e-14);
        let sum: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x + y).collect();
        let diff: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect();
        let ns = norm(&grid_fn(layout, dim, &grid, sum), &grid).unwrap();
        let nd = norm(&grid_fn(layout, dim, &grid, diff), &grid).unwrap();
        let par = ns * ns + nd * nd - 2.0 * (na * na + nb * nb);
        prop_assert!(par.abs() <= 1e-10 * (1.0 + na * na + nb * nb));
    }

    #[test]
    fn discrete_adjointness(
        n in 2usize..4, m in 1usize..3, intervals in 2usize..30, horizon in 0.2f64..4.0,
        entries in prop::collection::vec(-2.0f64..2.0, 64),
        z_seed in prop::collection::vec(-3.0f64..3.0, 300),
        l_seed in prop::collection::vec(-3.0f64..3.0, 300),
    ) {
        let a = DMatrix::from_row_slice(n, n, &entries[..n * n]);
        let mut b = DMatrix::from_row_slice(n, m, &entries[16..16 + n * m]);
        for k in 0..m.min(n) {
            b[(k, k)] += 5.0;
        }
        let sys = SystemMatrices::new(a, b).unwrap();
        let grid = TimeGrid::new(horizon, intervals).unwrap();
        let c = build_c(&sys, &grid).unwrap();
        let cs = build_c_star(&c);
        let z: Vec<f64> = (0..c.cols()).map(|i| z_seed[i % z_seed.len()] * (1.0 + i as f64 * 0.01)).collect();
        let l: Vec<f64> = (0..c.rows()).map(|i| l_seed[i % l_seed.len()] * (1.0 - i as f64 * 0.001)).collect();
        let lhs = weighted_dot(&c.apply(&z).unwrap(), &l, c.out_weights());
        let rhs = weighted_dot(&z, &cs.apply(&l).unwrap(), c.in_weights());
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn projection_identities(
        bounds in prop::collection::vec((0.01f64..5.0, 0.01f64..5.0), 1..4),
        v_seed in prop::collection::vec(-20.0f64..20.0, 40),
    ) {
        let m = bounds.len();
        let bx = BoxSet::new(bounds.iter().map(|b| -b.0).collect(), bounds.iter().map(|b| b.1).collect()).unwrap();
        let len = (v_seed.len() / m) * m;
        let v = &v_seed[..len];
        let p = project_box(v, &bx).unwrap();
        prop_assert_eq!(&project_box(&p, &bx).unwrap(), &p);
        let q = moreau_complement(v, &bx).unwrap();
        for i in 0..len {
            prop_assert!((p[i] + q[i] - v[i]).abs() <= f64::EPSILON * v[i].abs());
            prop_assert!(p[i] >= bx.lower()[i % m] && p[i] <= bx.upper()[i % m]);
        }
    }
}
