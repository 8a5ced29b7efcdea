use approx::assert_abs_diff_eq;
use fbsm_core::grid::*;
use fbsm_core::problems::{crosscheck_lqg, lqg_grid_problem};
use fbsm_core::verify::{conjugacy_residual, lemma1_check, monotonicity_check, pmp_residual};
use fbsm_core::GridSpec;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn small_spec(nodes: usize, steps: usize) -> GridSpec {
    GridSpec { lower: vec![-3.0, -3.0], upper: vec![3.0, 3.0], nodes: vec![nodes, nodes], time_steps: steps, horizon: 1.0 }
}

fn small_problem() -> GridProblem {
    lqg_grid_problem(&crosscheck_lqg(), small_spec(31, 200)).unwrap()
}

fn zero_cost_problem() -> GridProblem {
    let mut lqg = crosscheck_lqg();
    lqg.q = DMatrix::zeros(2, 2).into();
    lqg.p = DMatrix::zeros(2, 2);
    lqg_grid_problem(&lqg, small_spec(31, 200)).unwrap()
}

fn dims() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![
        prop::collection::vec(3usize..9, 1),
        prop::collection::vec(3usize..7, 2),
        prop::collection::vec(3usize..5, 3),
    ]
}

fn triple() -> impl Strategy<Value = (Geometry, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    dims().prop_flat_map(|nodes| {
        let d = nodes.len();
        let spec = GridSpec {
            lower: vec![-1.0; d],
            upper: (0..d).map(|i| 1.0 + 0.5 * i as f64).collect(),
            nodes: nodes.clone(),
            time_steps: 1,
            horizon: 1.0,
        };
        let geom = Geometry::new(&spec, d, 0);
        let n = geom.len;
        (
            Just(geom),
            prop::collection::vec(-10.0..10.0f64, n * d),
            prop::collection::vec(-1.0..1.0f64, n * d * d),
            prop::collection::vec(-5.0..5.0f64, n),
            prop::collection::vec(0.0..1.0f64, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conjugacy_is_exact((geom, b, m, w, p) in triple()) {
        let d = geom.dim();
        // D = MMᵀ per node keeps every tensor positive semidefinite.
        let mut tensors = vec![0.0; geom.len * d * d];
        for idx in 0..geom.len {
            let mi = DMatrix::from_row_slice(d, d, &m[idx * d * d..(idx + 1) * d * d]);
            let di = &mi * mi.transpose();
            for i in 0..d {
                for k in 0..d {
                    tensors[idx * d * d + i * d + k] = di[(i, k)];
                }
            }
        }
        let gen = DiscreteGenerator::from_coefficients(&geom, &b, &tensors);
        prop_assert!(conjugacy_residual(&gen, &geom, &w, &p).unwrap() <= 1e-12);
        for i in 0..geom.len {
            prop_assert!(gen.row_sum(i).abs() <= 1e-9);
        }
    }

    #[test]
    fn hjb_step_preserves_order(seed in prop::collection::vec(-1.0..1.0f64, 31 * 31), gap in prop::collection::vec(0.0..1.0f64, 31 * 31), u in -2.0..2.0f64) {
        let problem = small_problem();
        let geom = problem.validate().unwrap();
        let lower = seed;
        let upper: Vec<f64> = lower.iter().zip(&gap).map(|(a, g)| a + g).collect();
        let u_t = vec![u; geom.nz * problem.control_dim()];
        let a = hjb_step(&problem, &geom, 0.5, &u_t, &lower).unwrap();
        let b = hjb_step(&problem, &geom, 0.5, &u_t, &upper).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }
}

#[test]
fn fp_step_conserves_mass_and_sign() {
    let problem = small_problem();
    let geom = problem.validate().unwrap();
    let mut p = geom.sample(|s| problem.dynamics.initial.density(s));
    let total = geom.integrate(&p);
    p.iter_mut().for_each(|v| *v /= total);
    let u = vec![1.5; geom.nz * 2];
    for n in 0..problem.grid.time_steps {
        let t = n as f64 * problem.dt();
        let gen = build_generator(&problem, &geom, t, &u).unwrap();
        let (next, report) = fp_step(&geom, &p, &gen, problem.dt(), t).unwrap();
        assert!((report.raw_mass - 1.0).abs() <= 1e-12);
        assert!((geom.integrate(&next) - 1.0).abs() <= 1e-12);
        assert!(report.negative_mass <= 1e-12);
        assert!(next.iter().all(|v| *v >= 0.0));
        p = next;
    }
}

#[test]
fn unit_cost_integrates_to_horizon() {
    let mut problem = small_problem();
    problem.cost = fbsm_core::CostSpec::new(|_, _, u| 1.0 + u[0] * u[0] + u[1] * u[1], |_| 0.0);
    let u = ControlField::zeros(&problem);
    let density = solve_fp(&problem, &u, Storage::Full).unwrap();
    let j = grid_objective(&problem, &density, &u).unwrap();
    assert_abs_diff_eq!(j, 1.0, epsilon = 1e-10);
}

#[test]
fn checkpointed_objective_matches_full_storage() {
    let problem = small_problem();
    let u = ControlField::constant(&problem, &[0.3, -0.2]);
    let full = solve_fp(&problem, &u, Storage::Full).unwrap();
    let chk = solve_fp(&problem, &u, Storage::Checkpointed { stride: 7 }).unwrap();
    let a = grid_objective(&problem, &full, &u).unwrap();
    let b = grid_objective(&problem, &chk, &u).unwrap();
    assert_eq!(a, b);
    assert_eq!(full.slice(137).unwrap(), chk.slice(137).unwrap());
}

#[test]
fn zero_cost_fixed_point() {
    let problem = zero_cost_problem();
    let u0 = ControlField::zeros(&problem);
    let res = fbsm_grid(&problem, &u0, &FbsmGridOptions { max_iters: 4, ..Default::default() }).unwrap();
    assert!(res.objectives().iter().all(|j| *j == 0.0));
    assert_eq!(res.control.max_abs_diff(&u0), 0.0);
    assert!(monotonicity_check(&res.objectives(), 0.0).unwrap().passed);
    let pmp = pmp_residual(&problem, &res.control, Storage::Auto).unwrap();
    assert!(pmp.residual.iter().all(|r| *r == 0.0));
}

#[test]
fn fbsm_descends_on_small_lqg() {
    let problem = small_problem();
    let res = fbsm_grid(&problem, &ControlField::zeros(&problem), &FbsmGridOptions { max_iters: 12, ..Default::default() }).unwrap();
    let j = res.objectives();
    assert!(monotonicity_check(&j, 1e-6).unwrap().passed, "{j:?}");
    assert!(j[12] < j[0]);
    assert!(res.monotonicity_warnings.is_empty());
    assert!(res.mass_log.max_mass_error <= 1e-12);
}

#[test]
fn pmp_residual_detects_suboptimal_zero_control() {
    let problem = small_problem();
    let pmp = pmp_residual(&problem, &ControlField::zeros(&problem), Storage::Auto).unwrap();
    assert!(pmp.residual.iter().all(|r| *r >= 0.0));
    assert!(pmp.weighted_max > 0.0);
}

#[test]
fn lemma1_vanishes_for_equal_controls() {
    let problem = small_problem();
    let u = ControlField::constant(&problem, &[0.4, -0.1]);
    let r = lemma1_check(&problem, &u, &u, Storage::Auto).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert_eq!(r.rhs, 0.0);
    assert_eq!(r.residual, 0.0);
}

#[test]
fn lemma1_staggered_sum_is_exact() {
    let problem = small_problem();
    let u = ControlField::constant(&problem, &[0.4, -0.1]);
    let v = ControlField::zeros(&problem);
    let r = lemma1_check(&problem, &u, &v, Storage::Auto).unwrap();
    assert!(r.lhs.abs() > 1e-3);
    assert!(r.residual_staggered <= 1e-10 * (1.0 + r.lhs.abs()), "{r:?}");
    assert!(r.residual > r.residual_staggered);
}

#[test]
fn crosscheck_without_state_cost_is_zero() {
    use fbsm_core::lqg::FbsmLqgOptions;
    use fbsm_core::verify::lqg_grid_crosscheck;
    let mut lqg = crosscheck_lqg();
    lqg.q = DMatrix::zeros(2, 2).into();
    lqg.p = DMatrix::zeros(2, 2);
    let lqg_opts = FbsmLqgOptions { max_iters: 4, ..Default::default() };
    let grid_opts = FbsmGridOptions { max_iters: 4, ..Default::default() };
    let r = lqg_grid_crosscheck(&lqg, &small_spec(31, 200), &lqg_opts, &grid_opts).unwrap();
    assert_eq!(r.j_lqg, 0.0);
    assert_eq!(r.j_grid, 0.0);
    assert_eq!(r.gap, 0.0);
}

#[test]
fn crosscheck_rejects_narrow_grid() {
    use fbsm_core::lqg::FbsmLqgOptions;
    use fbsm_core::verify::{lqg_grid_crosscheck, VerifyError};
    let spec = GridSpec { lower: vec![-0.5, -0.5], upper: vec![0.5, 0.5], ..small_spec(11, 50) };
    let err = lqg_grid_crosscheck(&crosscheck_lqg(), &spec, &FbsmLqgOptions::default(), &FbsmGridOptions::default());
    assert!(matches!(err, Err(VerifyError::Coverage { .. })));
}
