use approx::assert_abs_diff_eq;
use fbsm_core::linalg::{is_pd, max_abs_diff};
use fbsm_core::lqg::*;
use fbsm_core::problems::{crosscheck_lqg, lqg_cost, lqg_dynamics};
use fbsm_core::sdesim::{estimate_objective, simulate_paths, SimulationOptions};
use fbsm_core::verify::monotonicity_check;
use fbsm_core::LqgProblem;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn square(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v))
}

/// Two state and two memory components with the given drift, control and
/// noise matrices.
fn random_problem(a: DMatrix<f64>, b: DMatrix<f64>, sigma: DMatrix<f64>) -> LqgProblem {
    LqgProblem {
        a: a.into(),
        b: b.into(),
        sigma: sigma.into(),
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.0, 0.0])).into(),
        r: DMatrix::identity(4, 4).into(),
        p: DMatrix::zeros(4, 4),
        mu0: DVector::zeros(4),
        lambda0: DMatrix::identity(4, 4),
        horizon: 1.0,
        dt: 0.01,
        state_dim: 2,
        memory_dim: 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pi_rhs_with_identity_gain_is_psi_rhs(a in square(4), b in square(4), sigma in square(4), x in symmetric(4), t in 0.0..1.0f64) {
        let problem = random_problem(a, b, sigma);
        let k = DMatrix::identity(4, 4);
        let pi = pi_rhs(&problem, t, &x, &k).unwrap();
        let psi = psi_rhs(&problem, t, &x).unwrap();
        prop_assert!(max_abs_diff(&pi, &psi) <= 1e-12);
    }

    #[test]
    fn right_hand_sides_stay_symmetric(a in square(4), b in square(4), sigma in square(4), x in symmetric(4), l in symmetric(4)) {
        let problem = random_problem(a, b, sigma);
        let lambda = &l * l.transpose() + DMatrix::identity(4, 4);
        let k = inference_gain(&lambda, 2, 2).unwrap();
        let pi = pi_rhs(&problem, 0.0, &x, &k).unwrap();
        let lam = lambda_rhs(&problem, 0.0, &lambda, &x).unwrap();
        prop_assert!(max_abs_diff(&pi, &pi.transpose()) <= 1e-9 * (1.0 + pi.amax()));
        prop_assert!(max_abs_diff(&lam, &lam.transpose()) <= 1e-9 * (1.0 + lam.amax()));
    }

    #[test]
    fn inference_gain_has_memory_structure(l in symmetric(4)) {
        let lambda = &l * l.transpose() + DMatrix::identity(4, 4);
        let k = inference_gain(&lambda, 2, 2).unwrap();
        // First block column zero, memory block the identity.
        for i in 0..4 {
            for j in 0..2 {
                prop_assert_eq!(k[(i, j)], 0.0);
            }
        }
        prop_assert_eq!(k.view((2, 2), (2, 2)).into_owned(), DMatrix::identity(2, 2));
        // The state rows reproduce the Gaussian conditional mean E[x | z] = −Λxx⁻¹Λxz z.
        let lxx = lambda.view((0, 0), (2, 2)).into_owned();
        let lxz = lambda.view((0, 2), (2, 2)).into_owned();
        let expected = -lxx.try_inverse().unwrap() * lxz;
        prop_assert!(max_abs_diff(&k.view((0, 2), (2, 2)).into_owned(), &expected) <= 1e-9 * (1.0 + expected.amax()));
    }
}

fn scalar(a: f64, b: f64, q: f64, r: f64, horizon: f64, dt: f64) -> LqgProblem {
    let one = |v: f64| DMatrix::from_element(1, 1, v);
    LqgProblem {
        a: one(a).into(),
        b: one(b).into(),
        sigma: one(1.0).into(),
        q: one(q).into(),
        r: one(r).into(),
        p: one(0.0),
        mu0: DVector::zeros(1),
        lambda0: one(1.0),
        horizon,
        dt,
        state_dim: 1,
        memory_dim: 0,
    }
}

#[test]
fn scalar_riccati_limit() {
    let psi = solve_psi(&scalar(1.0, 1.0, 1.0, 1.0, 20.0, 0.01)).unwrap();
    assert_abs_diff_eq!(psi[0][(0, 0)], 1.0 + 2f64.sqrt(), epsilon = 1e-6);
}

#[test]
fn scalar_riccati_matches_closed_form() {
    // With a = 0 and b = q = r = 1, Ψ(t) = tanh(T − t).
    let problem = scalar(0.0, 1.0, 1.0, 1.0, 2.0, 0.01);
    let psi = solve_psi(&problem).unwrap();
    for (n, t) in problem.times().iter().enumerate() {
        assert_abs_diff_eq!(psi[n][(0, 0)], (2.0 - t).tanh(), epsilon = 1e-9);
    }
}

#[test]
fn crosscheck_problem_descends_monotonically() {
    let problem = crosscheck_lqg();
    let res = fbsm_lqg(&problem, &FbsmLqgOptions { max_iters: 20, ..Default::default() }).unwrap();
    let j = res.objectives();
    let report = monotonicity_check(&j, 1e-8).unwrap();
    assert!(report.passed, "{report:?}");
    assert!(j[20] < j[0]);
    for it in &res.iterates {
        for l in it.lambda.iter() {
            assert!(is_pd(l));
        }
    }
}

#[test]
fn sweeps_alternate_and_share_gains() {
    let problem = crosscheck_lqg();
    let res = fbsm_lqg(&problem, &FbsmLqgOptions { max_iters: 4, ..Default::default() }).unwrap();
    let sweeps: Vec<Sweep> = res.iterations.iter().map(|r| r.sweep).collect();
    assert_eq!(sweeps, [Sweep::Initial, Sweep::Backward, Sweep::Forward, Sweep::Backward, Sweep::Forward]);
    // A backward sweep replaces Π only, a forward sweep Λ only.
    for k in 1..=4 {
        let (prev, cur) = (&res.iterates[k - 1], &res.iterates[k]);
        if k % 2 == 1 {
            assert!(std::sync::Arc::ptr_eq(&prev.lambda, &cur.lambda));
        } else {
            assert!(std::sync::Arc::ptr_eq(&prev.pi, &cur.pi));
        }
    }
    assert!(res.iterates[0].pi.iter().all(|m| m.amax() == 0.0));
}

#[test]
fn moment_objective_agrees_with_monte_carlo() {
    let problem = crosscheck_lqg();
    let res = fbsm_lqg(&problem, &FbsmLqgOptions { max_iters: 10, ..Default::default() }).unwrap();
    let gains = res.final_gains();
    let law = LqgControlLaw::new(&problem, &gains).unwrap();
    let j = lqg_objective(&problem, &gains).unwrap();
    assert_abs_diff_eq!(j, res.final_objective(), epsilon = 1e-12);
    let dynamics = lqg_dynamics(&problem).unwrap();
    let options = SimulationOptions::new(4000, 7, problem.dt, problem.horizon);
    let ens = simulate_paths(&dynamics, &law, &lqg_cost(&problem), &options).unwrap();
    let est = estimate_objective(&ens);
    assert!(est.agrees(j, 3.0), "J = {j}, MC = {est:?}");
}
