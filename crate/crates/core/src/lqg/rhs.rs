//! Right-hand sides of the Riccati-type system and the inference gain.

use nalgebra::{DMatrix, DVector};

use super::LqgError;
use crate::problem::LqgProblem;

/// Problem matrices evaluated at one instant, with the derived products
/// every right-hand side needs.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `R⁻¹Bᵀ`.
    pub l: DMatrix<f64>,
    /// `BR⁻¹Bᵀ`.
    pub s: DMatrix<f64>,
    /// `σσᵀ`.
    pub noise: DMatrix<f64>,
}

impl Coefficients {
    pub fn at(problem: &LqgProblem, t: f64) -> Result<Self, LqgError> {
        let a = problem.a.at(t);
        let b = problem.b.at(t);
        let sigma = problem.sigma.at(t);
        let q = problem.q.at(t);
        let r = problem.r.at(t);
        let n = problem.dim();
        if a.shape() != (n, n) || b.nrows() != n || sigma.nrows() != n || q.shape() != (n, n) {
            return Err(LqgError::DimensionMismatch(format!("coefficient shapes at t={t}")));
        }
        if r.shape() != (b.ncols(), b.ncols()) {
            return Err(LqgError::DimensionMismatch(format!("R shape at t={t}")));
        }
        let chol = r.clone().cholesky().ok_or(LqgError::SingularControlCost { t })?;
        let l = chol.solve(&b.transpose());
        let s = &b * &l;
        let noise = &sigma * sigma.transpose();
        Ok(Self { a, b, q, r, l, s, noise })
    }
}

/// Evaluates coefficients once for constant problems, per call otherwise.
pub(crate) struct CoefficientSource<'a> {
    problem: &'a LqgProblem,
    constant: Option<Coefficients>,
}

impl<'a> CoefficientSource<'a> {
    pub fn new(problem: &'a LqgProblem) -> Result<Self, LqgError> {
        let all_constant = problem.a.is_constant()
            && problem.b.is_constant()
            && problem.sigma.is_constant()
            && problem.q.is_constant()
            && problem.r.is_constant();
        let constant = if all_constant { Some(Coefficients::at(problem, 0.0)?) } else { None };
        Ok(Self { problem, constant })
    }

    pub fn at(&self, t: f64) -> Result<std::borrow::Cow<'_, Coefficients>, LqgError> {
        match &self.constant {
            Some(c) => Ok(std::borrow::Cow::Borrowed(c)),
            None => Ok(std::borrow::Cow::Owned(Coefficients::at(self.problem, t)?)),
        }
    }
}

/// `K(Λ) = [[0, −Λxx⁻¹Λxz], [0, I]]`, the map from `s − μ` to the
/// conditional mean of `s − μ` given the memory block.
pub fn inference_gain(lambda: &DMatrix<f64>, state_dim: usize, memory_dim: usize) -> Result<DMatrix<f64>, LqgError> {
    let n = state_dim + memory_dim;
    if lambda.shape() != (n, n) {
        return Err(LqgError::DimensionMismatch(format!(
            "precision is {}x{}, expected {n}x{n}",
            lambda.nrows(),
            lambda.ncols()
        )));
    }
    let lxx = lambda.view((0, 0), (state_dim, state_dim)).clone_owned();
    let lxz = lambda.view((0, state_dim), (state_dim, memory_dim)).clone_owned();
    let scale = lxx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let lu = lxx.lu();
    let det = lu.determinant();
    if !(det.abs() > f64::EPSILON * scale.powi(state_dim as i32)) || !det.is_finite() {
        return Err(LqgError::SingularBlock { t: f64::NAN });
    }
    let cross = lu.solve(&lxz).ok_or(LqgError::SingularBlock { t: f64::NAN })?;
    let mut k = DMatrix::zeros(n, n);
    k.view_mut((0, state_dim), (state_dim, memory_dim)).copy_from(&(-cross));
    for i in state_dim..n {
        k[(i, i)] = 1.0;
    }
    Ok(k)
}

pub fn psi_rhs_with(c: &Coefficients, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let at_psi = c.a.transpose() * psi;
    &c.q + &at_psi + at_psi.transpose() - psi * &c.s * psi
}

pub fn pi_rhs_with(c: &Coefficients, pi: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = pi.nrows();
    let at_pi = c.a.transpose() * pi;
    let psp = pi * &c.s * pi;
    let ik = DMatrix::identity(n, n) - k;
    &c.q + &at_pi + at_pi.transpose() - &psp + ik.transpose() * &psp * ik
}

pub fn lambda_rhs_with(c: &Coefficients, lambda: &DMatrix<f64>, pi: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let closed = &c.a - &c.s * pi * k;
    let lam_a = lambda * closed;
    -lam_a.transpose() - lam_a - lambda * &c.noise * lambda
}

/// `Q + AᵀΨ + ΨA − ΨBR⁻¹BᵀΨ`; the ODE is `−Ψ̇ = psi_rhs`.
pub fn psi_rhs(problem: &LqgProblem, t: f64, psi: &DMatrix<f64>) -> Result<DMatrix<f64>, LqgError> {
    check_square(psi, problem.dim(), "Psi")?;
    Ok(psi_rhs_with(&Coefficients::at(problem, t)?, psi))
}

/// `G(Λ, Π)` with the inference gain supplied directly; the ODE is
/// `−Π̇ = pi_rhs`.
pub fn pi_rhs(problem: &LqgProblem, t: f64, pi: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>, LqgError> {
    check_square(pi, problem.dim(), "Pi")?;
    check_square(k, problem.dim(), "K")?;
    Ok(pi_rhs_with(&Coefficients::at(problem, t)?, pi, k))
}

/// `F(Λ, Π)`; the ODE is `Λ̇ = lambda_rhs`.
pub fn lambda_rhs(problem: &LqgProblem, t: f64, lambda: &DMatrix<f64>, pi: &DMatrix<f64>) -> Result<DMatrix<f64>, LqgError> {
    check_square(lambda, problem.dim(), "Lambda")?;
    check_square(pi, problem.dim(), "Pi")?;
    let k = inference_gain(lambda, problem.state_dim, problem.memory_dim).map_err(|e| at_time(e, t))?;
    Ok(lambda_rhs_with(&Coefficients::at(problem, t)?, lambda, pi, &k))
}

/// `(A − BR⁻¹BᵀΨ)μ`.
pub fn mu_rhs(problem: &LqgProblem, t: f64, mu: &DVector<f64>, psi: &DMatrix<f64>) -> Result<DVector<f64>, LqgError> {
    check_square(psi, problem.dim(), "Psi")?;
    if mu.len() != problem.dim() {
        return Err(LqgError::DimensionMismatch(format!("mu has length {}", mu.len())));
    }
    let c = Coefficients::at(problem, t)?;
    Ok((&c.a - &c.s * psi) * mu)
}

pub(crate) fn at_time(e: LqgError, t: f64) -> LqgError {
    match e {
        LqgError::SingularBlock { .. } => LqgError::SingularBlock { t },
        other => other,
    }
}

fn check_square(m: &DMatrix<f64>, n: usize, name: &str) -> Result<(), LqgError> {
    if m.shape() != (n, n) {
        return Err(LqgError::DimensionMismatch(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{asymmetry, max_abs_diff};
    use crate::problems::bundled_lqg;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> LqgProblem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LqgProblem {
            a: m(a).into(),
            b: m(b).into(),
            sigma: m(1.0).into(),
            q: m(q).into(),
            r: m(r).into(),
            p: m(0.0),
            mu0: DVector::zeros(1),
            lambda0: m(1.0),
            horizon: 1.0,
            dt: 0.01,
            state_dim: 1,
            memory_dim: 0,
        }
    }

    #[test]
    fn inference_gain_identity_precision() {
        let k = inference_gain(&DMatrix::identity(2, 2), 1, 1).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn inference_gain_cross_precision() {
        let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let k = inference_gain(&lambda, 1, 1).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.0, 1.0]));
    }

    #[test]
    fn inference_gain_reproduces_gaussian_conditional_mean() {
        // Covariance of the precision [[2,1],[1,1]] is [[1,-1],[-1,2]], so
        // E[x | z] - μx = Σxz/Σzz (z - μz) = -0.5 (z - μz).
        let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let sigma = lambda.clone().try_inverse().unwrap();
        let k = inference_gain(&lambda, 1, 1).unwrap();
        let dev = DVector::from_vec(vec![0.3, 1.7]);
        let cond = &k * &dev;
        assert_relative_eq!(cond[0], sigma[(0, 1)] / sigma[(1, 1)] * dev[1], epsilon = 1e-15);
        assert_relative_eq!(cond[1], dev[1]);
    }

    #[test]
    fn inference_gain_singular_block() {
        let lambda = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]);
        assert!(matches!(inference_gain(&lambda, 1, 1), Err(LqgError::SingularBlock { .. })));
    }

    #[test]
    fn psi_rhs_zero_and_scalar_root() {
        let p = scalar(1.0, 1.0, 1.0, 1.0);
        assert_eq!(psi_rhs(&p, 0.0, &DMatrix::zeros(1, 1)).unwrap()[(0, 0)], 1.0);
        let root = DMatrix::from_element(1, 1, 1.0 + 2f64.sqrt());
        assert!(psi_rhs(&p, 0.0, &root).unwrap()[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn mu_rhs_scalar() {
        let p = scalar(1.0, 1.0, 1.0, 1.0);
        let v = mu_rhs(&p, 0.0, &DVector::from_element(1, 3.0), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(v[0], -3.0);
        let zero = mu_rhs(&p, 0.0, &DVector::zeros(1), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(zero[0], 0.0);
        let free = mu_rhs(&p, 0.0, &DVector::from_element(1, 3.0), &DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(free[0], 3.0);
    }

    #[test]
    fn pi_rhs_matches_hand_evaluation() {
        // A = [[1,0],[1,0]], B = I, R = I, Q = diag(1,0), Π = I,
        // K from Λ = [[2,1],[1,1]]: K = [[0,-1/2],[0,1]], I-K = [[1,1/2],[0,0]].
        // AᵀΠ + ΠA = [[2,1],[1,0]], ΠSΠ = I,
        // (I-K)ᵀ(I-K) = [[1,1/2],[1/2,1/4]].
        // G = [[1,0],[0,0]] + [[2,1],[1,0]] - I + [[1,1/2],[1/2,1/4]]
        //   = [[3, 3/2], [3/2, -3/4]].
        let p = bundled_lqg();
        let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]);
        let k = inference_gain(&lambda, 1, 1).unwrap();
        let g = pi_rhs(&p, 0.0, &DMatrix::identity(2, 2), &k).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[3.0, 1.5, 1.5, -0.75]);
        assert!(max_abs_diff(&g, &expected) < 1e-14, "{g}");
        assert_eq!(pi_rhs(&p, 0.0, &DMatrix::zeros(2, 2), &k).unwrap(), p.q.at(0.0));
    }

    #[test]
    fn lambda_rhs_matches_hand_evaluation() {
        // Λ = I, Π = 0: F = -Aᵀ - A - σσᵀ = -[[2,1],[1,0]] - I = [[-3,-1],[-1,-1]].
        let p = bundled_lqg();
        let f = lambda_rhs(&p, 0.0, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-3.0, -1.0, -1.0, -1.0]);
        assert!(max_abs_diff(&f, &expected) < 1e-15);
    }

    #[test]
    fn lambda_rhs_degenerate_cases() {
        let mut p = bundled_lqg();
        let lambda = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]);
        p.a = DMatrix::zeros(2, 2).into();
        let f = lambda_rhs(&p, 0.0, &lambda, &DMatrix::zeros(2, 2)).unwrap();
        assert!(max_abs_diff(&f, &(-(&lambda * &lambda))) < 1e-15);

        let mut p = bundled_lqg();
        p.sigma = DMatrix::zeros(2, 2).into();
        let a = p.a.at(0.0);
        let f = lambda_rhs(&p, 0.0, &lambda, &DMatrix::zeros(2, 2)).unwrap();
        let lyap = -(a.transpose() * &lambda) - &lambda * &a;
        assert!(max_abs_diff(&f, &lyap) < 1e-15);
    }

    fn sym(entries: &[f64], n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(n, n, entries);
        (&m + m.transpose()) * 0.5
    }

    fn spd(entries: &[f64], n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_row_slice(n, n, entries);
        &m * m.transpose() + DMatrix::identity(n, n)
    }

    proptest! {
        #[test]
        fn rhs_preserve_symmetry(
            a in proptest::collection::vec(-3.0..3.0f64, 4),
            b in proptest::collection::vec(-3.0..3.0f64, 4),
        ) {
            let p = bundled_lqg();
            let pi = sym(&a, 2);
            let lambda = spd(&b, 2);
            let k = inference_gain(&lambda, 1, 1).unwrap();
            prop_assert!(asymmetry(&psi_rhs(&p, 0.0, &pi).unwrap()) <= 1e-10);
            prop_assert!(asymmetry(&pi_rhs(&p, 0.0, &pi, &k).unwrap()) <= 1e-10);
            prop_assert!(asymmetry(&lambda_rhs(&p, 0.0, &lambda, &pi).unwrap()) <= 1e-10);
        }

        #[test]
        fn riccati_reduction(a in proptest::collection::vec(-5.0..5.0f64, 4)) {
            let p = bundled_lqg();
            let pi = sym(&a, 2);
            let with_identity = pi_rhs(&p, 0.0, &pi, &DMatrix::identity(2, 2)).unwrap();
            prop_assert!(max_abs_diff(&with_identity, &psi_rhs(&p, 0.0, &pi).unwrap()) <= 1e-12);
        }
    }
}
