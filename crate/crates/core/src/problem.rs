//! Problem model: the raw state/observation/memory primitives, their
//! assembly into a single extended-state diffusion, and the LQG and grid
//! problem records.
//!
//! Callables follow one calling convention, `f(t, state, control, out)`,
//! writing into a caller-provided buffer so that the grid solvers can
//! evaluate them at every node of every time step without allocating.
//! Matrices are written row-major. Callables are assumed well-behaved
//! (finite, moderate growth) on the domain they are evaluated on; nothing
//! here checks Lipschitz or integrability conditions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

use crate::linalg;

/// Stack buffer for the small vectors and matrices produced by callables.
pub(crate) type Buf = SmallVec<[f64; 16]>;

pub(crate) fn zeroed(n: usize) -> Buf {
    SmallVec::from_elem(0.0, n)
}

/// `f(t, state, control, out)`.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalCostFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn rand::RngCore, &mut [f64]) + Send + Sync>;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid problem: {0}")]
    Invalid(String),
}

/// A vector-valued callable with a declared output length.
#[derive(Clone)]
pub struct VectorFn {
    pub len: usize,
    pub f: FieldFn,
}

impl VectorFn {
    pub fn new(len: usize, f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { len, f: Arc::new(f) }
    }

    pub fn zero(len: usize) -> Self {
        Self::new(len, |_, _, _, out| out.fill(0.0))
    }
}

/// A matrix-valued callable with a declared shape; output is row-major.
#[derive(Clone)]
pub struct MatrixFn {
    pub rows: usize,
    pub cols: usize,
    pub f: FieldFn,
}

impl MatrixFn {
    pub fn new(
        rows: usize,
        cols: usize,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self { rows, cols, f: Arc::new(f) }
    }

    pub fn constant(m: DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let data: Vec<f64> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        Self::new(rows, cols, move |_, _, _, out| out.copy_from_slice(&data))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    /// A block with no columns, for absent noise sources.
    pub fn empty(rows: usize) -> Self {
        Self::new(rows, 0, |_, _, _, _| {})
    }
}

/// Initial law of (part of) the state.
#[derive(Clone)]
pub enum InitialDistribution {
    Gaussian { mean: DVector<f64>, covariance: DMatrix<f64> },
    Custom { dim: usize, density: DensityFn, sampler: SamplerFn },
}

impl fmt::Debug for InitialDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian { mean, covariance } => f
                .debug_struct("Gaussian")
                .field("mean", mean)
                .field("covariance", covariance)
                .finish(),
            Self::Custom { dim, .. } => f.debug_struct("Custom").field("dim", dim).finish(),
        }
    }
}

impl InitialDistribution {
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Self {
        Self::Gaussian { mean, covariance }
    }

    pub fn isotropic(mean: f64, variance: f64, dim: usize) -> Self {
        Self::Gaussian {
            mean: DVector::from_element(dim, mean),
            covariance: DMatrix::identity(dim, dim) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian { mean, .. } => mean.len(),
            Self::Custom { dim, .. } => *dim,
        }
    }

    /// Independent product; Gaussian factors stay Gaussian.
    pub fn product(first: &Self, second: &Self) -> Self {
        match (first, second) {
            (
                Self::Gaussian { mean: m1, covariance: c1 },
                Self::Gaussian { mean: m2, covariance: c2 },
            ) => {
                let (n1, n2) = (m1.len(), m2.len());
                let mean = DVector::from_iterator(n1 + n2, m1.iter().chain(m2.iter()).cloned());
                let mut cov = DMatrix::zeros(n1 + n2, n1 + n2);
                cov.view_mut((0, 0), (n1, n1)).copy_from(c1);
                cov.view_mut((n1, n1), (n2, n2)).copy_from(c2);
                Self::Gaussian { mean, covariance: cov }
            }
            _ => {
                let (a, b) = (first.clone(), second.clone());
                let (a2, b2) = (first.clone(), second.clone());
                let n1 = a.dim();
                let dim = n1 + b.dim();
                let density: DensityFn = Arc::new(move |s: &[f64]| a.density(&s[..n1]) * b.density(&s[n1..]));
                let sampler: SamplerFn = Arc::new(move |rng: &mut dyn rand::RngCore, out: &mut [f64]| {
                    let (head, tail) = out.split_at_mut(n1);
                    a2.sample(rng, head);
                    b2.sample(rng, tail);
                });
                Self::Custom { dim, density, sampler }
            }
        }
    }

    /// Density value; Gaussians must have a positive definite covariance.
    pub fn density(&self, s: &[f64]) -> f64 {
        match self {
            Self::Gaussian { mean, covariance } => {
                let n = mean.len();
                let chol = match covariance.clone().cholesky() {
                    Some(c) => c,
                    None => return f64::NAN,
                };
                let d = DVector::from_iterator(n, s.iter().zip(mean.iter()).map(|(a, b)| a - b));
                let sol = chol.solve(&d);
                let quad = d.dot(&sol);
                let det = chol.determinant();
                (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powi(n as i32) * det).sqrt()
            }
            Self::Custom { density, .. } => density(s),
        }
    }

    pub fn sample(&self, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
        match self {
            Self::Gaussian { mean, covariance } => {
                let factor = linalg::psd_factor(covariance);
                sample_gaussian(mean, &factor, rng, out);
            }
            Self::Custom { sampler, .. } => sampler(rng, out),
        }
    }

    /// A sampler with any factorization work done once up front.
    pub fn sampler(&self) -> SamplerFn {
        match self {
            Self::Gaussian { mean, covariance } => {
                let factor = linalg::psd_factor(covariance);
                let mean = mean.clone();
                Arc::new(move |rng: &mut dyn rand::RngCore, out: &mut [f64]| {
                    sample_gaussian(&mean, &factor, rng, out)
                })
            }
            Self::Custom { sampler, .. } => sampler.clone(),
        }
    }
}

fn sample_gaussian(mean: &DVector<f64>, factor: &DMatrix<f64>, rng: &mut dyn rand::RngCore, out: &mut [f64]) {
    let n = mean.len();
    let xi: Buf = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    for i in 0..n {
        let mut v = mean[i];
        for j in 0..n {
            v += factor[(i, j)] * xi[j];
        }
        out[i] = v;
    }
}

/// Declared dimensions of the raw problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDims {
    pub state: usize,
    pub observation: usize,
    pub memory: usize,
    pub state_control: usize,
    pub memory_control: usize,
}

/// State, observation and memory SDEs as separately specified primitives:
///
/// ```text
/// dx = b(t,x,u) dt + σ(t,x,u) dω
/// dy = h(t,x) dt + γ(t) dν
/// dz = c(t,z,v) dt + κ(t,z,v) dy + η(t,z,v) dξ
/// ```
#[derive(Clone)]
pub struct RawPoscSpec {
    pub dims: RawDims,
    pub state_drift: VectorFn,
    pub state_diffusion: MatrixFn,
    /// Called with an empty control slice.
    pub observation_drift: VectorFn,
    /// Called with empty state and control slices.
    pub observation_noise: MatrixFn,
    pub memory_drift: VectorFn,
    pub observation_gain: MatrixFn,
    pub memory_noise: MatrixFn,
    pub initial_state: InitialDistribution,
    pub initial_memory: InitialDistribution,
}

/// Diffusion on the extended state `s = (x, z)` driven by the combined
/// control `(u, v)`.
#[derive(Clone)]
pub struct ExtendedDynamics {
    pub state_dim: usize,
    pub memory_dim: usize,
    pub control_dim: usize,
    pub noise_dim: usize,
    /// `b(t, s, u)`, length `dim()`.
    pub drift: FieldFn,
    /// `σ(t, s, u)`, `dim() × noise_dim`, row-major.
    pub diffusion: FieldFn,
    pub initial: InitialDistribution,
}

impl ExtendedDynamics {
    pub fn dim(&self) -> usize {
        self.state_dim + self.memory_dim
    }

    pub fn drift_at(&self, t: f64, s: &[f64], u: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        (self.drift)(t, s, u, out.as_mut_slice());
        out
    }

    pub fn diffusion_at(&self, t: f64, s: &[f64], u: &[f64]) -> DMatrix<f64> {
        let mut buf = vec![0.0; self.dim() * self.noise_dim];
        (self.diffusion)(t, s, u, &mut buf);
        DMatrix::from_row_slice(self.dim(), self.noise_dim, &buf)
    }

    /// `D = σσᵀ`.
    pub fn diffusion_tensor(&self, t: f64, s: &[f64], u: &[f64]) -> DMatrix<f64> {
        let sigma = self.diffusion_at(t, s, u);
        &sigma * sigma.transpose()
    }
}

/// Running cost `f(t, s, u)` and terminal cost `g(s)`.
#[derive(Clone)]
pub struct CostSpec {
    pub running: RunningCostFn,
    pub terminal: TerminalCostFn,
}

impl CostSpec {
    pub fn new(
        running: impl Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
        terminal: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { running: Arc::new(running), terminal: Arc::new(terminal) }
    }

    pub fn zero() -> Self {
        Self::new(|_, _, _| 0.0, |_| 0.0)
    }
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), ProblemError> {
    if got != want {
        return Err(ProblemError::DimensionMismatch(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

/// Stacks the raw primitives into one diffusion on `s = (x, z)`:
///
/// ```text
/// b̃ = [ b(t,x,u) ; c(t,z,v) + κ(t,z,v) h(t,x) ]
/// σ̃ = [ σ  0   0 ;
///       0  κγ  η ]
/// ```
///
/// The combined control is `(u, v)` and the initial law is the product of
/// the state and memory laws.
pub fn assemble_extended_dynamics(raw: &RawPoscSpec) -> Result<ExtendedDynamics, ProblemError> {
    let d = raw.dims;
    for (name, v) in [
        ("state", d.state),
        ("observation", d.observation),
        ("memory", d.memory),
    ] {
        if v == 0 {
            return Err(ProblemError::Invalid(format!("{name} dimension must be positive")));
        }
    }
    check_len("state drift length", raw.state_drift.len, d.state)?;
    check_len("state diffusion rows", raw.state_diffusion.rows, d.state)?;
    check_len("observation drift length vs observation dimension", raw.observation_drift.len, d.observation)?;
    check_len("observation noise rows", raw.observation_noise.rows, d.observation)?;
    check_len("memory drift length", raw.memory_drift.len, d.memory)?;
    check_len("observation gain rows", raw.observation_gain.rows, d.memory)?;
    check_len(
        "observation gain columns vs observation noise rows",
        raw.observation_gain.cols,
        raw.observation_noise.rows,
    )?;
    check_len("memory noise rows", raw.memory_noise.rows, d.memory)?;
    check_len("initial state dimension", raw.initial_state.dim(), d.state)?;
    check_len("initial memory dimension", raw.initial_memory.dim(), d.memory)?;

    let (dx, dy, dz) = (d.state, d.observation, d.memory);
    let du = d.state_control;
    let n_omega = raw.state_diffusion.cols;
    let n_nu = raw.observation_noise.cols;
    let n_xi = raw.memory_noise.cols;
    let noise_dim = n_omega + n_nu + n_xi;

    let b = raw.state_drift.f.clone();
    let h = raw.observation_drift.f.clone();
    let c = raw.memory_drift.f.clone();
    let kappa = raw.observation_gain.f.clone();
    let drift: FieldFn = Arc::new(move |t, s, ctl, out| {
        let (x, z) = s.split_at(dx);
        let (u, v) = ctl.split_at(du.min(ctl.len()));
        let (out_x, out_z) = out.split_at_mut(dx);
        b(t, x, u, out_x);
        c(t, z, v, out_z);
        let mut hv = zeroed(dy);
        h(t, x, &[], &mut hv);
        let mut k = zeroed(dz * dy);
        kappa(t, z, v, &mut k);
        for i in 0..dz {
            let mut acc = 0.0;
            for j in 0..dy {
                acc += k[i * dy + j] * hv[j];
            }
            out_z[i] += acc;
        }
    });

    let sigma = raw.state_diffusion.f.clone();
    let gamma = raw.observation_noise.f.clone();
    let kappa = raw.observation_gain.f.clone();
    let eta = raw.memory_noise.f.clone();
    let diffusion: FieldFn = Arc::new(move |t, s, ctl, out| {
        out.fill(0.0);
        let (x, z) = s.split_at(dx);
        let (u, v) = ctl.split_at(du.min(ctl.len()));
        let mut sx = zeroed(dx * n_omega);
        sigma(t, x, u, &mut sx);
        for i in 0..dx {
            for j in 0..n_omega {
                out[i * noise_dim + j] = sx[i * n_omega + j];
            }
        }
        let mut g = zeroed(dy * n_nu);
        gamma(t, &[], &[], &mut g);
        let mut k = zeroed(dz * dy);
        kappa(t, z, v, &mut k);
        let mut e = zeroed(dz * n_xi);
        eta(t, z, v, &mut e);
        for i in 0..dz {
            let row = (dx + i) * noise_dim;
            for j in 0..n_nu {
                let mut acc = 0.0;
                for l in 0..dy {
                    acc += k[i * dy + l] * g[l * n_nu + j];
                }
                out[row + n_omega + j] = acc;
            }
            for j in 0..n_xi {
                out[row + n_omega + n_nu + j] = e[i * n_xi + j];
            }
        }
    });

    Ok(ExtendedDynamics {
        state_dim: dx,
        memory_dim: dz,
        control_dim: d.state_control + d.memory_control,
        noise_dim,
        drift,
        diffusion,
        initial: InitialDistribution::product(&raw.initial_state, &raw.initial_memory),
    })
}

/// A matrix that is either constant or an arbitrary function of time.
#[derive(Clone)]
pub enum TimeMatrix {
    Constant(DMatrix<f64>),
    Varying(Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>),
}

impl fmt::Debug for TimeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => write!(f, "Constant({m:?})"),
            Self::Varying(_) => write!(f, "Varying(..)"),
        }
    }
}

impl TimeMatrix {
    pub fn at(&self, t: f64) -> DMatrix<f64> {
        match self {
            Self::Constant(m) => m.clone(),
            Self::Varying(f) => f(t),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Constant(m) => m.shape(),
            Self::Varying(f) => f(0.0).shape(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

impl From<DMatrix<f64>> for TimeMatrix {
    fn from(m: DMatrix<f64>) -> Self {
        Self::Constant(m)
    }
}

/// Linear-quadratic-Gaussian problem on the extended state:
///
/// ```text
/// ds = (A s + B u) dt + σ dω,   s₀ ~ N(μ₀, Λ₀⁻¹)
/// J  = E[ ∫ sᵀQs + uᵀRu dt + s_Tᵀ P s_T ]
/// ```
///
/// `Λ₀` is a precision matrix. The first `state_dim` coordinates are the
/// hidden state, the remaining `memory_dim` the memory.
#[derive(Clone, Debug)]
pub struct LqgProblem {
    pub a: TimeMatrix,
    pub b: TimeMatrix,
    pub sigma: TimeMatrix,
    pub q: TimeMatrix,
    pub r: TimeMatrix,
    pub p: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub lambda0: DMatrix<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub state_dim: usize,
    pub memory_dim: usize,
}

impl LqgProblem {
    pub fn dim(&self) -> usize {
        self.state_dim + self.memory_dim
    }

    pub fn control_dim(&self) -> usize {
        self.b.shape().1
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma.shape().1
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|n| n as f64 * self.dt).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(ValidationCheck { name: name.to_string(), passed, detail: detail.into() });
    }

    pub fn is_ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

const DEFINITENESS_TOL: f64 = 1e-12;

/// Checks shapes and definiteness (`Q ⪰ 0`, `R ≻ 0`, `P ⪰ 0`, `Λ₀ ≻ 0`)
/// and the time grid. Time-varying matrices are sampled on the solver grid.
pub fn validate_lqg(problem: &LqgProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let (dx, dz) = (problem.state_dim, problem.memory_dim);
    let n = dx + dz;
    report.push("split", dx > 0, format!("state_dim={dx}, memory_dim={dz}"));

    let horizon_ok = problem.horizon > 0.0 && problem.horizon.is_finite();
    report.push("horizon", horizon_ok, format!("T={}", problem.horizon));
    let dt_ok = problem.dt > 0.0 && problem.dt < problem.horizon;
    report.push("time step", dt_ok, format!("dt={}", problem.dt));
    if dt_ok && horizon_ok {
        let steps = problem.horizon / problem.dt;
        let aligned = (steps - steps.round()).abs() < 1e-9 * steps.max(1.0);
        report.push("time grid", aligned, format!("T/dt={steps}"));
    }

    let (ar, ac) = problem.a.shape();
    report.push("A shape", ar == n && ac == n, format!("{ar}x{ac}, expected {n}x{n}"));
    let (br, bc) = problem.b.shape();
    report.push("B shape", br == n && bc > 0, format!("{br}x{bc}, expected {n}xd_u"));
    let (sr, sc) = problem.sigma.shape();
    report.push("sigma shape", sr == n && sc > 0, format!("{sr}x{sc}, expected {n}xd_w"));
    let (qr, qc) = problem.q.shape();
    report.push("Q shape", qr == n && qc == n, format!("{qr}x{qc}"));
    let (rr, rc) = problem.r.shape();
    report.push("R shape", rr == bc && rc == bc, format!("{rr}x{rc}, expected {bc}x{bc}"));
    let (pr, pc) = problem.p.shape();
    report.push("P shape", pr == n && pc == n, format!("{pr}x{pc}"));
    report.push("mu0 length", problem.mu0.len() == n, format!("{}", problem.mu0.len()));
    let (lr, lc) = problem.lambda0.shape();
    report.push("Lambda0 shape", lr == n && lc == n, format!("{lr}x{lc}"));
    if !report.is_ok() {
        return report;
    }

    let sample_times: Vec<f64> = if problem.q.is_constant() && problem.r.is_constant() {
        vec![0.0]
    } else if dt_ok && horizon_ok {
        problem.times()
    } else {
        vec![0.0]
    };
    let mut worst_q = f64::INFINITY;
    let mut worst_r = f64::INFINITY;
    let mut q_sym = true;
    let mut r_sym = true;
    for &t in &sample_times {
        let q = problem.q.at(t);
        let r = problem.r.at(t);
        q_sym &= linalg::asymmetry(&q) <= 1e-12 * (1.0 + linalg::max_abs(&q));
        r_sym &= linalg::asymmetry(&r) <= 1e-12 * (1.0 + linalg::max_abs(&r));
        worst_q = worst_q.min(linalg::min_eigenvalue(&q) / (1.0 + linalg::max_abs(&q)));
        let r_min = linalg::min_eigenvalue(&r);
        worst_r = worst_r.min(if linalg::is_pd(&r) { r_min } else { r_min.min(0.0) });
    }
    report.push("Q symmetric", q_sym, "");
    report.push("Q positive semidefinite", worst_q >= -DEFINITENESS_TOL, format!("min eigenvalue {worst_q:e}"));
    report.push("R symmetric", r_sym, "");
    report.push("R positive definite", worst_r > 0.0, format!("min eigenvalue {worst_r:e}"));
    let p = &problem.p;
    report.push("P symmetric", linalg::asymmetry(p) <= 1e-12 * (1.0 + linalg::max_abs(p)), "");
    report.push(
        "P positive semidefinite",
        linalg::is_psd(p, DEFINITENESS_TOL),
        format!("min eigenvalue {:e}", linalg::min_eigenvalue(p)),
    );
    let l0 = &problem.lambda0;
    report.push("Lambda0 symmetric", linalg::asymmetry(l0) <= 1e-12 * (1.0 + linalg::max_abs(l0)), "");
    report.push(
        "Lambda0 positive definite",
        linalg::is_pd(l0),
        format!("min eigenvalue {:e}", linalg::min_eigenvalue(l0)),
    );
    report
}

/// Geometry of the tensor grid over the extended state plus the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Node count per dimension, state dimensions first.
    pub nodes: Vec<usize>,
    pub time_steps: usize,
    pub horizon: f64,
}

impl GridSpec {
    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let d = self.nodes.len();
        if d == 0 || d > 3 {
            return Err(ProblemError::Invalid(format!("grid dimension {d} outside 1..=3")));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(ProblemError::DimensionMismatch("grid bounds vs node counts".into()));
        }
        for i in 0..d {
            if !(self.lower[i] < self.upper[i]) || !self.lower[i].is_finite() || !self.upper[i].is_finite() {
                return Err(ProblemError::Invalid(format!("grid bounds not ordered in dimension {i}")));
            }
            if self.nodes[i] < 2 {
                return Err(ProblemError::Invalid(format!("fewer than 2 nodes in dimension {i}")));
            }
        }
        if self.time_steps == 0 || !(self.horizon > 0.0) {
            return Err(ProblemError::Invalid("empty time grid".into()));
        }
        Ok(())
    }
}
