//! Continuous algebraic Riccati equation and the state-dependent feedback
//! gain built from it.
//!
//! The stabilizing solution is taken from the stable invariant subspace of
//! the Hamiltonian matrix (ordered real Schur form), then polished with
//! Newton-Kleinman steps when its residual is above tolerance.

mod schur;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use schur::{solve_lyapunov, RealSchur};

/// Relative residual targeted by [`solve_care`] when the caller has no
/// opinion.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Above this relative residual a solution is rejected outright.
pub const FAILURE_RESIDUAL: f64 = 1e-6;
/// Largest tolerated 1-norm condition number of the subspace basis `X1`.
pub const MAX_BASIS_CONDITION: f64 = 1e12;
const MAX_REFINEMENTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid cost weights: {0}")]
    InvalidWeights(String),
}

/// State and control weights of the quadratic cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, RiccatiError> {
        if !q.is_square() || !r.is_square() {
            return Err(RiccatiError::InvalidWeights("Q and R must be square".into()));
        }
        if r.nrows() == 0 {
            return Err(RiccatiError::InvalidWeights("R is empty".into()));
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.iter().all(|v| v.is_finite()) {
                return Err(RiccatiError::InvalidWeights(format!("{name} has non-finite entries")));
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(RiccatiError::InvalidWeights(format!("{name} is not symmetric")));
            }
        }
        if r.clone().cholesky().is_none() {
            return Err(RiccatiError::InvalidWeights("R is not positive definite".into()));
        }
        Ok(Self { q, r })
    }

    /// `Q = q_scale * I_d`, `R = r_scale * I_m`.
    pub fn scaled_identity(d: usize, q_scale: f64, m: usize, r_scale: f64) -> Result<Self, RiccatiError> {
        Self::new(DMatrix::identity(d, d) * q_scale, DMatrix::identity(m, m) * r_scale)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Weights restricted to the state indices in `idx`.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        Self { q: self.q.select_rows(idx).select_columns(idx), r: self.r.clone() }
    }

    /// `R^{-1} M` via the Cholesky factor of `R`.
    fn r_solve(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.r.clone().cholesky().expect("validated at construction").solve(m)
    }
}

/// Why a Riccati solve was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum CareFailure {
    SchurNotConverged,
    ReorderingFailed,
    StableSubspaceDimension { found: usize, expected: usize },
    SingularBasis { condition: f64 },
    ResidualTooLarge { residual: f64 },
    UnstableClosedLoop { max_real_part: f64 },
}

impl std::fmt::Display for CareFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CareFailure::SchurNotConverged => write!(f, "Schur iteration did not converge"),
            CareFailure::ReorderingFailed => write!(f, "eigenvalue reordering failed"),
            CareFailure::StableSubspaceDimension { found, expected } => {
                write!(f, "stable subspace has dimension {found}, expected {expected}")
            }
            CareFailure::SingularBasis { condition } => write!(f, "subspace basis condition {condition:.3e}"),
            CareFailure::ResidualTooLarge { residual } => write!(f, "residual {residual:.3e} too large"),
            CareFailure::UnstableClosedLoop { max_real_part } => {
                write!(f, "closed loop not stable (max real part {max_real_part:.3e})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum CareStatus {
    Solved,
    Failed(CareFailure),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub pi: DMatrix<f64>,
    /// Frobenius norm of the CARE residual at `pi`.
    pub residual: f64,
    pub status: CareStatus,
    /// Newton-Kleinman steps accepted after the subspace solve.
    pub refinements: usize,
}

impl RiccatiSolution {
    pub fn is_solved(&self) -> bool {
        self.status == CareStatus::Solved
    }

    fn failed(d: usize, reason: CareFailure) -> Self {
        Self { pi: DMatrix::zeros(d, d), residual: f64::INFINITY, status: CareStatus::Failed(reason), refinements: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    pub k: DMatrix<f64>,
    /// `true` when the solve failed and the zero gain was substituted.
    pub fallback: bool,
}

impl FeedbackGain {
    pub fn zero(m: usize, d: usize) -> Self {
        Self { k: DMatrix::zeros(m, d), fallback: true }
    }
}

/// `A^T P + P A - P S P + Q`, with `S = B R^{-1} B^T`.
fn residual_matrix(a: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let ap = a.transpose() * p;
    &ap + ap.transpose() - p * s * p + q
}

/// CARE residual norm `||A^T P + P A - P B R^{-1} B^T P + Q||_F`.
pub fn care_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, w: &CostWeights, p: &DMatrix<f64>) -> f64 {
    let s = b * w.r_solve(&b.transpose());
    residual_matrix(a, &s, &w.q, p).norm()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Stabilizing solution of `A^T P + P A - P B R^{-1} B^T P + Q = 0`.
///
/// Never errors on well-formed input: numerical trouble is reported via
/// [`CareStatus::Failed`]. A solution is `Solved` when its residual is within
/// `FAILURE_RESIDUAL * max(1, ||Q||_F)` and the closed loop is stable;
/// refinement keeps going until the residual drops below
/// `tol * max(1, ||Q||_F)` or stops improving.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &CostWeights,
    tol: f64,
) -> Result<RiccatiSolution, RiccatiError> {
    let d = a.nrows();
    if !a.is_square() {
        return Err(RiccatiError::DimensionMismatch(format!("A is {}x{}", a.nrows(), a.ncols())));
    }
    if b.nrows() != d || b.ncols() != w.input_dim() || w.state_dim() != d {
        return Err(RiccatiError::DimensionMismatch(format!(
            "A {d}x{d}, B {}x{}, Q {}x{}, R {}x{}",
            b.nrows(),
            b.ncols(),
            w.state_dim(),
            w.state_dim(),
            w.input_dim(),
            w.input_dim()
        )));
    }
    if d == 0 {
        return Ok(RiccatiSolution {
            pi: DMatrix::zeros(0, 0),
            residual: 0.0,
            status: CareStatus::Solved,
            refinements: 0,
        });
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Ok(RiccatiSolution::failed(d, CareFailure::SchurNotConverged));
    }
    let s = symmetrize(&(b * w.r_solve(&b.transpose())));
    let q = &w.q;
    let scale = q.norm().max(1.0);

    let mut h = DMatrix::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(a);
    h.view_mut((0, d), (d, d)).copy_from(&(-&s));
    h.view_mut((d, 0), (d, d)).copy_from(&(-q));
    h.view_mut((d, d), (d, d)).copy_from(&(-a.transpose()));

    let Some(mut hs) = RealSchur::new(h) else {
        return Ok(RiccatiSolution::failed(d, CareFailure::SchurNotConverged));
    };
    let Some(found) = hs.reorder_stable() else {
        return Ok(RiccatiSolution::failed(d, CareFailure::ReorderingFailed));
    };
    if found != d {
        return Ok(RiccatiSolution::failed(d, CareFailure::StableSubspaceDimension { found, expected: d }));
    }
    let x1 = hs.z.view((0, 0), (d, d)).into_owned();
    let x2 = hs.z.view((d, 0), (d, d)).into_owned();
    let Some(x1_inv) = x1.clone().lu().try_inverse() else {
        return Ok(RiccatiSolution::failed(d, CareFailure::SingularBasis { condition: f64::INFINITY }));
    };
    let condition = one_norm(&x1) * one_norm(&x1_inv);
    if !(condition <= MAX_BASIS_CONDITION) {
        return Ok(RiccatiSolution::failed(d, CareFailure::SingularBasis { condition }));
    }
    let mut p = symmetrize(&(x2 * x1_inv));
    let mut residual = residual_matrix(a, &s, q, &p).norm();

    let mut refinements = 0;
    while !(residual <= tol * scale) && refinements < MAX_REFINEMENTS {
        // (A - S P)^T X + X (A - S P) = -(Q + P S P)
        let a_cl = a - &s * &p;
        let rhs = -(q + &p * &s * &p);
        let Some((next, _)) = solve_lyapunov(&a_cl, &rhs) else {
            break;
        };
        let next_residual = residual_matrix(a, &s, q, &next).norm();
        if !(next_residual < residual) {
            break;
        }
        p = next;
        residual = next_residual;
        refinements += 1;
    }
    if !(residual <= FAILURE_RESIDUAL * scale) {
        return Ok(RiccatiSolution::failed(d, CareFailure::ResidualTooLarge { residual }));
    }

    let a_cl = a - &s * &p;
    let max_real_part = match RealSchur::new(a_cl) {
        Some(cl) => cl.eigenvalues().iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max),
        None => f64::NAN,
    };
    if !(max_real_part < 0.0) {
        return Ok(RiccatiSolution::failed(d, CareFailure::UnstableClosedLoop { max_real_part }));
    }
    Ok(RiccatiSolution { pi: p, residual, status: CareStatus::Solved, refinements })
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `K = R^{-1} B^T P` for a solved equation, the zero gain otherwise.
pub fn gain_from(sol: &RiccatiSolution, b: &DMatrix<f64>, w: &CostWeights) -> FeedbackGain {
    match sol.status {
        CareStatus::Solved => FeedbackGain { k: w.r_solve(&(b.transpose() * &sol.pi)), fallback: false },
        CareStatus::Failed(_) => FeedbackGain::zero(b.ncols(), b.nrows()),
    }
}

/// Outcome of one state-dependent gain synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSynthesis {
    pub gain: FeedbackGain,
    pub solution: RiccatiSolution,
}

/// Solves the Riccati equation on the state indices `active` only and
/// embeds the gain into the full state, with zero columns elsewhere.
///
/// Dirichlet nodes have identically zero rows and columns in `A` and `B`;
/// left in, they make the equation unsolvable because `Q` still penalizes
/// them while nothing can steer them.
pub fn gain_on_subspace(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &CostWeights,
    active: &[usize],
    tol: f64,
) -> Result<GainSynthesis, RiccatiError> {
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || w.state_dim() != d {
        return Err(RiccatiError::DimensionMismatch(format!(
            "A {}x{}, B {}x{}, Q {}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            w.state_dim()
        )));
    }
    if let Some(&bad) = active.iter().find(|&&i| i >= d) {
        return Err(RiccatiError::DimensionMismatch(format!("index {bad} outside state of size {d}")));
    }
    let a_sub = a.select_rows(active).select_columns(active);
    let b_sub = b.select_rows(active);
    let w_sub = w.restrict(active);
    let solution = solve_care(&a_sub, &b_sub, &w_sub, tol)?;
    let sub_gain = gain_from(&solution, &b_sub, &w_sub);
    let mut k = DMatrix::zeros(b.ncols(), d);
    for (col, &i) in active.iter().enumerate() {
        k.set_column(i, &sub_gain.k.column(col));
    }
    Ok(GainSynthesis { gain: FeedbackGain { k, fallback: sub_gain.fallback }, solution })
}
