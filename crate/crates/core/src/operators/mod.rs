//! Finite-difference discretization of the seven-term parametric PDE
//!
//! ```text
//! y_t = mu1 y_xx + mu2 y_x + mu3 y + mu4 y^2 + mu5 y^3 + mu6 y y_x + mu7 y_xxx + B(xi)^T u
//! ```
//!
//! on a uniform 1-D grid with homogeneous Dirichlet conditions. Every library
//! term is written in state-dependent coefficient form `A_j(x) x`, so that the
//! full right-hand side is `A(x) x + B u` with `A(x) = sum_j mu_j A_j(x)`.
//!
//! The state vector carries both boundary points. Boundary rows and columns of
//! every operator are zero, which keeps the Dirichlet values pinned at 0.

mod control;
mod profile;

pub use control::{build_control, ControlColumn, ControlOperator};
pub use profile::{eval_initial, InitialProfile};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of terms in the fixed library.
pub const LIBRARY_SIZE: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("state has length {actual}, grid has {expected} points")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("library index {0} is outside 1..=7")]
    UnknownTerm(usize),
    #[error("control operator has no columns")]
    EmptyControl,
    #[error("indicator interval [{lo}, {hi}] is not inside the domain [{a}, {b}]")]
    IntervalOutsideDomain { lo: f64, hi: f64, a: f64, b: f64 },
    #[error("unknown initial profile preset `{0}`")]
    UnknownPreset(String),
}

/// Uniform grid `a = xi_0 < xi_1 < ... < xi_{d-1} = b` with step `dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct GridSpec {
    a: f64,
    b: f64,
    dx: f64,
    d: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GridParams {
    a: f64,
    b: f64,
    dx: f64,
}

impl TryFrom<GridParams> for GridSpec {
    type Error = OperatorError;

    fn try_from(p: GridParams) -> Result<Self, Self::Error> {
        GridSpec::new(p.a, p.b, p.dx)
    }
}

impl From<GridSpec> for GridParams {
    fn from(g: GridSpec) -> Self {
        GridParams { a: g.a, b: g.b, dx: g.dx }
    }
}

impl GridSpec {
    pub fn new(a: f64, b: f64, dx: f64) -> Result<Self, OperatorError> {
        if !(a.is_finite() && b.is_finite() && dx.is_finite()) {
            return Err(OperatorError::InvalidGrid("non-finite bounds or step".into()));
        }
        if dx <= 0.0 || b <= a {
            return Err(OperatorError::InvalidGrid(format!("need a < b and dx > 0, got a={a}, b={b}, dx={dx}")));
        }
        let cells = (b - a) / dx;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-12 * rounded.max(1.0) {
            return Err(OperatorError::InvalidGrid(format!("(b - a)/dx = {cells} is not an integer")));
        }
        let d = rounded as usize + 1;
        if d < 3 {
            return Err(OperatorError::InvalidGrid("grid needs at least one interior point".into()));
        }
        Ok(Self { a, b, dx, d })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    /// Total number of grid points, boundaries included.
    pub fn len(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        self.a + i as f64 * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.d).map(move |i| self.point(i))
    }

    /// Indices of the unknowns that actually evolve.
    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.d - 1
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        i == 0 || i + 1 == self.d
    }

    /// Same interval with step `dx / factor`.
    pub fn refined(&self, factor: usize) -> Result<Self, OperatorError> {
        if factor == 0 {
            return Err(OperatorError::InvalidGrid("refinement factor must be positive".into()));
        }
        Self::new(self.a, self.b, self.dx / factor as f64)
    }

    /// Zeroes the two Dirichlet entries in place.
    pub fn pin_boundary(&self, x: &mut DVector<f64>) {
        x[0] = 0.0;
        x[self.d - 1] = 0.0;
    }

    pub(crate) fn check(&self, x: &DVector<f64>) -> Result<(), OperatorError> {
        if x.len() != self.d {
            return Err(OperatorError::DimensionMismatch { expected: self.d, actual: x.len() });
        }
        Ok(())
    }
}

/// One entry of the candidate library `F_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LibraryTerm {
    /// `y_xx`
    Laplacian,
    /// `y_x`, one-sided according to the sign of its coefficient
    Advection,
    /// `y`
    Identity,
    /// `y^2`
    QuadraticReaction,
    /// `y^3`
    CubicReaction,
    /// `y y_x`, one-sided row by row according to the sign of `mu6 * y`
    NonlinearAdvection,
    /// `y_xxx`
    ThirdDerivative,
}

impl LibraryTerm {
    pub const ALL: [LibraryTerm; LIBRARY_SIZE] = [
        LibraryTerm::Laplacian,
        LibraryTerm::Advection,
        LibraryTerm::Identity,
        LibraryTerm::QuadraticReaction,
        LibraryTerm::CubicReaction,
        LibraryTerm::NonlinearAdvection,
        LibraryTerm::ThirdDerivative,
    ];

    /// 1-based library index.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(index: usize) -> Result<Self, OperatorError> {
        index.checked_sub(1).and_then(|i| Self::ALL.get(i).copied()).ok_or(OperatorError::UnknownTerm(index))
    }

    pub fn name(self) -> &'static str {
        match self {
            LibraryTerm::Laplacian => "laplacian",
            LibraryTerm::Advection => "advection",
            LibraryTerm::Identity => "identity",
            LibraryTerm::QuadraticReaction => "quadratic-reaction",
            LibraryTerm::CubicReaction => "cubic-reaction",
            LibraryTerm::NonlinearAdvection => "nonlinear-advection",
            LibraryTerm::ThirdDerivative => "third-derivative",
        }
    }
}

/// Which one-sided first-difference stencil a row uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    /// `T_neg = tridiag([-1 1 0]) / dx`, the backward difference
    Backward,
    /// `T_pos = tridiag([0 -1 1]) / dx`, the forward difference
    Forward,
}

/// Stencil choice for the linear advection term. Zero weight gives no matrix.
///
/// `y_t = mu2 y_x` transports with velocity `-mu2`, so a positive weight
/// takes its difference from the right neighbour.
fn advection_side(mu2: f64) -> Option<Side> {
    if mu2 > 0.0 {
        Some(Side::Forward)
    } else if mu2 < 0.0 {
        Some(Side::Backward)
    } else {
        None
    }
}

/// Row-wise upwind choice for `D~(x)`: the local velocity of `mu6 y y_x` is
/// `-mu6 x_i`. A zero product yields a zero row either way; it is sent to the
/// forward stencil.
fn nonlinear_side(mu6: f64, xi: f64) -> Side {
    if mu6 * xi < 0.0 {
        Side::Backward
    } else {
        Side::Forward
    }
}

/// Builds the dense `d x d` matrix `A_j(x)`.
///
/// `mu_j` only matters for the two sign-switching terms: it picks the
/// advection stencil (zero gives the zero matrix) and enters the row test
/// `(mu6 x)_i` of the nonlinear advection. It does not scale the result.
pub fn build_term(
    term: LibraryTerm,
    grid: &GridSpec,
    x: &DVector<f64>,
    mu_j: f64,
) -> Result<DMatrix<f64>, OperatorError> {
    grid.check(x)?;
    let d = grid.len();
    let h = grid.dx();
    let mut m = DMatrix::zeros(d, d);
    let set_first_difference = |m: &mut DMatrix<f64>, i: usize, side: Side, scale: f64| {
        let w = scale / h;
        match side {
            Side::Backward => {
                m[(i, i - 1)] = -w;
                m[(i, i)] = w;
            }
            Side::Forward => {
                m[(i, i)] = -w;
                m[(i, i + 1)] = w;
            }
        }
    };
    for i in grid.interior() {
        match term {
            LibraryTerm::Laplacian => {
                let w = 1.0 / (h * h);
                m[(i, i - 1)] = w;
                m[(i, i)] = -2.0 * w;
                m[(i, i + 1)] = w;
            }
            LibraryTerm::Advection => {
                if let Some(side) = advection_side(mu_j) {
                    set_first_difference(&mut m, i, side, 1.0);
                }
            }
            LibraryTerm::Identity => m[(i, i)] = 1.0,
            LibraryTerm::QuadraticReaction => m[(i, i)] = x[i],
            LibraryTerm::CubicReaction => m[(i, i)] = x[i] * x[i],
            LibraryTerm::NonlinearAdvection => {
                set_first_difference(&mut m, i, nonlinear_side(mu_j, x[i]), x[i]);
            }
            LibraryTerm::ThirdDerivative => {
                let w = 1.0 / (2.0 * h * h * h);
                let stencil = [(-2isize, -1.0), (-1, 2.0), (1, -2.0), (2, 1.0)];
                for (offset, c) in stencil {
                    let j = i as isize + offset;
                    if j >= 0 && (j as usize) < d {
                        m[(i, j as usize)] = c * w;
                    }
                }
            }
        }
    }
    zero_boundary(&mut m);
    Ok(m)
}

fn zero_boundary(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    m.row_mut(0).fill(0.0);
    m.row_mut(d - 1).fill(0.0);
    m.column_mut(0).fill(0.0);
    m.column_mut(d - 1).fill(0.0);
}

/// `A(x) = sum_j mu_j A_j(x)`, all seven terms.
pub fn assemble_a(grid: &GridSpec, x: &DVector<f64>, mu: &[f64; LIBRARY_SIZE]) -> Result<DMatrix<f64>, OperatorError> {
    grid.check(x)?;
    let d = grid.len();
    let mut a = DMatrix::zeros(d, d);
    for (term, &mu_j) in LibraryTerm::ALL.iter().zip(mu) {
        if mu_j != 0.0 {
            a += build_term(*term, grid, x, mu_j)? * mu_j;
        }
    }
    Ok(a)
}

/// Matrix-free `A_j(x) x`; equal to `build_term(..) * x` without the `d x d`
/// allocation. Boundary entries of `x` are read as zero, boundary entries of
/// the result are zero.
pub fn apply_term(
    term: LibraryTerm,
    grid: &GridSpec,
    x: &DVector<f64>,
    mu_j: f64,
) -> Result<DVector<f64>, OperatorError> {
    grid.check(x)?;
    let mut out = DVector::zeros(grid.len());
    apply_term_into(term, grid, x, mu_j, 1.0, &mut out);
    Ok(out)
}

/// Matrix-free `A(x) x`.
pub fn apply_a(grid: &GridSpec, x: &DVector<f64>, mu: &[f64; LIBRARY_SIZE]) -> Result<DVector<f64>, OperatorError> {
    grid.check(x)?;
    let mut out = DVector::zeros(grid.len());
    apply_a_into(grid, x, mu, &mut out);
    Ok(out)
}

/// `out += A(x) x` for a state already known to match the grid.
pub(crate) fn apply_a_into(grid: &GridSpec, x: &DVector<f64>, mu: &[f64; LIBRARY_SIZE], out: &mut DVector<f64>) {
    for (term, &mu_j) in LibraryTerm::ALL.iter().zip(mu) {
        if mu_j != 0.0 {
            apply_term_into(*term, grid, x, mu_j, mu_j, out);
        }
    }
}

/// `out += weight * A_j(x) x`
fn apply_term_into(
    term: LibraryTerm,
    grid: &GridSpec,
    x: &DVector<f64>,
    mu_j: f64,
    weight: f64,
    out: &mut DVector<f64>,
) {
    let d = grid.len();
    let h = grid.dx();
    // zeroed boundary columns
    let at = |j: isize| -> f64 {
        if j <= 0 || j as usize >= d - 1 {
            0.0
        } else {
            x[j as usize]
        }
    };
    let first_difference = |i: isize, side: Side| -> f64 {
        match side {
            Side::Backward => (at(i) - at(i - 1)) / h,
            Side::Forward => (at(i + 1) - at(i)) / h,
        }
    };
    for i in grid.interior() {
        let ii = i as isize;
        let v = match term {
            LibraryTerm::Laplacian => (at(ii - 1) - 2.0 * at(ii) + at(ii + 1)) / (h * h),
            LibraryTerm::Advection => match advection_side(mu_j) {
                Some(side) => first_difference(ii, side),
                None => 0.0,
            },
            LibraryTerm::Identity => x[i],
            LibraryTerm::QuadraticReaction => x[i] * x[i],
            LibraryTerm::CubicReaction => x[i] * x[i] * x[i],
            LibraryTerm::NonlinearAdvection => x[i] * first_difference(ii, nonlinear_side(mu_j, x[i])),
            LibraryTerm::ThirdDerivative => {
                (-at(ii - 2) + 2.0 * at(ii - 1) - 2.0 * at(ii + 1) + at(ii + 2)) / (2.0 * h * h * h)
            }
        };
        out[i] += weight * v;
    }
}

/// Expands coefficients of an active subset into a full seven-vector, with
/// zeros for inactive terms.
pub fn expand_coefficients(active: &[LibraryTerm], values: &[f64]) -> [f64; LIBRARY_SIZE] {
    let mut mu = [0.0; LIBRARY_SIZE];
    for (term, v) in active.iter().zip(values) {
        mu[term.index() - 1] = *v;
    }
    mu
}
