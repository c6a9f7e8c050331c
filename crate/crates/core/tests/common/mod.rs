//! Independent reference computations shared by the integration suites.
//!
//! Nothing here calls into the solvers under test: Hamiltonian eigenvectors
//! come from inverse iteration, regression posteriors from LU on the normal
//! equations, implicit steps from Newton with a hand-assembled Jacobian.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdre_ident::blr::GaussianBelief;

pub type C64 = Complex<f64>;

/// A random CARE instance `(A, B, Q, R)` with `Q`, `R` positive definite;
/// `(A, B)` is stabilizable with probability one.
///
/// Entries of `A` have variance `1 / d`, which keeps its spectral radius
/// near one independently of `d`.
pub fn random_care_instance(seed: u64, d: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = (3.0 / d as f64).sqrt();
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-spread..spread));
    let b = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
    let l = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let q = &l * l.transpose() + DMatrix::identity(d, d) * 0.1;
    let r = DMatrix::from_diagonal(&DVector::from_fn(m, |_, _| rng.random_range(0.5..2.0)));
    (a, b, q, r)
}

fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

/// Eigenvalues from nalgebra's complex Schur form.
///
/// nalgebra's QR iterations have no exceptional shifts and can stall on
/// Hamiltonian spectra, so a stalled attempt is retried on a random
/// orthogonal similarity of `m`, which has the same spectrum but a different
/// Hessenberg form.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<C64> {
    let n = m.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut candidate = m.clone();
    for _ in 0..8 {
        if let Some(schur) = to_complex(&candidate).try_schur(f64::EPSILON, 5_000) {
            return schur.eigenvalues().expect("complex Schur form is triangular").iter().copied().collect();
        }
        let q = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        candidate = q.transpose() * m * q;
    }
    panic!("no convergent Schur form after eight similarity transforms");
}

/// Stabilizing CARE solution from the stable eigenvectors of the
/// Hamiltonian `[[A, -S], [-Q, -A^T]]`, `S = B R^{-1} B^T`.
///
/// Eigenvalues come from nalgebra, each eigenvector from a few steps of
/// inverse iteration with a complex LU; `Pi = V2 V1^{-1}`. Returns `None`
/// when the stable set does not have `d` members.
pub fn hamiltonian_oracle(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let s = b * r.clone().try_inverse()? * b.transpose();
    let mut h = DMatrix::zeros(2 * d, 2 * d);
    h.view_mut((0, 0), (d, d)).copy_from(a);
    h.view_mut((0, d), (d, d)).copy_from(&(-&s));
    h.view_mut((d, 0), (d, d)).copy_from(&(-q));
    h.view_mut((d, d), (d, d)).copy_from(&(-a.transpose()));
    let stable: Vec<C64> = eigenvalues(&h).into_iter().filter(|l| l.re < 0.0).collect();
    if stable.len() != d {
        return None;
    }
    let hc = to_complex(&h);
    let mut v = DMatrix::<C64>::zeros(2 * d, d);
    for (k, lambda) in stable.iter().enumerate() {
        let shift = lambda + C64::new(1e-10, 1e-10) * (1.0 + lambda.norm());
        let lu = (&hc - DMatrix::<C64>::identity(2 * d, 2 * d) * shift).lu();
        let mut x = DVector::<C64>::from_fn(2 * d, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.3));
        for _ in 0..4 {
            x = lu.solve(&x)?;
            let n = x.norm();
            x /= C64::new(n, 0.0);
        }
        v.set_column(k, &x);
    }
    let v1 = v.rows(0, d).into_owned();
    let v2 = v.rows(d, d).into_owned();
    let pi = v2 * v1.try_inverse()?;
    let imag = pi.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let scale = pi.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
    assert!(imag <= 1e-6 * scale, "oracle produced a complex solution (imag {imag:e})");
    Some(pi.map(|z| z.re))
}

/// Distance to the nearest unstabilizable pair in the PBH sense:
/// `min sigma_min([A - lambda I, B])` over eigenvalues with `Re lambda >= 0`
/// (infinite when `A` is already stable).
pub fn stabilizability_margin(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    let m = b.ncols();
    let ac = to_complex(a);
    let bc = to_complex(b);
    eigenvalues(a)
        .iter()
        .filter(|l| l.re >= 0.0)
        .map(|l| {
            let mut pbh = DMatrix::<C64>::zeros(d, d + m);
            pbh.view_mut((0, 0), (d, d)).copy_from(&(&ac - DMatrix::<C64>::identity(d, d) * *l));
            pbh.view_mut((0, d), (d, m)).copy_from(&bc);
            pbh.singular_values().min()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest real part among the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Minimizer of `||Y - X t||^2 / sigma^2 + (t - m0)^T S0^{-1} (t - m0)`
/// via LU on the normal equations.
pub fn penalized_ls(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: f64,
    m0: &DVector<f64>,
    s0: &DMatrix<f64>,
) -> DVector<f64> {
    let p0 = s0.clone().lu().try_inverse().expect("prior covariance invertible");
    let s2 = sigma * sigma;
    let lhs = x.transpose() * x / s2 + &p0;
    let rhs = x.transpose() * y / s2 + &p0 * m0;
    lhs.lu().solve(&rhs).expect("normal equations solvable")
}

/// Ordinary least squares `(X^T X)^{-1} X^T Y` through a QR factorization.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = x.clone().qr();
    let rhs = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&rhs).expect("full column rank")
}

/// Hand-written finite-difference matrices on `d` nodes with Dirichlet
/// rows and columns removed (zeroed), matching the library's stencils.
pub struct Stencils {
    pub lap: DMatrix<f64>,
    /// forward difference `(x_{i+1} - x_i) / h`
    pub fwd: DMatrix<f64>,
    pub third: DMatrix<f64>,
}

impl Stencils {
    pub fn new(d: usize, h: f64) -> Self {
        let mut lap = DMatrix::zeros(d, d);
        let mut fwd = DMatrix::zeros(d, d);
        let mut third = DMatrix::zeros(d, d);
        let inside = |j: isize| j >= 1 && (j as usize) < d - 1;
        for i in 1..d - 1 {
            let ii = i as isize;
            for (off, c) in [(-1isize, 1.0), (0, -2.0), (1, 1.0)] {
                if inside(ii + off) {
                    lap[(i, (ii + off) as usize)] = c / (h * h);
                }
            }
            for (off, c) in [(0isize, -1.0), (1, 1.0)] {
                if inside(ii + off) {
                    fwd[(i, (ii + off) as usize)] = c / h;
                }
            }
            for (off, c) in [(-2isize, -1.0), (-1, 2.0), (1, -2.0), (2, 1.0)] {
                if inside(ii + off) {
                    third[(i, (ii + off) as usize)] = c / (2.0 * h * h * h);
                }
            }
        }
        Self { lap, fwd, third }
    }
}

/// Coefficients `(mu1, mu2, mu3, mu4, mu5, mu7)` of a reaction-diffusion-
/// dispersion model without the switching term, with its exact Jacobian.
pub struct SmoothModel {
    pub mu: [f64; 7],
    pub st: Stencils,
}

impl SmoothModel {
    /// Linear part, advection taken forward for `mu2 >= 0`.
    fn linear(&self) -> DMatrix<f64> {
        assert!(self.mu[1] >= 0.0 && self.mu[5] == 0.0);
        let d = self.st.lap.nrows();
        let mut id = DMatrix::identity(d, d);
        id[(0, 0)] = 0.0;
        id[(d - 1, d - 1)] = 0.0;
        &self.st.lap * self.mu[0] + &self.st.fwd * self.mu[1] + id * self.mu[2] + &self.st.third * self.mu[6]
    }

    fn interior_mask(d: usize) -> DVector<f64> {
        DVector::from_fn(d, |i, _| if i == 0 || i == d - 1 { 0.0 } else { 1.0 })
    }

    pub fn f(&self, x: &DVector<f64>) -> DVector<f64> {
        let mask = Self::interior_mask(x.len());
        let xm = x.component_mul(&mask);
        let sq = xm.component_mul(&xm);
        self.linear() * &xm + sq.component_mul(&mask) * self.mu[3] + sq.component_mul(&xm) * self.mu[4]
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mask = Self::interior_mask(x.len());
        let xm = x.component_mul(&mask);
        let diag = (xm.clone() * (2.0 * self.mu[3]) + xm.component_mul(&xm) * (3.0 * self.mu[4])).component_mul(&mask);
        (self.linear() + DMatrix::from_diagonal(&diag)) * DMatrix::from_diagonal(&mask)
    }
}

/// Implicit Euler step by Newton with the exact Jacobian and a direct
/// solve, iterated to a residual of `1e-13`.
pub fn dense_newton_step(model: &SmoothModel, x: &DVector<f64>, dt: f64) -> DVector<f64> {
    let d = x.len();
    let mut z = x.clone();
    for _ in 0..100 {
        let g = &z - x - model.f(&z) * dt;
        if g.amax() <= 1e-13 {
            break;
        }
        let j = DMatrix::identity(d, d) - model.jacobian(&z) * dt;
        z -= j.lu().solve(&g).expect("step Jacobian invertible");
    }
    z[0] = 0.0;
    z[d - 1] = 0.0;
    z
}

/// One-mode Galerkin reduction of the Test-1 reaction-diffusion equation:
/// `a' = lambda a - (3/4) 11 a^3` for `y = a sin(pi xi)`, with `lambda` the
/// discrete Laplacian eigenvalue plus 11, advanced by implicit Euler.
pub fn allen_cahn_mode_amplitude(a0: f64, h: f64, dt: f64, steps: usize) -> f64 {
    let lap = -4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
    let lambda = lap + 11.0;
    let mut a = a0;
    for _ in 0..steps {
        let prev = a;
        for _ in 0..50 {
            let g = a - prev - dt * (lambda * a - 8.25 * a * a * a);
            let dg = 1.0 - dt * (lambda - 24.75 * a * a);
            a -= g / dg;
        }
    }
    a
}

/// Random vector with entries in `[-s, s]`.
pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-s..s))
}

/// Sup-norm distance between two stored trajectories.
pub fn trajectory_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len(), "trajectory lengths differ");
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Random conjugate regression problem: a prior `N(m0, S0)` with `S0`
/// well inside the SPD cone, a `d x n` design and a response.
pub fn random_regression_problem(seed: u64, d: usize, n: usize) -> (GaussianBelief, DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m0 = random_vector(&mut rng, n, 2.0);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let s0 = &l * l.transpose() + DMatrix::identity(n, n) * 0.5;
    let x = DMatrix::from_fn(d, n, |_, _| rng.random_range(-3.0..3.0));
    let y = random_vector(&mut rng, d, 5.0);
    (GaussianBelief::new(m0, s0).unwrap(), x, y)
}
