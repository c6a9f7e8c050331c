use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// Final residual norm relative to `||b||`.
    pub relative_residual: f64,
    pub converged: bool,
}

/// Restarted GMRES for `A x = b` from `x = 0`, using only products `A v`.
///
/// Arnoldi with modified Gram-Schmidt, least-squares via Givens rotations.
/// Returns the last iterate even when the tolerance was not met.
pub fn gmres<F>(mut matvec: F, b: &DVector<f64>, restart: usize, rel_tol: f64, max_iter: usize) -> GmresOutcome
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let n = b.len();
    let b_norm = b.norm();
    let mut x = DVector::zeros(n);
    if b_norm == 0.0 {
        return GmresOutcome { solution: x, iterations: 0, relative_residual: 0.0, converged: true };
    }
    let restart = restart.max(1).min(n.max(1));
    let target = rel_tol * b_norm;
    let mut iterations = 0;
    let mut residual = b.clone();
    let mut res_norm = b_norm;

    while iterations < max_iter {
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(restart + 1);
        basis.push(&residual / res_norm);
        let mut h = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = res_norm;
        let mut k_used = 0;
        for k in 0..restart {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            let mut w = matvec(&basis[k]);
            for (j, v) in basis.iter().enumerate() {
                let hj = w.dot(v);
                h[(j, k)] = hj;
                w.axpy(-hj, v, 1.0);
            }
            let w_norm = w.norm();
            h[(k + 1, k)] = w_norm;
            for j in 0..k {
                let t = cs[j] * h[(j, k)] + sn[j] * h[(j + 1, k)];
                h[(j + 1, k)] = -sn[j] * h[(j, k)] + cs[j] * h[(j + 1, k)];
                h[(j, k)] = t;
            }
            let denom = h[(k, k)].hypot(h[(k + 1, k)]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[(k, k)] / denom;
                sn[k] = h[(k + 1, k)] / denom;
            }
            h[(k, k)] = denom;
            h[(k + 1, k)] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if g[k + 1].abs() <= target || w_norm == 0.0 {
                break;
            }
            basis.push(w / w_norm);
        }
        // back substitution on the k_used x k_used triangle
        let mut y = DVector::<f64>::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[(i, j)] * y[j];
            }
            y[i] = if h[(i, i)] != 0.0 { s / h[(i, i)] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            x.axpy(*yj, &basis[j], 1.0);
        }
        residual = b - matvec(&x);
        res_norm = residual.norm();
        if res_norm <= target || k_used == 0 {
            break;
        }
    }
    GmresOutcome { converged: res_norm <= target, relative_residual: res_norm / b_norm, solution: x, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn solves_nonsymmetric_system_across_restarts() {
        let n = 40;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0 + i as f64 * 0.1
            } else if j == i + 1 {
                -1.5
            } else if i == j + 1 {
                -0.5
            } else {
                0.0
            }
        });
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let out = gmres(|v| &a * v, &b, 5, 1e-12, 500);
        assert!(out.converged);
        assert_relative_eq!(&a * &out.solution, b, epsilon = 1e-10);
    }

    #[test]
    fn zero_rhs() {
        let out = gmres(|v| v.clone(), &DVector::zeros(3), 30, 1e-8, 10);
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
    }
}
