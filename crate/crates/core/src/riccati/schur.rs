//! Real Schur form utilities: computation, block bookkeeping, eigenvalue
//! reordering, and quasi-triangular Sylvester solves.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS_PER_EIGENVALUE: usize = 100;

/// Hessenberg reduction followed by the implicit double-shift QR iteration
/// with exceptional shifts; returns `(Z, T)`.
///
/// Matrices whose eigenvalues come in `+-lambda` pairs, Hamiltonians among
/// them, can trap the plain Francis shift in a cycle. Perturbing the shift
/// every tenth sweep on a stalled eigenvalue breaks it.
fn francis_qr(m: DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let nn = m.nrows();
    if nn == 0 {
        return Some((DMatrix::zeros(0, 0), m));
    }
    let (mut v, mut h) = nalgebra::Hessenberg::new(m).unpack();
    let eps = f64::EPSILON;
    let norm: f64 = (0..nn).map(|i| (i.saturating_sub(1)..nn).map(|j| h[(i, j)].abs()).sum::<f64>()).sum();
    let mut exshift = 0.0;
    let mut iter = 0;
    let mut n = nn as isize - 1;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut w, mut x, mut y);
    while n >= 0 {
        let nu = n as usize;
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }
        if l > 0 {
            h[(l, l - 1)] = 0.0;
        }
        if l == nu {
            h[(nu, nu)] += exshift;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                x = h[(nu, nu - 1)];
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = p.hypot(q);
                p /= r;
                q /= r;
                for j in nu - 1..nn {
                    z = h[(nu - 1, j)];
                    h[(nu - 1, j)] = q * z + p * h[(nu, j)];
                    h[(nu, j)] = q * h[(nu, j)] - p * z;
                }
                for i in 0..=nu {
                    z = h[(i, nu - 1)];
                    h[(i, nu - 1)] = q * z + p * h[(i, nu)];
                    h[(i, nu)] = q * h[(i, nu)] - p * z;
                }
                for i in 0..nn {
                    z = v[(i, nu - 1)];
                    v[(i, nu - 1)] = q * z + p * v[(i, nu)];
                    v[(i, nu)] = q * v[(i, nu)] - p * z;
                }
                h[(nu, nu - 1)] = 0.0;
            }
            n -= 2;
            iter = 0;
        } else {
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            if iter > 0 && iter % 30 == 0 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            } else if iter > 0 && iter % 10 == 0 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            iter += 1;
            if iter > MAX_SWEEPS_PER_EIGENVALUE {
                return None;
            }
            let mut mm = nu - 2;
            loop {
                z = h[(mm, mm)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(mm + 1, mm)] + h[(mm, mm + 1)];
                q = h[(mm + 1, mm + 1)] - z - r - s;
                r = h[(mm + 2, mm + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if mm == l {
                    break;
                }
                let lhs = h[(mm, mm - 1)].abs() * (q.abs() + r.abs());
                let rhs = eps * (p.abs() * (h[(mm - 1, mm - 1)].abs() + z.abs() + h[(mm + 1, mm + 1)].abs()));
                if lhs < rhs {
                    break;
                }
                mm -= 1;
            }
            for i in mm + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > mm + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }
            for k in mm..nu {
                let notlast = k != nu - 1;
                if k != mm {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != mm {
                    h[(k, k - 1)] = -s * x;
                } else if l != mm {
                    h[(k, k - 1)] = -h[(k, k - 1)];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;
                for j in k..nn {
                    p = h[(k, j)] + q * h[(k + 1, j)];
                    if notlast {
                        p += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= p * z;
                    }
                    h[(k, j)] -= p * x;
                    h[(k + 1, j)] -= p * y;
                }
                for i in 0..=nu.min(k + 3) {
                    p = x * h[(i, k)] + y * h[(i, k + 1)];
                    if notlast {
                        p += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= p * r;
                    }
                    h[(i, k)] -= p;
                    h[(i, k + 1)] -= p * q;
                }
                for i in 0..nn {
                    p = x * v[(i, k)] + y * v[(i, k + 1)];
                    if notlast {
                        p += z * v[(i, k + 2)];
                        v[(i, k + 2)] -= p * r;
                    }
                    v[(i, k)] -= p;
                    v[(i, k + 1)] -= p * q;
                }
            }
        }
    }
    Some((v, h))
}

/// Real Schur factorization `M = Z T Z^T` with `T` upper quasi-triangular.
///
/// After construction the subdiagonal of `T` is nonzero exactly inside 2x2
/// blocks, and every 2x2 block carries a complex-conjugate eigenvalue pair.
pub(crate) struct RealSchur {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
}

impl RealSchur {
    pub fn new(m: DMatrix<f64>) -> Option<Self> {
        let (z, t) = francis_qr(m)?;
        if !t.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut s = Self { z, t };
        s.clean();
        s.split_real_pairs();
        Some(s)
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    fn clean(&mut self) {
        let n = self.dim();
        for j in 0..n {
            for i in j + 2..n {
                self.t[(i, j)] = 0.0;
            }
        }
        for i in 0..n.saturating_sub(1) {
            let sub = self.t[(i + 1, i)];
            let scale = self.t[(i, i)].abs() + self.t[(i + 1, i + 1)].abs();
            if sub.abs() <= f64::EPSILON * scale {
                self.t[(i + 1, i)] = 0.0;
            }
        }
        // two consecutive nonzero subdiagonals cannot both be block markers
        let mut i = 0;
        while i + 1 < n {
            if self.t[(i + 1, i)] != 0.0 {
                if i + 2 < n {
                    self.t[(i + 2, i + 1)] = 0.0;
                }
                i += 2;
            } else {
                i += 1;
            }
        }
    }

    /// Triangularizes 2x2 blocks whose eigenvalues are real.
    fn split_real_pairs(&mut self) {
        let n = self.dim();
        let mut i = 0;
        while i + 1 < n {
            if self.t[(i + 1, i)] == 0.0 {
                i += 1;
                continue;
            }
            let (a, b, c, d) = (self.t[(i, i)], self.t[(i, i + 1)], self.t[(i + 1, i)], self.t[(i + 1, i + 1)]);
            let p = 0.5 * (a - d);
            let disc = p * p + b * c;
            if disc >= 0.0 {
                let sign = if p >= 0.0 { 1.0 } else { -1.0 };
                let lambda = 0.5 * (a + d) + sign * disc.sqrt();
                // eigenvector of the block for `lambda`
                let v1 = (b, lambda - a);
                let v2 = (lambda - d, c);
                let (vx, vy) = if v1.0.hypot(v1.1) >= v2.0.hypot(v2.1) { v1 } else { v2 };
                let norm = vx.hypot(vy);
                if norm > 0.0 {
                    let g = DMatrix::from_row_slice(2, 2, &[vx / norm, -vy / norm, vy / norm, vx / norm]);
                    self.apply_window(i, &g);
                }
                self.t[(i + 1, i)] = 0.0;
            }
            i += 2;
        }
    }

    /// `T <- Q^T T Q`, `Z <- Z Q` for an orthogonal `Q` acting on rows and
    /// columns `j .. j + Q.nrows()`.
    fn apply_window(&mut self, j: usize, q: &DMatrix<f64>) {
        let n = self.dim();
        let w = q.nrows();
        let rows = self.t.view((j, j), (w, n - j)).into_owned();
        self.t.view_mut((j, j), (w, n - j)).copy_from(&(q.transpose() * rows));
        let cols = self.t.view((0, j), (j + w, w)).into_owned();
        self.t.view_mut((0, j), (j + w, w)).copy_from(&(cols * q));
        let zc = self.z.view((0, j), (n, w)).into_owned();
        self.z.view_mut((0, j), (n, w)).copy_from(&(zc * q));
    }

    pub fn block_size(&self, i: usize) -> usize {
        if i + 1 < self.dim() && self.t[(i + 1, i)] != 0.0 {
            2
        } else {
            1
        }
    }

    /// Eigenvalues as `(re, im)` pairs in diagonal order.
    pub fn eigenvalues(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.dim());
        let mut i = 0;
        while i < self.dim() {
            if self.block_size(i) == 2 {
                let (a, b, c, d) = (self.t[(i, i)], self.t[(i, i + 1)], self.t[(i + 1, i)], self.t[(i + 1, i + 1)]);
                let re = 0.5 * (a + d);
                let p = 0.5 * (a - d);
                let im = (-(p * p + b * c)).max(0.0).sqrt();
                out.push((re, im));
                out.push((re, -im));
                i += 2;
            } else {
                out.push((self.t[(i, i)], 0.0));
                i += 1;
            }
        }
        out
    }

    fn block_real_part(&self, i: usize, size: usize) -> f64 {
        if size == 2 {
            0.5 * (self.t[(i, i)] + self.t[(i + 1, i + 1)])
        } else {
            self.t[(i, i)]
        }
    }

    /// Swaps the adjacent diagonal blocks of sizes `p` (at `j`) and `q` (at
    /// `j + p`). Returns `false` when the swap is numerically unsafe.
    fn swap(&mut self, j: usize, p: usize, q: usize) -> bool {
        let w = p + q;
        let t11 = self.t.view((j, j), (p, p)).into_owned();
        let t12 = self.t.view((j, j + p), (p, q)).into_owned();
        let t22 = self.t.view((j + p, j + p), (q, q)).into_owned();
        // T11 X - X T22 = T12
        let Some(x) = solve_small_sylvester(&t11, &(-&t22), &t12) else {
            return false;
        };
        // [-X; I] spans the invariant subspace belonging to T22
        let mut basis = DMatrix::zeros(w, q + w);
        basis.view_mut((0, 0), (p, q)).copy_from(&(-x));
        for k in 0..q {
            basis[(p + k, k)] = 1.0;
        }
        for k in 0..w {
            basis[(k, q + k)] = 1.0;
        }
        let qmat = basis.qr().q();
        let scale = self.t.view((j, j), (w, w)).norm();
        self.apply_window(j, &qmat);
        let leftover = self.t.view((j + q, j), (p, q)).norm();
        if !(leftover <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
            return false;
        }
        self.t.view_mut((j + q, j), (p, q)).fill(0.0);
        if q == 1 && p == 2 {
            // the moved 2x2 block sits at j + 1, its top row must not leak below
            self.t[(j + 1, j)] = 0.0;
        }
        true
    }

    /// Moves every block whose eigenvalues have negative real part to the
    /// top-left. Returns the dimension of the stable invariant subspace, or
    /// `None` if a swap failed.
    pub fn reorder_stable(&mut self) -> Option<usize> {
        let n = self.dim();
        let mut selected = 0;
        let mut i = 0;
        while i < n {
            let size = self.block_size(i);
            if self.block_real_part(i, size) < 0.0 {
                let mut pos = i;
                while pos > selected {
                    let above = if pos >= 2 && self.t[(pos - 1, pos - 2)] != 0.0 { 2 } else { 1 };
                    if !self.swap(pos - above, above, size) {
                        return None;
                    }
                    pos -= above;
                }
                selected += size;
            }
            i += size;
        }
        Some(selected)
    }
}

/// Solves `A X + X B = C` for blocks of size at most 2 by vectorization.
pub(crate) fn solve_small_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let q = b.nrows();
    let mut k = DMatrix::zeros(p * q, p * q);
    // vec(A X) = (I_q kron A) vec X, vec(X B) = (B^T kron I_p) vec X
    for col in 0..q {
        for r in 0..p {
            for s in 0..p {
                k[(col * p + r, col * p + s)] += a[(r, s)];
            }
        }
    }
    for c1 in 0..q {
        for c2 in 0..q {
            for r in 0..p {
                k[(c1 * p + r, c2 * p + r)] += b[(c2, c1)];
            }
        }
    }
    let rhs = DVector::from_column_slice(c.as_slice());
    let lu = k.lu();
    let sol = lu.solve(&rhs)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

/// Solves `T^T Y + Y T = F` for quasi-upper-triangular `T` taken from a
/// [`RealSchur`].
pub(crate) fn solve_quasi_triangular_lyapunov(schur: &RealSchur, f: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let t = &schur.t;
    let n = schur.dim();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < n {
        let s = schur.block_size(i);
        blocks.push((i, s));
        i += s;
    }
    let mut y = DMatrix::<f64>::zeros(n, n);
    for &(cj, qj) in &blocks {
        // F_:j - Y_{:, <j} T_{<j, j}
        let mut g = f.columns(cj, qj).into_owned();
        if cj > 0 {
            g -= y.columns(0, cj) * t.view((0, cj), (cj, qj));
        }
        let tjj = t.view((cj, cj), (qj, qj)).into_owned();
        for &(ri, pi) in &blocks {
            let mut rhs = g.rows(ri, pi).into_owned();
            if ri > 0 {
                rhs -= t.view((0, ri), (ri, pi)).transpose() * y.view((0, cj), (ri, qj));
            }
            let tii_t = t.view((ri, ri), (pi, pi)).transpose();
            let block = solve_small_sylvester(&tii_t, &tjj, &rhs)?;
            y.view_mut((ri, cj), (pi, qj)).copy_from(&block);
        }
    }
    Some(y)
}

/// Solves `A^T X + X A = F` by the Bartels-Stewart method.
pub(crate) fn solve_lyapunov(a: &DMatrix<f64>, f: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<(f64, f64)>)> {
    let schur = RealSchur::new(a.clone())?;
    let ft = schur.z.transpose() * f * &schur.z;
    let y = solve_quasi_triangular_lyapunov(&schur, &ft)?;
    let x = &schur.z * y * schur.z.transpose();
    let x = (&x + x.transpose()) * 0.5;
    Some((x, schur.eigenvalues()))
}
