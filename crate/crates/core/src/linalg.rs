//! Small dense solvers shared by the sample and population code paths.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Relative eigenvalue cutoff below which a Gram matrix direction is treated as
/// null. Eigenvalues of a Gram matrix are squared singular values, so this
/// corresponds to a singular-value ratio of 1e-6.
pub(crate) const GRAM_RANK_TOL: f64 = 1e-12;

/// Minimum-norm solution of `g x = b` for a symmetric positive semidefinite
/// `g`, i.e. `g⁺ b`.
///
/// A Cholesky factorization is used when every pivot is comfortably above the
/// rank tolerance; otherwise the solve falls back to a truncated eigen
/// decomposition.
pub(crate) fn solve_psd_min_norm(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = g.nrows();
    if p == 0 {
        return DVector::zeros(0);
    }
    let scale = g.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return DVector::zeros(p);
    }
    if let Some(chol) = Cholesky::new(g.clone()) {
        let l = chol.l_dirty();
        let min_pivot = (0..p)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot > scale * GRAM_RANK_TOL * 1e2 {
            return chol.solve(b);
        }
    }
    pinv_eigen_solve(g, b)
}

const MAX_SWEEPS: usize = 100;

/// Thin singular value decomposition `m = U diag(s) Vᵀ`, singular values in
/// descending order.
#[derive(Debug, Clone)]
pub(crate) struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    /// `Σ_{s_i > tol} v_i (u_iᵀ b) / s_i`, the minimum-norm least squares
    /// solution once singular values at or below `tol` are dropped.
    pub fn solve(&self, b: &DVector<f64>, tol: f64) -> DVector<f64> {
        let mut x = DVector::zeros(self.v.nrows());
        for (i, &si) in self.s.iter().enumerate() {
            if si > tol {
                let ub = self.u.column(i).dot(b);
                x.axpy(ub / si, &self.v.column(i), 1.0);
            }
        }
        x
    }
}

/// One-sided Jacobi SVD.
///
/// Used instead of the library's bidiagonal QR iteration, which was observed
/// to return unconverged factors (reconstruction error near 1e-2) for small
/// triangular matrices with clustered singular values. Jacobi rotations
/// converge reliably and with high relative accuracy at the sizes used here.
pub(crate) fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, n) = m.shape();
    if rows < n {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut a, i, j, c, s);
                rotate(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|k| a.column(k).norm()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = DMatrix::zeros(rows, n);
    let mut vs = DMatrix::zeros(n, n);
    let mut s = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        s[dst] = norms[src];
        if norms[src] > 0.0 {
            u.set_column(dst, &(a.column(src) / norms[src]));
        }
        vs.set_column(dst, &v.column(src));
    }
    Svd { u, s, v: vs }
}

fn rotate(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// `g⁺ b` for symmetric positive semidefinite `g`, dropping eigenvalues below
/// `GRAM_RANK_TOL * λ_max`. For such `g` the singular values are the
/// eigenvalues.
pub(crate) fn pinv_eigen_solve(g: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let dec = svd(g);
    let lmax = dec.s.iter().fold(0.0_f64, |m, v| m.max(*v));
    dec.solve(b, lmax * GRAM_RANK_TOL)
}

/// Exact solve for a symmetric positive definite system, `None` when the
/// matrix is not numerically positive definite.
pub(crate) fn solve_spd(g: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    Cholesky::new(g.clone()).map(|c| c.solve(b))
}

/// Principal submatrix `g[idx, idx]`.
pub(crate) fn principal(g: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| g[(idx[i], idx[j])])
}

/// Column `g[idx, col]`.
pub(crate) fn column_at(g: &DMatrix<f64>, idx: &[usize], col: usize) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| g[(idx[i], col)])
}

pub(crate) fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
