// Small dense helpers shared by the modules. All matrices here are n×n with
// n of order a few, so clarity beats speed.

use nalgebra::{DMatrix, DVector};

pub(crate) fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues (ascending) and matching orthonormal eigenvectors as columns.
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: alloc::vec::Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Principal square root and inverse square root of a symmetric positive
/// definite matrix. `None` if some eigenvalue is not positive.
pub(crate) fn spd_sqrt(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let (vals, vecs) = sym_eigen(m);
    if vals.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let s = DMatrix::from_diagonal(&vals.map(libm::sqrt));
    let si = DMatrix::from_diagonal(&vals.map(|v| 1.0 / libm::sqrt(v)));
    Some((&vecs * s * vecs.transpose(), &vecs * si * vecs.transpose()))
}

pub(crate) fn min_abs_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = m * v` for a dense n×n block and slices of length n.
pub(crate) fn matvec(m: &DMatrix<f64>, v: &[f64], out: &mut [f64]) {
    let n = m.nrows();
    for (i, o) in out.iter_mut().enumerate().take(n) {
        let mut s = 0.0;
        for (j, vj) in v.iter().enumerate().take(m.ncols()) {
            s += m[(i, j)] * vj;
        }
        *o = s;
    }
}

/// Generalised symmetric eigenproblem `N c = λ M c` for small dense blocks with
/// `M` positive definite. Returns eigenvalues ascending and M-orthonormal
/// eigenvectors as columns.
pub(crate) fn gen_sym_eigen(n: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let chol = symmetrize(m).cholesky()?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let c = &linv * symmetrize(n) * linv.transpose();
    let (vals, vecs) = sym_eigen(&c);
    Some((vals, linv.transpose() * vecs))
}
