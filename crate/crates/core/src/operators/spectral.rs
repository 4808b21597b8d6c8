//! Smallest weighted singular values by block inverse iteration with a
//! Rayleigh–Ritz step on the pencil (‖Lη‖²_Y, ‖η‖²_X).

use alloc::{vec, vec::Vec};

use nalgebra::DMatrix;

use super::{BoxOperator, LinearizedSystem, OperatorError};
use crate::dense;
use crate::norms::{GridPath, Layout};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub block: usize,
    pub max_iters: usize,
    /// Relative change of the smallest Ritz value that counts as converged.
    pub tol: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions { block: 4, max_iters: 400, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularValueReport {
    /// ‖D w_ε‖_Y / ‖w_ε‖_X, the singular value belonging to the kernel.
    pub near_zero: f64,
    /// Smallest singular value of D on the complement, = σ_min(D*).
    pub smallest_nonzero: f64,
    pub iterations: usize,
}

impl SingularValueReport {
    pub fn gap(&self) -> f64 {
        self.smallest_nonzero / self.near_zero.max(f64::MIN_POSITIVE)
    }

    pub fn count_below(&self, threshold: f64) -> usize {
        usize::from(self.near_zero < threshold) + usize::from(self.smallest_nonzero < threshold)
    }
}

fn start_block(sys: &LinearizedSystem, block: usize) -> Vec<GridPath> {
    let half = 0.5 * (sys.grid().t_end() - sys.grid().t0());
    let n = sys.n();
    (0..block)
        .map(|j| {
            GridPath::from_fn(*sys.grid(), n, Layout::Cells, |t, o| {
                let u = t / (0.3 * half);
                let env = libm::exp(-u * u);
                for (c, v) in o.iter_mut().enumerate() {
                    *v = env * libm::cos(0.7 * (j + 1) as f64 * t + c as f64 + 0.3 * j as f64);
                }
            })
        })
        .collect()
}

// Ritz step: N c = λ M c over the basis, returns eigenvalues and the rotated
// basis (M-orthonormal).
fn ritz(n_form: &DMatrix<f64>, m_form: &DMatrix<f64>) -> Option<(Vec<f64>, DMatrix<f64>)> {
    let (vals, vecs) = dense::gen_sym_eigen(n_form, m_form)?;
    Some((vals.iter().copied().collect(), vecs))
}

fn combine(basis: &[GridPath], coeffs: &DMatrix<f64>) -> Vec<GridPath> {
    (0..coeffs.ncols())
        .map(|c| {
            let mut out = basis[0].scaled(0.0);
            for (r, b) in basis.iter().enumerate() {
                out.axpy(coeffs[(r, c)], b).expect("same grid");
            }
            out
        })
        .collect()
}

fn gram(sys: &LinearizedSystem, a: &[GridPath]) -> DMatrix<f64> {
    let k = a.len();
    let mut g = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = sys.inner(&a[i], &a[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Y-orthonormalize a block; drops nothing, relies on the block being well
/// conditioned after inverse iteration.
fn normalize(sys: &LinearizedSystem, block: &mut [GridPath]) {
    for v in block.iter_mut() {
        let s = sys.norm(v);
        if s > 0.0 {
            *v = v.scaled(1.0 / s);
        }
    }
}

/// σ_min of D* from the X/Y weighted inner products, i.e. √λ_min(DD*).
pub fn smallest_singular_d_star(sys: &LinearizedSystem, opts: SpectralOptions) -> Result<(f64, usize), OperatorError> {
    let mut block = start_block(sys, opts.block);
    let mut last = f64::INFINITY;
    let lu = sys.normal_lu();
    for it in 0..opts.max_iters {
        for v in block.iter_mut() {
            lu.solve_in_place(v.values_mut());
        }
        normalize(sys, &mut block);
        let images: Vec<GridPath> = block.iter().map(|v| sys.apply_d_star(v)).collect();
        let n_form = gram(sys, &images);
        let m_form = gram(sys, &block);
        let (vals, vecs) = ritz(&n_form, &m_form).ok_or(OperatorError::Singular(super::SingularPivot { row: 0 }))?;
        block = combine(&block, &vecs);
        let lam = vals[0];
        if (last - lam).abs() <= opts.tol * lam.abs() {
            return Ok((libm::sqrt(lam.max(0.0)), it + 1));
        }
        last = lam;
    }
    Ok((libm::sqrt(last.max(0.0)), opts.max_iters))
}

/// Singular values of D split into the kernel part and the rest. With
/// dim X = dim Y + 1 the nonzero ones are √spec(DD*).
pub fn singular_values(sys: &LinearizedSystem, opts: SpectralOptions) -> Result<SingularValueReport, OperatorError> {
    let w = sys.kernel_vector();
    let near_zero = sys.norm(&sys.apply_d(&w)) / sys.norm(&w);
    let (smallest_nonzero, iterations) = smallest_singular_d_star(sys, opts)?;
    Ok(SingularValueReport { near_zero, smallest_nonzero, iterations })
}

/// min over η ∈ range D* (and the span of `extras`) of ‖Lη‖_Y / ‖η‖_X for the
/// box operator L. Returns 0 when L·D* is singular.
pub fn restricted_min_singular(
    sys: &LinearizedSystem,
    op: &BoxOperator,
    extras: &[GridPath],
    opts: SpectralOptions,
) -> Result<f64, OperatorError> {
    let k_lu = match sys.normal_matrix(op.blocks()).factor() {
        Ok(lu) => lu,
        Err(_) => return Ok(0.0),
    };
    let n = sys.n();
    let g0 = sys.ctx().g0().clone();
    let g0_inv = sys.g0_inv().clone();
    let dt = sys.grid().dt();
    let apply_blockwise = |m: &DMatrix<f64>, scale: f64, v: &mut GridPath| {
        let mut tmp = vec![0.0; n];
        for p in v.values_mut().chunks_exact_mut(n) {
            dense::matvec(m, p, &mut tmp);
            for (a, b) in p.iter_mut().zip(&tmp) {
                *a = scale * b;
            }
        }
    };
    let mut block = start_block(sys, opts.block);
    let mut last = f64::INFINITY;
    let mut best = f64::INFINITY;
    for _ in 0..opts.max_iters {
        // u ← K⁻¹ Wy⁻¹ K⁻ᵀ Wy (D D* u), K = L D*
        for v in block.iter_mut() {
            let mut x = sys.apply_d(&sys.apply_d_star(v));
            apply_blockwise(&g0, dt, &mut x);
            k_lu.solve_transpose_in_place(x.values_mut());
            apply_blockwise(&g0_inv, 1.0 / dt, &mut x);
            k_lu.solve_in_place(x.values_mut());
            *v = x;
        }
        normalize(sys, &mut block);
        let etas: Vec<GridPath> = block.iter().map(|v| sys.apply_d_star(v)).collect();
        let images: Vec<GridPath> = etas.iter().map(|e| op.apply(e)).collect();
        let (vals, vecs) = ritz(&gram(sys, &images), &gram(sys, &etas)).ok_or(OperatorError::Singular(super::SingularPivot { row: 0 }))?;
        block = combine(&block, &vecs);
        let lam = vals[0];
        best = lam;
        if (last - lam).abs() <= opts.tol * lam.abs().max(1e-300) {
            break;
        }
        last = lam;
    }
    if !extras.is_empty() {
        let mut etas: Vec<GridPath> = block.iter().map(|v| sys.apply_d_star(v)).collect();
        etas.extend(extras.iter().cloned());
        let images: Vec<GridPath> = etas.iter().map(|e| op.apply(e)).collect();
        match ritz(&gram(sys, &images), &gram(sys, &etas)) {
            Some((vals, _)) => best = best.min(vals[0]),
            // the extras are (numerically) in the span already
            None => {}
        }
    }
    Ok(libm::sqrt(best.max(0.0)))
}

/// ‖D*υ‖_{W^{1,2}_ε} / ‖DD*υ‖_{L²_ε}.
pub fn crucial_ratio(sys: &LinearizedSystem, ups: &GridPath) -> f64 {
    let eta = sys.apply_d_star(ups);
    sys.w12(&eta) / sys.norm(&sys.apply_d(&eta))
}
