//! Discrete linearization along γ₀: D_ε η = η̇ + Q_ε η, its adjoint
//! D_ε* υ = −υ̇ + Q_ε υ, the error term E_ε = −dR_ε(γ₀), the nonlinear map
//! 𝓕_ε and the normal equations D D* υ = μ.
//!
//! Perturbations η sit on the m nodes, residuals on the m − 1 cells. The box
//! scheme averages the zero-order term over each cell:
//!
//! ```text
//! (Lη)_{i+½} = (η_{i+1} − η_i)/dt + (L_i η_i + L_{i+1} η_{i+1})/2
//! ```
//!
//! At the ends η is confined to the stable/unstable subspaces of the
//! asymptotic operators: η(−T) ∈ E⁻(Q(−T)), η(T) ∈ E⁺(Q(T)). This leaves one
//! more unknown than equations, the discrete counterpart of index one, and D*
//! written from the analytic formula is then the exact weighted adjoint.

mod banded;
pub mod spectral;

use alloc::{vec, vec::Vec};

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::model::{ModelError, ProblemTriple};
use crate::norms::{Grid, GridPath, Layout, NormError, WeightContext};

pub use banded::{BandLu, BandMatrix, SingularPivot};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OperatorError {
    #[error("grid too coarse: need at least 3 nodes")]
    GridTooCoarse,
    #[error("normal operator is singular ({0}); refine the grid or increase ε")]
    Singular(#[from] SingularPivot),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("asymptotic operator at t = {t} has a zero eigenvalue")]
    Hyperbolicity { t: f64 },
    #[error("slice iteration diverged: contraction {contraction:.3} after {iterations} steps")]
    Divergence { iterations: usize, contraction: f64 },
}

/// A box-scheme operator η ↦ η̇ + L(t)η with one n×n block per node.
#[derive(Debug, Clone)]
pub struct BoxOperator {
    blocks: Vec<DMatrix<f64>>,
}

impl BoxOperator {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Self {
        BoxOperator { blocks }
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Nodes → cells.
    pub fn apply(&self, eta: &GridPath) -> GridPath {
        debug_assert_eq!(eta.layout(), Layout::Nodes);
        let n = eta.dim();
        let mut out = GridPath::zeros(*eta.grid(), n, Layout::Cells);
        box_apply(&self.blocks, eta.grid().dt(), n, eta.values(), out.values_mut());
        out
    }
}

fn box_apply(blocks: &[DMatrix<f64>], dt: f64, n: usize, eta: &[f64], out: &mut [f64]) {
    let cells = out.len() / n;
    let mut la = vec![0.0; n];
    let mut lb = vec![0.0; n];
    dense::matvec(&blocks[0], &eta[..n], &mut la);
    for j in 0..cells {
        let (a, b) = (&eta[j * n..(j + 1) * n], &eta[(j + 1) * n..(j + 2) * n]);
        dense::matvec(&blocks[j + 1], b, &mut lb);
        for c in 0..n {
            out[j * n + c] = (b[c] - a[c]) / dt + 0.5 * (la[c] + lb[c]);
        }
        core::mem::swap(&mut la, &mut lb);
    }
}

/// g⁰-orthogonal spectral subspace of a g⁰-self-adjoint matrix.
#[derive(Debug, Clone)]
pub struct BoundarySpace {
    /// g⁰-orthonormal basis, n × k.
    pub basis: DMatrix<f64>,
    pub projector: DMatrix<f64>,
}

impl BoundarySpace {
    fn new(g0: &DMatrix<f64>, q: &DMatrix<f64>, positive: bool, t: f64) -> Result<Self, OperatorError> {
        let chol = dense::symmetrize(g0).cholesky().ok_or(OperatorError::Hyperbolicity { t })?;
        let l = chol.l();
        let linv = l.clone().try_inverse().ok_or(OperatorError::Hyperbolicity { t })?;
        let s = &linv * dense::symmetrize(&(g0 * q)) * linv.transpose();
        let (vals, vecs) = dense::sym_eigen(&s);
        let scale = vals.amax().max(1.0);
        if vals.iter().any(|v| v.abs() < 1e-12 * scale) {
            return Err(OperatorError::Hyperbolicity { t });
        }
        let cols: Vec<usize> = (0..vals.len()).filter(|&i| (vals[i] > 0.0) == positive).collect();
        let mut v = DMatrix::zeros(vals.len(), cols.len());
        for (c, &i) in cols.iter().enumerate() {
            v.set_column(c, &vecs.column(i));
        }
        let basis = linv.transpose() * v;
        let projector = &basis * basis.transpose() * g0;
        Ok(BoundarySpace { basis, projector })
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// Q_ε(t) from the displayed block formula.
pub fn q_matrix(triple: &ProblemTriple, eps: f64, z: f64) -> DMatrix<f64> {
    let n = triple.n();
    let k = n - 1;
    let mut q = DMatrix::zeros(n, n);
    q.view_mut((0, 0), (k, k)).copy_from(&(triple.a() / eps));
    q.view_mut((0, k), (k, 1)).copy_from(&(triple.b() * (2.0 * z / eps)));
    let bta = triple.b().transpose() * triple.a();
    q.view_mut((k, 0), (1, k)).copy_from(&bta);
    q[(k, k)] = 2.0 * z;
    q
}

/// Q_ε(t) from the factorization (g⁰_ε)⁻¹ diag(εA, 2z).
pub fn q_matrix_factored(triple: &ProblemTriple, ctx: &WeightContext, z: f64) -> DMatrix<f64> {
    let n = triple.n();
    let k = n - 1;
    let eps = ctx.eps();
    let mut bmat = DMatrix::zeros(n, n);
    bmat.view_mut((0, 0), (k, k)).copy_from(&(triple.a() * eps));
    bmat[(k, k)] = 2.0 * z;
    ctx.g0().clone().try_inverse().expect("g0 is positive definite") * bmat
}

/// The discrete linearization at γ₀ for one ε, with its normal operators
/// factored once.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    triple: ProblemTriple,
    ctx: WeightContext,
    grid: Grid,
    g0_inv: DMatrix<f64>,
    base: GridPath,
    base_velocity: GridPath,
    q: Vec<DMatrix<f64>>,
    e: Option<Vec<DMatrix<f64>>>,
    left: BoundarySpace,
    right: BoundarySpace,
    // D* rows: node i = s_minus[i]·υ_{i−½} + s_plus[i]·υ_{i+½}
    s_minus: Vec<DMatrix<f64>>,
    s_plus: Vec<DMatrix<f64>>,
    normal: BandLu,
    linearized: Option<BandLu>,
}

impl LinearizedSystem {
    pub fn assemble(triple: &ProblemTriple, eps: f64, grid: Grid) -> Result<Self, OperatorError> {
        if grid.m() < 3 {
            return Err(OperatorError::GridTooCoarse);
        }
        let ctx = WeightContext::for_triple(triple, eps)?;
        let n = triple.n();
        let m = grid.m();
        let dt = grid.dt();
        let base = GridPath::from_fn(grid, n, Layout::Nodes, |t, o| o.copy_from_slice(&triple.limit_solution(t).to_vec()));
        let base_velocity =
            GridPath::from_fn(grid, n, Layout::Nodes, |t, o| o.copy_from_slice(&triple.limit_velocity(t).to_vec()));
        let q: Vec<DMatrix<f64>> = (0..m).map(|i| q_matrix(triple, eps, base.zeta(i))).collect();
        let e = if triple.h().is_zero() {
            None
        } else {
            Some((0..m).map(|i| -triple.remainder_jacobian(eps, base.point(i))).collect())
        };
        let left = BoundarySpace::new(ctx.g0(), &q[0], false, grid.t0())?;
        let right = BoundarySpace::new(ctx.g0(), &q[m - 1], true, grid.t_end())?;

        let id = DMatrix::<f64>::identity(n, n);
        let mut s_minus = vec![DMatrix::zeros(n, n); m];
        let mut s_plus = vec![DMatrix::zeros(n, n); m];
        for i in 1..m - 1 {
            s_minus[i] = &id / dt + &q[i] * 0.5;
            s_plus[i] = -&id / dt + &q[i] * 0.5;
        }
        s_plus[0] = &left.projector * (-&id * (2.0 / dt) + &q[0]);
        s_minus[m - 1] = &right.projector * (&id * (2.0 / dt) + &q[m - 1]);

        let g0_inv = ctx.g0().clone().try_inverse().expect("g0 is positive definite");
        let normal = normal_band(&grid, n, &s_minus, &s_plus, &q).factor()?;
        let linearized = match &e {
            Some(e) => {
                let blocks: Vec<DMatrix<f64>> = q.iter().zip(e).map(|(q, e)| q + e).collect();
                Some(normal_band(&grid, n, &s_minus, &s_plus, &blocks).factor()?)
            }
            None => None,
        };
        Ok(LinearizedSystem {
            triple: triple.clone(),
            ctx,
            grid,
            g0_inv,
            base,
            base_velocity,
            q,
            e,
            left,
            right,
            s_minus,
            s_plus,
            normal,
            linearized,
        })
    }

    /// L·D* as a banded matrix on the cells, for the box operator with the
    /// given node blocks.
    pub fn normal_matrix(&self, blocks: &[DMatrix<f64>]) -> BandMatrix {
        normal_band(&self.grid, self.n(), &self.s_minus, &self.s_plus, blocks)
    }

    pub fn triple(&self) -> &ProblemTriple {
        &self.triple
    }

    pub fn ctx(&self) -> &WeightContext {
        &self.ctx
    }

    pub fn eps(&self) -> f64 {
        self.ctx.eps()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.triple.n()
    }

    /// γ₀ at the nodes.
    pub fn base(&self) -> &GridPath {
        &self.base
    }

    /// γ̇₀ at the nodes.
    pub fn base_velocity(&self) -> &GridPath {
        &self.base_velocity
    }

    pub fn q_samples(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    pub fn boundary_spaces(&self) -> (&BoundarySpace, &BoundarySpace) {
        (&self.left, &self.right)
    }

    /// dim X − dim Y for the discrete D.
    pub fn discrete_index(&self) -> isize {
        let n = self.n() as isize;
        let m = self.grid.m() as isize;
        let dim_x = (m - 2) * n + (self.left.dim() + self.right.dim()) as isize;
        dim_x - (m - 1) * n
    }

    pub fn zeros_nodes(&self) -> GridPath {
        GridPath::zeros(self.grid, self.n(), Layout::Nodes)
    }

    pub fn zeros_cells(&self) -> GridPath {
        GridPath::zeros(self.grid, self.n(), Layout::Cells)
    }

    /// Projects the end values onto the admissible boundary subspaces.
    pub fn restrict(&self, eta: &GridPath) -> GridPath {
        let n = self.n();
        let m = self.grid.m();
        let mut out = eta.clone();
        let mut tmp = vec![0.0; n];
        dense::matvec(&self.left.projector, eta.point(0), &mut tmp);
        out.point_mut(0).copy_from_slice(&tmp);
        dense::matvec(&self.right.projector, eta.point(m - 1), &mut tmp);
        out.point_mut(m - 1).copy_from_slice(&tmp);
        out
    }

    pub fn d_operator(&self) -> BoxOperator {
        BoxOperator::new(self.q.clone())
    }

    /// d𝓕_ε(0) = D + E as a box operator.
    pub fn linearization(&self) -> BoxOperator {
        match &self.e {
            None => self.d_operator(),
            Some(e) => BoxOperator::new(self.q.iter().zip(e).map(|(q, e)| q + e).collect()),
        }
    }

    pub fn apply_d(&self, eta: &GridPath) -> GridPath {
        let mut out = self.zeros_cells();
        box_apply(&self.q, self.grid.dt(), self.n(), eta.values(), out.values_mut());
        out
    }

    /// Analytic adjoint −υ̇ + Qυ, cells → nodes.
    pub fn apply_d_star(&self, ups: &GridPath) -> GridPath {
        let mut out = self.zeros_nodes();
        self.d_star_raw(ups.values(), out.values_mut());
        out
    }

    fn d_star_raw(&self, ups: &[f64], out: &mut [f64]) {
        let n = self.n();
        let m = self.grid.m();
        let mut tmp = vec![0.0; n];
        for i in 0..m {
            let o = &mut out[i * n..(i + 1) * n];
            o.iter_mut().for_each(|v| *v = 0.0);
            if i > 0 {
                dense::matvec(&self.s_minus[i], &ups[(i - 1) * n..i * n], &mut tmp);
                dense::axpy(1.0, &tmp, o);
            }
            if i + 1 < m {
                dense::matvec(&self.s_plus[i], &ups[i * n..(i + 1) * n], &mut tmp);
                dense::axpy(1.0, &tmp, o);
            }
        }
    }

    /// E_ε η = −dR_ε(γ₀)η, pointwise at the nodes.
    pub fn apply_e(&self, eta: &GridPath) -> GridPath {
        let mut out = self.zeros_nodes();
        if let Some(e) = &self.e {
            let n = self.n();
            for (i, blk) in e.iter().enumerate() {
                dense::matvec(blk, eta.point(i), &mut out.values_mut()[i * n..(i + 1) * n]);
            }
        }
        out
    }

    /// 𝓕_ε(η) = η̇ + Qη + (b/ε, 1)ζ² − R_ε(γ₀ + η) + ((γ̇₀)ₓ, 0) on the cells.
    pub fn f_eps(&self, eta: &GridPath) -> GridPath {
        let n = self.n();
        let k = n - 1;
        let m = self.grid.m();
        let eps = self.eps();
        let b = self.triple.b();
        let mut nodal = vec![0.0; m * n];
        let mut point = vec![0.0; n];
        for i in 0..m {
            let e = eta.point(i);
            let o = &mut nodal[i * n..(i + 1) * n];
            dense::matvec(&self.q[i], e, o);
            let z2 = e[k] * e[k];
            for c in 0..k {
                o[c] += b[c] / eps * z2 + self.base_velocity.point(i)[c];
            }
            o[k] += z2;
            if !self.triple.h().is_zero() {
                for c in 0..n {
                    point[c] = self.base.point(i)[c] + e[c];
                }
                let r = self.triple.remainder_flat(eps, &point);
                for c in 0..n {
                    o[c] -= r[c];
                }
            }
        }
        let dt = self.grid.dt();
        let mut out = self.zeros_cells();
        let ov = out.values_mut();
        for j in 0..m - 1 {
            for c in 0..n {
                let (a, bb) = (j * n + c, (j + 1) * n + c);
                ov[a] = (eta.values()[bb] - eta.values()[a]) / dt + 0.5 * (nodal[a] + nodal[bb]);
            }
        }
        out
    }

    /// d𝓕_ε(η) as a box operator with node blocks
    /// Q + 2ζ (b/ε, 1) e_zᵀ − dR_ε(γ₀ + η).
    pub fn df_eps(&self, eta: &GridPath) -> BoxOperator {
        let n = self.n();
        let k = n - 1;
        let eps = self.eps();
        let b = self.triple.b();
        let blocks = (0..self.grid.m())
            .map(|i| {
                let mut l = self.q[i].clone();
                let z = eta.zeta(i);
                for c in 0..k {
                    l[(c, k)] += 2.0 * z * b[c] / eps;
                }
                l[(k, k)] += 2.0 * z;
                if !self.triple.h().is_zero() {
                    let p: Vec<f64> = self.base.point(i).iter().zip(eta.point(i)).map(|(a, e)| a + e).collect();
                    l -= self.triple.remainder_jacobian(eps, &p);
                }
                l
            })
            .collect();
        BoxOperator::new(blocks)
    }

    /// υ with D D* υ = rhs.
    pub fn solve_normal(&self, rhs: &GridPath) -> GridPath {
        let mut out = rhs.clone();
        self.normal.solve_in_place(out.values_mut());
        out
    }

    /// υ with (D + E) D* υ = rhs, using the factorization made at assembly.
    pub fn solve_linearized(&self, rhs: &GridPath) -> GridPath {
        let mut out = rhs.clone();
        match &self.linearized {
            Some(lu) => lu.solve_in_place(out.values_mut()),
            None => self.normal.solve_in_place(out.values_mut()),
        }
        out
    }

    pub(crate) fn normal_lu(&self) -> &BandLu {
        &self.normal
    }

    /// P_ε η = D*(DD*)⁻¹Dη, the X-orthogonal projection onto range D*.
    pub fn project_range(&self, eta: &GridPath) -> GridPath {
        self.apply_d_star(&self.solve_normal(&self.apply_d(eta)))
    }

    /// w_ε = w₀ − P_ε w₀ with w₀ = γ̇₀.
    pub fn kernel_vector(&self) -> GridPath {
        let w0 = self.restrict(&self.base_velocity);
        let p = self.project_range(&w0);
        w0.sub(&p).expect("same grid")
    }

    /// L²_ε on nodes (X) or cells (Y), depending on the layout.
    pub fn inner(&self, a: &GridPath, b: &GridPath) -> f64 {
        self.ctx.l2_inner(a, b).expect("paths on the system grid")
    }

    pub fn norm(&self, a: &GridPath) -> f64 {
        libm::sqrt(self.inner(a, a).max(0.0))
    }

    /// W^{1,2}_ε norm of a node path, derivative by second-order differences.
    pub fn w12(&self, eta: &GridPath) -> f64 {
        self.ctx.w12_norm(eta, &eta.derivative()).expect("same grid")
    }

    /// Solves A D* υ = rhs by the geometric series
    /// υ_{k+1} = υ_k + (DD*)⁻¹(rhs − A D* υ_k) and returns η = D* υ.
    pub fn slice_solve(
        &self,
        op: &BoxOperator,
        rhs: &GridPath,
        tol: f64,
        max_iters: usize,
    ) -> Result<(GridPath, SliceSolveReport), OperatorError> {
        let scale = self.norm(rhs).max(f64::MIN_POSITIVE);
        let mut ups = self.zeros_cells();
        let mut history = Vec::new();
        let mut residual = rhs.clone();
        let mut r = self.norm(&residual);
        history.push(r);
        let mut worst: f64 = 0.0;
        let mut iterations = 0;
        while r > tol * scale && iterations < max_iters {
            let step = self.solve_normal(&residual);
            ups.axpy(1.0, &step).expect("cells");
            residual = rhs.sub(&op.apply(&self.apply_d_star(&ups))).expect("cells");
            let r_next = self.norm(&residual);
            let rho = r_next / r;
            worst = worst.max(rho);
            iterations += 1;
            history.push(r_next);
            if !(rho < 1.0) {
                return Err(OperatorError::Divergence { iterations, contraction: rho });
            }
            r = r_next;
        }
        let converged = r <= tol * scale;
        Ok((self.apply_d_star(&ups), SliceSolveReport { iterations, residual_history: history, converged, contraction: worst }))
    }

    pub(crate) fn g0_inv(&self) -> &DMatrix<f64> {
        &self.g0_inv
    }

    /// Weighted adjointness defect |⟨Dη, υ⟩_Y − ⟨η, D*υ⟩_X|.
    pub fn adjointness_defect(&self, eta: &GridPath, ups: &GridPath) -> f64 {
        (self.inner(&self.apply_d(eta), ups) - self.inner(eta, &self.apply_d_star(ups))).abs()
    }

    /// Both sides of the two doubling identities for a smooth η given by
    /// `f(t, η, η̇)`, vanishing near the ends.
    pub fn doubling_identities(&self, f: &dyn Fn(f64, &mut [f64], &mut [f64])) -> DoublingReport {
        let n = self.n();
        let k = n - 1;
        let grid = self.grid;
        let sample = |layout: Layout, derivative: bool| {
            GridPath::from_fn(grid, n, layout, |t, o| {
                let mut other = vec![0.0; n];
                if derivative {
                    f(t, &mut other, o)
                } else {
                    f(t, o, &mut other)
                }
            })
        };
        let eta = sample(Layout::Nodes, false);
        let deta = sample(Layout::Nodes, true);
        let ups = sample(Layout::Cells, false);
        let dups = sample(Layout::Cells, true);
        let eps = self.eps();
        let s = self.triple.slow_rate();
        let d_lhs = self.inner(&self.apply_d(&eta), &self.apply_d(&eta));
        let dstar_lhs = self.inner(&self.apply_d_star(&ups), &self.apply_d_star(&ups));
        let quad = |path: &GridPath, dpath: &GridPath| -> (f64, f64, f64) {
            let mut qeta = path.clone();
            let mut cross = 0.0;
            let dt = grid.dt();
            let len = path.len();
            for i in 0..len {
                let t = path.time(i);
                let z = libm::tanh(s * t);
                let zdot = s * (1.0 - z * z);
                let q = q_matrix(&self.triple, eps, z);
                let v = DVector::from_column_slice(path.point(i));
                qeta.point_mut(i).copy_from_slice((q * v).as_slice());
                let w = match path.layout() {
                    Layout::Nodes if i == 0 || i + 1 == len => 0.5 * dt,
                    _ => dt,
                };
                cross += w * 2.0 * zdot * path.point(i)[k] * path.point(i)[k];
            }
            (self.inner(dpath, dpath), cross, self.inner(&qeta, &qeta))
        };
        let (a, c, b) = quad(&eta, &deta);
        let (a2, c2, b2) = quad(&ups, &dups);
        DoublingReport { d_lhs, d_rhs: a - c + b, dstar_lhs, dstar_rhs: a2 + c2 + b2 }
    }
}

// Row j of L·D*: P_j (D*υ)_j + N_j (D*υ)_{j+1} with P_j = −I/dt + L_j/2 and
// N_j = I/dt + L_{j+1}/2, which couples cells j−1, j, j+1.
fn normal_band(
    grid: &Grid,
    n: usize,
    s_minus: &[DMatrix<f64>],
    s_plus: &[DMatrix<f64>],
    blocks: &[DMatrix<f64>],
) -> BandMatrix {
    let dt = grid.dt();
    let cells = grid.m() - 1;
    let id = DMatrix::<f64>::identity(n, n);
    let mut k = BandMatrix::zeros(cells * n, 2 * n - 1, 2 * n - 1);
    for j in 0..cells {
        let p = -&id / dt + &blocks[j] * 0.5;
        let nn = &id / dt + &blocks[j + 1] * 0.5;
        let mut put = |col_cell: usize, blk: DMatrix<f64>| {
            for r in 0..n {
                for c in 0..n {
                    k.add(j * n + r, col_cell * n + c, blk[(r, c)]);
                }
            }
        };
        if j > 0 {
            put(j - 1, &p * &s_minus[j]);
        }
        put(j, &p * &s_plus[j] + &nn * &s_minus[j + 1]);
        if j + 1 < cells {
            put(j + 1, &nn * &s_plus[j + 1]);
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSolveReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Largest ratio of successive residuals.
    pub contraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingReport {
    pub d_lhs: f64,
    pub d_rhs: f64,
    pub dstar_lhs: f64,
    pub dstar_rhs: f64,
}

impl DoublingReport {
    pub fn worst_relative_error(&self) -> f64 {
        let e1 = (self.d_lhs - self.d_rhs).abs() / self.d_lhs.abs().max(f64::MIN_POSITIVE);
        let e2 = (self.dstar_lhs - self.dstar_rhs).abs() / self.dstar_lhs.abs().max(f64::MIN_POSITIVE);
        e1.max(e2)
    }
}
