//! ε-weighted norms on ℝⁿ and on sampled paths.
//!
//! Pointwise: ‖η‖²_ε = ε²‖ξ‖² + (ζ − ε⟨b, ξ⟩)²/(1 − ‖b‖²), the norm of the
//! constant metric g⁰_ε. Paths live either on grid nodes (trapezoid weights)
//! or on cell midpoints (midpoint weights); see [`Layout`].

use alloc::{vec, vec::Vec};

use nalgebra::{DMatrix, DVector};

use crate::model::ProblemTriple;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NormError {
    #[error("grid needs an odd point count ≥ 3 and a positive half-length")]
    BadGrid,
    #[error("paths live on different grids or layouts")]
    MismatchedGrids,
    #[error("expected {expected} values, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("zero path has no Sobolev ratio")]
    ZeroPath,
    #[error("weight context needs ε > 0 and ‖b‖ < 1")]
    BadContext,
}

/// Uniform nodes t_i = t0 + i·dt, i = 0..m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    t0: f64,
    dt: f64,
    m: usize,
}

impl Grid {
    /// Nodes on [−T, T]; m odd so that t = 0 is a node.
    pub fn symmetric(half_length: f64, m: usize) -> Result<Grid, NormError> {
        if !(half_length > 0.0) || m < 3 || m % 2 == 0 {
            return Err(NormError::BadGrid);
        }
        Ok(Grid { t0: -half_length, dt: 2.0 * half_length / (m - 1) as f64, m })
    }

    /// Smallest odd grid on [−T, T] with spacing at most `dt`.
    pub fn with_spacing(half_length: f64, dt: f64) -> Result<Grid, NormError> {
        if !(dt > 0.0) {
            return Err(NormError::BadGrid);
        }
        let mut m = libm::ceil(2.0 * half_length / dt) as usize + 1;
        if m % 2 == 0 {
            m += 1;
        }
        Grid::symmetric(half_length, m.max(3))
    }

    /// T = 20/(1−‖b‖²), m = 2001.
    pub fn default_for(triple: &ProblemTriple) -> Grid {
        Grid::symmetric(20.0 / triple.slow_rate(), 2001).expect("valid")
    }

    /// The default half-length with dt also capped by ε/5, so both time scales
    /// are resolved.
    pub fn resolved(triple: &ProblemTriple, eps: f64) -> Grid {
        let half = 20.0 / triple.slow_rate();
        let dt = (2.0 * half / 2000.0).min(eps / 5.0);
        Grid::with_spacing(half, dt).expect("valid")
    }

    pub fn from_parts(t0: f64, dt: f64, m: usize) -> Grid {
        Grid { t0, dt, m }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Node count.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn t_end(&self) -> f64 {
        self.t(self.m - 1)
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Midpoint of cell i (between nodes i and i+1).
    pub fn t_mid(&self, i: usize) -> f64 {
        self.t0 + (i as f64 + 0.5) * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|i| self.t(i))
    }

    fn same(&self, other: &Grid) -> bool {
        self.m == other.m
            && (self.t0 - other.t0).abs() <= 1e-12 * (1.0 + self.t0.abs())
            && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

/// Where the samples of a path sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// m samples at the nodes; trapezoid quadrature.
    Nodes,
    /// m − 1 samples at the cell midpoints; midpoint quadrature.
    Cells,
}

/// A sampled curve in ℝⁿ, stored point-major (`values[i*n + c]`, z last).
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: Grid,
    n: usize,
    layout: Layout,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(grid: Grid, n: usize, layout: Layout, values: Vec<f64>) -> Result<GridPath, NormError> {
        let expected = Self::samples_for(&grid, layout) * n;
        if values.len() != expected {
            return Err(NormError::BadLength { expected, got: values.len() });
        }
        Ok(GridPath { grid, n, layout, values })
    }

    pub fn zeros(grid: Grid, n: usize, layout: Layout) -> GridPath {
        GridPath { grid, n, layout, values: vec![0.0; Self::samples_for(&grid, layout) * n] }
    }

    /// Samples `f(t, out)` at every node or midpoint.
    pub fn from_fn(grid: Grid, n: usize, layout: Layout, mut f: impl FnMut(f64, &mut [f64])) -> GridPath {
        let mut p = GridPath::zeros(grid, n, layout);
        for i in 0..p.len() {
            let t = p.time(i);
            f(t, p.point_mut(i));
        }
        p
    }

    fn samples_for(grid: &Grid, layout: Layout) -> usize {
        match layout {
            Layout::Nodes => grid.m,
            Layout::Cells => grid.m - 1,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        match self.layout {
            Layout::Nodes => self.grid.t(i),
            Layout::Cells => self.grid.t_mid(i),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn point_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n;
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        &self.point(i)[..self.n - 1]
    }

    pub fn zeta(&self, i: usize) -> f64 {
        self.values[i * self.n + self.n - 1]
    }

    pub fn points(&self) -> core::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n)
    }

    pub fn same_shape(&self, other: &GridPath) -> bool {
        self.n == other.n && self.layout == other.layout && self.grid.same(&other.grid)
    }

    fn check(&self, other: &GridPath) -> Result<(), NormError> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(NormError::MismatchedGrids)
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &GridPath) -> Result<(), NormError> {
        self.check(other)?;
        crate::dense::axpy(alpha, &other.values, &mut self.values);
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> GridPath {
        let mut p = self.clone();
        p.values.iter_mut().for_each(|v| *v *= alpha);
        p
    }

    pub fn sub(&self, other: &GridPath) -> Result<GridPath, NormError> {
        let mut p = self.clone();
        p.axpy(-1.0, other)?;
        Ok(p)
    }

    pub fn add(&self, other: &GridPath) -> Result<GridPath, NormError> {
        let mut p = self.clone();
        p.axpy(1.0, other)?;
        Ok(p)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// Second-order derivative: central inside, one-sided three-point at the ends.
    pub fn derivative(&self) -> GridPath {
        let k = self.len();
        let n = self.n;
        let h = self.grid.dt;
        let mut d = GridPath::zeros(self.grid, n, self.layout);
        if k < 3 {
            return d;
        }
        let v = &self.values;
        for c in 0..n {
            let at = |i: usize| v[i * n + c];
            d.values[c] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
            for i in 1..k - 1 {
                d.values[i * n + c] = (at(i + 1) - at(i - 1)) / (2.0 * h);
            }
            d.values[(k - 1) * n + c] = (3.0 * at(k - 1) - 4.0 * at(k - 2) + at(k - 3)) / (2.0 * h);
        }
        d
    }

    /// Fourth-order derivative: five-point central inside, one-sided five-point
    /// stencils at the two nodes nearest each end.
    pub fn derivative4(&self) -> GridPath {
        let k = self.len();
        if k < 5 {
            return self.derivative();
        }
        let n = self.n;
        let h = self.grid.dt;
        let mut d = GridPath::zeros(self.grid, n, self.layout);
        let v = &self.values;
        const FWD0: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
        const FWD1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
        for c in 0..n {
            let at = |i: usize| v[i * n + c];
            let stencil = |base: usize, w: &[f64; 5], sign: f64, rev: bool| -> f64 {
                let mut s = 0.0;
                for (j, wj) in w.iter().enumerate() {
                    let idx = if rev { base - j } else { base + j };
                    s += wj * at(idx);
                }
                sign * s / (12.0 * h)
            };
            d.values[c] = stencil(0, &FWD0, 1.0, false);
            d.values[n + c] = stencil(0, &FWD1, 1.0, false);
            for i in 2..k - 2 {
                d.values[i * n + c] = (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * h);
            }
            d.values[(k - 1) * n + c] = stencil(k - 1, &FWD0, -1.0, true);
            d.values[(k - 2) * n + c] = -{
                let mut s = 0.0;
                // mirror of FWD1 around node k−2: offsets +1, 0, −1, −2, −3
                let idx = [k - 1, k - 2, k - 3, k - 4, k - 5];
                for (w, i) in FWD1.iter().zip(idx) {
                    s += w * at(i);
                }
                s / (12.0 * h)
            };
        }
        d
    }
}

/// (ε, b) and the constant metric g⁰_ε they define.
#[derive(Debug, Clone)]
pub struct WeightContext {
    eps: f64,
    b: DVector<f64>,
    slow: f64,
    g0: DMatrix<f64>,
}

impl WeightContext {
    pub fn new(eps: f64, b: DVector<f64>) -> Result<WeightContext, NormError> {
        let bb = b.norm_squared();
        if !(eps > 0.0) || !(bb < 1.0) {
            return Err(NormError::BadContext);
        }
        let slow = 1.0 - bb;
        let k = b.len();
        let mut g0 = DMatrix::zeros(k + 1, k + 1);
        for i in 0..k {
            for j in 0..k {
                let id = if i == j { 1.0 } else { 0.0 };
                g0[(i, j)] = eps * eps * (id + b[i] * b[j] / slow);
            }
            g0[(i, k)] = -eps * b[i] / slow;
            g0[(k, i)] = -eps * b[i] / slow;
        }
        g0[(k, k)] = 1.0 / slow;
        Ok(WeightContext { eps, b, slow, g0 })
    }

    pub fn for_triple(triple: &ProblemTriple, eps: f64) -> Result<WeightContext, NormError> {
        Self::new(eps, triple.b().clone())
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn dim(&self) -> usize {
        self.b.len() + 1
    }

    /// g⁰_ε as a dense matrix.
    pub fn g0(&self) -> &DMatrix<f64> {
        &self.g0
    }

    /// M_ε = diag(ε, …, ε, 1).
    pub fn scaling(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| if i + 1 < n { self.eps } else { 1.0 })
    }

    pub fn g0_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let k = self.b.len();
        let mut xx = 0.0;
        let mut ba = 0.0;
        let mut bb = 0.0;
        for i in 0..k {
            xx += a[i] * b[i];
            ba += self.b[i] * a[i];
            bb += self.b[i] * b[i];
        }
        let e = self.eps;
        e * e * xx + (a[k] - e * ba) * (b[k] - e * bb) / self.slow
    }

    pub fn pointwise_norm(&self, eta: &[f64]) -> f64 {
        libm::sqrt(self.g0_inner(eta, eta).max(0.0))
    }

    /// L²_ε inner product; trapezoid on nodes, midpoint on cells.
    pub fn l2_inner(&self, a: &GridPath, b: &GridPath) -> Result<f64, NormError> {
        a.check(b)?;
        let dt = a.grid.dt;
        let k = a.len();
        let mut s = 0.0;
        for (i, (pa, pb)) in a.points().zip(b.points()).enumerate() {
            let w = match a.layout {
                Layout::Nodes if i == 0 || i + 1 == k => 0.5 * dt,
                _ => dt,
            };
            s += w * self.g0_inner(pa, pb);
        }
        Ok(s)
    }

    pub fn l2_norm(&self, path: &GridPath) -> f64 {
        libm::sqrt(self.l2_inner(path, path).expect("same path").max(0.0))
    }

    pub fn w12_norm(&self, path: &GridPath, dpath: &GridPath) -> Result<f64, NormError> {
        path.check(dpath)?;
        let a = self.l2_norm(path);
        let b = self.l2_norm(dpath);
        Ok(libm::sqrt(a * a + b * b))
    }

    /// ε‖ξ‖_∞ + ‖ζ‖_∞ with the Euclidean norm on ξ.
    pub fn linf_norm(&self, path: &GridPath) -> f64 {
        let mut sx: f64 = 0.0;
        let mut sz: f64 = 0.0;
        for p in path.points() {
            let (x, z) = p.split_at(p.len() - 1);
            sx = sx.max(libm::sqrt(crate::dense::dot(x, x)));
            sz = sz.max(z[0].abs());
        }
        self.eps * sx + sz
    }

    /// ε^{1/2}‖η‖_{L^∞_ε} / ‖η‖_{W^{1,2}_ε}.
    pub fn sobolev_ratio(&self, path: &GridPath, dpath: &GridPath) -> Result<f64, NormError> {
        let w = self.w12_norm(path, dpath)?;
        if w == 0.0 {
            return Err(NormError::ZeroPath);
        }
        Ok(libm::sqrt(self.eps) * self.linf_norm(path) / w)
    }
}
