//! Problem data (A, b, h) and the closed-form objects built from it: the
//! zoomed vector field, the gradient pair (f_ε, g_ε), the limit solution γ₀,
//! w-coordinates and the normal-form builder.
//!
//! Points in ℝⁿ are stored as `(x, z)` with `x ∈ ℝⁿ⁻¹`. Flat slices of length
//! `n` use the same order, z last.

use alloc::{sync::Arc, vec, vec::Vec};
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dense;
use crate::norms::{Grid, GridPath, Layout};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("A must be square, symmetric and invertible ({0})")]
    BadMatrix(&'static str),
    #[error("b has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("‖b‖ = {0} must be < 1")]
    BNorm(f64),
    #[error("P is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("D must be diagonal with entries ±1")]
    BadSigns,
    #[error("metric perturbation is inadmissible: {0}")]
    BadPerturbation(&'static str),
    #[error("inverse metric is not positive definite at this point (h too large for ε = {eps})")]
    MetricNotPositive { eps: f64 },
}

/// A caller-supplied metric perturbation `(ε, p) ↦ h_{ε²,p}` with `p = (x, z)`.
///
/// Must be stateless, symmetric-valued and vanish at `(0, 0)`.
pub trait MetricPerturbation: Send + Sync + fmt::Debug {
    fn eval(&self, eps: f64, p: &[f64]) -> DMatrix<f64>;

    /// ∂h/∂p_k. Central differences unless the family knows better.
    fn partial(&self, eps: f64, p: &[f64], k: usize) -> DMatrix<f64> {
        let step = 1e-6 * (1.0 + p[k].abs());
        let mut hi = p.to_vec();
        let mut lo = p.to_vec();
        hi[k] += step;
        lo[k] -= step;
        (self.eval(eps, &hi) - self.eval(eps, &lo)) / (2.0 * step)
    }
}

/// The metric perturbation h. Three closed families plus an escape hatch.
#[derive(Clone, Debug)]
pub enum Perturbation {
    Zero,
    /// `h = ε S₀ + Σ_k p_k S_k`, one `S_k` per coordinate of `p = (x, z)`.
    Affine { s0: DMatrix<f64>, linear: Vec<DMatrix<f64>> },
    /// `h = ε (S₀ + tanh(pᵀ W p) S₁)`.
    Saturated { s0: DMatrix<f64>, s1: DMatrix<f64>, w: DMatrix<f64> },
    Custom(Arc<dyn MetricPerturbation>),
}

impl Perturbation {
    pub fn is_zero(&self) -> bool {
        matches!(self, Perturbation::Zero)
    }

    pub fn eval(&self, eps: f64, p: &[f64]) -> DMatrix<f64> {
        let n = p.len();
        match self {
            Perturbation::Zero => DMatrix::zeros(n, n),
            Perturbation::Affine { s0, linear } => {
                let mut h = s0 * eps;
                for (pk, sk) in p.iter().zip(linear) {
                    h += sk * *pk;
                }
                h
            }
            Perturbation::Saturated { s0, s1, w } => {
                let q = quad_form(w, p);
                (s0 + s1 * libm::tanh(q)) * eps
            }
            Perturbation::Custom(h) => h.eval(eps, p),
        }
    }

    pub fn partial(&self, eps: f64, p: &[f64], k: usize) -> DMatrix<f64> {
        let n = p.len();
        match self {
            Perturbation::Zero => DMatrix::zeros(n, n),
            Perturbation::Affine { linear, .. } => linear[k].clone(),
            Perturbation::Saturated { s1, w, .. } => {
                let q = quad_form(w, p);
                let th = libm::tanh(q);
                let sech2 = 1.0 - th * th;
                let wp_k: f64 = (0..n).map(|j| (w[(k, j)] + w[(j, k)]) * p[j]).sum();
                s1 * (eps * sech2 * wp_k)
            }
            Perturbation::Custom(h) => h.partial(eps, p, k),
        }
    }

    fn validate(&self, n: usize) -> Result<(), ModelError> {
        let square = |m: &DMatrix<f64>| m.nrows() == n && m.ncols() == n;
        let ok = match self {
            Perturbation::Zero => true,
            Perturbation::Affine { s0, linear } => {
                linear.len() == n
                    && square(s0)
                    && dense::is_symmetric(s0, 1e-12)
                    && linear.iter().all(|s| square(s) && dense::is_symmetric(s, 1e-12))
            }
            Perturbation::Saturated { s0, s1, w } => {
                square(s0) && square(s1) && square(w) && dense::is_symmetric(s0, 1e-12) && dense::is_symmetric(s1, 1e-12)
            }
            Perturbation::Custom(h) => {
                let origin = vec![0.0; n];
                let h0 = h.eval(0.0, &origin);
                square(&h0) && h0.amax() < 1e-12
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadPerturbation("dimensions, symmetry or h(0,0,0) = 0"))
        }
    }
}

fn quad_form(w: &DMatrix<f64>, p: &[f64]) -> f64 {
    let mut q = 0.0;
    for i in 0..p.len() {
        for j in 0..p.len() {
            q += p[i] * w[(i, j)] * p[j];
        }
    }
    q
}

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: DVector<f64>,
    pub z: f64,
}

impl Point {
    pub fn new(x: DVector<f64>, z: f64) -> Self {
        Point { x, z }
    }

    pub fn from_slice(p: &[f64]) -> Self {
        let k = p.len() - 1;
        Point { x: DVector::from_column_slice(&p[..k]), z: p[k] }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.x.iter().copied().collect();
        v.push(self.z);
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WPoint {
    pub w: DVector<f64>,
    pub z: f64,
}

/// The data (A, b, h, 𝔠) of one local model.
#[derive(Clone, Debug)]
pub struct ProblemTriple {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    b: DVector<f64>,
    c_scale: f64,
    h: Perturbation,
}

impl ProblemTriple {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c_scale: f64, h: Perturbation) -> Result<Self, ModelError> {
        let k = a.nrows();
        if k == 0 || a.ncols() != k {
            return Err(ModelError::BadMatrix("not square"));
        }
        if !dense::is_symmetric(&a, 1e-12) {
            return Err(ModelError::BadMatrix("not symmetric"));
        }
        let a = dense::symmetrize(&a);
        if dense::min_abs_eigenvalue(&a) <= 1e-12 * a.amax() {
            return Err(ModelError::BadMatrix("singular"));
        }
        if b.len() != k {
            return Err(ModelError::DimensionMismatch { expected: k, got: b.len() });
        }
        if !(b.norm() < 1.0) {
            return Err(ModelError::BNorm(b.norm()));
        }
        if !(c_scale > 0.0) {
            return Err(ModelError::BadMatrix("c_scale must be positive"));
        }
        h.validate(k + 1)?;
        let a_inv = a.clone().try_inverse().ok_or(ModelError::BadMatrix("singular"))?;
        Ok(ProblemTriple { a, a_inv, b, c_scale, h })
    }

    /// Convenience for the common `h = 0`, `𝔠 = 1` case.
    pub fn simple(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(a, b, 1.0, Perturbation::Zero)
    }

    pub fn with_perturbation(mut self, h: Perturbation) -> Result<Self, ModelError> {
        h.validate(self.n())?;
        self.h = h;
        Ok(self)
    }

    /// Ambient dimension n.
    pub fn n(&self) -> usize {
        self.a.nrows() + 1
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c_scale(&self) -> f64 {
        self.c_scale
    }

    pub fn h(&self) -> &Perturbation {
        &self.h
    }

    /// 1 − ‖b‖², the speed of the limit solution.
    pub fn slow_rate(&self) -> f64 {
        1.0 - self.b.norm_squared()
    }

    /// Smallest |eigenvalue| of A.
    pub fn kappa(&self) -> f64 {
        dense::min_abs_eigenvalue(&self.a)
    }

    fn h_at(&self, eps: f64, p: &[f64]) -> DMatrix<f64> {
        self.h.eval(eps, &self.h_arg(eps, p))
    }

    // (ε²x, εz)
    fn h_arg(&self, eps: f64, p: &[f64]) -> Vec<f64> {
        let k = p.len() - 1;
        p.iter().enumerate().map(|(i, v)| if i < k { eps * eps * v } else { eps * v }).collect()
    }

    // (Ax, z² − 1)
    fn constraint_vector(&self, p: &[f64]) -> DVector<f64> {
        let k = self.n() - 1;
        let ax = &self.a * DVector::from_column_slice(&p[..k]);
        let mut v = DVector::zeros(k + 1);
        v.rows_mut(0, k).copy_from(&ax);
        v[k] = p[k] * p[k] - 1.0;
        v
    }

    /// (Rˣ_ε, Rᶻ_ε) as one flat vector, from `(εRˣ, Rᶻ) = −h_{ε²,(ε²x,εz)}(Ax, z²−1)`.
    pub fn remainder_flat(&self, eps: f64, p: &[f64]) -> DVector<f64> {
        let n = self.n();
        if self.h.is_zero() {
            return DVector::zeros(n);
        }
        let mut r = -(self.h_at(eps, p) * self.constraint_vector(p));
        for i in 0..n - 1 {
            r[i] /= eps;
        }
        r
    }

    pub fn remainder(&self, eps: f64, p: &Point) -> (DVector<f64>, f64) {
        let r = self.remainder_flat(eps, &p.to_vec());
        let k = self.n() - 1;
        (r.rows(0, k).into_owned(), r[k])
    }

    /// Jacobian dR_ε(p), n×n.
    pub fn remainder_jacobian(&self, eps: f64, p: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let mut jac = DMatrix::zeros(n, n);
        if self.h.is_zero() {
            return jac;
        }
        let arg = self.h_arg(eps, p);
        let h = self.h.eval(eps, &arg);
        let v = self.constraint_vector(p);
        for c in 0..n {
            // d/dp_c of h(ε, εM p) v(p)
            let scale = if c < n - 1 { eps * eps } else { eps };
            let dh = self.h.partial(eps, &arg, c) * scale;
            let mut dv = DVector::zeros(n);
            if c < n - 1 {
                dv.rows_mut(0, n - 1).copy_from(&self.a.column(c));
            } else {
                dv[n - 1] = 2.0 * p[n - 1];
            }
            let col = -(dh * &v + &h * dv);
            jac.set_column(c, &col);
        }
        for i in 0..n - 1 {
            for c in 0..n {
                jac[(i, c)] /= eps;
            }
        }
        jac
    }

    /// The zoomed vector field, flat in and out.
    pub fn rhs_flat(&self, eps: f64, p: &[f64]) -> DVector<f64> {
        let k = self.n() - 1;
        let x = DVector::from_column_slice(&p[..k]);
        let z = p[k];
        let ax = &self.a * &x;
        let mut v = DVector::zeros(k + 1);
        let fast = (&self.b * (1.0 - z * z) - &ax) / eps;
        v.rows_mut(0, k).copy_from(&fast);
        v[k] = -ax.dot(&self.b) + 1.0 - z * z;
        if !self.h.is_zero() {
            v += self.remainder_flat(eps, p);
        }
        v
    }

    pub fn rhs(&self, eps: f64, p: &Point) -> Point {
        Point::from_slice(self.rhs_flat(eps, &p.to_vec()).as_slice())
    }

    /// Jacobian of the vector field at `p`.
    pub fn rhs_jacobian(&self, eps: f64, p: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let k = n - 1;
        let z = p[k];
        let mut j = DMatrix::zeros(n, n);
        j.view_mut((0, 0), (k, k)).copy_from(&(-&self.a / eps));
        j.view_mut((0, k), (k, 1)).copy_from(&(&self.b * (-2.0 * z / eps)));
        let bta = self.b.transpose() * &self.a;
        j.view_mut((k, 0), (1, k)).copy_from(&(-bta));
        j[(k, k)] = -2.0 * z;
        if !self.h.is_zero() {
            j += self.remainder_jacobian(eps, p);
        }
        j
    }

    /// f_ε(x, z) = (ε/2) xᵀAx + z³/3 − z.
    pub fn potential(&self, eps: f64, p: &Point) -> f64 {
        self.potential_flat(eps, &p.to_vec())
    }

    pub fn potential_flat(&self, eps: f64, p: &[f64]) -> f64 {
        let k = self.n() - 1;
        let x = DVector::from_column_slice(&p[..k]);
        let z = p[k];
        0.5 * eps * x.dot(&(&self.a * &x)) + z * z * z / 3.0 - z
    }

    pub fn potential_gradient(&self, eps: f64, p: &[f64]) -> DVector<f64> {
        let mut g = self.constraint_vector(p);
        let k = self.n() - 1;
        for i in 0..k {
            g[i] *= eps;
        }
        g
    }

    /// g_ε⁻¹ at `p`; fails when the perturbation destroys positivity.
    pub fn metric_inverse(&self, eps: f64, p: &Point) -> Result<DMatrix<f64>, ModelError> {
        self.metric_inverse_flat(eps, &p.to_vec())
    }

    pub fn metric_inverse_flat(&self, eps: f64, p: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let n = self.n();
        let k = n - 1;
        let mut g = DMatrix::zeros(n, n);
        for i in 0..k {
            g[(i, i)] = 1.0 / (eps * eps);
            g[(i, k)] = self.b[i] / eps;
            g[(k, i)] = self.b[i] / eps;
        }
        g[(k, k)] = 1.0;
        if !self.h.is_zero() {
            let mut h = self.h_at(eps, p);
            for i in 0..n {
                for j in 0..n {
                    let si = if i < k { 1.0 / eps } else { 1.0 };
                    let sj = if j < k { 1.0 / eps } else { 1.0 };
                    h[(i, j)] *= si * sj;
                }
            }
            g += h;
        }
        if dense::symmetrize(&g).cholesky().is_none() {
            return Err(ModelError::MetricNotPositive { eps });
        }
        Ok(g)
    }

    /// g_ε at `p`.
    pub fn metric_flat(&self, eps: f64, p: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let gi = self.metric_inverse_flat(eps, p)?;
        gi.try_inverse().ok_or(ModelError::MetricNotPositive { eps })
    }

    /// γ₀(t) = (A⁻¹b / cosh²(st), tanh(st)), s = 1 − ‖b‖².
    pub fn limit_solution(&self, t: f64) -> Point {
        let s = self.slow_rate();
        let z = libm::tanh(s * t);
        Point { x: &self.a_inv * &self.b * (1.0 - z * z), z }
    }

    /// γ̇₀(t).
    pub fn limit_velocity(&self, t: f64) -> Point {
        let s = self.slow_rate();
        let z = libm::tanh(s * t);
        let u = 1.0 - z * z;
        Point { x: &self.a_inv * &self.b * (-2.0 * s * z * u), z: s * u }
    }

    /// γ̈₀(t).
    pub fn limit_acceleration(&self, t: f64) -> Point {
        let s = self.slow_rate();
        let z = libm::tanh(s * t);
        let u = 1.0 - z * z;
        Point { x: &self.a_inv * &self.b * (-2.0 * s * s * u * (u - 2.0 * z * z)), z: -2.0 * s * s * z * u }
    }

    /// w(x, z) = Ax + b(z² − 1).
    pub fn to_w(&self, p: &Point) -> WPoint {
        WPoint { w: &self.a * &p.x + &self.b * (p.z * p.z - 1.0), z: p.z }
    }

    /// x(w, z) = A⁻¹w + A⁻¹b(1 − z²).
    pub fn from_w(&self, wp: &WPoint) -> Point {
        Point { x: &self.a_inv * (&wp.w + &self.b * (1.0 - wp.z * wp.z)), z: wp.z }
    }

    /// A_ε(z) = A + 2εz bbᵀ.
    pub fn a_eps(&self, eps: f64, z: f64) -> DMatrix<f64> {
        &self.a + (&self.b * self.b.transpose()) * (2.0 * eps * z)
    }

    /// Velocity in w-coordinates, by the chain rule ẇ = Aẋ + 2bzż.
    pub fn w_rhs(&self, eps: f64, wp: &WPoint) -> WPoint {
        let p = self.from_w(wp);
        let v = self.rhs_flat(eps, &p.to_vec());
        let k = self.n() - 1;
        let xd = v.rows(0, k).into_owned();
        let zd = v[k];
        WPoint { w: &self.a * xd + &self.b * (2.0 * wp.z * zd), z: zd }
    }

    /// Jacobian of `w_rhs` with respect to (w, z).
    pub fn w_rhs_jacobian(&self, eps: f64, wp: &WPoint) -> DMatrix<f64> {
        let n = self.n();
        let k = n - 1;
        let p = self.from_w(wp).to_vec();
        let v = self.rhs_flat(eps, &p);
        let jp = self.rhs_jacobian(eps, &p);
        let z = wp.z;
        // DΨ = [[A, 2bz], [0, 1]] and its inverse
        let mut dpsi = DMatrix::zeros(n, n);
        dpsi.view_mut((0, 0), (k, k)).copy_from(&self.a);
        dpsi.view_mut((0, k), (k, 1)).copy_from(&(&self.b * (2.0 * z)));
        dpsi[(k, k)] = 1.0;
        let mut dpsi_inv = DMatrix::zeros(n, n);
        dpsi_inv.view_mut((0, 0), (k, k)).copy_from(&self.a_inv);
        dpsi_inv.view_mut((0, k), (k, 1)).copy_from(&(&self.a_inv * &self.b * (-2.0 * z)));
        dpsi_inv[(k, k)] = 1.0;
        let mut curv = DMatrix::zeros(n, n);
        curv.view_mut((0, k), (k, 1)).copy_from(&(&self.b * (2.0 * v[k])));
        (dpsi * jp + curv) * dpsi_inv
    }
}

/// Normal-form builder: A = (1/𝔠) P^{1/2} D P^{1/2}, b = √𝔠 P^{−1/2} q, h = 0.
pub fn build_triple(p: &DMatrix<f64>, q: &DVector<f64>, c: f64, d: &DMatrix<f64>) -> Result<ProblemTriple, ModelError> {
    let k = p.nrows();
    if p.ncols() != k || !dense::is_symmetric(p, 1e-12) {
        return Err(ModelError::NotPositiveDefinite);
    }
    if q.len() != k {
        return Err(ModelError::DimensionMismatch { expected: k, got: q.len() });
    }
    if d.nrows() != k || d.ncols() != k {
        return Err(ModelError::BadSigns);
    }
    for i in 0..k {
        for j in 0..k {
            let v = d[(i, j)];
            let ok = if i == j { v == 1.0 || v == -1.0 } else { v == 0.0 };
            if !ok {
                return Err(ModelError::BadSigns);
            }
        }
    }
    if !(c > 0.0) {
        return Err(ModelError::BadMatrix("c_scale must be positive"));
    }
    let (sqrt_p, inv_sqrt_p) = dense::spd_sqrt(p).ok_or(ModelError::NotPositiveDefinite)?;
    let a = dense::symmetrize(&(&sqrt_p * d * &sqrt_p / c));
    let b = inv_sqrt_p * q * libm::sqrt(c);
    if !(b.norm() < 1.0) {
        return Err(ModelError::BNorm(b.norm()));
    }
    ProblemTriple::new(a, b, c, Perturbation::Zero)
}

/// λ-scale path γ̃(s) ↦ γ(t) with γₓ(t) = γ̃ₓ(t/ε)/ε², γ_z(t) = γ̃_z(t/ε)/ε.
pub fn zoom(path: &GridPath, eps: f64) -> GridPath {
    rescale(path, eps, 1.0 / (eps * eps), 1.0 / eps)
}

/// Inverse of [`zoom`].
pub fn unzoom(path: &GridPath, eps: f64) -> GridPath {
    rescale(path, 1.0 / eps, eps * eps, eps)
}

fn rescale(path: &GridPath, time: f64, fx: f64, fz: f64) -> GridPath {
    let g = path.grid();
    let grid = Grid::from_parts(g.t0() * time, g.dt() * time, g.m());
    let n = path.dim();
    let mut values = path.values().to_vec();
    for chunk in values.chunks_mut(n) {
        for v in chunk[..n - 1].iter_mut() {
            *v *= fx;
        }
        chunk[n - 1] *= fz;
    }
    GridPath::new(grid, n, Layout::Nodes, values).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> ProblemTriple {
        ProblemTriple::simple(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let t0 = scalar(1.0, 0.0);
        let v = t0.rhs(0.3, &Point::new(DVector::zeros(1), 0.0));
        assert_eq!(v.x[0], 0.0);
        assert_eq!(v.z, 1.0);
        let t = scalar(2.0, 0.5);
        let v = t.rhs(0.1, &Point::new(DVector::from_element(1, 0.25), 0.0));
        assert_relative_eq!(v.x[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(v.z, 0.75, epsilon = 1e-14);
        for z in [1.0, -1.0] {
            let v = t.rhs(0.1, &Point::new(DVector::zeros(1), z));
            assert_eq!(v.x[0], 0.0);
            assert_eq!(v.z, 0.0);
        }
    }

    #[test]
    fn remainder_examples() {
        let eta = 0.3;
        let h = Perturbation::Affine { s0: DMatrix::identity(2, 2) * eta, linear: vec![DMatrix::zeros(2, 2); 2] };
        // ε = 1 turns εS₀ into η·I
        let t = scalar(2.0, 0.5).with_perturbation(h).unwrap();
        let (rx, rz) = t.remainder(1.0, &Point::new(DVector::zeros(1), 0.0));
        assert_relative_eq!(rx[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(rz, eta, epsilon = 1e-15);
        let (rx, rz) = t.remainder(0.4, &Point::new(DVector::zeros(1), 1.0));
        assert_eq!((rx[0], rz), (0.0, 0.0));
    }

    #[test]
    fn potential_at_critical_points() {
        let t = scalar(2.0, 0.5);
        assert_relative_eq!(t.potential(0.1, &Point::new(DVector::zeros(1), 1.0)), -2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(t.potential(0.1, &Point::new(DVector::zeros(1), -1.0)), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn metric_inverse_b_zero_is_diagonal() {
        let t = ProblemTriple::simple(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let g = t.metric_inverse(0.2, &Point::new(DVector::zeros(2), 0.3)).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![25.0, 25.0, 1.0]));
        assert!((g - expect).amax() < 1e-12);
    }

    #[test]
    fn metric_positivity_is_checked() {
        let h = Perturbation::Affine { s0: DMatrix::identity(2, 2) * -50.0, linear: vec![DMatrix::zeros(2, 2); 2] };
        let t = scalar(2.0, 0.5).with_perturbation(h).unwrap();
        assert!(matches!(t.metric_inverse(0.5, &Point::new(DVector::zeros(1), 0.0)), Err(ModelError::MetricNotPositive { .. })));
    }

    #[test]
    fn limit_solution_examples() {
        let t = scalar(2.0, 0.5);
        let p = t.limit_solution(0.0);
        assert_relative_eq!(p.x[0], 0.25, epsilon = 1e-15);
        assert_eq!(p.z, 0.0);
        let t0 = scalar(3.0, 0.0);
        let p = t0.limit_solution(0.7);
        assert_eq!(p.x[0], 0.0);
        assert_relative_eq!(p.z, libm::tanh(0.7), epsilon = 1e-15);
        let far = t.limit_solution(30.0);
        assert!(far.x[0].abs() < 1e-15 && (far.z - 1.0).abs() < 1e-15);
    }

    #[test]
    fn limit_derivatives_match_finite_differences() {
        let t = scalar(2.0, 0.5);
        let h = 1e-5;
        for &s in &[-1.3, 0.0, 0.4, 2.2] {
            let v = t.limit_velocity(s);
            let a = t.limit_acceleration(s);
            let p1 = t.limit_solution(s + h);
            let p0 = t.limit_solution(s - h);
            assert_relative_eq!(v.z, (p1.z - p0.z) / (2.0 * h), epsilon = 1e-9);
            assert_relative_eq!(v.x[0], (p1.x[0] - p0.x[0]) / (2.0 * h), epsilon = 1e-9);
            let v1 = t.limit_velocity(s + h);
            let v0 = t.limit_velocity(s - h);
            assert_relative_eq!(a.z, (v1.z - v0.z) / (2.0 * h), epsilon = 1e-8);
            assert_relative_eq!(a.x[0], (v1.x[0] - v0.x[0]) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn w_of_limit_solution_vanishes() {
        let t = scalar(2.0, 0.5);
        let wp = t.to_w(&t.limit_solution(0.0));
        assert!(wp.w[0].abs() < 1e-15);
        assert_eq!(wp.z, 0.0);
    }

    #[test]
    fn a_eps_scalar() {
        let t = scalar(2.0, 0.5);
        assert_relative_eq!(t.a_eps(0.1, 1.0)[(0, 0)], 2.05, epsilon = 1e-15);
        assert_eq!(t.a_eps(0.0, 3.0)[(0, 0)], 2.0);
    }

    #[test]
    fn builder_scalar_case() {
        let t = build_triple(
            &DMatrix::from_element(1, 1, 4.0),
            &DVector::from_element(1, 0.5),
            1.0,
            &DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(t.a()[(0, 0)], 4.0, epsilon = 1e-14);
        assert_relative_eq!(t.b()[0], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn builder_identity_case() {
        let t = build_triple(&DMatrix::identity(3, 3), &DVector::zeros(3), 1.0, &DMatrix::identity(3, 3)).unwrap();
        assert!((t.a() - DMatrix::identity(3, 3)).amax() < 1e-14);
        assert_eq!(t.b().norm(), 0.0);
    }

    #[test]
    fn builder_rejects() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let r = build_triple(&p, &DVector::zeros(2), 1.0, &DMatrix::identity(2, 2));
        assert_eq!(r.unwrap_err(), ModelError::NotPositiveDefinite);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = build_triple(&p, &DVector::from_vec(vec![1.0, 1.0]), 1.0, &DMatrix::identity(2, 2));
        assert!(matches!(r, Err(ModelError::BNorm(_))));
    }

    #[test]
    fn w_rhs_matches_explicit_formula() {
        // ẇ = −A_ε(z)w/ε + 2bz(1−‖b‖²)(1−z²), ż = −⟨b, w⟩ + (1−‖b‖²)(1−z²) when h = 0
        let t = ProblemTriple::simple(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, -1.0]),
            DVector::from_vec(vec![0.4, -0.3]),
        )
        .unwrap();
        let eps = 0.07;
        let wp = WPoint { w: DVector::from_vec(vec![0.2, -0.5]), z: 0.6 };
        let got = t.w_rhs(eps, &wp);
        let s = t.slow_rate();
        let u = 1.0 - wp.z * wp.z;
        let expect_w = -(t.a_eps(eps, wp.z) * &wp.w) / eps + t.b() * (2.0 * wp.z * s * u);
        let expect_z = -t.b().dot(&wp.w) + s * u;
        assert!((got.w - expect_w).amax() < 1e-11);
        assert_relative_eq!(got.z, expect_z, epsilon = 1e-12);
    }
}
