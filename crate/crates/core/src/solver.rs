//! Newton on the slice range(D*), time-shift projection, a stiff forward
//! integrator and shift alignment.

use alloc::{sync::Arc, vec::Vec};

use nalgebra::{DMatrix, DVector};

use crate::model::{ModelError, Point, ProblemTriple, WPoint};
use crate::norms::{Grid, GridPath, Layout, WeightContext};
use crate::operators::{LinearizedSystem, OperatorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("Newton did not converge in {iterations} iterations (last residual {last_residual:e})")]
    NonConvergence { iterations: usize, last_residual: f64 },
    #[error("ε = {0} is outside (0, 1)")]
    BadEps(f64),
    #[error("ρ has no sign change on the shift bracket: outside shift basin")]
    OutsideShiftBasin,
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Target for ‖𝓕_ε(η)‖_{L²_ε}.
    pub residual_tol: f64,
    pub record_contraction: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { max_iters: 50, residual_tol: 1e-10, record_contraction: true }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub eps: f64,
    pub system: Arc<LinearizedSystem>,
    /// η_ε on the nodes.
    pub eta: GridPath,
    /// γ₀ + η_ε.
    pub gamma: GridPath,
    /// ‖𝓕_ε(Δ_k)‖_{L²_ε}, one entry per evaluation.
    pub residuals: Vec<f64>,
    /// Ratios of successive residuals, when recorded.
    pub contraction: Vec<f64>,
    /// |⟨w_ε, η_ε⟩_{L²_ε}|.
    pub slice_certificate: f64,
    pub kernel: GridPath,
}

impl Solution {
    pub fn iterations(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&0.0)
    }

    /// ‖η_ε‖_{W^{1,2}_ε}.
    pub fn eta_w12(&self) -> f64 {
        self.system.w12(&self.eta)
    }

    /// ε^{1/2}‖η_ε‖_{L^∞_ε}.
    pub fn eta_linf_scaled(&self) -> f64 {
        libm::sqrt(self.eps) * self.system.ctx().linf_norm(&self.eta)
    }

    /// |⟨w_ε, η_ε⟩| / (‖w_ε‖‖η_ε‖), zero when η_ε = 0.
    pub fn slice_certificate_relative(&self) -> f64 {
        let d = self.system.norm(&self.kernel) * self.system.norm(&self.eta);
        if d == 0.0 {
            0.0
        } else {
            self.slice_certificate / d
        }
    }

    /// γ̇ = γ̇₀ (exact) + η̇ (fourth-order differences).
    pub fn velocity(&self) -> GridPath {
        self.system.base_velocity().add(&self.eta.derivative4()).expect("same grid")
    }
}

pub fn newton_solve(triple: &ProblemTriple, eps: f64, grid: Grid, opts: NewtonOptions) -> Result<Solution, SolverError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SolverError::BadEps(eps));
    }
    let sys = Arc::new(LinearizedSystem::assemble(triple, eps, grid)?);
    let seed = sys.zeros_nodes();
    newton_solve_from(sys, &seed, opts)
}

/// Newton with the frozen linearization d𝓕_ε(0) = D + E:
/// η_{k+1} = η_k + D*υ_k with (D + E)D*υ_k = −𝓕_ε(η_k).
///
/// The seed is restricted to the admissible end spaces first; the iterates
/// stay in seed + range D*.
pub fn newton_solve_from(sys: Arc<LinearizedSystem>, seed: &GridPath, opts: NewtonOptions) -> Result<Solution, SolverError> {
    let mut eta = sys.restrict(seed);
    let mut residuals = Vec::new();
    let mut contraction = Vec::new();
    let mut f = sys.f_eps(&eta);
    let mut r = sys.norm(&f);
    residuals.push(r);
    let start = r;
    let mut iterations = 0;
    while !(r <= opts.residual_tol) {
        if iterations >= opts.max_iters || !r.is_finite() || r > 1e6 * start.max(1.0) {
            return Err(SolverError::NonConvergence { iterations, last_residual: r });
        }
        let ups = sys.solve_linearized(&f.scaled(-1.0));
        eta.axpy(1.0, &sys.apply_d_star(&ups)).expect("same grid");
        f = sys.f_eps(&eta);
        let r_next = sys.norm(&f);
        if opts.record_contraction {
            contraction.push(r_next / r);
        }
        r = r_next;
        residuals.push(r);
        iterations += 1;
    }
    let kernel = sys.kernel_vector();
    let slice_certificate = sys.inner(&kernel, &eta).abs();
    let gamma = sys.base().add(&eta).expect("same grid");
    Ok(Solution { eps: sys.eps(), system: sys, eta, gamma, residuals, contraction, slice_certificate, kernel })
}

/// (γ)_τ(t) = γ(t + τ) on the same nodes, by four-point Lagrange
/// interpolation, constant beyond the ends.
pub fn shift_path(path: &GridPath, tau: f64) -> GridPath {
    let n = path.dim();
    let len = path.len();
    let dt = path.grid().dt();
    let mut out = path.clone();
    for i in 0..len {
        let s = i as f64 + tau / dt;
        let o = out.point_mut(i);
        if s <= 0.0 {
            o.copy_from_slice(path.point(0));
            continue;
        }
        if s >= (len - 1) as f64 {
            o.copy_from_slice(path.point(len - 1));
            continue;
        }
        let j = libm::floor(s) as usize;
        let start = j.saturating_sub(1).min(len.saturating_sub(4));
        let x = s - start as f64;
        let mut w = [0.0; 4];
        for (a, wa) in w.iter_mut().enumerate() {
            let mut l = 1.0;
            for b in 0..4 {
                if b != a {
                    l *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            *wa = l;
        }
        for c in 0..n {
            o[c] = (0..4).map(|a| w[a] * path.point(start + a)[c]).sum();
        }
    }
    out
}

/// Finds τ with ⟨w_ε, γ_τ − γ₀⟩_{L²_ε} = 0: bisection on [−1, 1]/(1 − ‖b‖²),
/// then secant polish.
pub fn time_shift_project(sys: &LinearizedSystem, gamma: &GridPath) -> Result<(f64, GridPath), SolverError> {
    let w = sys.kernel_vector();
    let rho = |tau: f64| -> f64 {
        let d = shift_path(gamma, tau).sub(sys.base()).expect("same grid");
        sys.inner(&w, &d)
    };
    if rho(0.0) == 0.0 {
        return Ok((0.0, gamma.clone()));
    }
    let half = 1.0 / sys.triple().slow_rate();
    let (mut lo, mut hi) = (-half, half);
    let (mut flo, fhi) = (rho(lo), rho(hi));
    if flo == 0.0 {
        return Ok((lo, shift_path(gamma, lo)));
    }
    if fhi == 0.0 {
        return Ok((hi, shift_path(gamma, hi)));
    }
    if flo.signum() == fhi.signum() {
        return Err(SolverError::OutsideShiftBasin);
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let fm = rho(mid);
        if fm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (rho(a), rho(b));
    for _ in 0..8 {
        if fb == fa || fb == 0.0 {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        a = b;
        fa = fb;
        b = c;
        fb = rho(b);
    }
    let tau = if fb.abs() <= fa.abs() { b } else { a };
    Ok((tau, shift_path(gamma, tau)))
}

fn first_zero_crossing(path: &GridPath) -> Option<f64> {
    let n = path.dim();
    for i in 0..path.len().saturating_sub(1) {
        let (a, b) = (path.point(i)[n - 1], path.point(i + 1)[n - 1]);
        if a <= 0.0 && b > 0.0 {
            let frac = if b != a { -a / (b - a) } else { 0.0 };
            return Some(path.time(i) + frac * path.grid().dt());
        }
    }
    None
}

/// Minimizes ‖(γ₁)_τ − γ₂‖_{L²_ε} over τ: a coarse guess from the z = 0
/// crossings, then golden-section search on a bracket around it.
pub fn align_and_compare(ctx: &WeightContext, g1: &GridPath, g2: &GridPath) -> (f64, f64) {
    let guess = match (first_zero_crossing(g1), first_zero_crossing(g2)) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };
    let dist = |tau: f64| ctx.l2_norm(&shift_path(g1, tau).sub(g2).expect("same grid"));
    let width = (20.0 * g1.grid().dt()).max(0.05);
    let (mut a, mut b) = (guess - width, guess + width);
    let phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (dist(c), dist(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = dist(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = dist(d);
        }
    }
    let tau = 0.5 * (a + b);
    // an exact match may sit on the bracket's own guess
    let (t0, d0) = (guess, dist(guess));
    let dt = dist(tau);
    if d0 < dt {
        (t0, d0)
    } else {
        (tau, dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    /// Internal step; `None` means min(grid dt, ε/10).
    pub dt_int: Option<f64>,
    pub min_step: f64,
    pub newton_tol: f64,
    /// Stop once |z| exceeds this value; the output is truncated there.
    pub stop_abs_z: Option<f64>,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { dt_int: None, min_step: 1e-12, newton_tol: 1e-13, stop_abs_z: None }
    }
}

fn pack(wp: &WPoint) -> DVector<f64> {
    let k = wp.w.len();
    let mut u = DVector::zeros(k + 1);
    u.rows_mut(0, k).copy_from(&wp.w);
    u[k] = wp.z;
    u
}

fn unpack(u: &DVector<f64>) -> WPoint {
    let k = u.len() - 1;
    WPoint { w: u.rows(0, k).into_owned(), z: u[k] }
}

fn midpoint_step(triple: &ProblemTriple, eps: f64, u0: &DVector<f64>, h: f64, tol: f64) -> Option<DVector<f64>> {
    let n = u0.len();
    let mut u1 = u0.clone();
    for _ in 0..20 {
        let mid = unpack(&((u0 + &u1) * 0.5));
        let v = pack(&triple.w_rhs(eps, &mid));
        let g = &u1 - u0 - v * h;
        let jac = DMatrix::<f64>::identity(n, n) - triple.w_rhs_jacobian(eps, &mid) * (0.5 * h);
        let delta = jac.lu().solve(&g)?;
        u1 -= &delta;
        if !u1.iter().all(|x| x.is_finite()) {
            return None;
        }
        if delta.amax() <= tol * (1.0 + u1.amax()) {
            return Some(u1);
        }
    }
    None
}

/// Implicit midpoint on the (w, z) system with analytic Jacobian. Output
/// sits on the grid nodes, starting at `grid.t0()` from `start`.
pub fn integrate(triple: &ProblemTriple, eps: f64, start: &Point, grid: Grid, opts: StepOptions) -> Result<GridPath, SolverError> {
    let n = triple.n();
    let dt_out = grid.dt();
    let dt_int = opts.dt_int.unwrap_or(dt_out.min(eps / 10.0));
    let sub = libm::ceil(dt_out / dt_int - 1e-9).max(1.0) as usize;
    let h0 = dt_out / sub as f64;
    let mut values = Vec::with_capacity(grid.m() * n);
    let mut u = pack(&triple.to_w(start));
    values.extend(start.to_vec());
    for i in 1..grid.m() {
        let mut t = grid.t(i - 1);
        let t_next = grid.t(i);
        let mut h = h0;
        while t < t_next - 1e-12 * h0 {
            let step = h.min(t_next - t);
            match midpoint_step(triple, eps, &u, step, opts.newton_tol) {
                Some(next) => {
                    u = next;
                    t += step;
                    h = (h * 2.0).min(h0);
                }
                None => {
                    h *= 0.5;
                    if h < opts.min_step {
                        return Err(SolverError::StepUnderflow { t });
                    }
                }
            }
        }
        let p = triple.from_w(&unpack(&u));
        values.extend(p.to_vec());
        if let Some(limit) = opts.stop_abs_z {
            if p.z.abs() > limit {
                break;
            }
        }
    }
    let m = values.len() / n;
    let out_grid = Grid::from_parts(grid.t0(), dt_out, m);
    Ok(GridPath::new(out_grid, n, Layout::Nodes, values).expect("shape"))
}

/// Unstable eigen-directions of the flow at a critical point: eigenvectors
/// of J = −g⁻¹H with positive eigenvalue, H the Hessian of f_ε. J is
/// self-adjoint for g, so the problem is symmetric after a Cholesky change of
/// variables.
pub fn unstable_directions(triple: &ProblemTriple, eps: f64, p: &Point) -> Result<Vec<(f64, DVector<f64>)>, SolverError> {
    let n = triple.n();
    let k = n - 1;
    let flat = p.to_vec();
    let ginv = triple.metric_inverse_flat(eps, &flat)?;
    let chol = ginv.clone().cholesky().ok_or(ModelError::MetricNotPositive { eps })?;
    let l = chol.l();
    let mut hess = DMatrix::zeros(n, n);
    hess.view_mut((0, 0), (k, k)).copy_from(&(triple.a() * eps));
    hess[(k, k)] = 2.0 * p.z;
    // J = −LLᵀH is similar to −LᵀHL
    let s = -(l.transpose() * &hess * &l);
    let eig = ((&s + s.transpose()) * 0.5).symmetric_eigen();
    let mut out = Vec::new();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > 0.0 {
            let v = &l * eig.eigenvectors.column(i);
            out.push((lam, v.normalize()));
        }
    }
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> ProblemTriple {
        ProblemTriple::simple(DMatrix::from_element(1, 1, a), DVector::from_element(1, b)).unwrap()
    }

    #[test]
    fn trivial_case_accepts_zero() {
        let t = scalar(2.0, 0.0);
        for eps in [0.2, 0.1, 0.05] {
            let sol = newton_solve(&t, eps, Grid::resolved(&t, eps), NewtonOptions::default()).unwrap();
            assert_eq!(sol.iterations(), 0);
            assert!(sol.final_residual() < 1e-12);
            assert_eq!(sol.eta.max_abs(), 0.0);
        }
    }

    #[test]
    fn rejects_bad_eps() {
        let t = scalar(2.0, 0.5);
        let g = Grid::default_for(&t);
        assert_eq!(newton_solve(&t, 1.5, g, NewtonOptions::default()).unwrap_err(), SolverError::BadEps(1.5));
    }

    #[test]
    fn shift_of_zero_is_identity() {
        let g = Grid::symmetric(3.0, 61).unwrap();
        let p = GridPath::from_fn(g, 2, Layout::Nodes, |t, o| {
            o[0] = libm::sin(t);
            o[1] = t * t;
        });
        assert_eq!(shift_path(&p, 0.0), p);
        let s = shift_path(&p, 0.13);
        // cubic interpolation reproduces quadratics exactly
        for i in 2..58 {
            assert_relative_eq!(s.point(i)[1], (g.t(i) + 0.13).powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn integrate_equilibrium_stays() {
        let t = scalar(2.0, 0.5);
        let g = Grid::symmetric(1.0, 21).unwrap();
        let p = integrate(&t, 0.1, &Point::new(DVector::zeros(1), 1.0), g, StepOptions::default()).unwrap();
        assert!(p.points().all(|q| q[0].abs() < 1e-14 && (q[1] - 1.0).abs() < 1e-14));
    }

    #[test]
    fn integrate_tanh() {
        let t = scalar(1.0, 0.0);
        let g = Grid::from_parts(0.0, 0.01, 501);
        // dt_int = ε/10 = 0.002 gives midpoint error ~ dt²/12·|z‴| well below 1e-6
        let p = integrate(&t, 0.02, &Point::new(DVector::zeros(1), 0.0), g, StepOptions::default()).unwrap();
        let err = (0..p.len()).map(|i| (p.zeta(i) - libm::tanh(g.t(i))).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn fast_variable_contracts() {
        let t = scalar(2.0, 0.5);
        let eps = 0.02;
        let start = t.from_w(&WPoint { w: DVector::from_element(1, 0.1), z: 0.0 });
        let g = Grid::from_parts(0.0, 0.001, 11);
        let p = integrate(&t, eps, &start, g, StepOptions::default()).unwrap();
        let w_end = t.to_w(&Point::from_slice(p.point(10))).w[0];
        // w' ≈ −A w/ε plus an O(1) forcing near z = 0
        let predicted = 0.1 * libm::exp(-2.0 * 0.01 / eps);
        assert!((w_end - predicted).abs() < 0.2 * 0.1, "{w_end} vs {predicted}");
    }

    #[test]
    fn unstable_direction_at_minus_one() {
        let t = scalar(2.0, 0.5);
        let dirs = unstable_directions(&t, 0.05, &Point::new(DVector::zeros(1), -1.0)).unwrap();
        assert_eq!(dirs.len(), 1);
        // slow eigenvalue near 2(1 − ‖b‖²)
        assert!((dirs[0].0 - 1.5).abs() < 0.2, "{}", dirs[0].0);
    }
}
