//! Measurements on converged solutions: energy, tail decay, ε-convergence,
//! transversality, uniqueness up to time shift.
//!
//! Every function here is sequential; the `bdflow` crate fans the per-ε work
//! out to threads and feeds the results back through [`convergence_report`].

use alloc::{string::String, string::ToString, sync::Arc, vec, vec::Vec};

use nalgebra::DVector;
use rand::Rng;

use crate::model::{Point, ProblemTriple};
use crate::norms::{Grid, GridPath, Layout};
use crate::operators::spectral::{restricted_min_singular, SpectralOptions};
use crate::operators::{LinearizedSystem, OperatorError};
use crate::solver::{self, newton_solve, newton_solve_from, NewtonOptions, Solution, SolverError, StepOptions};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerifyError {
    #[error("tail has {got} samples above the noise floor, need {need}")]
    UnderResolvedTail { got: usize, need: usize },
    #[error("no usable data points")]
    Empty,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// ∫ g_ε(γ̇, γ̇) dt by the trapezoid rule over node indices `range`
/// (inclusive), with γ̇ given on the same nodes.
pub fn energy_with_velocity(
    triple: &ProblemTriple,
    eps: f64,
    path: &GridPath,
    velocity: &GridPath,
    range: Option<(usize, usize)>,
) -> f64 {
    let (lo, hi) = range.unwrap_or((0, path.len().saturating_sub(1)));
    if hi <= lo {
        return 0.0;
    }
    let dt = path.grid().dt();
    let mut total = 0.0;
    for i in lo..=hi {
        let g = match triple.metric_flat(eps, path.point(i)) {
            Ok(g) => g,
            Err(_) => return f64::NAN,
        };
        let v = DVector::from_column_slice(velocity.point(i));
        let e = v.dot(&(g * &v));
        let wgt = if i == lo || i == hi { 0.5 } else { 1.0 };
        total += wgt * dt * e;
    }
    total
}

/// Energy with γ̇ from fourth-order differences of the path.
pub fn energy(triple: &ProblemTriple, eps: f64, path: &GridPath, range: Option<(usize, usize)>) -> f64 {
    energy_with_velocity(triple, eps, path, &path.derivative4(), range)
}

/// f_ε(first) − f_ε(last) over the same range.
pub fn potential_drop(triple: &ProblemTriple, eps: f64, path: &GridPath, range: Option<(usize, usize)>) -> f64 {
    let (lo, hi) = range.unwrap_or((0, path.len().saturating_sub(1)));
    triple.potential_flat(eps, path.point(lo)) - triple.potential_flat(eps, path.point(hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayReport {
    pub fitted_rate_plus: f64,
    pub fitted_rate_minus: f64,
    /// 1 − ‖b‖².
    pub floor: f64,
    pub samples_plus: usize,
    pub samples_minus: usize,
}

impl DecayReport {
    pub fn pass(&self) -> bool {
        self.fitted_rate_plus >= 0.9 * self.floor && self.fitted_rate_minus >= 0.9 * self.floor
    }

    pub fn min_rate(&self) -> f64 {
        self.fitted_rate_plus.min(self.fitted_rate_minus)
    }
}

pub const DECAY_NOISE_FLOOR: f64 = 1e-13;
pub const DECAY_MIN_SAMPLES: usize = 50;

fn squared_deviation(eps: f64, p: &[f64], target: f64) -> f64 {
    let (x, z) = p.split_at(p.len() - 1);
    eps * eps * x.iter().map(|v| v * v).sum::<f64>() + (z[0] - target) * (z[0] - target)
}

/// Least-squares slope of y against x.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Exponential rates of ε²‖γₓ‖² + |γ_z ∓ 1|² on the two tails. The fit
/// window on the right is [(1 − frac)·t_hi, t_hi] where t_hi is the last
/// time the deviation is above the noise floor; the left is the mirror.
pub fn decay_fit(
    path: &GridPath,
    eps: f64,
    floor: f64,
    tail_fraction: f64,
) -> Result<DecayReport, VerifyError> {
    let len = path.len();
    let fit = |target: f64, right: bool| -> Result<(f64, usize), VerifyError> {
        let dev = |i: usize| squared_deviation(eps, path.point(i), target);
        let edge = if right {
            (0..len).rev().find(|&i| dev(i) > DECAY_NOISE_FLOOR)
        } else {
            (0..len).find(|&i| dev(i) > DECAY_NOISE_FLOOR)
        }
        .ok_or(VerifyError::UnderResolvedTail { got: 0, need: DECAY_MIN_SAMPLES })?;
        let t_edge = path.time(edge);
        let t_in = (1.0 - tail_fraction) * t_edge;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for i in 0..len {
            let t = path.time(i);
            let inside = if right { t >= t_in && t <= t_edge } else { t <= t_in && t >= t_edge };
            let d = dev(i);
            if inside && d > DECAY_NOISE_FLOOR {
                xs.push(t);
                ys.push(libm::log(d));
            }
        }
        if xs.len() < DECAY_MIN_SAMPLES {
            return Err(VerifyError::UnderResolvedTail { got: xs.len(), need: DECAY_MIN_SAMPLES });
        }
        let slope = ls_slope(&xs, &ys).ok_or(VerifyError::Empty)?;
        Ok((if right { -slope } else { slope }, xs.len()))
    };
    let (fitted_rate_plus, samples_plus) = fit(1.0, true)?;
    let (fitted_rate_minus, samples_minus) = fit(-1.0, false)?;
    Ok(DecayReport { fitted_rate_plus, fitted_rate_minus, floor, samples_plus, samples_minus })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridPolicy {
    /// [`Grid::resolved`]: T = 20/(1 − ‖b‖²), dt ≤ ε/5.
    Resolved,
    Symmetric { half_length: f64, m: usize },
}

impl GridPolicy {
    pub fn grid(&self, triple: &ProblemTriple, eps: f64) -> Result<Grid, VerifyError> {
        match *self {
            GridPolicy::Resolved => Ok(Grid::resolved(triple, eps)),
            GridPolicy::Symmetric { half_length, m } => Grid::symmetric(half_length, m)
                .map_err(|e| VerifyError::Operator(OperatorError::Norm(e))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub eps_list: Vec<f64>,
    /// ‖γ_ε − γ₀‖_{W^{1,2}_ε}.
    pub error_w12: Vec<f64>,
    /// ε^{1/2}‖γ_ε − γ₀‖_{L^∞_ε}.
    pub error_linf: Vec<f64>,
    /// `None` when every error is at roundoff (the fit is meaningless).
    pub slope_w12: Option<f64>,
    pub slope_linf: Option<f64>,
    /// ε values whose solve failed, with the reason.
    pub excluded: Vec<(f64, String)>,
}

/// Errors at roundoff level count as exact.
pub const EXACT_ERROR: f64 = 1e-13;

fn loglog_slope(eps: &[f64], err: &[f64]) -> Option<f64> {
    if err.iter().all(|e| *e <= EXACT_ERROR) {
        return None;
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        eps.iter().zip(err).filter(|(_, e)| **e > 0.0).map(|(x, e)| (libm::log(*x), libm::log(*e))).unzip();
    ls_slope(&xs, &ys)
}

/// Assembles a report from per-ε outcomes (any order; sorted by decreasing ε).
pub fn convergence_report(outcomes: Vec<(f64, Result<Solution, SolverError>)>) -> ConvergenceReport {
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    let mut excluded = Vec::new();
    for (eps, r) in outcomes {
        match r {
            Ok(sol) => rows.push((eps, sol.eta_w12(), sol.eta_linf_scaled())),
            Err(e) => excluded.push((eps, e.to_string())),
        }
    }
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    let eps_list: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let error_w12: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let error_linf: Vec<f64> = rows.iter().map(|r| r.2).collect();
    ConvergenceReport {
        slope_w12: loglog_slope(&eps_list, &error_w12),
        slope_linf: loglog_slope(&eps_list, &error_linf),
        eps_list,
        error_w12,
        error_linf,
        excluded,
    }
}

pub fn convergence_study(
    triple: &ProblemTriple,
    eps_list: &[f64],
    policy: GridPolicy,
    opts: NewtonOptions,
) -> ConvergenceReport {
    let outcomes = eps_list
        .iter()
        .map(|&eps| {
            let r = policy
                .grid(triple, eps)
                .map_err(|_| SolverError::BadEps(eps))
                .and_then(|g| newton_solve(triple, eps, g, opts));
            (eps, r)
        })
        .collect();
    convergence_report(outcomes)
}

/// Smallest ε-weighted singular value of d𝓕_ε(η_ε) on range D*.
pub fn transversality_margin(solution: &Solution, opts: SpectralOptions) -> Result<f64, VerifyError> {
    transversality_margin_with(solution, &[], opts)
}

/// Same, with extra directions added to the trial space. Adding the kernel
/// direction w_ε is the negative control: the margin should collapse.
pub fn transversality_margin_with(
    solution: &Solution,
    extras: &[GridPath],
    opts: SpectralOptions,
) -> Result<f64, VerifyError> {
    let sys = &solution.system;
    let op = sys.df_eps(&solution.eta);
    Ok(restricted_min_singular(sys, &op, extras, opts)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessReport {
    /// Indices of seeds whose Newton run converged.
    pub converged: Vec<usize>,
    /// Seeds outside the Newton basin, with the reason.
    pub failed: Vec<(usize, String)>,
    pub max_distance: f64,
    /// Largest |τ| used by any pairwise alignment.
    pub max_shift: f64,
    /// ‖γ_ε‖_{L²_ε} of the first converged solution.
    pub reference_norm: f64,
}

impl UniquenessReport {
    pub fn pass(&self) -> bool {
        self.converged.len() >= 2 && self.max_distance <= 1e-6 * self.reference_norm.max(1.0)
    }
}

/// Newton from each seed, then pairwise alignment of the solutions.
pub fn uniqueness_study(sys: Arc<LinearizedSystem>, seeds: &[GridPath], opts: NewtonOptions) -> UniquenessReport {
    let mut sols = Vec::new();
    let mut converged = Vec::new();
    let mut failed = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        match newton_solve_from(sys.clone(), seed, opts) {
            Ok(s) => {
                converged.push(i);
                sols.push(s.gamma);
            }
            Err(e) => failed.push((i, e.to_string())),
        }
    }
    let ctx = sys.ctx();
    let mut max_distance: f64 = 0.0;
    let mut max_shift: f64 = 0.0;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            let (tau, d) = solver::align_and_compare(ctx, &sols[i], &sols[j]);
            max_distance = max_distance.max(d);
            max_shift = max_shift.max(tau.abs());
        }
    }
    let reference_norm = sols.first().map_or(0.0, |g| ctx.l2_norm(g));
    UniquenessReport { converged, failed, max_distance, max_shift, reference_norm }
}

/// Zero, the differences γ₀(· ± 0.5) − γ₀, and a smooth 1e−2 perturbation
/// with random coefficients.
pub fn standard_seeds<R: Rng + ?Sized>(sys: &LinearizedSystem, rng: &mut R) -> Vec<GridPath> {
    let base = sys.base();
    let mut seeds = vec![sys.zeros_nodes()];
    for tau in [0.5, -0.5] {
        seeds.push(solver::shift_path(base, tau).sub(base).expect("same grid"));
    }
    let profile = SmoothProfile::random(sys.n(), 0.5 * sys.grid().t_end(), rng);
    let mut noise = GridPath::from_fn(*sys.grid(), sys.n(), Layout::Nodes, |t, o| {
        let mut d = vec![0.0; o.len()];
        profile.eval(t, o, &mut d);
    });
    let amp = noise.max_abs();
    noise = noise.scaled(1e-2 / amp.max(f64::MIN_POSITIVE));
    seeds.push(noise);
    seeds
}

/// Random smooth path: Gaussian envelope times a few random modes per
/// component, with its exact derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothProfile {
    width: f64,
    /// (amplitude, frequency, phase) per component and mode.
    modes: Vec<Vec<(f64, f64, f64)>>,
}

impl SmoothProfile {
    pub fn random<R: Rng + ?Sized>(n: usize, width: f64, rng: &mut R) -> Self {
        let modes = (0..n)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        let a = 2.0 * rng.random::<f64>() - 1.0;
                        let w = 3.0 * rng.random::<f64>();
                        let p = 2.0 * core::f64::consts::PI * rng.random::<f64>();
                        (a, w, p)
                    })
                    .collect()
            })
            .collect();
        SmoothProfile { width, modes }
    }

    pub fn eval(&self, t: f64, out: &mut [f64], dout: &mut [f64]) {
        let u = t / self.width;
        let env = libm::exp(-u * u);
        let denv = -2.0 * u / self.width * env;
        for (c, modes) in self.modes.iter().enumerate() {
            let (mut v, mut dv) = (0.0, 0.0);
            for &(a, w, p) in modes {
                v += a * libm::sin(w * t + p);
                dv += a * w * libm::cos(w * t + p);
            }
            out[c] = env * v;
            dout[c] = denv * v + env * dv;
        }
    }
}

/// Forward integration from p₋ + δ·v₊ aligned against γ_ε; returns
/// (τ, distance). The shot starts at the first node where γ_ε is `delta`
/// away from p₋ and earlier nodes are filled with p₋.
pub fn shooting_cross_check(solution: &Solution, delta: f64, dt_int: Option<f64>) -> Result<(f64, f64), VerifyError> {
    let sys = &solution.system;
    let triple = sys.triple();
    let eps = solution.eps;
    let n = sys.n();
    let ctx = sys.ctx();
    let p_minus = Point::new(DVector::zeros(n - 1), -1.0).to_vec();
    let gap = |i: usize| {
        let d: Vec<f64> = solution.gamma.point(i).iter().zip(&p_minus).map(|(a, b)| a - b).collect();
        ctx.pointwise_norm(&d)
    };
    let i0 = (0..solution.gamma.len()).find(|&i| gap(i) >= delta).ok_or(VerifyError::Empty)?;
    let dirs = solver::unstable_directions(triple, eps, &Point::from_slice(&p_minus))?;
    let (_, v) = dirs.first().ok_or(VerifyError::Empty)?;
    // orient v so z increases
    let scale = if v[n - 1] >= 0.0 { 1.0 } else { -1.0 } * delta / ctx.pointwise_norm(v.as_slice());
    let start: Vec<f64> = p_minus.iter().zip(v.iter()).map(|(p, vi)| p + scale * vi).collect();
    let grid = sys.grid();
    let sub = Grid::from_parts(grid.t(i0), grid.dt(), grid.m() - i0);
    let opts = StepOptions { dt_int, ..StepOptions::default() };
    let tail = solver::integrate(triple, eps, &Point::from_slice(&start), sub, opts)?;
    let mut shot = GridPath::zeros(*grid, n, Layout::Nodes);
    for i in 0..grid.m() {
        let src = if i < i0 { &p_minus[..] } else { tail.point(i - i0) };
        shot.point_mut(i).copy_from_slice(src);
    }
    Ok(solver::align_and_compare(ctx, &shot, &solution.gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEnergyReport {
    pub rho: f64,
    /// Smallest grid T with energy on [−T, T] ≥ 4/3 − ρ.
    pub t_rho: f64,
    pub middle: f64,
    pub tails: f64,
}

impl TailEnergyReport {
    pub fn pass(&self) -> bool {
        self.tails < 2.0 * self.rho && self.middle >= 4.0 / 3.0 - self.rho
    }
}

pub fn tail_energy_chain(solution: &Solution, rho: f64) -> TailEnergyReport {
    let sys = &solution.system;
    let vel = solution.velocity();
    let path = &solution.gamma;
    let len = path.len();
    let mid = len / 2;
    let e = |lo, hi| energy_with_velocity(sys.triple(), solution.eps, path, &vel, Some((lo, hi)));
    let total = e(0, len - 1);
    let mut k = 0;
    while k < mid && e(mid - k, mid + k) < 4.0 / 3.0 - rho {
        k += 1;
    }
    let middle = e(mid - k, mid + k);
    TailEnergyReport { rho, t_rho: path.time(mid + k), middle, tails: total - middle }
}

/// Indices where γ_z fails to increase strictly, ignoring samples within
/// 1e−12 of ±1 where increments sit below roundoff.
pub fn z_monotonicity_violations(path: &GridPath) -> Vec<usize> {
    (0..path.len().saturating_sub(1))
        .filter(|&i| {
            let (a, b) = (path.zeta(i), path.zeta(i + 1));
            1.0 - a.abs() > 1e-12 && 1.0 - b.abs() > 1e-12 && b <= a
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn b05() -> ProblemTriple {
        ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.5)).unwrap()
    }

    fn limit_path(t: &ProblemTriple, grid: Grid) -> GridPath {
        GridPath::from_fn(grid, t.n(), Layout::Nodes, |s, o| o.copy_from_slice(&t.limit_solution(s).to_vec()))
    }

    #[test]
    fn energy_of_equilibrium_is_zero() {
        let t = b05();
        let g = Grid::symmetric(5.0, 101).unwrap();
        let p = GridPath::from_fn(g, 2, Layout::Nodes, |_, o| o.copy_from_slice(&[0.0, 1.0]));
        assert_eq!(energy(&t, 0.1, &p, None), 0.0);
    }

    #[test]
    fn half_line_energy_b_zero() {
        let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
        let g = Grid::symmetric(20.0, 4001).unwrap();
        let p = limit_path(&t, g);
        let e = energy(&t, 0.1, &p, Some((2000, 4000)));
        assert!((e - 2.0 / 3.0).abs() < 1e-8, "{e}");
        assert!((potential_drop(&t, 0.1, &p, Some((2000, 4000))) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn decay_of_limit_paths() {
        let g = Grid::symmetric(30.0, 6001).unwrap();
        let t0 = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
        let r = decay_fit(&limit_path(&t0, g), 0.1, 1.0, 0.5).unwrap();
        assert!((r.fitted_rate_plus - 4.0).abs() < 0.05 && (r.fitted_rate_minus - 4.0).abs() < 0.05, "{r:?}");
        let t = b05();
        let r = decay_fit(&limit_path(&t, g), 0.1, 0.75, 0.5).unwrap();
        assert!((r.min_rate() - 3.0).abs() < 0.05, "{r:?}");
        assert!(r.pass());
    }

    #[test]
    fn decay_needs_samples() {
        let t = b05();
        let g = Grid::symmetric(30.0, 61).unwrap();
        assert!(matches!(decay_fit(&limit_path(&t, g), 0.1, 0.75, 0.5), Err(VerifyError::UnderResolvedTail { .. })));
    }

    #[test]
    fn slopes() {
        assert!((ls_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(loglog_slope(&[0.2, 0.1], &[0.0, 0.0]), None);
        let s = loglog_slope(&[0.2, 0.1, 0.05], &[0.4, 0.2, 0.1]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_study_is_exact() {
        let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
        let pol = GridPolicy::Symmetric { half_length: 10.0, m: 401 };
        let r = convergence_study(&t, &[0.2, 0.1], pol, NewtonOptions::default());
        assert!(r.excluded.is_empty());
        assert_eq!(r.slope_w12, None);
        assert!(r.error_w12.iter().all(|e| *e == 0.0));
    }

    #[test]
    fn monotone_z_detects_a_dip() {
        let t = b05();
        let mut p = limit_path(&t, Grid::symmetric(5.0, 101).unwrap());
        assert!(z_monotonicity_violations(&p).is_empty());
        p.point_mut(50)[1] -= 0.1;
        assert_eq!(z_monotonicity_violations(&p), vec![49]);
    }

    #[test]
    fn smooth_profile_derivative() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = SmoothProfile::random(2, 4.0, &mut rng);
        let (mut a, mut b, mut d, mut scratch) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
        let h = 1e-6;
        p.eval(1.3 + h, &mut a, &mut scratch);
        p.eval(1.3 - h, &mut b, &mut scratch);
        p.eval(1.3, &mut scratch, &mut d);
        for c in 0..2 {
            assert!(((a[c] - b[c]) / (2.0 * h) - d[c]).abs() < 1e-8);
        }
    }
}
