//! Index-pair geometry in w-coordinates: spectral projectors π^±_ε(z) of
//! A_ε(z) = A + 2εz bbᵀ, the sets
//!
//! ```text
//! N_ε = { |z| ≤ K, |π⁺w| ≤ ε^ν, |π⁻w| ≤ ε^{(2ν−3)/4} }
//! L_ε = { (x, z) ∈ N_ε : |π⁻w| ≥ ε^ν }
//! ```
//!
//! and the flow-direction, exit and energy-length diagnostics on them.
//!
//! The outer π⁻ radius uses the exponent (2ν−3)/4 from the boundary case
//! analysis. The set definition elsewhere prints ε^{(3−2ν)/2}, which would
//! make the outer radius smaller than the inner one; see
//! [`ConleyConfig::printed_outer_radius`].

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dense;
use crate::model::{ModelError, Point, ProblemTriple};
use crate::norms::GridPath;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConleyError {
    #[error("ν = {0} must lie in (0, 1/2)")]
    BadNu(f64),
    #[error("ε = {0} must lie in (0, 1)")]
    BadEps(f64),
    #[error("‖b‖ = {0} must be < 1")]
    BNorm(f64),
    #[error("A_ε(z) has an eigenvalue within κ/2 of zero at z = {z}")]
    NearSingular { z: f64 },
    #[error("point is not on face a, b or c")]
    NotOnFace,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// K = √((2 − ‖b‖²)/(1 − ‖b‖²)) + (4/3)√32.
pub fn k_constant(b: &DVector<f64>) -> Result<f64, ConleyError> {
    let s = b.norm_squared();
    if !(s < 1.0) {
        return Err(ConleyError::BNorm(libm::sqrt(s)));
    }
    Ok(libm::sqrt((2.0 - s) / (1.0 - s)) + 4.0 / 3.0 * libm::sqrt(32.0))
}

#[derive(Debug, Clone)]
pub struct ConleyConfig {
    triple: ProblemTriple,
    eps: f64,
    nu: f64,
    k: f64,
    pub r_plus: f64,
    pub r_minus_inner: f64,
    pub r_minus_outer: f64,
}

impl ConleyConfig {
    pub fn new(triple: &ProblemTriple, eps: f64, nu: f64) -> Result<Self, ConleyError> {
        if !(nu > 0.0 && nu < 0.5) {
            return Err(ConleyError::BadNu(nu));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(ConleyError::BadEps(eps));
        }
        let k = k_constant(triple.b())?;
        Ok(ConleyConfig {
            triple: triple.clone(),
            eps,
            nu,
            k,
            r_plus: libm::pow(eps, nu),
            r_minus_inner: libm::pow(eps, nu),
            r_minus_outer: libm::pow(eps, (2.0 * nu - 3.0) / 4.0),
        })
    }

    pub fn triple(&self) -> &ProblemTriple {
        &self.triple
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// ε^{(3−2ν)/2}, kept only so reports can show the discrepancy.
    pub fn printed_outer_radius(&self) -> f64 {
        libm::pow(self.eps, (3.0 - 2.0 * self.nu) / 2.0)
    }

    /// Radii of the point: (|π⁺w|, |π⁻w|, z).
    pub fn radii(&self, p: &Point) -> Result<(f64, f64, f64), ConleyError> {
        let w = self.triple.to_w(p).w;
        let pr = spectral_projectors(&self.triple, self.eps, p.z)?;
        Ok(((&pr.plus * &w).norm(), (&pr.minus * &w).norm(), p.z))
    }
}

#[derive(Debug, Clone)]
pub struct Projectors {
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
    /// dπ⁺/dz; dπ⁻/dz = −dπ⁺/dz.
    pub d_plus: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Projectors {
    pub fn d_minus(&self) -> DMatrix<f64> {
        -&self.d_plus
    }
}

/// π^±_ε(z) by symmetric eigendecomposition of A_ε(z), with the derivative
/// dπ⁺/dz = Σ_{i∈+, j∈−} (v_iᵀȦv_j)/(λ_i − λ_j)(v_i v_jᵀ + v_j v_iᵀ), Ȧ = 2εbbᵀ.
pub fn spectral_projectors(triple: &ProblemTriple, eps: f64, z: f64) -> Result<Projectors, ConleyError> {
    let a = triple.a_eps(eps, z);
    let (vals, vecs) = dense::sym_eigen(&a);
    let kappa = triple.kappa();
    if vals.iter().any(|v| v.abs() <= 0.5 * kappa) {
        return Err(ConleyError::NearSingular { z });
    }
    let k = vals.len();
    let mut plus = DMatrix::zeros(k, k);
    let mut minus = DMatrix::zeros(k, k);
    for i in 0..k {
        let v = vecs.column(i);
        if vals[i] > 0.0 {
            plus += &v * v.transpose();
        } else {
            minus += &v * v.transpose();
        }
    }
    let adot = triple.b() * triple.b().transpose() * (2.0 * eps);
    let mut d_plus = DMatrix::zeros(k, k);
    for i in (0..k).filter(|&i| vals[i] > 0.0) {
        for j in (0..k).filter(|&j| vals[j] < 0.0) {
            let vi = vecs.column(i);
            let vj = vecs.column(j);
            let c = (vi.transpose() * &adot * vj)[0] / (vals[i] - vals[j]);
            d_plus += (&vi * vj.transpose() + &vj * vi.transpose()) * c;
        }
    }
    Ok(Projectors { plus, minus, d_plus, eigenvalues: vals, eigenvectors: vecs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaceLabel {
    InteriorNL,
    FaceA,
    FaceB,
    FaceC,
    FaceD,
    InL,
    OutsideN,
}

impl FaceLabel {
    pub fn name(&self) -> &'static str {
        match self {
            FaceLabel::InteriorNL => "interior_NL",
            FaceLabel::FaceA => "face_a",
            FaceLabel::FaceB => "face_b",
            FaceLabel::FaceC => "face_c",
            FaceLabel::FaceD => "face_d",
            FaceLabel::InL => "in_L",
            FaceLabel::OutsideN => "outside_N",
        }
    }
}

pub const FACE_TOL: f64 = 1e-9;

/// Precedence: outside_N, face_d, face_b, face_c, face_a, then in_L or
/// interior_NL. Points where A_ε(z) is near singular count as outside.
pub fn classify_point(cfg: &ConleyConfig, p: &Point) -> FaceLabel {
    if p.z.abs() > cfg.k + FACE_TOL {
        return FaceLabel::OutsideN;
    }
    let (a, c, _) = match cfg.radii(p) {
        Ok(r) => r,
        Err(_) => return FaceLabel::OutsideN,
    };
    if a > cfg.r_plus + FACE_TOL || c > cfg.r_minus_outer + FACE_TOL {
        return FaceLabel::OutsideN;
    }
    if (p.z.abs() - cfg.k).abs() <= FACE_TOL {
        return FaceLabel::FaceD;
    }
    if (c - cfg.r_minus_outer).abs() <= FACE_TOL {
        return FaceLabel::FaceB;
    }
    if (a - cfg.r_plus).abs() <= FACE_TOL {
        return FaceLabel::FaceC;
    }
    if (c - cfg.r_minus_inner).abs() <= FACE_TOL {
        return FaceLabel::FaceA;
    }
    if c > cfg.r_minus_inner {
        FaceLabel::InL
    } else {
        FaceLabel::InteriorNL
    }
}

/// Inside N_ε and strictly away from L_ε.
pub fn in_n_minus_l(cfg: &ConleyConfig, p: &Point) -> bool {
    match cfg.radii(p) {
        Ok((a, c, z)) => z.abs() <= cfg.k && a <= cfg.r_plus && c < cfg.r_minus_inner,
        Err(_) => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSign {
    pub face: FaceLabel,
    /// d/dt |π⁻_ε(z)w|².
    pub rho1_dot: f64,
    /// d/dt |π⁺_ε(z)w|².
    pub rho2_dot: f64,
    pub pass: bool,
}

/// Exact time derivatives of ρ₁ = |π⁻w|² and ρ₂ = |π⁺w|² along the flow;
/// pass iff ρ₁′ > 0 on faces a, b and ρ₂′ < 0 on face c.
pub fn boundary_flow_sign(cfg: &ConleyConfig, p: &Point) -> Result<FlowSign, ConleyError> {
    let face = classify_point(cfg, p);
    if !matches!(face, FaceLabel::FaceA | FaceLabel::FaceB | FaceLabel::FaceC) {
        return Err(ConleyError::NotOnFace);
    }
    flow_sign_unchecked(cfg, p, face)
}

fn flow_sign_unchecked(cfg: &ConleyConfig, p: &Point, face: FaceLabel) -> Result<FlowSign, ConleyError> {
    let t = &cfg.triple;
    let wp = t.to_w(p);
    let v = t.w_rhs(cfg.eps, &wp);
    let pr = spectral_projectors(t, cfg.eps, p.z)?;
    let w = &wp.w;
    let pm_w = &pr.minus * w;
    let pp_w = &pr.plus * w;
    let rho1 = 2.0 * pm_w.dot(&(pr.d_minus() * w * v.z + &pr.minus * &v.w));
    let rho2 = 2.0 * pp_w.dot(&(&pr.d_plus * w * v.z + &pr.plus * &v.w));
    let pass = match face {
        FaceLabel::FaceA | FaceLabel::FaceB => rho1 > 0.0,
        _ => rho2 < 0.0,
    };
    Ok(FlowSign { face, rho1_dot: rho1, rho2_dot: rho2, pass })
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

// Random vector in the span of `basis` columns: on the sphere of radius r, or
// uniform in the ball when `ball`.
fn random_in_span<R: Rng + ?Sized>(rng: &mut R, basis: &DMatrix<f64>, r: f64, ball: bool) -> DVector<f64> {
    let d = basis.ncols();
    if d == 0 {
        return DVector::zeros(basis.nrows());
    }
    let mut c = DVector::from_fn(d, |_, _| gaussian(rng));
    let nrm = c.norm();
    c /= nrm;
    let radius = if ball { r * libm::pow(rng.random::<f64>(), 1.0 / d as f64) } else { r };
    basis * c * radius
}

/// A random point on face a, b or c with |z| < K. `None` when the face is
/// empty (no negative eigenspace for a, b) or A_ε(z) is near singular.
pub fn sample_face<R: Rng + ?Sized>(cfg: &ConleyConfig, face: FaceLabel, rng: &mut R) -> Option<Point> {
    let z = (2.0 * rng.random::<f64>() - 1.0) * cfg.k * (1.0 - 1e-9);
    sample_face_at(cfg, face, z, rng)
}

/// As [`sample_face`] with z fixed.
pub fn sample_face_at<R: Rng + ?Sized>(cfg: &ConleyConfig, face: FaceLabel, z: f64, rng: &mut R) -> Option<Point> {
    let pr = spectral_projectors(&cfg.triple, cfg.eps, z).ok()?;
    let k = pr.eigenvalues.len();
    let select = |positive: bool| -> DMatrix<f64> {
        let cols: Vec<usize> = (0..k).filter(|&i| (pr.eigenvalues[i] > 0.0) == positive).collect();
        DMatrix::from_fn(k, cols.len(), |r, c| pr.eigenvectors[(r, cols[c])])
    };
    let (vp, vm) = (select(true), select(false));
    let w = match face {
        FaceLabel::FaceA if vm.ncols() > 0 => {
            random_in_span(rng, &vm, cfg.r_minus_inner, false) + random_in_span(rng, &vp, cfg.r_plus, true)
        }
        FaceLabel::FaceB if vm.ncols() > 0 => {
            random_in_span(rng, &vm, cfg.r_minus_outer, false) + random_in_span(rng, &vp, cfg.r_plus, true)
        }
        FaceLabel::FaceC if vp.ncols() > 0 => {
            random_in_span(rng, &vp, cfg.r_plus, false) + random_in_span(rng, &vm, cfg.r_minus_outer, true)
        }
        _ => return None,
    };
    Some(cfg.triple.from_w(&crate::model::WPoint { w, z }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceSweep {
    pub face: FaceLabel,
    pub samples: Vec<FlowSign>,
}

impl FaceSweep {
    pub fn passes(&self) -> usize {
        self.samples.iter().filter(|s| s.pass).count()
    }

    pub fn all_pass(&self) -> bool {
        !self.samples.is_empty() && self.passes() == self.samples.len()
    }

    /// Smallest signed margin: min ρ₁′ on a, b and min −ρ₂′ on c.
    pub fn worst_margin(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| if self.face == FaceLabel::FaceC { -s.rho2_dot } else { s.rho1_dot })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Flow signs at `count` sampled points of one face. Sampled points are
/// evaluated with the face they were drawn for, even if rounding puts them a
/// hair off the tolerance band.
pub fn face_sweep<R: Rng + ?Sized>(cfg: &ConleyConfig, face: FaceLabel, count: usize, rng: &mut R) -> FaceSweep {
    let mut samples = Vec::with_capacity(count);
    let mut attempts = 0;
    while samples.len() < count && attempts < 10 * count {
        attempts += 1;
        if let Some(p) = sample_face(cfg, face, rng) {
            if let Ok(s) = flow_sign_unchecked(cfg, &p, face) {
                samples.push(s);
            }
        }
    }
    FaceSweep { face, samples }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitReport {
    pub starts_inside: bool,
    pub exit_index: Option<usize>,
    pub f_at_exit: Option<f64>,
}

impl ExitReport {
    /// f_ε < −2/3 at the exit; vacuous when the path never exits.
    pub fn pass(&self) -> bool {
        self.f_at_exit.is_none_or(|f| f < -2.0 / 3.0)
    }
}

/// First sample outside N_ε and the potential there.
pub fn exit_value_check(cfg: &ConleyConfig, path: &GridPath) -> ExitReport {
    let point = |i: usize| Point::from_slice(path.point(i));
    let starts_inside = !path.is_empty() && classify_point(cfg, &point(0)) != FaceLabel::OutsideN;
    let exit_index = (0..path.len()).find(|&i| classify_point(cfg, &point(i)) == FaceLabel::OutsideN);
    let f_at_exit = exit_index.map(|i| cfg.triple.potential(cfg.eps, &point(i)));
    ExitReport { starts_inside, exit_index, f_at_exit }
}

/// sup ‖Aγₓ + b(γ_z² − 1)‖ ≤ ε^ν and sup |γ_z| ≤ K.
pub fn apriori_check(cfg: &ConleyConfig, path: &GridPath) -> bool {
    let bound = libm::pow(cfg.eps, cfg.nu);
    path.points().all(|p| {
        let q = Point::from_slice(p);
        q.z.abs() <= cfg.k && cfg.triple.to_w(&q).w.norm() <= bound
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLengthReport {
    /// First index with |z| > K, if any.
    pub exit_index: Option<usize>,
    /// ‖w‖ ≤ √2/ε held on every sample before the exit.
    pub w_bound_held: bool,
    /// Energy up to the exit (or over the whole path).
    pub energy: f64,
}

impl EnergyLengthReport {
    /// Energy > 4/3 whenever the probe fired with the w-bound intact.
    pub fn pass(&self) -> bool {
        match self.exit_index {
            Some(_) if self.w_bound_held => self.energy > 4.0 / 3.0,
            _ => true,
        }
    }
}

/// Energy over the path prefix ending at `exit` (or the first |z| > K).
pub fn energy_length_probe(cfg: &ConleyConfig, path: &GridPath, exit: Option<usize>) -> EnergyLengthReport {
    let exit_index = exit.or_else(|| (0..path.len()).find(|&i| path.zeta(i).abs() > cfg.k));
    let end = exit_index.unwrap_or(path.len().saturating_sub(1));
    let wmax = libm::sqrt(2.0) / cfg.eps;
    let w_bound_held = (0..end).all(|i| cfg.triple.to_w(&Point::from_slice(path.point(i))).w.norm() <= wmax);
    let energy = crate::verify::energy(&cfg.triple, cfg.eps, path, Some((0, end)));
    EnergyLengthReport { exit_index, w_bound_held, energy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_values() {
        assert_relative_eq!(k_constant(&DVector::zeros(2)).unwrap(), 8.956_685, epsilon = 1e-4);
        let b = DVector::from_vec(vec![0.5, 0.5]);
        assert_relative_eq!(k_constant(&b).unwrap(), libm::sqrt(3.0) + 4.0 / 3.0 * libm::sqrt(32.0), epsilon = 1e-12);
        assert!(k_constant(&DVector::from_vec(vec![1.0])).is_err());
        let mut last = 0.0;
        for i in 0..20 {
            let k = k_constant(&DVector::from_element(1, i as f64 * 0.049)).unwrap();
            assert!(k > last);
            last = k;
        }
    }

    #[test]
    fn projectors_trivial() {
        let t = ProblemTriple::simple(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), DVector::zeros(2)).unwrap();
        let pr = spectral_projectors(&t, 0.3, 2.0).unwrap();
        assert!((pr.plus - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).amax() < 1e-14);
        assert!((pr.minus - DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]))).amax() < 1e-14);
        assert_eq!(pr.d_plus.amax(), 0.0);
    }

    #[test]
    fn projector_derivative_matches_differences() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, -2.0]);
        let t = ProblemTriple::simple(a, DVector::from_vec(vec![0.3, 0.5])).unwrap();
        let eps = 0.1;
        let z = 1.3;
        let h = 1e-6;
        let fd = (spectral_projectors(&t, eps, z + h).unwrap().plus - spectral_projectors(&t, eps, z - h).unwrap().plus) / (2.0 * h);
        let pr = spectral_projectors(&t, eps, z).unwrap();
        assert!((fd - &pr.d_plus).amax() < 1e-8);
        assert!((&pr.plus * &pr.minus).amax() < 1e-12);
        assert!((&pr.plus + &pr.minus - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn radii_and_labels() {
        let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.5)).unwrap();
        let cfg = ConleyConfig::new(&t, 0.01, 0.25).unwrap();
        assert_relative_eq!(cfg.r_plus, 0.316_227_766, epsilon = 1e-8);
        assert_relative_eq!(cfg.r_minus_outer, 17.782_794, epsilon = 1e-5);
        assert_eq!(classify_point(&cfg, &t.limit_solution(0.3)), FaceLabel::InteriorNL);
        let far = Point::new(DVector::zeros(1), cfg.k() + 1.0);
        assert_eq!(classify_point(&cfg, &far), FaceLabel::OutsideN);
        // w = −b at the origin: |π⁺w| = 0.5 > ε^ν
        assert_eq!(classify_point(&cfg, &Point::new(DVector::zeros(1), 0.0)), FaceLabel::OutsideN);
        assert!(ConleyConfig::new(&t, 0.01, 0.7).is_err());
    }

    #[test]
    fn face_a_closed_form_when_b_vanishes() {
        let t = ProblemTriple::simple(DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0])), DVector::zeros(2)).unwrap();
        let cfg = ConleyConfig::new(&t, 0.05, 0.25).unwrap();
        let r = cfg.r_minus_inner;
        let p = t.from_w(&crate::model::WPoint { w: DVector::from_vec(vec![0.0, r]), z: 0.2 });
        let s = boundary_flow_sign(&cfg, &p).unwrap();
        assert_eq!(s.face, FaceLabel::FaceA);
        assert_relative_eq!(s.rho1_dot, 2.0 * 2.0 / 0.05 * r * r, epsilon = 1e-10);
        assert!(s.pass);
    }

    #[test]
    fn scalar_positive_a_has_no_negative_faces() {
        // A must beat the 2bzż forcing at |z| ≈ K, so A = 40 rather than 2
        let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 40.0), DVector::from_element(1, 0.5)).unwrap();
        let cfg = ConleyConfig::new(&t, 0.02, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_face(&cfg, FaceLabel::FaceA, &mut rng).is_none());
        let sweep = face_sweep(&cfg, FaceLabel::FaceC, 200, &mut rng);
        assert_eq!(sweep.samples.len(), 200);
        assert!(sweep.all_pass(), "worst {}", sweep.worst_margin());
    }

    #[test]
    fn apriori_on_limit_and_spike() {
        let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.5)).unwrap();
        let cfg = ConleyConfig::new(&t, 0.05, 0.25).unwrap();
        let g = crate::norms::Grid::symmetric(10.0, 201).unwrap();
        let mut p = GridPath::from_fn(g, 2, crate::norms::Layout::Nodes, |s, o| o.copy_from_slice(&t.limit_solution(s).to_vec()));
        assert!(apriori_check(&cfg, &p));
        // w-spike of size 2ε^ν at one node: x += 2ε^ν/A
        p.point_mut(100)[0] += 2.0 * libm::pow(0.05, 0.25) / 2.0;
        assert!(!apriori_check(&cfg, &p));
    }
}
