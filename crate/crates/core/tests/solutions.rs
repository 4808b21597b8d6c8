use std::sync::Arc;

use bdflow_core::operators::spectral::{singular_values, SpectralOptions};
use bdflow_core::solver::{shift_path, time_shift_project};
use bdflow_core::verify::{self, GridPolicy};
use bdflow_core::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn b05() -> ProblemTriple {
    ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 0.5)).unwrap()
}

fn solve(t: &ProblemTriple, eps: f64) -> Solution {
    newton_solve(t, eps, Grid::resolved(t, eps), NewtonOptions::default()).unwrap()
}

#[test]
fn trivial_metric_is_exact() {
    let t = ProblemTriple::simple(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1)).unwrap();
    for eps in [0.2, 0.1, 0.05] {
        let s = solve(&t, eps);
        assert_eq!(s.iterations(), 0);
        assert!(s.final_residual() < 1e-12, "{}", s.final_residual());
        assert_eq!(s.eta.max_abs(), 0.0);
    }
}

#[test]
fn energy_and_potential_drop() {
    let t = b05();
    let s = solve(&t, 0.05);
    let e = verify::energy_with_velocity(&t, 0.05, &s.gamma, &s.velocity(), None);
    assert!((e - 4.0 / 3.0).abs() < 1e-6, "{e}");
    let drop = verify::potential_drop(&t, 0.05, &s.gamma, None);
    assert!((e - drop).abs() < 1e-6);
    let plain = verify::energy(&t, 0.05, &s.gamma, None);
    assert!((plain - 4.0 / 3.0).abs() < 1e-5, "{plain}");
}

#[test]
fn newton_converges_fast_with_small_slice_component() {
    let t = b05();
    let s = solve(&t, 0.05);
    assert!(s.iterations() <= 6);
    assert!(s.final_residual() <= 1e-10);
    assert!(s.slice_certificate_relative() <= 1e-8);
    assert!(s.contraction.iter().all(|c| *c < 0.2), "{:?}", s.contraction);
}

#[test]
fn w12_error_is_first_order() {
    let r = verify::convergence_study(&b05(), &[0.2, 0.1, 0.05, 0.025], GridPolicy::Resolved, NewtonOptions::default());
    assert!(r.excluded.is_empty());
    let slope = r.slope_w12.unwrap();
    assert!((0.9..=1.5).contains(&slope), "{slope}");
    // the sup-norm error is O(ε^{3/2}) here, one half order better than the bound
    let linf = r.slope_linf.unwrap();
    assert!(linf > 1.5 && linf < 1.8, "{linf}");
}

#[test]
fn decay_rates_clear_the_floor() {
    let t = b05();
    let s = solve(&t, 0.05);
    let r = verify::decay_fit(&s.gamma, 0.05, t.slow_rate(), 0.5).unwrap();
    assert!(r.pass(), "{r:?}");
    assert!(r.min_rate() > 2.5, "{r:?}");
}

#[test]
fn kernel_and_gap() {
    let t = b05();
    let s = solve(&t, 0.1);
    let sv = singular_values(&s.system, SpectralOptions::default()).unwrap();
    assert!(sv.near_zero < 1e-10);
    assert!(sv.gap() >= 10.0);
    assert!((sv.smallest_nonzero - 1.297).abs() < 0.01, "{sv:?}");
    assert_eq!(s.system.discrete_index(), 1);
}

#[test]
fn transversality_and_negative_control() {
    let s = solve(&b05(), 0.05);
    let m = verify::transversality_margin(&s, SpectralOptions::default()).unwrap();
    assert!((m - 1.298).abs() < 0.01, "{m}");
    let neg = verify::transversality_margin_with(&s, &[s.kernel.clone()], SpectralOptions::default()).unwrap();
    assert!(neg < 1e-2 * m, "{neg}");
}

#[test]
fn shift_is_recovered() {
    let s = solve(&b05(), 0.05);
    let shifted = shift_path(&s.gamma, 0.3);
    let (tau, back) = time_shift_project(&s.system, &shifted).unwrap();
    assert!((tau + 0.3).abs() < 1e-4, "{tau}");
    let d = s.system.ctx().l2_norm(&back.sub(&s.gamma).unwrap());
    assert!(d < 1e-4, "{d}");
}

#[test]
fn uniqueness_up_to_shift() {
    let t = b05();
    let sys = Arc::new(LinearizedSystem::assemble(&t, 0.05, Grid::resolved(&t, 0.05)).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let seeds = verify::standard_seeds(&sys, &mut rng);
    assert_eq!(seeds.len(), 4);
    let r = verify::uniqueness_study(sys, &seeds, NewtonOptions::default());
    assert!(r.failed.is_empty(), "{:?}", r.failed);
    assert!(r.pass(), "{r:?}");
}

#[test]
fn shooting_matches() {
    let s = solve(&b05(), 0.05);
    let (_, d) = verify::shooting_cross_check(&s, 1e-8, None).unwrap();
    assert!(d <= 1e-4, "{d}");
}

#[test]
fn tail_energy_and_monotone_z() {
    let s = solve(&b05(), 0.05);
    let r = verify::tail_energy_chain(&s, 0.05);
    assert!(r.pass(), "{r:?}");
    assert!(verify::z_monotonicity_violations(&s.gamma).is_empty());
}

#[test]
fn affine_perturbation_still_first_order() {
    let t = b05()
        .with_perturbation(Perturbation::Affine { s0: DMatrix::identity(2, 2) * 0.1, linear: vec![DMatrix::zeros(2, 2); 2] })
        .unwrap();
    let r = verify::convergence_study(&t, &[0.2, 0.1, 0.05], GridPolicy::Resolved, NewtonOptions::default());
    assert!(r.excluded.is_empty(), "{:?}", r.excluded);
    let slope = r.slope_w12.unwrap();
    assert!((0.8..=1.5).contains(&slope), "{slope}");
}
