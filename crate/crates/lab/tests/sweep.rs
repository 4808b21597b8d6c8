use bdflow::runner::{convergence_sweep, solve_sweep};
use bdflow::triple_file::TripleSpec;
use bdflow_core::{Grid, NewtonOptions};

fn b05() -> bdflow_core::ProblemTriple {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../triples/b05.json");
    TripleSpec::load(&p).unwrap().build().unwrap()
}

#[test]
fn threaded_sweep_matches_sequential() {
    let t = b05();
    let eps = [0.2, 0.1, 0.05];
    let grid_for = |e: f64| Grid::resolved(&t, e);
    let par = solve_sweep(&t, &eps, &grid_for, NewtonOptions::default());
    for (e, r) in par {
        let seq = bdflow_core::newton_solve(&t, e, grid_for(e), NewtonOptions::default()).unwrap();
        assert_eq!(r.unwrap().eta.values(), seq.eta.values());
    }
}

#[test]
fn sweep_slope_is_first_order() {
    let r = convergence_sweep(&b05(), &[0.2, 0.1, 0.05, 0.025]);
    let s = r.slope_w12.unwrap();
    assert!((0.9..=1.5).contains(&s), "{s}");
    assert_eq!(r.eps_list, vec![0.2, 0.1, 0.05, 0.025]);
}

#[test]
fn affine_triple_file_converges() {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../triples/b05_affine.json");
    let t = TripleSpec::load(&p).unwrap().build().unwrap();
    let r = convergence_sweep(&t, &[0.2, 0.1, 0.05]);
    assert!(r.excluded.is_empty(), "{:?}", r.excluded);
    assert!(r.slope_w12.unwrap() > 0.8);
}
