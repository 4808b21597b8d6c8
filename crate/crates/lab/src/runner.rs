//! Sweeps, report files and the plan printout.
//!
//! Output directory layout:
//!
//! ```text
//! checks.csv        check,criterion,eps,value,threshold,pass
//! convergence.csv   eps,m,dt,iterations,residual,error_w12,error_linf,slice_certificate
//! path_eps<ε>.csv   t,x1..xk,z   (one per converged ε)
//! summary.json      config, per-check pass flags, every outcome, timings
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::thread;
use std::time::Instant;

use bdflow_core::conley::{k_constant, ConleyConfig};
use bdflow_core::solver::SolverError;
use bdflow_core::verify::{self, convergence_report};
use bdflow_core::{newton_solve, Grid, NewtonOptions, ProblemTriple, Solution};
use serde::Serialize;

use crate::checks::{self, sub_seed, Check, Outcome};
use crate::config::Resolved;

pub const SUMMARY_SCHEMA: &str = "bdflow.summary/1";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Newton solves for every ε on a pool of scoped threads; the output keeps
/// the input order.
pub fn solve_sweep(
    triple: &ProblemTriple,
    eps_list: &[f64],
    grid_for: &(dyn Fn(f64) -> Grid + Sync),
    opts: NewtonOptions,
) -> Vec<(f64, Result<Solution, SolverError>)> {
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(eps_list.len()).max(1);
    let mut slots: Vec<Option<Result<Solution, SolverError>>> = (0..eps_list.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunks: Vec<_> = slots.chunks_mut(eps_list.len().div_ceil(workers)).enumerate().collect();
        let stride = eps_list.len().div_ceil(workers);
        for (c, chunk) in chunks {
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let eps = eps_list[c * stride + k];
                    *slot = Some(newton_solve(triple, eps, grid_for(eps), opts));
                }
            });
        }
    });
    eps_list.iter().copied().zip(slots.into_iter().map(|s| s.expect("every slot filled"))).collect()
}

#[derive(Debug, Serialize)]
pub struct CheckSummary {
    pub check: &'static str,
    pub pass: bool,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub triple: crate::triple_file::TripleSpec,
    pub eps: Vec<f64>,
    pub nu: f64,
    pub seed: u64,
    pub solve_errors: Vec<(f64, String)>,
    pub checks: Vec<CheckSummary>,
    pub outcomes: Vec<Outcome>,
    pub all_pass: bool,
    pub solve_seconds: f64,
}

pub struct RunResult {
    pub summary: Summary,
    pub solutions: Vec<Solution>,
}

impl RunResult {
    /// 0 pass, 1 a check failed, 3 a solve failed.
    pub fn exit_code(&self) -> i32 {
        if !self.summary.solve_errors.is_empty() {
            3
        } else if !self.summary.all_pass {
            1
        } else {
            0
        }
    }
}

fn run_check(check: Check, r: &Resolved, sols: &[Solution], all: &[(f64, Result<Solution, SolverError>)]) -> Vec<Outcome> {
    let seed = r.config.seed;
    match check {
        Check::Newton => checks::newton(sols),
        Check::Energy => checks::energy(sols),
        Check::Convergence => {
            let outcomes = all.iter().map(|(e, s)| (*e, s.clone())).collect();
            checks::convergence(&convergence_report(outcomes))
        }
        Check::Decay => checks::decay(sols),
        Check::Operators => checks::operators(sols, seed),
        Check::Slice => checks::slice(sols),
        Check::Conley => {
            sols.iter().flat_map(|s| checks::conley_check(s, r.config.nu, r.config.face_samples, sub_seed(seed, s.eps))).collect()
        }
        Check::Uniqueness => sols.iter().flat_map(|s| checks::uniqueness(s, sub_seed(seed, s.eps))).collect(),
        Check::Transversality => checks::transversality(sols),
    }
}

/// Solves the sweep, runs the selected checks and writes the report files.
pub fn run(r: &Resolved) -> Result<RunResult, RunError> {
    let start = Instant::now();
    let grid_for = |eps: f64| r.grid(eps);
    let all = solve_sweep(&r.triple, &r.config.eps, &grid_for, NewtonOptions::default());
    let solve_seconds = start.elapsed().as_secs_f64();
    let mut sols: Vec<Solution> = all.iter().filter_map(|(_, s)| s.as_ref().ok().cloned()).collect();
    sols.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let solve_errors: Vec<(f64, String)> =
        all.iter().filter_map(|(e, s)| s.as_ref().err().map(|err| (*e, err.to_string()))).collect();
    let mut outcomes = Vec::new();
    let mut summaries = Vec::new();
    for &check in &r.checks {
        let t0 = Instant::now();
        let o = run_check(check, r, &sols, &all);
        summaries.push(CheckSummary { check: check.name(), pass: checks::all_pass(&o), seconds: t0.elapsed().as_secs_f64() });
        outcomes.extend(o);
    }
    let summary = Summary {
        schema: SUMMARY_SCHEMA,
        triple: r.spec.clone(),
        eps: r.config.eps.clone(),
        nu: r.config.nu,
        seed: r.config.seed,
        all_pass: checks::all_pass(&outcomes) && solve_errors.is_empty(),
        solve_errors,
        checks: summaries,
        outcomes,
        solve_seconds,
    };
    write_reports(&r.config.out, &summary, &sols)?;
    Ok(RunResult { summary, solutions: sols })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

pub fn write_reports(out: &Path, summary: &Summary, sols: &[Solution]) -> Result<(), RunError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;

    let p = out.join("checks.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["check", "criterion", "eps", "value", "threshold", "pass"])?;
    for o in &summary.outcomes {
        w.write_record([
            o.check.to_string(),
            o.criterion.clone(),
            o.eps.map_or(String::new(), |e| e.to_string()),
            o.value.to_string(),
            o.threshold.clone(),
            o.pass.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&p))?;

    let p = out.join("convergence.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["eps", "m", "dt", "iterations", "residual", "error_w12", "error_linf", "slice_certificate"])?;
    for s in sols {
        let g = s.system.grid();
        w.write_record([
            s.eps.to_string(),
            g.m().to_string(),
            g.dt().to_string(),
            s.iterations().to_string(),
            s.final_residual().to_string(),
            s.eta_w12().to_string(),
            s.eta_linf_scaled().to_string(),
            s.slice_certificate_relative().to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&p))?;

    for s in sols {
        let p = out.join(format!("path_eps{}.csv", s.eps));
        let mut w = csv::Writer::from_path(&p)?;
        let n = s.gamma.dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..n).map(|i| format!("x{i}")));
        header.push("z".into());
        w.write_record(&header)?;
        for i in 0..s.gamma.len() {
            let mut row = vec![s.gamma.time(i).to_string()];
            row.extend(s.gamma.point(i).iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(&p))?;
    }

    let p = out.join("summary.json");
    std::fs::write(&p, serde_json::to_string_pretty(summary)?).map_err(io_err(&p))?;
    Ok(())
}

/// Resolved grid per ε, Conley radii and K, and the selected checks.
pub fn describe(r: &Resolved) -> String {
    let mut s = String::new();
    let t = &r.triple;
    let name = r.spec.name.as_deref().unwrap_or("(unnamed)");
    let _ = writeln!(s, "triple {name}: dim x = {}, |b|² = {:.6}, 1 − |b|² = {:.6}", t.n() - 1, 1.0 - t.slow_rate(), t.slow_rate());
    match k_constant(t.b()) {
        Ok(k) => {
            let _ = writeln!(s, "K = {k:.4}");
        }
        Err(e) => {
            let _ = writeln!(s, "K: {e}");
        }
    }
    let _ = writeln!(s, "ν = {}", r.config.nu);
    for &eps in &r.config.eps {
        let g = r.grid(eps);
        let _ = write!(s, "ε = {eps}: grid T = {:.4}, m = {}, dt = {:.3e}", g.t_end(), g.m(), g.dt());
        if let Ok(c) = ConleyConfig::new(t, eps, r.config.nu) {
            let _ = write!(s, "; r_plus = {:.4}, r_minus_inner = {:.4}, r_minus_outer = {:.4}", c.r_plus, c.r_minus_inner, c.r_minus_outer);
        }
        let _ = writeln!(s);
    }
    if r.checks.is_empty() {
        let _ = writeln!(s, "no experiments selected");
    } else {
        let names: Vec<&str> = r.checks.iter().map(Check::name).collect();
        let _ = writeln!(s, "checks: {}", names.join(", "));
    }
    let _ = writeln!(s, "seed = {}, output = {}", r.config.seed, r.config.out.display());
    s
}

/// Convenience for callers that only need the report.
pub fn convergence_sweep(triple: &ProblemTriple, eps_list: &[f64]) -> verify::ConvergenceReport {
    let grid_for = |eps: f64| Grid::resolved(triple, eps);
    convergence_report(solve_sweep(triple, eps_list, &grid_for, NewtonOptions::default()))
}
