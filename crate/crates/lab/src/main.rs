use std::path::PathBuf;
use std::process::ExitCode;

use bdflow::config::{ConfigError, ExperimentConfig, GridOverride, TripleRef};
use bdflow::{describe, run, Check};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdflow", version, about = "Heteroclinic solver experiments for the zoomed birth-death model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the sweep, run the selected checks, write reports.
    Run(Opts),
    /// Print the resolved plan without computing anything.
    Describe(Opts),
}

#[derive(Args)]
struct Opts {
    /// Experiment file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    triple: Option<PathBuf>,
    /// Comma-separated ε values.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long = "grid-T")]
    grid_t: Option<f64>,
    #[arg(long = "grid-m")]
    grid_m: Option<usize>,
    /// Check to run; repeatable. `all` selects every check.
    #[arg(long, value_parser = check_name)]
    check: Vec<String>,
    /// Same as `--check all`.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn check_name(s: &str) -> Result<String, String> {
    if s == "all" || Check::ALL.iter().any(|c| c.name() == s) {
        Ok(s.to_string())
    } else {
        let names: Vec<&str> = Check::ALL.iter().map(Check::name).collect();
        Err(format!("unknown check {s:?}; expected all or one of {}", names.join(", ")))
    }
}

fn build(o: Opts) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(t) = o.triple {
        cfg.triple = Some(TripleRef::Path(t));
    }
    if let Some(s) = o.sweep {
        cfg.eps = s;
    }
    if let Some(nu) = o.nu {
        cfg.nu = nu;
    }
    if o.grid_t.is_some() || o.grid_m.is_some() {
        cfg.grid = GridOverride { half_length: o.grid_t.or(cfg.grid.half_length), m: o.grid_m.or(cfg.grid.m) };
    }
    if o.all {
        cfg.checks = vec!["all".into()];
    } else if !o.check.is_empty() {
        cfg.checks = o.check;
    }
    if let Some(out) = o.out {
        cfg.out = out;
    }
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn short(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.3e}")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, describe_only) = match cli.command {
        Command::Run(o) => (o, false),
        Command::Describe(o) => (o, true),
    };
    let resolved = match build(opts).and_then(ExperimentConfig::resolve) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    print!("{}", describe(&resolved));
    if describe_only {
        return ExitCode::SUCCESS;
    }
    let result = match run(&resolved) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("report error: {e}");
            return ExitCode::from(2);
        }
    };
    for (eps, why) in &result.summary.solve_errors {
        eprintln!("solve failed at ε = {eps}: {why}");
    }
    for o in &result.summary.outcomes {
        let eps = o.eps.map_or(String::new(), |e| format!(" ε={e}"));
        println!("{} {}{}: {} {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.check, eps, short(o.value), o.threshold, o.criterion);
    }
    println!("reports in {}", resolved.config.out.display());
    ExitCode::from(result.exit_code() as u8)
}
