use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raps_cli::config::{Estimator, RunConfig};
use raps_cli::oracle::run_oracle_check;
use raps_cli::output::{ensure_dir, Provenance};
use raps_cli::run::{load_or_generate, run_comparison};
use raps_cli::{bench, CliError};

/// Risk-averse measurement selection experiments.
#[derive(Parser)]
#[command(name = "raps", version = env!("CARGO_PKG_VERSION"))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and write it as JSON.
    Simulate(Common),
    /// Compare the estimators over one scenario.
    Run(Common),
    /// Time Full- and Diag-RAPS for several measurement counts.
    Bench(Common),
    /// Check both selectors against exhaustive search.
    OracleCheck(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated subset of kf, td, diag_raps, full_raps.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Measurement counts: satellites for simulate/run, the m list for bench.
    #[arg(long, value_delimiter = ',')]
    m: Option<Vec<usize>>,
    /// Epochs per scenario (per benchmark point for bench).
    #[arg(long)]
    epochs: Option<usize>,
    /// Accepted for compatibility; every solve runs on one thread.
    #[arg(long)]
    single_thread: bool,
    /// Number of oracle instances.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, hide = true)]
    inject_big_m: Option<f64>,
}

fn effective_config(c: &Common, bench_mode: bool) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(list) = &c.estimators {
        cfg.estimators = list.iter().map(|s| Estimator::parse(s)).collect::<Result<_, _>>()?;
    }
    if let Some(ms) = &c.m {
        if bench_mode {
            cfg.bench.m = ms.clone();
        } else {
            match ms.as_slice() {
                [m] => cfg.scenario.satellites = *m,
                _ => return Err(CliError::Config("--m takes a single value outside bench".into())),
            }
        }
    }
    if let Some(e) = c.epochs {
        if bench_mode {
            cfg.bench.epochs = e;
        } else {
            cfg.scenario.trajectory.epochs = e;
        }
    }
    if let Some(n) = c.count {
        cfg.oracle.count = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn simulate(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c, false)?;
    let scenario = load_or_generate(&cfg)?;
    ensure_dir(&c.out)?;
    let path = c.out.join("scenario.json");
    scenario.save(&path).map_err(|e| match e {
        raps_sim::SimError::Io(source) => CliError::Io {
            path: path.clone(),
            source,
        },
        other => other.into(),
    })?;
    println!(
        "wrote {} ({} epochs, {} satellites)",
        path.display(),
        scenario.len(),
        scenario.satellites()
    );
    Ok(())
}

fn run(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c, false)?;
    let scenario = load_or_generate(&cfg)?;
    let out = run_comparison(&cfg, &scenario)?;
    out.write(&c.out)?;
    for (name, s) in &out.summary.estimators {
        println!(
            "{name:>10}: mean risk {:.4}, spec met {:.3}, mean runtime {:.4} s",
            s.mean_risk, s.spec_satisfaction_rate, s.runtime.mean_s
        );
    }
    println!("wrote {}", c.out.display());
    if out.summary.solver_errors > 0 {
        return Err(CliError::Solver(format!(
            "{} epochs fell back to the KF update",
            out.summary.solver_errors
        )));
    }
    Ok(())
}

fn run_bench(c: &Common) -> Result<(), CliError> {
    let cfg = effective_config(c, true)?;
    let out = bench::run_bench(&cfg)?;
    out.write(&c.out)?;
    for p in &out.summary.points {
        let flag = if p.flagged { " (limit hit)" } else { "" };
        println!(
            "m={:>3} {:>4}: mean {:.4} s, std {:.4} s{flag}",
            p.m,
            p.method.name(),
            p.mean_s,
            p.std_s
        );
    }
    Ok(())
}

fn oracle_check(c: &Common) -> Result<ExitCode, CliError> {
    let cfg = effective_config(c, false)?;
    let mut opts = cfg.bnb.options();
    opts.big_m_fixed = c.inject_big_m;
    opts.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let prov = Provenance::new(cfg.hash(), cfg.seed);
    let report = run_oracle_check(cfg.oracle.count, cfg.seed, &opts, prov, Some(Path::new(&c.out)))?;
    println!("{}/{} passed in {:.1} s", report.passed, report.count, report.runtime_s);
    if report.all_passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failing instances: {:?}", report.failed);
        Ok(ExitCode::from(4))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c).map(|_| ExitCode::SUCCESS),
        Command::Run(c) => run(c).map(|_| ExitCode::SUCCESS),
        Command::Bench(c) => run_bench(c).map(|_| ExitCode::SUCCESS),
        Command::OracleCheck(c) => oracle_check(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
