//! Runtime benchmark of Full- against Diag-RAPS.
//!
//! Every `m` gets its own scenario with `m` satellites. The priors come from
//! a KF recursion over that scenario, so both methods solve exactly the same
//! instances.

use std::path::Path;
use std::time::Instant;

use raps_core::dynamics::{discretize_pva, propagate, PvaParams};
use raps_core::estimators::kf_update;
use raps_core::selector::{solve_diag_raps, solve_full_raps, RapsInstance};
use raps_core::SolveStatus;
use serde::Serialize;

use crate::config::{BenchMethod, RunConfig};
use crate::output::{ensure_dir, write_json, Csv, Field, Provenance};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSample {
    pub m: usize,
    pub method: BenchMethod,
    pub run_idx: usize,
    pub runtime_s: f64,
    pub status: SolveStatus,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchPoint {
    pub m: usize,
    pub method: BenchMethod,
    pub mean_s: f64,
    /// Sample standard deviation.
    pub std_s: f64,
    pub epochs_used: usize,
    pub limit_hits: usize,
    /// Set when any epoch stopped at a node or time limit.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSummary {
    pub provenance: Provenance,
    pub time_limit_s: f64,
    pub points: Vec<BenchPoint>,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub samples: Vec<BenchSample>,
    pub summary: BenchSummary,
}

impl BenchOutput {
    pub fn point(&self, m: usize, method: BenchMethod) -> Option<&BenchPoint> {
        self.summary.points.iter().find(|p| p.m == m && p.method == method)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        ensure_dir(dir)?;
        let mut csv = Csv::new(&self.summary.provenance, &["m", "method", "run_idx", "runtime_s"]);
        for s in &self.samples {
            csv.row(&[
                Field::U(s.m as u64),
                Field::S(s.method.name()),
                Field::U(s.run_idx as u64),
                Field::F(s.runtime_s),
            ]);
        }
        csv.write(&dir.join("bench.csv"))?;
        write_json(&dir.join("bench_summary.json"), &self.summary)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn run_bench(cfg: &RunConfig) -> Result<BenchOutput, CliError> {
    cfg.validate()?;
    let spec = cfg.info_spec()?;
    let mut diag_opts = cfg.bnb.options();
    let mut full_opts = cfg.bnb.options();
    diag_opts.time_limit_s = cfg.full_raps_time_limit_s;
    full_opts.time_limit_s = cfg.full_raps_time_limit_s;

    let mut samples = Vec::new();
    let mut points = Vec::new();
    for &m in &cfg.bench.m {
        let mut params = cfg.scenario.clone();
        params.satellites = m;
        params.trajectory.epochs = cfg.bench.epochs;
        let scenario = params.generate(cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let model = discretize_pva(&PvaParams::new(scenario.trajectory.period, cfg.jerk_psd)?)?;

        let mut instances = Vec::with_capacity(scenario.len());
        let mut belief = scenario.initial_belief.clone();
        for k in 0..scenario.len() {
            if k > 0 {
                belief = propagate(&belief, &model)?;
            }
            let batch = scenario.batch(k)?;
            instances.push(RapsInstance::from_belief(&belief, batch.clone(), spec.clone())?);
            belief = kf_update(&belief, &batch)?.posterior;
        }

        for &method in &cfg.bench.methods {
            let mut times = Vec::with_capacity(instances.len());
            let mut limit_hits = 0;
            for (run_idx, inst) in instances.iter().enumerate() {
                let t = Instant::now();
                let report = match method {
                    BenchMethod::Diag => solve_diag_raps(inst, &diag_opts)?,
                    BenchMethod::Full => solve_full_raps(inst, &full_opts)?,
                };
                let runtime_s = t.elapsed().as_secs_f64();
                limit_hits += (report.status == SolveStatus::IterationLimit) as usize;
                times.push(runtime_s);
                samples.push(BenchSample {
                    m,
                    method,
                    run_idx,
                    runtime_s,
                    status: report.status,
                    risk: report.risk,
                });
            }
            let (mean_s, std_s) = mean_std(&times);
            points.push(BenchPoint {
                m,
                method,
                mean_s,
                std_s,
                epochs_used: times.len(),
                limit_hits,
                flagged: limit_hits > 0,
            });
        }
    }
    Ok(BenchOutput {
        samples,
        summary: BenchSummary {
            provenance: Provenance::new(cfg.hash(), cfg.seed),
            time_limit_s: cfg.full_raps_time_limit_s,
            points,
        },
    })
}
