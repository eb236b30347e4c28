//! Branch-and-bound against exhaustive search on random small instances.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raps_core::selector::{
    exhaustive_raps, posterior_information, solve_diag_raps, solve_full_raps, BnbOptions, RapsInstance, RapsMode,
};
use raps_core::{InfoSpec, Matrix, MeasurementBatch, SelectionVector, SolveReport, SolveStatus};
use serde::Serialize;

use crate::output::{ensure_dir, write_json, Provenance};
use crate::CliError;

/// Absolute risk tolerance between the two solvers.
pub const RISK_TOL: f64 = 1e-6;

/// Random instance number `k`: `n ∈ 2..=4`, `m ∈ 6..=12`, about a quarter
/// of the measurements hit by large outliers. Every tenth instance has a
/// zero spec.
pub fn random_instance(seed: u64, k: usize) -> RapsInstance<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    let n = rng.random_range(2..=4);
    let m = rng.random_range(6..=12);
    let l = Matrix::from_fn(n, n, |_, _| rng.random_range(-0.7..0.7));
    let mut prior = l.matmul(&l.transpose()).expect("square");
    for j in 0..n {
        prior[(j, j)] += 0.3;
    }
    let mean: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let truth: Vec<f64> = mean.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
    let rows = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let sigmas: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
    let values = (0..m)
        .map(|i| {
            let hx: f64 = rows.row(i).iter().zip(&truth).map(|(a, b)| a * b).sum();
            let outlier = if rng.random_bool(0.25) {
                rng.random_range(-20.0..20.0)
            } else {
                0.0
            };
            hx + sigmas[i] * rng.random_range(-1.5..1.5) + outlier
        })
        .collect();
    let batch = MeasurementBatch::new(values, rows, sigmas, 0.0).expect("consistent batch");
    let unconstrained = RapsInstance::new(mean, prior, batch, InfoSpec::zeros(n)).expect("SPD prior");
    if k % 10 == 0 {
        return unconstrained;
    }
    let ones = posterior_information(&unconstrained, &SelectionVector::ones(m)).expect("sizes match");
    let p = &unconstrained.prior_info;
    let spec = (0..n)
        .map(|j| p[(j, j)] + rng.random_range(0.1..0.8) * (ones[(j, j)] - p[(j, j)]))
        .collect();
    RapsInstance {
        spec: InfoSpec::new(spec).expect("non-negative"),
        ..unconstrained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeResult {
    pub mode: RapsMode,
    pub bnb_status: Option<SolveStatus>,
    pub bnb_risk: Option<f64>,
    pub bnb_selection: Option<Vec<bool>>,
    pub exhaustive_status: SolveStatus,
    pub exhaustive_risk: f64,
    pub exhaustive_selection: Vec<bool>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCase {
    pub index: usize,
    pub n: usize,
    pub m: usize,
    pub results: Vec<ModeResult>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub provenance: Provenance,
    pub count: usize,
    pub passed: usize,
    pub failed: Vec<usize>,
    pub runtime_s: f64,
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn all_passed(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Serialize)]
struct Reproducer<'a> {
    provenance: &'a Provenance,
    index: usize,
    big_m_fixed: Option<f64>,
    instance: &'a RapsInstance<f64>,
    results: &'a [ModeResult],
}

fn compare(inst: &RapsInstance<f64>, mode: RapsMode, opts: &BnbOptions<f64>) -> Result<ModeResult, CliError> {
    let ex = exhaustive_raps(inst, mode)?;
    let bnb: Result<SolveReport<f64>, _> = match mode {
        RapsMode::Diag => solve_diag_raps(inst, opts),
        RapsMode::Full => solve_full_raps(inst, opts),
    };
    let mut r = ModeResult {
        mode,
        bnb_status: None,
        bnb_risk: None,
        bnb_selection: None,
        exhaustive_status: ex.status,
        exhaustive_risk: ex.risk,
        exhaustive_selection: ex.selection.to_bools(),
        error: None,
        pass: false,
    };
    match bnb {
        Ok(b) => {
            r.pass = b.status == ex.status && (b.risk - ex.risk).abs() <= RISK_TOL;
            r.bnb_status = Some(b.status);
            r.bnb_risk = Some(b.risk);
            r.bnb_selection = Some(b.selection.to_bools());
        }
        Err(e) => r.error = Some(e.to_string()),
    }
    Ok(r)
}

/// Checks `count` instances; failing ones are written to
/// `out/oracle_failures/instance_<k>.json` when `out` is given.
pub fn run_oracle_check(
    count: usize,
    seed: u64,
    opts: &BnbOptions<f64>,
    prov: Provenance,
    out: Option<&Path>,
) -> Result<OracleReport, CliError> {
    if count == 0 {
        return Err(CliError::Config("oracle count must be at least 1".into()));
    }
    let start = Instant::now();
    let mut cases = Vec::with_capacity(count);
    let mut failed = Vec::new();
    for k in 0..count {
        let inst = random_instance(seed, k);
        let results = vec![
            compare(&inst, RapsMode::Diag, opts)?,
            compare(&inst, RapsMode::Full, opts)?,
        ];
        let pass = results.iter().all(|r| r.pass);
        if !pass {
            failed.push(k);
            if let Some(dir) = out {
                let dir = dir.join("oracle_failures");
                ensure_dir(&dir)?;
                let rep = Reproducer {
                    provenance: &prov,
                    index: k,
                    big_m_fixed: opts.big_m_fixed,
                    instance: &inst,
                    results: &results,
                };
                write_json(&dir.join(format!("instance_{k}.json")), &rep)?;
            }
        }
        cases.push(OracleCase {
            index: k,
            n: inst.n(),
            m: inst.m(),
            results,
            pass,
        });
    }
    let report = OracleReport {
        provenance: prov,
        count,
        passed: count - failed.len(),
        failed,
        runtime_s: start.elapsed().as_secs_f64(),
        cases,
    };
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_json(&dir.join("oracle_report.json"), &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instances_within_ranges() {
        for k in 0..40 {
            let inst = random_instance(5, k);
            assert!((2..=4).contains(&inst.n()) && (6..=12).contains(&inst.m()));
            assert_eq!(inst.spec.is_zero(), k % 10 == 0);
        }
        assert_eq!(random_instance(5, 3), random_instance(5, 3));
    }

    #[test]
    fn zero_spec_selects_nothing() {
        let prov = Provenance::new(String::new(), 0);
        let report = run_oracle_check(1, 9, &BnbOptions::default(), prov, None).unwrap();
        assert!(report.all_passed());
        for r in &report.cases[0].results {
            assert_eq!(r.exhaustive_risk, 0.0);
            assert!(r.bnb_selection.as_ref().unwrap().iter().all(|s| !s));
        }
    }
}
