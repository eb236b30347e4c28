//! Estimator comparison over one shared scenario.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use raps_core::dynamics::{discretize_pva, propagate, PvaParams};
use raps_core::estimators::{kf_update, map_update_with_selection, td_select, TdConfig, UpdateResult};
use raps_core::selector::{
    optimal_risk_for_selection, solve_diag_raps, solve_full_raps, BnbOptions, RapsInstance, RapsMode,
};
use raps_core::{InfoSpec, MeasurementBatch, SelectionVector, StateBelief};
use raps_sim::Scenario;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, Estimator, RunConfig};
use crate::output::{ensure_dir, write_json, Csv, Field, Provenance};
use crate::CliError;

/// Width of the Diag-RAPS computation-time histogram bins, seconds.
pub const HISTOGRAM_BIN_S: f64 = 0.05;

pub const EPOCH_COLUMNS: [&str; 12] = [
    "epoch",
    "time_s",
    "estimator",
    "sqrtinfo_n",
    "sqrtinfo_e",
    "sqrtinfo_d",
    "risk",
    "n_selected",
    "status",
    "err_n",
    "err_e",
    "err_d",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub time_s: f64,
    pub estimator: Estimator,
    /// Square roots of the position diagonal of the posterior information.
    pub sqrtinfo: [f64; 3],
    /// Minimum over the state of the risk of this epoch's selection, on this
    /// estimator's own prior.
    pub risk: f64,
    pub n_selected: usize,
    pub status: String,
    pub runtime_s: f64,
    /// Estimate minus truth, positions.
    pub err: [f64; 3],
    pub measurements: usize,
    /// Measurements whose normalized prior residual passes the TD gate.
    pub gate_passed: usize,
    /// Risk with every measurement selected, same prior.
    pub all_selected_risk: f64,
    /// Whether selecting every measurement meets the diagonal spec.
    pub all_selected_feasible: bool,
    /// Risk of the TD selection formed on this estimator's prior.
    pub td_selection_risk: f64,
    pub spec_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub mean_s: f64,
    pub median_s: f64,
    pub max_s: f64,
}

impl RuntimeStats {
    pub fn of(samples: &[f64]) -> Self {
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median_s = match n {
            0 => 0.0,
            _ if n % 2 == 1 => v[n / 2],
            _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
        };
        Self {
            mean_s: if n == 0 { 0.0 } else { v.iter().sum::<f64>() / n as f64 },
            median_s,
            max_s: v.last().copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub epochs: usize,
    pub mean_risk: f64,
    pub spec_satisfaction_rate: f64,
    pub runtime: RuntimeStats,
    pub status_counts: BTreeMap<String, usize>,
    /// Fraction of all residuals passing the `λ` gate against this
    /// estimator's prior.
    pub gate_pass_rate: f64,
    pub residuals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo_s: f64,
    pub hi_s: f64,
    pub count: usize,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub provenance: Provenance,
    pub scenario_seed: u64,
    pub epochs: usize,
    pub satellites: usize,
    pub measurement_stream_sha256: String,
    pub solver_errors: usize,
    pub estimators: BTreeMap<String, EstimatorSummary>,
    pub diag_raps_runtime_histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<EpochRecord>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn of(&self, e: Estimator) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter(move |r| r.estimator == e)
    }

    pub fn epochs_csv(&self) -> Csv {
        let mut csv = Csv::new(&self.summary.provenance, &EPOCH_COLUMNS);
        for r in &self.records {
            csv.row(&[
                Field::U(r.epoch as u64),
                Field::F(r.time_s),
                Field::S(r.estimator.name()),
                Field::F(r.sqrtinfo[0]),
                Field::F(r.sqrtinfo[1]),
                Field::F(r.sqrtinfo[2]),
                Field::F(r.risk),
                Field::U(r.n_selected as u64),
                Field::S(&r.status),
                Field::F(r.err[0]),
                Field::F(r.err[1]),
                Field::F(r.err[2]),
            ]);
        }
        csv
    }

    pub fn timing_csv(&self) -> Csv {
        let mut csv = Csv::new(&self.summary.provenance, &["epoch", "estimator", "runtime_s"]);
        for r in &self.records {
            csv.row(&[
                Field::U(r.epoch as u64),
                Field::S(r.estimator.name()),
                Field::F(r.runtime_s),
            ]);
        }
        csv
    }

    /// Writes `epochs.csv`, `timing.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        ensure_dir(dir)?;
        self.epochs_csv().write(&dir.join("epochs.csv"))?;
        self.timing_csv().write(&dir.join("timing.csv"))?;
        write_json(&dir.join("summary.json"), &self.summary)
    }
}

pub fn load_or_generate(cfg: &RunConfig) -> Result<Scenario, CliError> {
    match &cfg.scenario_file {
        Some(path) => Scenario::load(path).map_err(|e| match e {
            raps_sim::SimError::Io(source) => CliError::Io {
                path: path.clone(),
                source,
            },
            other => CliError::Config(format!("{}: {other}", path.display())),
        }),
        None => cfg
            .scenario
            .generate(cfg.seed)
            .map_err(|e| CliError::Config(e.to_string())),
    }
}

fn batch_digest(batch: &MeasurementBatch<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(batch.time.to_le_bytes());
    for v in batch.values.iter().chain(batch.rows.as_slice()).chain(&batch.sigmas) {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

struct Stepper<'a> {
    spec: &'a InfoSpec<f64>,
    td: TdConfig<f64>,
    diag_opts: BnbOptions<f64>,
    full_opts: BnbOptions<f64>,
}

struct Step {
    update: UpdateResult<f64>,
    selection: SelectionVector<f64>,
    status: String,
    runtime_s: f64,
    failed: bool,
}

impl Stepper<'_> {
    fn step(&self, e: Estimator, belief: &StateBelief<f64>, batch: &MeasurementBatch<f64>) -> Result<Step, CliError> {
        let closed = |update: UpdateResult<f64>, selection, runtime_s| Step {
            update,
            selection,
            status: "closed_form".into(),
            runtime_s,
            failed: false,
        };
        match e {
            Estimator::Kf => {
                let t = Instant::now();
                let update = kf_update(belief, batch)?;
                let dt = t.elapsed().as_secs_f64();
                Ok(closed(update, SelectionVector::ones(batch.len()), dt))
            }
            Estimator::Td => {
                let t = Instant::now();
                let selection = td_select(belief, batch, &self.td)?;
                let update = map_update_with_selection(belief, batch, &selection)?;
                let dt = t.elapsed().as_secs_f64();
                Ok(closed(update, selection, dt))
            }
            Estimator::DiagRaps | Estimator::FullRaps => {
                let t = Instant::now();
                let solved = RapsInstance::from_belief(belief, batch.clone(), self.spec.clone()).and_then(|inst| {
                    if e == Estimator::DiagRaps {
                        solve_diag_raps(&inst, &self.diag_opts)
                    } else {
                        solve_full_raps(&inst, &self.full_opts)
                    }
                });
                let dt = t.elapsed().as_secs_f64();
                match solved {
                    Ok(report) => Ok(Step {
                        update: map_update_with_selection(belief, batch, &report.selection)?,
                        selection: report.selection,
                        status: report.status.to_string(),
                        runtime_s: dt,
                        failed: false,
                    }),
                    Err(err) => {
                        eprintln!(
                            "warning: {e} solve failed at t={}: {err}; using the KF update",
                            batch.time
                        );
                        Ok(Step {
                            update: kf_update(belief, batch)?,
                            selection: SelectionVector::ones(batch.len()),
                            status: "error".into(),
                            runtime_s: dt,
                            failed: true,
                        })
                    }
                }
            }
        }
    }
}

/// Runs every configured estimator over the scenario.
///
/// Each estimator keeps its own belief; all share the initial belief, the
/// time-propagation model and the measurement stream. Solver errors fall
/// back to the KF update for that epoch and are counted in the summary.
pub fn run_comparison(cfg: &RunConfig, scenario: &Scenario) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let spec = cfg.info_spec()?;
    if scenario.initial_belief.dim() != spec.dim() {
        return Err(CliError::Config(format!(
            "scenario state has {} entries, expected {}",
            scenario.initial_belief.dim(),
            spec.dim()
        )));
    }
    let model = discretize_pva(&PvaParams::new(scenario.trajectory.period, cfg.jerk_psd)?)?;
    let mut full_opts = cfg.bnb.options();
    full_opts.time_limit_s = cfg.full_raps_time_limit_s;
    let stepper = Stepper {
        spec: &spec,
        td: cfg.td()?,
        diag_opts: cfg.bnb.options(),
        full_opts,
    };
    let batches: Vec<MeasurementBatch<f64>> = (0..scenario.len())
        .map(|k| scenario.batch(k))
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(batches.len() * cfg.estimators.len());
    let mut stream_hash: Option<String> = None;
    let mut solver_errors = 0usize;
    let mut seen = Vec::new();
    for &e in &cfg.estimators {
        if seen.contains(&e) {
            continue;
        }
        seen.push(e);
        let mut hasher = Sha256::new();
        let mut belief = scenario.initial_belief.clone();
        for (k, batch) in batches.iter().enumerate() {
            if k > 0 {
                belief = propagate(&belief, &model)?;
            }
            hasher.update(batch_digest(batch));
            let step = stepper.step(e, &belief, batch)?;
            solver_errors += step.failed as usize;

            let inst = RapsInstance::from_belief(&belief, batch.clone(), spec.clone())?;
            let (risk, _) = optimal_risk_for_selection(&inst, &step.selection)?;
            let ones = SelectionVector::ones(batch.len());
            let (all_selected_risk, _) = optimal_risk_for_selection(&inst, &ones)?;
            let all_info = inst.batch.len();
            let all_selected_feasible = inst.satisfies(
                &raps_core::selector::posterior_information(&inst, &ones)?,
                RapsMode::Diag,
            )?;
            let td_sel = td_select(&belief, batch, &stepper.td)?;
            let (td_selection_risk, _) = optimal_risk_for_selection(&inst, &td_sel)?;
            let info = &step.update.information;
            let spec_met = inst.satisfies(info, RapsMode::Diag)?;
            let truth = &scenario.epochs[k].truth;
            let est = &step.update.estimate;
            records.push(EpochRecord {
                epoch: k,
                time_s: batch.time,
                estimator: e,
                sqrtinfo: [0, 1, 2].map(|j| info[(j, j)].sqrt()),
                risk,
                n_selected: step.selection.count_selected(),
                status: step.status,
                runtime_s: step.runtime_s,
                err: [0, 1, 2].map(|j| est[j] - truth[j]),
                measurements: all_info,
                gate_passed: td_sel.count_selected(),
                all_selected_risk,
                all_selected_feasible,
                td_selection_risk,
                spec_met,
            });
            belief = step.update.posterior;
        }
        let digest = hex(&hasher.finalize());
        match &stream_hash {
            None => stream_hash = Some(digest),
            Some(h) if *h != digest => {
                return Err(CliError::Solver(format!(
                    "measurement stream of {e} differs from the first estimator's"
                )))
            }
            Some(_) => {}
        }
    }

    let mut estimators = BTreeMap::new();
    for &e in &seen {
        let rs: Vec<&EpochRecord> = records.iter().filter(|r| r.estimator == e).collect();
        let n = rs.len().max(1) as f64;
        let mut status_counts = BTreeMap::new();
        for r in &rs {
            *status_counts.entry(r.status.clone()).or_insert(0) += 1;
        }
        let residuals: usize = rs.iter().map(|r| r.measurements).sum();
        let passed: usize = rs.iter().map(|r| r.gate_passed).sum();
        estimators.insert(
            e.name().to_string(),
            EstimatorSummary {
                epochs: rs.len(),
                mean_risk: rs.iter().map(|r| r.risk).sum::<f64>() / n,
                spec_satisfaction_rate: rs.iter().filter(|r| r.spec_met).count() as f64 / n,
                runtime: RuntimeStats::of(&rs.iter().map(|r| r.runtime_s).collect::<Vec<_>>()),
                status_counts,
                gate_pass_rate: if residuals == 0 {
                    0.0
                } else {
                    passed as f64 / residuals as f64
                },
                residuals,
            },
        );
    }
    let diag_times: Vec<f64> = records
        .iter()
        .filter(|r| r.estimator == Estimator::DiagRaps)
        .map(|r| r.runtime_s)
        .collect();

    Ok(RunOutput {
        summary: RunSummary {
            provenance: Provenance::new(cfg.hash(), cfg.seed),
            scenario_seed: scenario.seed,
            epochs: batches.len(),
            satellites: scenario.satellites(),
            measurement_stream_sha256: stream_hash.unwrap_or_default(),
            solver_errors,
            estimators,
            diag_raps_runtime_histogram: histogram(&diag_times, HISTOGRAM_BIN_S),
        },
        records,
    })
}

/// Probability per fixed-width bin, from zero to the largest sample.
pub fn histogram(samples: &[f64], width: f64) -> Vec<HistogramBin> {
    if samples.is_empty() {
        return Vec::new();
    }
    let max = samples.iter().copied().fold(0.0, f64::max);
    let bins = (max / width).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        counts[((s / width).floor() as usize).min(bins - 1)] += 1;
    }
    let total = samples.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo_s: i as f64 * width,
            hi_s: (i + 1) as f64 * width,
            count,
            probability: count as f64 / total,
        })
        .collect()
}
