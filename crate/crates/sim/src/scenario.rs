use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use raps_core::dynamics::{discretize_pva, PvaParams, PVA_DIM};
use raps_core::linalg::{dot, Cholesky, Matrix};
use raps_core::{MeasurementBatch, StateBelief};
use serde::{Deserialize, Serialize};

use crate::constellation::{generate_constellation, los_row, Constellation};
use crate::outliers::{outlier_sigma, relative_azimuth, OutlierModel};
use crate::trajectory::{generate_trajectory, Motion, TrajectoryParams};
use crate::{stream, SimError};

pub const SCHEMA_VERSION: u32 = 1;
pub const STREAM_MEASUREMENTS: u64 = 2;
pub const STREAM_INITIAL_BELIEF: u64 = 3;
pub const STREAM_MOTION: u64 = 4;

/// Everything needed to generate a scenario from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    pub trajectory: TrajectoryParams,
    pub motion: Motion,
    pub satellites: usize,
    pub el_min_deg: f64,
    pub el_max_deg: f64,
    /// Nominal measurement noise, m.
    pub sigma_noise: f64,
    pub outliers: OutlierModel,
    /// Diagonal of the initial covariance, SI units².
    pub initial_variance: Vec<f64>,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryParams::default(),
            motion: Motion::CityBlock,
            satellites: 50,
            el_min_deg: 5.0,
            el_max_deg: 85.0,
            sigma_noise: 1.5,
            outliers: OutlierModel::default(),
            initial_variance: vec![100.0, 100.0, 100.0, 25.0, 25.0, 25.0, 10.0, 10.0, 10.0],
        }
    }
}

impl ScenarioParams {
    pub fn generate(&self, seed: u64) -> Result<Scenario, SimError> {
        let c = generate_constellation(
            self.satellites,
            self.el_min_deg.to_radians(),
            self.el_max_deg.to_radians(),
            seed,
        )?;
        let truth = generate_truth(&self.trajectory, &self.motion, seed)?;
        assemble(
            truth,
            &self.trajectory,
            self.motion,
            &c,
            self.sigma_noise,
            &self.outliers,
            &self.initial_variance,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub time: f64,
    pub truth: Vec<f64>,
    pub values: Vec<f64>,
    /// Gaussian noise draws `η`, m.
    pub noise: Vec<f64>,
    /// Outlier draws `s`, m.
    pub outliers: Vec<f64>,
    /// Standard deviation each outlier was drawn with, m.
    pub outlier_sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub seed: u64,
    pub trajectory: TrajectoryParams,
    #[serde(default)]
    pub motion: Motion,
    pub sigma_noise: f64,
    pub outlier_model: OutlierModel,
    pub constellation: Constellation,
    /// Line-of-sight rows, one per satellite.
    pub rows: Matrix<f64>,
    pub initial_belief: StateBelief<f64>,
    pub epochs: Vec<Epoch>,
}

/// Generates truth, measurements `y = h x + η + s` and the initial belief
/// `x̄₀ ~ N(x₀, diag(initial_variance))`.
pub fn generate_scenario(
    traj: &TrajectoryParams,
    constellation: &Constellation,
    sigma_noise: f64,
    model: &OutlierModel,
    initial_variance: &[f64],
    seed: u64,
) -> Result<Scenario, SimError> {
    let truth = generate_trajectory(traj)?;
    assemble(
        truth,
        traj,
        Motion::CityBlock,
        constellation,
        sigma_noise,
        model,
        initial_variance,
        seed,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    truth: Vec<[f64; PVA_DIM]>,
    traj: &TrajectoryParams,
    motion: Motion,
    constellation: &Constellation,
    sigma_noise: f64,
    model: &OutlierModel,
    initial_variance: &[f64],
    seed: u64,
) -> Result<Scenario, SimError> {
    model.validate()?;
    if !(sigma_noise >= 0.0) || !sigma_noise.is_finite() {
        return Err(SimError::invalid(format!(
            "noise sigma must be non-negative, got {sigma_noise}"
        )));
    }
    if initial_variance.len() != PVA_DIM || initial_variance.iter().any(|v| !(*v > 0.0)) {
        return Err(SimError::invalid("initial variance needs 9 positive entries".into()));
    }
    let m = constellation.len();
    let mut rows = Matrix::zeros(m, PVA_DIM);
    for i in 0..m {
        let h = los_row(constellation.azimuth[i], constellation.elevation[i], PVA_DIM)?;
        rows.row_mut(i).copy_from_slice(&h);
    }

    let mut rng: ChaCha8Rng = stream(seed, STREAM_MEASUREMENTS);
    let mut epochs = Vec::with_capacity(truth.len());
    for (k, x) in truth.iter().enumerate() {
        let mut values = Vec::with_capacity(m);
        let mut noise = Vec::with_capacity(m);
        let mut outliers = Vec::with_capacity(m);
        let mut spread = Vec::with_capacity(m);
        for i in 0..m {
            let psi = relative_azimuth(constellation.azimuth[i], x[0], x[1]);
            let s_sigma = outlier_sigma(model, constellation.elevation[i], psi)?;
            let eta = sigma_noise * rng.sample::<f64, _>(StandardNormal);
            let s = s_sigma * rng.sample::<f64, _>(StandardNormal);
            values.push(dot(rows.row(i), x) + eta + s);
            noise.push(eta);
            outliers.push(s);
            spread.push(s_sigma);
        }
        epochs.push(Epoch {
            time: k as f64 * traj.period,
            truth: x.to_vec(),
            values,
            noise,
            outliers,
            outlier_sigma: spread,
        });
    }

    let mut rng: ChaCha8Rng = stream(seed, STREAM_INITIAL_BELIEF);
    let x0 = truth.first().copied().unwrap_or([0.0; PVA_DIM]);
    let mean = x0
        .iter()
        .zip(initial_variance)
        .map(|(&t, &v)| t + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let initial_belief = StateBelief::new(mean, Matrix::from_diag(initial_variance), 0.0)?;

    Ok(Scenario {
        schema_version: SCHEMA_VERSION,
        seed,
        trajectory: *traj,
        motion,
        sigma_noise,
        outlier_model: *model,
        constellation: constellation.clone(),
        rows,
        initial_belief,
        epochs,
    })
}

/// Truth states for `motion`; the random-jerk variant draws from its own
/// stream so the measurement and initial-belief draws are unchanged.
pub fn generate_truth(traj: &TrajectoryParams, motion: &Motion, seed: u64) -> Result<Vec<[f64; PVA_DIM]>, SimError> {
    let path = generate_trajectory(traj)?;
    let Motion::RandomJerk { jerk_psd } = *motion else {
        return Ok(path);
    };
    if !(jerk_psd > 0.0) || !jerk_psd.is_finite() {
        return Err(SimError::invalid(format!(
            "jerk spectral density must be positive, got {jerk_psd}"
        )));
    }
    let model = discretize_pva(&PvaParams::new(traj.period, jerk_psd)?)?;
    let chol = Cholesky::factor(&model.process_noise)?;
    let l = chol.factor_l();
    let mut rng: ChaCha8Rng = stream(seed, STREAM_MOTION);
    let mut out = Vec::with_capacity(path.len());
    let mut x = path.first().copied().unwrap_or([0.0; PVA_DIM]);
    for k in 0..path.len() {
        if k > 0 {
            let fx = model.transition.mul_vec(&x)?;
            let w: Vec<f64> = (0..PVA_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let lw = l.mul_vec(&w)?;
            for j in 0..PVA_DIM {
                x[j] = fx[j] + lw[j];
            }
        }
        out.push(x);
    }
    Ok(out)
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn satellites(&self) -> usize {
        self.rows.rows()
    }

    /// Measurements of epoch `k`, all with the nominal noise sigma.
    pub fn batch(&self, k: usize) -> Result<MeasurementBatch<f64>, SimError> {
        let e = &self.epochs[k];
        Ok(MeasurementBatch::new(
            e.values.clone(),
            self.rows.clone(),
            vec![self.sigma_noise; self.satellites()],
            e.time,
        )?)
    }

    pub fn to_json(&self) -> Result<String, SimError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, SimError> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let h: Header = serde_json::from_str(s)?;
        if h.schema_version != SCHEMA_VERSION {
            return Err(SimError::Schema {
                found: h.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
