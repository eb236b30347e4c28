//! Scenario generator: a vehicle circling a city block, a fixed random
//! satellite constellation observed through unit line-of-sight rows, white
//! measurement noise, and outliers whose spread grows at low elevation and
//! toward a reflector at the block center.
//!
//! All randomness comes from ChaCha8 streams keyed by the scenario seed, so a
//! seed fully determines the scenario.

pub mod constellation;
pub mod outliers;
pub mod scenario;
pub mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use constellation::{generate_constellation, los_row, Constellation};
pub use outliers::{outlier_sigma, relative_azimuth, OutlierModel};
pub use scenario::{generate_scenario, generate_truth, Epoch, Scenario, ScenarioParams, SCHEMA_VERSION};
pub use trajectory::{generate_trajectory, Motion, TrajectoryParams};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Core(#[from] raps_core::Error),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("scenario schema version {found}, expected {expected}")]
    Schema { found: u32, expected: u32 },
}

impl SimError {
    pub(crate) fn invalid(msg: String) -> Self {
        SimError::InvalidParams(msg)
    }
}

/// Independent generator for one purpose within a seeded scenario.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
