//! Constant-speed drive around a rounded square block.
//!
//! The horizontal path is a square of side `edge` centered at the origin
//! with quarter-circle fillets of radius `fillet` at the corners, traversed
//! at constant speed starting from the middle of the `N = edge/2` side
//! heading east. The vertical coordinate follows a slow sinusoid.

use std::f64::consts::{FRAC_PI_2, PI};

use raps_core::dynamics::PVA_DIM;
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryParams {
    /// Side length, m.
    pub edge: f64,
    /// Corner radius, m.
    pub fillet: f64,
    /// m/s.
    pub speed: f64,
    /// Vertical amplitude, m.
    pub amplitude: f64,
    /// Vertical period, s.
    pub vertical_period: f64,
    /// Epoch period, s.
    pub period: f64,
    pub epochs: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            edge: 200.0,
            fillet: 10.0,
            speed: 10.0,
            amplitude: 2.0,
            vertical_period: 120.0,
            period: 1.0,
            epochs: 240,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.fillet > 0.0
            && self.edge > 2.0 * self.fillet
            && self.speed > 0.0
            && self.amplitude >= 0.0
            && self.vertical_period > 0.0
            && self.period > 0.0
            && [
                self.edge,
                self.fillet,
                self.speed,
                self.amplitude,
                self.vertical_period,
                self.period,
            ]
            .iter()
            .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SimError::invalid(format!("invalid trajectory parameters: {self:?}")))
        }
    }

    fn straight(&self) -> f64 {
        self.edge - 2.0 * self.fillet
    }

    /// `4 (edge − 2 r) + 2π r`.
    pub fn perimeter(&self) -> f64 {
        4.0 * self.straight() + 2.0 * PI * self.fillet
    }

    pub fn lap_time(&self) -> f64 {
        self.perimeter() / self.speed
    }

    /// Exact state `(p, v, a)` at time `t`, ordered `(N, E, D)` within each
    /// group.
    pub fn state_at(&self, t: f64) -> [f64; PVA_DIM] {
        let (p, v, a) = self.horizontal(t);
        let w = 2.0 * PI / self.vertical_period;
        let (s, c) = (w * t).sin_cos();
        [
            p[0],
            p[1],
            self.amplitude * s,
            v[0],
            v[1],
            self.amplitude * w * c,
            a[0],
            a[1],
            -self.amplitude * w * w * s,
        ]
    }

    fn horizontal(&self, t: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let half = self.edge / 2.0;
        let r = self.fillet;
        let l = self.straight();
        let side = l + FRAC_PI_2 * r;
        let u = (self.speed * t + l / 2.0).rem_euclid(self.perimeter());
        let k = ((u / side).floor() as usize).min(3);
        let u = u - k as f64 * side;
        let v = self.speed;

        let (p, vel, acc) = if u < l {
            ([half, -l / 2.0 + u], [0.0, v], [0.0, 0.0])
        } else {
            let th = (u - l) / r;
            let (s, c) = th.sin_cos();
            (
                [half - r + r * c, l / 2.0 + r * s],
                [-v * s, v * c],
                [-v * v / r * c, -v * v / r * s],
            )
        };
        // side k is side 0 turned k quarter turns clockwise in the (N, E) plane
        let rot = |x: [f64; 2]| {
            let mut y = x;
            for _ in 0..k {
                y = [-y[1], y[0]];
            }
            y
        };
        (rot(p), rot(vel), rot(acc))
    }
}

/// How the truth evolves between epochs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Motion {
    /// The rounded-square drive.
    #[default]
    CityBlock,
    /// Starts like the drive, then follows the discretized PVA model with
    /// white jerk of this spectral density (m²/s⁵ per axis), so the truth
    /// matches a filter built on the same model.
    RandomJerk { jerk_psd: f64 },
}

/// Truth state at each epoch `k T`, `k = 0..epochs`.
pub fn generate_trajectory(p: &TrajectoryParams) -> Result<Vec<[f64; PVA_DIM]>, SimError> {
    p.validate()?;
    Ok((0..p.epochs).map(|k| p.state_at(k as f64 * p.period)).collect())
}
