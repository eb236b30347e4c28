//! Position-velocity-acceleration kinematics driven by white-noise jerk.
//!
//! State ordering is `(p₁, p₂, p₃, v₁, v₂, v₃, a₁, a₂, a₃)`. Each axis is an
//! independent triple integrator with the same jerk spectral density.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;
use crate::types::StateBelief;

pub const PVA_AXES: usize = 3;
pub const PVA_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PvaParams<T> {
    /// Epoch period, seconds.
    pub period: T,
    /// Jerk power spectral density per axis, m²/s⁵.
    pub jerk_psd: T,
}

impl<T: Real> PvaParams<T> {
    pub fn new(period: T, jerk_psd: T) -> Result<Self> {
        let p = Self { period, jerk_psd };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > T::zero()) || !self.period.is_finite() {
            return Err(Error::InvalidParams(format!(
                "epoch period must be positive, got {}",
                self.period
            )));
        }
        if !(self.jerk_psd >= T::zero()) || !self.jerk_psd.is_finite() {
            return Err(Error::InvalidParams(format!(
                "jerk PSD must be non-negative, got {}",
                self.jerk_psd
            )));
        }
        Ok(())
    }
}

impl Default for PvaParams<f64> {
    fn default() -> Self {
        Self {
            period: 1.0,
            jerk_psd: 1.0,
        }
    }
}

/// Discrete-time model `x⁺ = F x + w`, `w ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteModel<T> {
    pub transition: Matrix<T>,
    pub process_noise: Matrix<T>,
    pub period: T,
}

/// Per-axis transition and noise blocks for period `t` and spectral density `s`.
pub fn axis_blocks<T: Real>(t: T, s: T) -> ([[T; 3]; 3], [[T; 3]; 3]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let half = T::lit(0.5);
    let f = [
        [T::one(), t, half * t2],
        [T::zero(), T::one(), t],
        [T::zero(), T::zero(), T::one()],
    ];
    let q = [
        [t5 / T::lit(20.0), t4 / T::lit(8.0), t3 / T::lit(6.0)],
        [t4 / T::lit(8.0), t3 / T::lit(3.0), half * t2],
        [t3 / T::lit(6.0), half * t2, t],
    ]
    .map(|row| row.map(|v| v * s));
    (f, q)
}

pub fn discretize_pva<T: Real>(params: &PvaParams<T>) -> Result<DiscreteModel<T>> {
    params.validate()?;
    let (fa, qa) = axis_blocks(params.period, params.jerk_psd);
    let mut f = Matrix::zeros(PVA_DIM, PVA_DIM);
    let mut q = Matrix::zeros(PVA_DIM, PVA_DIM);
    for axis in 0..PVA_AXES {
        for d in 0..3 {
            for e in 0..3 {
                f[(d * PVA_AXES + axis, e * PVA_AXES + axis)] = fa[d][e];
                q[(d * PVA_AXES + axis, e * PVA_AXES + axis)] = qa[d][e];
            }
        }
    }
    Ok(DiscreteModel {
        transition: f,
        process_noise: q,
        period: params.period,
    })
}

/// Time update: `x ← F x`, `P ← F P Fᵀ + Q`, `t ← t + T`.
pub fn propagate<T: Real>(belief: &StateBelief<T>, model: &DiscreteModel<T>) -> Result<StateBelief<T>> {
    let n = belief.dim();
    dim_check(
        model.transition.rows() == n
            && model.transition.cols() == n
            && model.process_noise.rows() == n
            && model.process_noise.cols() == n,
        || format!("model of order {} for a state of length {n}", model.transition.rows()),
    )?;
    let f = &model.transition;
    let mean = f.mul_vec(&belief.mean)?;
    let fp = f.matmul(&belief.covariance)?;
    let fpf = fp.matmul(&f.transpose())?;
    let covariance = (&fpf + &model.process_noise).symmetrize();
    Ok(StateBelief {
        mean,
        covariance,
        time: belief.time + model.period,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_integrator() {
        let m = discretize_pva(&PvaParams::new(1.0, 0.0).unwrap()).unwrap();
        assert!(m.process_noise.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(m.transition[(0, 3)], 1.0);
        assert_eq!(m.transition[(0, 6)], 0.5);
        assert_eq!(m.transition[(3, 6)], 1.0);
        assert_eq!(m.transition[(0, 1)], 0.0);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(PvaParams::new(0.0, 1.0).is_err());
        assert!(PvaParams::new(-1.0, 1.0).is_err());
        assert!(PvaParams::new(1.0, -1e-9).is_err());
        let bad = PvaParams {
            period: 0.0,
            jerk_psd: 1.0,
        };
        assert!(matches!(discretize_pva(&bad), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn unit_params_block_values() {
        let (_, q) = axis_blocks(1.0f64, 1.0);
        let expect = [[0.05, 0.125, 1.0 / 6.0], [0.125, 1.0 / 3.0, 0.5], [1.0 / 6.0, 0.5, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((q[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn polynomial_motion_without_noise() {
        let model = discretize_pva(&PvaParams::new(2.0, 0.0).unwrap()).unwrap();
        let mut mean = vec![0.0; 9];
        mean[0] = 1.0;
        mean[3] = 3.0;
        mean[6] = -1.0;
        let b = StateBelief::new(mean, Matrix::zeros(9, 9), 5.0).unwrap();
        let out = propagate(&b, &model).unwrap();
        assert_eq!(out.mean[0], 1.0 + 3.0 * 2.0 - 0.5 * 4.0);
        assert_eq!(out.mean[3], 3.0 - 2.0);
        assert_eq!(out.time, 7.0);
        assert!(out.covariance.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_model_adds_noise() {
        let model = DiscreteModel {
            transition: Matrix::identity(2),
            process_noise: Matrix::identity(2),
            period: 1.0,
        };
        let p = Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let b = StateBelief::new(vec![1.0, 2.0], p.clone(), 0.0).unwrap();
        let out = propagate(&b, &model).unwrap();
        assert_eq!(out.covariance, &p + &Matrix::identity(2));
        assert!(propagate(&StateBelief::new(vec![0.0], Matrix::identity(1), 0.0).unwrap(), &model).is_err());
    }
}
