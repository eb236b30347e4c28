//! Selection-weighted MAP measurement update and the two baseline
//! estimators built on it: the Kalman filter (every measurement used) and
//! the Kalman filter with threshold decisions.
//!
//! Updates are computed in information form:
//!
//! ```text
//! J⁺ = J⁻ + Σ bᵢ hᵢᵀhᵢ / σᵢ²
//! x̂  = x̄ + (J⁺)⁻¹ Σ bᵢ hᵢᵀ (yᵢ − hᵢ x̄) / σᵢ²
//! ```
//!
//! which is the exact minimizer of the selection-weighted MAP cost
//! `Σ bᵢ ((yᵢ − hᵢ x)/σᵢ)² + (x − x̄)ᵀ J⁻ (x − x̄)`.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{axpy, dot, spd_inverse, Cholesky, Matrix};
use crate::scalar::Real;
use crate::types::{MeasurementBatch, SelectionVector, StateBelief};

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult<T> {
    pub estimate: Vec<T>,
    /// Posterior belief: mean = estimate, covariance = (J⁺)⁻¹.
    pub posterior: StateBelief<T>,
    /// Posterior information J⁺.
    pub information: Matrix<T>,
}

fn check_dims<T: Real>(n: usize, batch: &MeasurementBatch<T>, weights: usize) -> Result<()> {
    dim_check(batch.state_dim() == n, || {
        format!("measurement rows have {} columns, state has {n}", batch.state_dim())
    })?;
    dim_check(weights == batch.len(), || {
        format!("{weights} selection entries for {} measurements", batch.len())
    })
}

/// `J⁻ + Σ wᵢ hᵢᵀhᵢ/σᵢ²`, valid for relaxed weights.
pub fn weighted_information<T: Real>(
    prior_info: &Matrix<T>,
    batch: &MeasurementBatch<T>,
    weights: &[T],
) -> Result<Matrix<T>> {
    check_dims(prior_info.rows(), batch, weights.len())?;
    let mut info = prior_info.clone();
    for (i, &w) in weights.iter().enumerate() {
        if w != T::zero() {
            let s = batch.sigmas[i];
            let h = batch.row(i);
            info.add_outer(w / (s * s), h, h);
        }
    }
    Ok(info)
}

/// Selection-weighted MAP update from a prior given in information form.
pub fn information_update<T: Real>(
    prior_mean: &[T],
    prior_info: &Matrix<T>,
    batch: &MeasurementBatch<T>,
    weights: &[T],
    time: T,
) -> Result<UpdateResult<T>> {
    let n = prior_mean.len();
    dim_check(prior_info.rows() == n && prior_info.cols() == n, || {
        format!(
            "prior information is {}x{} for state length {n}",
            prior_info.rows(),
            prior_info.cols()
        )
    })?;
    check_dims(n, batch, weights.len())?;

    let info = weighted_information(prior_info, batch, weights)?;
    let mut grad = vec![T::zero(); n];
    for (i, &w) in weights.iter().enumerate() {
        if w != T::zero() {
            let s = batch.sigmas[i];
            let h = batch.row(i);
            let innov = batch.values[i] - dot(h, prior_mean);
            axpy(w * innov / (s * s), h, &mut grad);
        }
    }
    let chol = Cholesky::factor(&info)?;
    chol.solve_in_place(&mut grad);
    let estimate: Vec<T> = prior_mean.iter().zip(&grad).map(|(&a, &d)| a + d).collect();
    let covariance = chol.inverse();
    Ok(UpdateResult {
        posterior: StateBelief {
            mean: estimate.clone(),
            covariance,
            time,
        },
        estimate,
        information: info,
    })
}

/// `Σ wᵢ ((yᵢ − hᵢ x)/σᵢ)² + (x − x̄)ᵀ J⁻ (x − x̄)`.
pub fn weighted_map_cost<T: Real>(
    prior_mean: &[T],
    prior_info: &Matrix<T>,
    batch: &MeasurementBatch<T>,
    weights: &[T],
    x: &[T],
) -> Result<T> {
    let n = prior_mean.len();
    dim_check(x.len() == n, || format!("state of length {} for order {n}", x.len()))?;
    check_dims(n, batch, weights.len())?;
    let dx: Vec<T> = x.iter().zip(prior_mean).map(|(&a, &b)| a - b).collect();
    let mut cost = prior_info.quad_form(&dx);
    for (i, &w) in weights.iter().enumerate() {
        if w != T::zero() {
            let r = (batch.values[i] - dot(batch.row(i), x)) / batch.sigmas[i];
            cost += w * r * r;
        }
    }
    Ok(cost)
}

/// MAP update of `belief` using the measurements selected by binary `b`.
pub fn map_update_with_selection<T: Real>(
    belief: &StateBelief<T>,
    batch: &MeasurementBatch<T>,
    b: &SelectionVector<T>,
) -> Result<UpdateResult<T>> {
    b.require_binary()?;
    check_dims(belief.dim(), batch, b.len())?;
    let prior_info = spd_inverse(&belief.covariance)?;
    information_update(&belief.mean, &prior_info, batch, b.entries(), belief.time)
}

/// Standard Kalman filter measurement update (`b = 1`).
pub fn kf_update<T: Real>(belief: &StateBelief<T>, batch: &MeasurementBatch<T>) -> Result<UpdateResult<T>> {
    map_update_with_selection(belief, batch, &SelectionVector::ones(batch.len()))
}

/// How the threshold test normalizes the innovation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdNormalization {
    /// `sqrt(hᵢ P⁻ hᵢᵀ + σᵢ²)`.
    #[default]
    Innovation,
    /// `σᵢ` alone.
    MeasurementSigma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig<T> {
    /// Gate, in standard deviations of the normalized residual.
    pub lambda: T,
    #[serde(default)]
    pub normalization: TdNormalization,
}

impl<T: Real> TdConfig<T> {
    pub fn new(lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) {
            return Err(Error::InvalidParams(format!(
                "TD lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            normalization: TdNormalization::Innovation,
        })
    }
}

impl Default for TdConfig<f64> {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            normalization: TdNormalization::Innovation,
        }
    }
}

/// Normalized prior residuals `|yᵢ − hᵢ x̄| / sᵢ`.
pub fn normalized_innovations<T: Real>(
    belief: &StateBelief<T>,
    batch: &MeasurementBatch<T>,
    normalization: TdNormalization,
) -> Result<Vec<T>> {
    check_dims(belief.dim(), batch, batch.len())?;
    Ok((0..batch.len())
        .map(|i| {
            let h = batch.row(i);
            let innov = batch.values[i] - dot(h, &belief.mean);
            let sigma = batch.sigmas[i];
            let scale = match normalization {
                TdNormalization::Innovation => (belief.covariance.quad_form(h) + sigma * sigma).sqrt(),
                TdNormalization::MeasurementSigma => sigma,
            };
            innov.abs() / scale
        })
        .collect())
}

/// Threshold decisions: each measurement is tested independently against
/// the prior and kept iff its normalized residual is at most `λ`.
pub fn td_select<T: Real>(
    belief: &StateBelief<T>,
    batch: &MeasurementBatch<T>,
    cfg: &TdConfig<T>,
) -> Result<SelectionVector<T>> {
    let r = normalized_innovations(belief, batch, cfg.normalization)?;
    Ok(SelectionVector::from_bools(
        &r.iter().map(|&v| v <= cfg.lambda).collect::<Vec<_>>(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdOutcome<T> {
    pub selection: SelectionVector<T>,
    pub update: UpdateResult<T>,
}

pub fn td_update<T: Real>(
    belief: &StateBelief<T>,
    batch: &MeasurementBatch<T>,
    cfg: &TdConfig<T>,
) -> Result<TdOutcome<T>> {
    let selection = td_select(belief, batch, cfg)?;
    let update = map_update_with_selection(belief, batch, &selection)?;
    Ok(TdOutcome { selection, update })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_belief() -> StateBelief<f64> {
        StateBelief::new(vec![0.0], Matrix::identity(1), 0.0).unwrap()
    }

    fn scalar_batch(ys: &[f64]) -> MeasurementBatch<f64> {
        let rows = Matrix::from_rows(&ys.iter().map(|_| vec![1.0]).collect::<Vec<_>>()).unwrap();
        MeasurementBatch::new(ys.to_vec(), rows, vec![1.0; ys.len()], 0.0).unwrap()
    }

    #[test]
    fn scalar_fusion() {
        let out = kf_update(&scalar_belief(), &scalar_batch(&[1.0])).unwrap();
        assert!((out.estimate[0] - 0.5).abs() < 1e-15);
        assert!((out.posterior.covariance[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((out.information[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_selection_leaves_prior() {
        let belief = scalar_belief();
        let out = map_update_with_selection(&belief, &scalar_batch(&[3.0]), &SelectionVector::zeros(1)).unwrap();
        assert_eq!(out.estimate, belief.mean);
        assert_eq!(out.information, Matrix::identity(1));

        let none = kf_update(&belief, &MeasurementBatch::empty(1, 0.0)).unwrap();
        assert_eq!(none.estimate, belief.mean);
        assert_eq!(none.posterior.covariance, belief.covariance);
    }

    #[test]
    fn singular_prior_is_rejected() {
        let belief = StateBelief::new(vec![0.0], Matrix::zeros(1, 1), 0.0).unwrap();
        assert!(matches!(
            kf_update(&belief, &scalar_batch(&[1.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn relaxed_selection_is_refused() {
        let b = SelectionVector::relaxed(vec![0.5]).unwrap();
        assert!(map_update_with_selection(&scalar_belief(), &scalar_batch(&[1.0]), &b).is_err());
    }

    #[test]
    fn td_gate_two_sigma() {
        // innovation variance = 1 (prior) + 1 (noise) so s = sqrt(2)
        let s = 2f64.sqrt();
        let batch = scalar_batch(&[0.0, 3.0 * s]);
        let b = td_select(&scalar_belief(), &batch, &TdConfig::new(2.0).unwrap()).unwrap();
        assert_eq!(b.to_bools(), vec![true, false]);

        let all = td_select(&scalar_belief(), &batch, &TdConfig::new(1e9).unwrap()).unwrap();
        assert_eq!(all.to_bools(), vec![true, true]);
    }

    #[test]
    fn td_sigma_only_normalization() {
        let cfg = TdConfig {
            lambda: 2.0,
            normalization: TdNormalization::MeasurementSigma,
        };
        // |1.9| / 1 passes, |2.1| / 1 fails even though sqrt(2) normalization would pass it
        let b = td_select(&scalar_belief(), &scalar_batch(&[1.9, 2.1]), &cfg).unwrap();
        assert_eq!(b.to_bools(), vec![true, false]);
        assert!(TdConfig::new(0.0).is_err());
    }
}
