//! Multipath-style outlier spread as a function of elevation and of azimuth
//! relative to a reflector at the block center.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierModel {
    /// m·rad.
    pub a_el: f64,
    /// m·rad.
    pub a_az: f64,
    /// rad.
    pub epsilon: f64,
    /// Swap the angle arguments of the two terms.
    pub literal_formulas: bool,
}

impl Default for OutlierModel {
    fn default() -> Self {
        Self {
            a_el: 0.6,
            a_az: 0.3,
            epsilon: 0.05,
            literal_formulas: false,
        }
    }
}

impl OutlierModel {
    /// No outliers at all.
    pub fn none() -> Self {
        Self {
            a_el: 0.0,
            a_az: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.epsilon > 0.0 && self.a_el >= 0.0 && self.a_az >= 0.0 && self.epsilon.is_finite() {
            Ok(())
        } else {
            Err(SimError::invalid(format!("invalid outlier model: {self:?}")))
        }
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Satellite azimuth minus the bearing from the vehicle at `(n, e)` to the
/// origin.
pub fn relative_azimuth(az: f64, n: f64, e: f64) -> f64 {
    wrap_angle(az - (-e).atan2(-n))
}

/// `σ_s = sqrt(σ_el² + σ_az²)`, with `σ_el = a_el/(θ + ε)` and
/// `σ_az = a_az/(|ψ| + ε)`.
pub fn outlier_sigma(model: &OutlierModel, theta: f64, psi_rel: f64) -> Result<f64, SimError> {
    model.validate()?;
    if !(theta > 0.0) || !(psi_rel > -PI && psi_rel <= PI) {
        return Err(SimError::invalid(format!(
            "angles out of range: theta {theta}, psi {psi_rel}"
        )));
    }
    let (el_arg, az_arg) = if model.literal_formulas {
        (psi_rel.abs(), theta)
    } else {
        (theta, psi_rel.abs())
    };
    let s_el = model.a_el / (el_arg + model.epsilon);
    let s_az = model.a_az / (az_arg + model.epsilon);
    Ok(s_el.hypot(s_az))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_terms() {
        let m = OutlierModel::default();
        let s = outlier_sigma(&m, 0.55, 0.25).unwrap();
        assert!((s - 2f64.sqrt()).abs() < 1e-12);
        let lit = OutlierModel {
            literal_formulas: true,
            ..m
        };
        assert!((outlier_sigma(&lit, 0.25, 0.55).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn high_and_opposite() {
        let s = outlier_sigma(&OutlierModel::default(), std::f64::consts::FRAC_PI_2, PI).unwrap();
        assert!((s - 0.382).abs() < 5e-4, "{s}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = OutlierModel::default();
        assert!(outlier_sigma(&m, 0.0, 0.0).is_err());
        assert!(outlier_sigma(&m, 0.1, -PI).is_err());
        let bad = OutlierModel { epsilon: 0.0, ..m };
        assert!(outlier_sigma(&bad, 0.1, 0.0).is_err());
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        // vehicle due north of the origin: the reflector bears south
        assert!((relative_azimuth(PI, 100.0, 0.0)).abs() < 1e-15);
    }
}
