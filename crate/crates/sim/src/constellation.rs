use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{stream, SimError};

pub const STREAM_CONSTELLATION: u64 = 1;

/// Satellite directions, fixed for a run. Azimuth is measured from north
/// toward east.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constellation {
    /// rad, in `[0, 2π)`.
    pub azimuth: Vec<f64>,
    /// rad, in `[el_min, el_max]`.
    pub elevation: Vec<f64>,
}

impl Constellation {
    pub fn len(&self) -> usize {
        self.azimuth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.azimuth.is_empty()
    }
}

pub fn generate_constellation(m: usize, el_min: f64, el_max: f64, seed: u64) -> Result<Constellation, SimError> {
    if !(el_min > 0.0 && el_min < el_max && el_max <= std::f64::consts::FRAC_PI_2) {
        return Err(SimError::invalid(format!(
            "elevation range must satisfy 0 < {el_min} < {el_max} <= pi/2"
        )));
    }
    let mut rng: ChaCha8Rng = stream(seed, STREAM_CONSTELLATION);
    let mut azimuth = Vec::with_capacity(m);
    let mut elevation = Vec::with_capacity(m);
    for _ in 0..m {
        azimuth.push(rng.random_range(0.0..TAU));
        elevation.push(rng.random_range(el_min..=el_max));
    }
    Ok(Constellation { azimuth, elevation })
}

/// Unit line-of-sight row `(cos el cos az, cos el sin az, sin el, 0, …)`
/// of length `n`.
pub fn los_row(az: f64, el: f64, n: usize) -> Result<Vec<f64>, SimError> {
    if !(el > 0.0) || !az.is_finite() || el > std::f64::consts::FRAC_PI_2 {
        return Err(SimError::invalid(format!("elevation {el} outside (0, pi/2]")));
    }
    if n < 3 {
        return Err(SimError::invalid(format!("state length {n} has no position block")));
    }
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    let mut h = vec![0.0; n];
    h[0] = ce * ca;
    h[1] = ce * sa;
    h[2] = se;
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zenith_and_horizon_rows() {
        let h = los_row(1.234, FRAC_PI_2, 9).unwrap();
        assert!(h[0].abs() < 1e-16 && h[1].abs() < 1e-16 && h[2] == 1.0);
        let h = los_row(0.0, std::f64::consts::FRAC_PI_4, 9).unwrap();
        let s = 0.5f64.sqrt();
        assert!((h[0] - s).abs() < 1e-15 && h[1] == 0.0 && (h[2] - s).abs() < 1e-15);
        assert!(h[3..].iter().all(|&v| v == 0.0));
        assert!(los_row(0.0, 0.0, 9).is_err());
        assert!(los_row(0.0, 0.5, 2).is_err());
    }

    #[test]
    fn empty_and_deterministic() {
        let (lo, hi) = (5f64.to_radians(), 85f64.to_radians());
        assert!(generate_constellation(0, lo, hi, 3).unwrap().is_empty());
        assert_eq!(
            generate_constellation(12, lo, hi, 3).unwrap(),
            generate_constellation(12, lo, hi, 3).unwrap()
        );
        assert_ne!(
            generate_constellation(12, lo, hi, 3).unwrap(),
            generate_constellation(12, lo, hi, 4).unwrap()
        );
        assert!(generate_constellation(3, hi, lo, 0).is_err());
    }
}
