//! Domain types shared across the estimators and the selection solvers.

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::scalar::Real;

pub(crate) fn sym_tol<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(100.0))
}

/// Gaussian belief over the state: mean, covariance and epoch time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBelief<T> {
    pub mean: Vec<T>,
    pub covariance: Matrix<T>,
    pub time: T,
}

impl<T: Real> StateBelief<T> {
    /// Checks shapes and symmetry; positive definiteness is checked by the
    /// operations that need it (every measurement update).
    pub fn new(mean: Vec<T>, covariance: Matrix<T>, time: T) -> Result<Self> {
        let n = mean.len();
        dim_check(n >= 1, || "state dimension must be at least 1".into())?;
        dim_check(covariance.rows() == n && covariance.cols() == n, || {
            format!(
                "covariance is {}x{} for a state of length {n}",
                covariance.rows(),
                covariance.cols()
            )
        })?;
        if !covariance.is_symmetric(sym_tol()) {
            return Err(Error::InvalidParams("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            covariance: covariance.symmetrize(),
            time,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Measurements collected at one epoch: `y = H x + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBatch<T> {
    pub values: Vec<T>,
    /// One row `h_i` per measurement.
    pub rows: Matrix<T>,
    /// Noise standard deviations, meters.
    pub sigmas: Vec<T>,
    pub time: T,
}

impl<T: Real> MeasurementBatch<T> {
    pub fn new(values: Vec<T>, rows: Matrix<T>, sigmas: Vec<T>, time: T) -> Result<Self> {
        let m = values.len();
        dim_check(rows.rows() == m && sigmas.len() == m, || {
            format!("{m} values, {} rows and {} sigmas", rows.rows(), sigmas.len())
        })?;
        if let Some(i) = sigmas.iter().position(|s| !(*s > T::zero())) {
            return Err(Error::InvalidParams(format!("measurement {i} has non-positive sigma")));
        }
        Ok(Self {
            values,
            rows,
            sigmas,
            time,
        })
    }

    pub fn empty(state_dim: usize, time: T) -> Self {
        Self {
            values: Vec::new(),
            rows: Matrix::zeros(0, state_dim),
            sigmas: Vec::new(),
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.rows.row(i)
    }

    /// Keeps the measurements at `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let rows = Matrix::from_fn(indices.len(), self.state_dim(), |r, c| self.rows[(indices[r], c)]);
        Self {
            values: indices.iter().map(|&i| self.values[i]).collect(),
            rows,
            sigmas: indices.iter().map(|&i| self.sigmas[i]).collect(),
            time: self.time,
        }
    }

    /// True when every row is a unit vector.
    pub fn rows_are_unit(&self, tol: T) -> bool {
        (0..self.len()).all(|i| (norm2(self.row(i)) - T::one()).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    Binary,
    Relaxed,
}

/// Per-measurement usage decisions `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionVector<T> {
    entries: Vec<T>,
    mode: SelectionMode,
}

impl<T: Real> SelectionVector<T> {
    pub fn ones(m: usize) -> Self {
        Self {
            entries: vec![T::one(); m],
            mode: SelectionMode::Binary,
        }
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            entries: vec![T::zero(); m],
            mode: SelectionMode::Binary,
        }
    }

    pub fn from_bools(b: &[bool]) -> Self {
        Self {
            entries: b.iter().map(|&s| if s { T::one() } else { T::zero() }).collect(),
            mode: SelectionMode::Binary,
        }
    }

    /// Relaxed selection; entries must lie in `[0, 1]` within `1e-9` and are
    /// clamped into the interval.
    pub fn relaxed(entries: Vec<T>) -> Result<Self> {
        let tol = T::lit(1e-9);
        if let Some(i) = entries.iter().position(|&b| !(b >= -tol && b <= T::one() + tol)) {
            return Err(Error::InvalidParams(format!(
                "relaxed selection entry {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            entries: entries.into_iter().map(|b| b.max(T::zero()).min(T::one())).collect(),
            mode: SelectionMode::Relaxed,
        })
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn is_binary(&self) -> bool {
        self.mode == SelectionMode::Binary
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> T {
        self.entries[i]
    }

    /// Binary view; relaxed entries are read as selected when ≥ 0.5.
    pub fn to_bools(&self) -> Vec<bool> {
        self.entries.iter().map(|&b| b >= T::lit(0.5)).collect()
    }

    pub fn count_selected(&self) -> usize {
        self.to_bools().into_iter().filter(|&s| s).count()
    }

    pub fn selected_indices(&self) -> Vec<usize> {
        self.to_bools()
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| s.then_some(i))
            .collect()
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::InvalidParams("binary selection required".into()))
        }
    }
}

/// Lower bound on the posterior information matrix.
///
/// `diag_lower_bound[j]` bounds `J[j][j]` (zero leaves state `j`
/// unconstrained). The matrix form, used by the full-matrix variant, is the
/// diagonal embedding unless a general matrix is supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoSpec<T> {
    pub diag_lower_bound: Vec<T>,
    general: Option<Matrix<T>>,
}

impl<T: Real> InfoSpec<T> {
    pub fn new(diag_lower_bound: Vec<T>) -> Result<Self> {
        if let Some(j) = diag_lower_bound.iter().position(|v| !(*v >= T::zero())) {
            return Err(Error::InvalidParams(format!(
                "information bound {j} is negative or NaN"
            )));
        }
        Ok(Self {
            diag_lower_bound,
            general: None,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            diag_lower_bound: vec![T::zero(); n],
            general: None,
        }
    }

    /// Position-only bound for a state whose first entries are positions.
    pub fn leading(bounds: &[T], n: usize) -> Result<Self> {
        dim_check(bounds.len() <= n, || {
            format!("{} bounds for a state of length {n}", bounds.len())
        })?;
        let mut d = vec![T::zero(); n];
        d[..bounds.len()].copy_from_slice(bounds);
        Self::new(d)
    }

    /// General symmetric positive semidefinite matrix bound. The diagonal
    /// bound is taken from its diagonal.
    pub fn general(matrix: Matrix<T>) -> Result<Self> {
        if !matrix.is_symmetric(sym_tol()) {
            return Err(Error::InvalidParams("matrix bound is not symmetric".into()));
        }
        let mut spec = Self::new(matrix.diagonal())?;
        spec.general = Some(matrix.symmetrize());
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.diag_lower_bound.len()
    }

    pub fn is_general(&self) -> bool {
        self.general.is_some()
    }

    pub fn matrix(&self) -> Matrix<T> {
        match &self.general {
            Some(m) => m.clone(),
            None => Matrix::from_diag(&self.diag_lower_bound),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.general {
            Some(m) => m.as_slice().iter().all(|&v| v == T::zero()),
            None => self.diag_lower_bound.iter().all(|&v| v == T::zero()),
        }
    }

    /// `Σ_j max(0, J_d[j] − J[j][j])`.
    pub fn diag_violation(&self, info: &Matrix<T>) -> T {
        self.diag_lower_bound
            .iter()
            .enumerate()
            .map(|(j, &d)| (d - info[(j, j)]).max(T::zero()))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    InfeasibleSpec,
    IterationLimit,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "Optimal",
            SolveStatus::InfeasibleSpec => "InfeasibleSpec",
            SolveStatus::IterationLimit => "IterationLimit",
        })
    }
}

/// Outcome of a measurement-selection solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport<T> {
    pub selection: SelectionVector<T>,
    pub estimate: Vec<T>,
    pub posterior_information: Matrix<T>,
    pub risk: T,
    pub status: SolveStatus,
    pub nodes_explored: usize,
    /// Upper bound minus best open lower bound when the search stopped.
    pub gap: T,
    pub wall_time_s: f64,
}
