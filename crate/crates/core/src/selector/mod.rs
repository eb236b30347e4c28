//! Risk-averse, performance-specified measurement selection.
//!
//! For a prior `(x̄, J⁻)` and a batch `(y, H, σ)`, the risk of a binary
//! selection `b` at state `x` is
//!
//! ```text
//! R(b, x) = Σ bᵢ ((yᵢ − hᵢ x)/σᵢ)² + (x − x̄)ᵀ J⁻ (x − x̄)
//! ```
//!
//! and the selector minimizes it over `b ∈ {0,1}ᵐ` and `x` subject to a
//! lower bound on `J(b) = J⁻ + Σ bᵢ hᵢᵀhᵢ/σᵢ²`: elementwise on the diagonal
//! ([`solve_diag_raps`]) or as the matrix inequality `J(b) ⪰ J_d`
//! ([`solve_full_raps`]). Both are solved exactly by [`bnb`]; [`exhaustive`]
//! enumerates all selections and serves as the reference for small `m`.
//!
//! Since `min_x R(b, x)` only grows when measurements are added and `J(b)`
//! is monotone in `b`, a selection that already satisfies the bound is
//! optimal within every superset of it. Branch-and-bound relies on this.

pub mod bnb;
pub mod exhaustive;
mod relaxation;

use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::estimators::{information_update, weighted_information, weighted_map_cost};
use crate::linalg::{dot, spd_inverse, sym_eig_min, Cholesky, Matrix};
use crate::scalar::Real;
use crate::types::{InfoSpec, MeasurementBatch, SelectionVector, StateBelief};

pub use bnb::{solve_diag_raps, solve_full_raps, BnbOptions, BranchRule, NodeOrder};
pub use exhaustive::{exhaustive_raps, EXHAUSTIVE_MAX_M};

/// Which information constraint is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RapsMode {
    /// `J(b)[j][j] ≥ J_d[j]` for every `j`.
    Diag,
    /// `J(b) − J_d ⪰ 0`.
    Full,
}

/// Threshold below which a minimum eigenvalue counts as a violated LMI.
pub const LMI_CUT_TOL: f64 = 1e-8;
/// Feasibility tolerance for accepting a binary selection under the LMI.
pub const LMI_FEAS_TOL: f64 = 1e-9;
/// Relative slack on the diagonal information constraint.
pub const DIAG_FEAS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsInstance<T> {
    pub prior_mean: Vec<T>,
    /// Prior information `J⁻ = (P⁻)⁻¹`.
    pub prior_info: Matrix<T>,
    pub batch: MeasurementBatch<T>,
    pub spec: InfoSpec<T>,
}

impl<T: Real> RapsInstance<T> {
    pub fn new(
        prior_mean: Vec<T>,
        prior_info: Matrix<T>,
        batch: MeasurementBatch<T>,
        spec: InfoSpec<T>,
    ) -> Result<Self> {
        let n = prior_mean.len();
        dim_check(prior_info.rows() == n && prior_info.cols() == n, || {
            format!(
                "prior information is {}x{} for state length {n}",
                prior_info.rows(),
                prior_info.cols()
            )
        })?;
        dim_check(batch.state_dim() == n, || {
            format!("measurement rows have {} columns, state has {n}", batch.state_dim())
        })?;
        dim_check(spec.dim() == n, || {
            format!("spec has {} entries, state has {n}", spec.dim())
        })?;
        Cholesky::factor(&prior_info)?;
        Ok(Self {
            prior_mean,
            prior_info: prior_info.symmetrize(),
            batch,
            spec,
        })
    }

    /// Builds the instance from a covariance-form prior.
    pub fn from_belief(belief: &StateBelief<T>, batch: MeasurementBatch<T>, spec: InfoSpec<T>) -> Result<Self> {
        let info = spd_inverse(&belief.covariance)?;
        Self::new(belief.mean.clone(), info, batch, spec)
    }

    pub fn n(&self) -> usize {
        self.prior_mean.len()
    }

    pub fn m(&self) -> usize {
        self.batch.len()
    }

    pub fn prior_covariance(&self) -> Result<Matrix<T>> {
        spd_inverse(&self.prior_info)
    }

    /// Prior residuals `yᵢ − hᵢ x̄`.
    pub fn innovations(&self) -> Vec<T> {
        (0..self.m())
            .map(|i| self.batch.values[i] - dot(self.batch.row(i), &self.prior_mean))
            .collect()
    }

    fn weights(bools: &[bool]) -> Vec<T> {
        bools.iter().map(|&s| if s { T::one() } else { T::zero() }).collect()
    }

    pub(crate) fn information_of(&self, bools: &[bool]) -> Matrix<T> {
        weighted_information(&self.prior_info, &self.batch, &Self::weights(bools))
            .expect("selection length checked by caller")
    }

    /// Whether `info` meets the information bound under `mode`.
    pub fn satisfies(&self, info: &Matrix<T>, mode: RapsMode) -> Result<bool> {
        match mode {
            RapsMode::Diag => Ok(self
                .spec
                .diag_lower_bound
                .iter()
                .enumerate()
                .all(|(j, &d)| info[(j, j)] >= d - T::lit(DIAG_FEAS_TOL) * T::one().max(d))),
            RapsMode::Full => {
                let diff = info - &self.spec.matrix();
                let (lmin, _) = sym_eig_min(&diff)?;
                Ok(lmin >= -T::lit(LMI_FEAS_TOL))
            }
        }
    }

    pub(crate) fn selection_outcome(&self, bools: &[bool]) -> Result<SelectionOutcome<T>> {
        let w = Self::weights(bools);
        let upd = information_update(&self.prior_mean, &self.prior_info, &self.batch, &w, self.batch.time)?;
        let risk = weighted_map_cost(&self.prior_mean, &self.prior_info, &self.batch, &w, &upd.estimate)?;
        Ok(SelectionOutcome {
            selection: bools.to_vec(),
            risk,
            estimate: upd.estimate,
            information: upd.information,
        })
    }
}

/// Exact optimum of the risk for one fixed selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome<T> {
    pub selection: Vec<bool>,
    pub risk: T,
    pub estimate: Vec<T>,
    pub information: Matrix<T>,
}

impl<T: Real> SelectionOutcome<T> {
    pub fn count(&self) -> usize {
        self.selection.iter().filter(|&&s| s).count()
    }

    /// Tie-aware ordering: lower risk wins outside `gap`; within it fewer
    /// selected measurements win, then the lexicographically smaller `b`.
    pub fn better_than(&self, other: &Self, gap: T) -> bool {
        if self.risk < other.risk - gap {
            return true;
        }
        if self.risk > other.risk + gap {
            return false;
        }
        match self.count().cmp(&other.count()) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => match self.selection.cmp(&other.selection) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => self.risk < other.risk,
            },
        }
    }
}

/// `J(b) = J⁻ + Σ bᵢ hᵢᵀhᵢ/σᵢ²`; linear in `b`, so relaxed selections are
/// accepted.
pub fn posterior_information<T: Real>(inst: &RapsInstance<T>, b: &SelectionVector<T>) -> Result<Matrix<T>> {
    weighted_information(&inst.prior_info, &inst.batch, b.entries())
}

/// Risk of binary selection `b` at state `x`.
pub fn evaluate_risk<T: Real>(inst: &RapsInstance<T>, b: &SelectionVector<T>, x: &[T]) -> Result<T> {
    b.require_binary()?;
    weighted_map_cost(&inst.prior_mean, &inst.prior_info, &inst.batch, b.entries(), x)
}

/// Minimum over `x` of the risk for binary `b`, with its minimizer.
pub fn optimal_risk_for_selection<T: Real>(inst: &RapsInstance<T>, b: &SelectionVector<T>) -> Result<(T, Vec<T>)> {
    b.require_binary()?;
    dim_check(b.len() == inst.m(), || {
        format!("{} selection entries for {} measurements", b.len(), inst.m())
    })?;
    let out = inst.selection_outcome(&b.to_bools())?;
    Ok((out.risk, out.estimate))
}

/// Separation oracle for `J − J_d ⪰ 0`.
///
/// Returns `None` when `λ_min(J − J_d) ≥ −1e-8`; otherwise the unit
/// eigenvector `v` of the minimum eigenvalue. The linear constraint
/// `vᵀ J(b) v ≥ vᵀ J_d v` is then violated at the current point and holds for
/// every selection satisfying the matrix inequality.
pub fn lmi_cut<T: Real>(j: &Matrix<T>, j_d: &Matrix<T>) -> Result<Option<Vec<T>>> {
    dim_check(
        j.is_square() && j.rows() == j_d.rows() && j.cols() == j_d.cols(),
        || "lmi_cut operands must be square and equally sized".into(),
    )?;
    if !j.is_symmetric(T::lit(1e-10)) || !j_d.is_symmetric(T::lit(1e-10)) {
        return Err(Error::InvalidParams("lmi_cut operands must be symmetric".into()));
    }
    let (lmin, v) = sym_eig_min(&(j - j_d))?;
    Ok((lmin < -T::lit(LMI_CUT_TOL)).then_some(v))
}
