//! Reference solver: enumerates all `2ᵐ` selections.

use std::time::Instant;

use super::{RapsInstance, RapsMode, SelectionOutcome};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{SelectionVector, SolveReport, SolveStatus};

pub const EXHAUSTIVE_MAX_M: usize = 20;

/// Risks closer than this are ties for the exhaustive search.
const TIE_TOL: f64 = 1e-9;

pub(crate) fn report<T: Real>(
    out: SelectionOutcome<T>,
    status: SolveStatus,
    nodes: usize,
    gap: T,
    start: Instant,
) -> SolveReport<T> {
    SolveReport {
        selection: SelectionVector::from_bools(&out.selection),
        estimate: out.estimate,
        posterior_information: out.information,
        risk: out.risk,
        status,
        nodes_explored: nodes,
        gap,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Globally optimal selection by enumeration, `m ≤ 20`.
///
/// Ties within `1e-9` go to the selection with fewer measurements, then to
/// the lexicographically smallest `b`. When even `b = 1` misses the
/// information bound, the Kalman filter solution is returned with status
/// [`SolveStatus::InfeasibleSpec`].
pub fn exhaustive_raps<T: Real>(inst: &RapsInstance<T>, mode: RapsMode) -> Result<SolveReport<T>> {
    let start = Instant::now();
    let m = inst.m();
    if m > EXHAUSTIVE_MAX_M {
        return Err(Error::TooManyMeasurements {
            m,
            max: EXHAUSTIVE_MAX_M,
        });
    }
    let all = inst.selection_outcome(&vec![true; m])?;
    if !inst.satisfies(&all.information, mode)? {
        return Ok(report(all, SolveStatus::InfeasibleSpec, 0, T::zero(), start));
    }

    // Diagonal contributions, for a cheap screen in the diagonal mode.
    let n = inst.n();
    let contrib: Vec<Vec<T>> = (0..m)
        .map(|i| {
            let s2 = inst.batch.sigmas[i] * inst.batch.sigmas[i];
            inst.batch.row(i).iter().map(|&h| h * h / s2).collect()
        })
        .collect();
    let base: Vec<T> = inst.prior_info.diagonal();
    let tol = T::lit(super::DIAG_FEAS_TOL);

    let mut best: Option<SelectionOutcome<T>> = None;
    let mut sel = vec![false; m];
    for mask in 0u64..(1u64 << m) {
        for (i, s) in sel.iter_mut().enumerate() {
            *s = mask >> (m - 1 - i) & 1 == 1;
        }
        if mode == RapsMode::Diag {
            let ok = (0..n).all(|j| {
                let d = inst.spec.diag_lower_bound[j];
                let jj = base[j] + (0..m).filter(|&i| sel[i]).map(|i| contrib[i][j]).sum::<T>();
                jj >= d - tol * T::one().max(d)
            });
            if !ok {
                continue;
            }
        } else if !inst.satisfies(&inst.information_of(&sel), mode)? {
            continue;
        }
        let cand = inst.selection_outcome(&sel)?;
        if best.as_ref().map_or(true, |b| cand.better_than(b, T::lit(TIE_TOL))) {
            best = Some(cand);
        }
    }
    let best = best.expect("the full selection is feasible");
    Ok(report(best, SolveStatus::Optimal, 1usize << m, T::zero(), start))
}
