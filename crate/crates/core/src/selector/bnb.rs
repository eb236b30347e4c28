//! Branch-and-bound over the big-M relaxation.
//!
//! Every node fixes some `bᵢ` to 0 or 1. With `F₁` the fixed-one set and
//! `U` the union of `F₁` and the free indices, a node is
//!
//! * discarded when `J(U)` misses the bound (no completion can meet it);
//! * closed when `J(F₁)` meets it, since `F₁` is then optimal below the node;
//! * otherwise bounded by the larger of the risk of `F₁` and the relaxation,
//!   then branched.
//!
//! For the matrix inequality the relaxation is tightened with eigenvector
//! cuts from [`lmi_cut`] kept in a shared pool.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::exhaustive::report;
use super::relaxation::{InfoRow, Relaxation};
use super::{lmi_cut, RapsInstance, RapsMode, SelectionOutcome};
use crate::error::{Error, Result};
use crate::linalg::{dot, spd_inverse, sym_eig, Matrix};
use crate::qp::{solve_qp_with, Infeasibility, QpSettings, QpStatus, WarmStart};
use crate::scalar::Real;
use crate::types::{SolveReport, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRule {
    #[default]
    MostFractional,
    LowestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOrder {
    #[default]
    BestBound,
    DepthFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnbOptions<T> {
    /// `Mᵢ = κ sqrt(hᵢ P⁻ hᵢᵀ + σᵢ²)` before the validity guard.
    pub big_m_multiplier: T,
    /// Absolute optimality gap.
    pub gap_tol: T,
    pub node_limit: usize,
    pub time_limit_s: f64,
    pub branching: BranchRule,
    pub node_order: NodeOrder,
    pub qp: QpSettings<T>,
    /// Cut pool capacity per state dimension.
    pub cut_pool_factor: usize,
    /// Cut rounds without progress in `λ_min` before a node is branched.
    pub cut_stall_rounds: usize,
    /// Uses this constant big-M and skips every validity safeguard.
    #[doc(hidden)]
    pub big_m_fixed: Option<T>,
}

impl<T: Real> Default for BnbOptions<T> {
    fn default() -> Self {
        Self {
            big_m_multiplier: T::lit(10.0),
            gap_tol: T::lit(1e-6),
            node_limit: 200_000,
            time_limit_s: 600.0,
            branching: BranchRule::MostFractional,
            node_order: NodeOrder::BestBound,
            qp: QpSettings {
                tol: T::lit(1e-6),
                max_iter: 4000,
                check_convexity: false,
                ..QpSettings::default()
            },
            cut_pool_factor: 50,
            cut_stall_rounds: 3,
            big_m_fixed: None,
        }
    }
}

impl<T: Real> BnbOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParams(what.into()));
        if !(self.big_m_multiplier >= T::lit(3.0)) {
            return bad("big-M multiplier must be at least 3");
        }
        if !(self.gap_tol > T::zero()) {
            return bad("gap tolerance must be positive");
        }
        if !(self.time_limit_s > 0.0) {
            return bad("time limit must be positive");
        }
        if let Some(m) = self.big_m_fixed {
            if !(m > T::zero()) {
                return bad("fixed big-M must be positive");
            }
        }
        Ok(())
    }
}

/// Minimum-risk selection subject to `J(b)[j][j] ≥ J_d[j]`.
pub fn solve_diag_raps<T: Real>(inst: &RapsInstance<T>, opts: &BnbOptions<T>) -> Result<SolveReport<T>> {
    solve(inst, RapsMode::Diag, opts)
}

/// Minimum-risk selection subject to `J(b) ⪰ J_d`.
pub fn solve_full_raps<T: Real>(inst: &RapsInstance<T>, opts: &BnbOptions<T>) -> Result<SolveReport<T>> {
    solve(inst, RapsMode::Full, opts)
}

const MAX_BIG_M_ROUNDS: usize = 8;
const INTEGRAL_TOL: f64 = 1e-6;
const CUT_PROGRESS: f64 = 1e-10;

fn solve<T: Real>(inst: &RapsInstance<T>, mode: RapsMode, opts: &BnbOptions<T>) -> Result<SolveReport<T>> {
    opts.validate()?;
    let start = Instant::now();
    let m = inst.m();

    let all = inst.selection_outcome(&vec![true; m])?;
    if !inst.satisfies(&all.information, mode)? {
        return Ok(report(all, SolveStatus::InfeasibleSpec, 0, T::zero(), start));
    }
    let none = inst.selection_outcome(&vec![false; m])?;
    if inst.satisfies(&none.information, mode)? {
        return Ok(report(none, SolveStatus::Optimal, 0, T::zero(), start));
    }

    let mut search = Search::new(inst, mode, opts, start)?;
    let greedy = search.repair(vec![false; m], &vec![true; m])?;
    search.offer(all);
    if let Some(g) = greedy {
        search.offer(g);
    }

    let prior_cov = inst.prior_covariance()?;
    let nu = inst.innovations();
    let spread: Vec<T> = (0..m)
        .map(|i| {
            let s = inst.batch.sigmas[i];
            prior_cov.quad_form(inst.batch.row(i)) + s * s
        })
        .collect();
    let mut big_m: Vec<T> = match opts.big_m_fixed {
        Some(v) => vec![v; m],
        None => {
            // Any point with risk below the incumbent has its prior term below
            // it too, which bounds |hᵢ δ| by sqrt(UB · hᵢ P⁻ hᵢᵀ).
            let ub = search.upper_bound();
            (0..m)
                .map(|i| {
                    let s = inst.batch.row(i);
                    let reach = nu[i].abs() + (ub.max(T::zero()) * prior_cov.quad_form(s)).sqrt();
                    let mut mi = opts.big_m_multiplier * spread[i].sqrt();
                    while mi * T::lit(0.99) < reach {
                        mi = mi * T::lit(2.0);
                    }
                    mi
                })
                .collect()
        }
    };

    let mut rounds = 0;
    loop {
        let outcome = search.run(&big_m)?;
        if opts.big_m_fixed.is_some() || outcome.status != SolveStatus::Optimal || rounds >= MAX_BIG_M_ROUNDS {
            return Ok(search.finish(outcome));
        }
        let x = &search.incumbent.as_ref().expect("incumbent set").estimate;
        let mut grown = false;
        for i in 0..m {
            let r = inst.batch.values[i] - dot(inst.batch.row(i), x);
            if r.abs() >= T::lit(0.99) * big_m[i] {
                big_m[i] = big_m[i] * T::lit(2.0);
                grown = true;
            }
        }
        if !grown {
            return Ok(search.finish(outcome));
        }
        rounds += 1;
    }
}

struct Outcome<T> {
    status: SolveStatus,
    gap: T,
}

#[derive(Clone)]
struct Node<T> {
    fixed: Vec<Option<bool>>,
    bound: T,
    id: u64,
    warm: Option<Rc<NodeWarm<T>>>,
}

struct NodeWarm<T> {
    z: Vec<T>,
    ineq: Vec<T>,
    boxes: Vec<T>,
}

struct Keyed<T>(Node<T>);

impl<T: Real> Keyed<T> {
    fn key(&self) -> (f64, u64) {
        (self.0.bound.to_f64_lossy(), self.0.id)
    }
}

impl<T: Real> PartialEq for Keyed<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for Keyed<T> {}

impl<T: Real> PartialOrd for Keyed<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Keyed<T> {
    // reversed so the max-heap pops the smallest bound, then the oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, ia) = self.key();
        let (b, ib) = other.key();
        b.total_cmp(&a).then(ib.cmp(&ia))
    }
}

enum Queue<T> {
    Best(BinaryHeap<Keyed<T>>),
    Depth(Vec<Node<T>>),
}

impl<T: Real> Queue<T> {
    fn push(&mut self, n: Node<T>) {
        match self {
            Queue::Best(h) => h.push(Keyed(n)),
            Queue::Depth(v) => v.push(n),
        }
    }

    fn pop(&mut self) -> Option<Node<T>> {
        match self {
            Queue::Best(h) => h.pop().map(|k| k.0),
            Queue::Depth(v) => v.pop(),
        }
    }

    fn min_bound(&self) -> Option<T> {
        match self {
            Queue::Best(h) => h.peek().map(|k| k.0.bound),
            Queue::Depth(v) => v.iter().map(|n| n.bound).reduce(T::min),
        }
    }
}

struct Search<'a, T> {
    inst: &'a RapsInstance<T>,
    mode: RapsMode,
    opts: &'a BnbOptions<T>,
    start: Instant,
    target: Matrix<T>,
    prior_cov: Matrix<T>,
    static_rows: Vec<InfoRow<T>>,
    cuts: Vec<InfoRow<T>>,
    incumbent: Option<SelectionOutcome<T>>,
    big_m: Vec<T>,
    nodes: usize,
    next_id: u64,
}

impl<'a, T: Real> Search<'a, T> {
    fn new(inst: &'a RapsInstance<T>, mode: RapsMode, opts: &'a BnbOptions<T>, start: Instant) -> Result<Self> {
        let n = inst.n();
        let target = inst.spec.matrix();
        // Coordinate rows: the diagonal constraint itself, and implied
        // constraints of the matrix inequality.
        let static_rows = (0..n)
            .filter_map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                let row = InfoRow::along(&e, &inst.batch.rows, &inst.batch.sigmas, &inst.prior_info, &target);
                (row.rhs > T::zero()).then_some(row)
            })
            .collect();
        Ok(Self {
            inst,
            mode,
            opts,
            start,
            target,
            prior_cov: inst.prior_covariance()?,
            static_rows,
            cuts: Vec::new(),
            incumbent: None,
            big_m: Vec::new(),
            nodes: 0,
            next_id: 0,
        })
    }

    fn upper_bound(&self) -> T {
        self.incumbent.as_ref().map_or(T::infinity(), |c| c.risk)
    }

    fn offer(&mut self, cand: SelectionOutcome<T>) {
        let take = match &self.incumbent {
            None => true,
            Some(cur) => cand.better_than(cur, self.opts.gap_tol),
        };
        if take {
            self.incumbent = Some(cand);
        }
    }

    fn prunable(&self, bound: T) -> bool {
        bound >= self.upper_bound() - self.opts.gap_tol
    }

    fn violation(&self, info: &Matrix<T>) -> Result<T> {
        Ok(match self.mode {
            RapsMode::Diag => self
                .inst
                .spec
                .diag_lower_bound
                .iter()
                .enumerate()
                .filter(|(_, &d)| d > T::zero())
                .map(|(j, &d)| ((d - info[(j, j)]) / d).max(T::zero()))
                .sum(),
            RapsMode::Full => sym_eig(&(info - &self.target))?
                .values
                .iter()
                .map(|&l| (-l).max(T::zero()))
                .sum(),
        })
    }

    /// Greedily adds allowed measurements until the bound is met, picking the
    /// smallest exact risk increase per unit of violation removed.
    fn repair(&self, mut sel: Vec<bool>, allowed: &[bool]) -> Result<Option<SelectionOutcome<T>>> {
        let inst = self.inst;
        loop {
            let cur = inst.selection_outcome(&sel)?;
            if inst.satisfies(&cur.information, self.mode)? {
                return Ok(Some(cur));
            }
            let cov = spd_inverse(&cur.information)?;
            let v0 = self.violation(&cur.information)?;
            let mut best: Option<(T, usize)> = None;
            for i in (0..sel.len()).filter(|&i| !sel[i] && allowed[i]) {
                let h = inst.batch.row(i);
                let s = inst.batch.sigmas[i];
                let mut info = cur.information.clone();
                info.add_outer(T::one() / (s * s), h, h);
                let gain = v0 - self.violation(&info)?;
                if !(gain > T::zero()) {
                    continue;
                }
                let r = inst.batch.values[i] - dot(h, &cur.estimate);
                let rise = r * r / (cov.quad_form(h) + s * s);
                let score = rise / gain;
                if best.map_or(true, |(b, _)| score < b) {
                    best = Some((score, i));
                }
            }
            match best {
                Some((_, i)) => sel[i] = true,
                None => return Ok(None),
            }
        }
    }

    /// Smallest `τ` such that adding every free measurement whose single-step
    /// risk increase is at most `τ` meets the bound. Every feasible completion
    /// contains a measurement with increase at least `τ`, and the risk only
    /// grows as measurements are added, so `φ(F₁) + τ` bounds the subtree.
    fn bottleneck(&self, base_info: &Matrix<T>, fixed: &[Option<bool>], lifts: &[T]) -> Result<T> {
        let inst = self.inst;
        let mut order: Vec<usize> = (0..fixed.len()).filter(|&i| fixed[i].is_none()).collect();
        order.sort_by(|&a, &b| {
            lifts[a]
                .to_f64_lossy()
                .total_cmp(&lifts[b].to_f64_lossy())
                .then(a.cmp(&b))
        });
        let prefix = |k: usize| {
            let mut info = base_info.clone();
            for &i in &order[..k] {
                let s = inst.batch.sigmas[i];
                info.add_outer(T::one() / (s * s), inst.batch.row(i), inst.batch.row(i));
            }
            info
        };
        // feasibility is monotone in the prefix length; the full prefix is
        // feasible because the node survived the union check
        let (mut lo, mut hi) = (0, order.len());
        while lo + 1 < hi {
            let mid = (lo + hi) / 2;
            if inst.satisfies(&prefix(mid), self.mode)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(if hi == 0 { T::zero() } else { lifts[order[hi - 1]] })
    }

    /// Relaxation with each `Mᵢ` capped by the largest residual any point
    /// below the incumbent can have in this subtree: such points satisfy
    /// `(x − x̂)ᵀ J(F₁) (x − x̂) ≤ UB − φ(F₁)`.
    fn node_relaxation(&self, base: &SelectionOutcome<T>, cov: &Matrix<T>) -> Result<Relaxation<T>> {
        let inst = self.inst;
        let budget = (self.upper_bound() - base.risk).max(T::zero());
        let big_m: Vec<T> = (0..inst.m())
            .map(|i| {
                if self.opts.big_m_fixed.is_some() {
                    return self.big_m[i];
                }
                let h = inst.batch.row(i);
                let r = (inst.batch.values[i] - dot(h, &base.estimate)).abs();
                let reach = r + (budget * cov.quad_form(h)).sqrt();
                self.big_m[i].min(reach * T::lit(1.0 + 1e-6) + T::lit(1e-9))
            })
            .collect();
        Ok(Relaxation::new(
            &inst.prior_info,
            &inst.batch.rows,
            &inst.batch.sigmas,
            &inst.innovations(),
            &big_m,
        ))
    }

    fn child(&mut self, parent: &Node<T>, i: usize, value: bool, bound: T, warm: &Option<Rc<NodeWarm<T>>>) -> Node<T> {
        let mut fixed = parent.fixed.clone();
        fixed[i] = Some(value);
        self.next_id += 1;
        Node {
            fixed,
            bound,
            id: self.next_id,
            warm: warm.clone(),
        }
    }

    fn run(&mut self, big_m: &[T]) -> Result<Outcome<T>> {
        let inst = self.inst;
        let m = inst.m();
        self.big_m = big_m.to_vec();
        let mut queue = match self.opts.node_order {
            NodeOrder::BestBound => Queue::Best(BinaryHeap::new()),
            NodeOrder::DepthFirst => Queue::Depth(Vec::new()),
        };
        self.next_id += 1;
        queue.push(Node {
            fixed: vec![None; m],
            bound: T::neg_infinity(),
            id: self.next_id,
            warm: None,
        });

        while let Some(node) = queue.pop() {
            if self.prunable(node.bound) {
                if self.opts.node_order == NodeOrder::BestBound {
                    // every remaining node has a bound at least as large
                    break;
                }
                continue;
            }
            if self.nodes >= self.opts.node_limit || self.start.elapsed().as_secs_f64() >= self.opts.time_limit_s {
                let open = queue.min_bound().map_or(node.bound, |b| b.min(node.bound));
                let gap = (self.upper_bound() - open).max(T::zero());
                return Ok(Outcome {
                    status: SolveStatus::IterationLimit,
                    gap,
                });
            }
            self.nodes += 1;
            for c in self.expand(node)? {
                queue.push(c);
            }
        }
        Ok(Outcome {
            status: SolveStatus::Optimal,
            gap: T::zero(),
        })
    }

    fn expand(&mut self, node: Node<T>) -> Result<Vec<Node<T>>> {
        let inst = self.inst;
        let m = inst.m();
        let lo: Vec<bool> = node.fixed.iter().map(|f| *f == Some(true)).collect();
        let hi: Vec<bool> = node.fixed.iter().map(|f| *f != Some(false)).collect();

        if !inst.satisfies(&inst.information_of(&hi), self.mode)? {
            return Ok(Vec::new());
        }
        let base = inst.selection_outcome(&lo)?;
        let mut bound = node.bound.max(base.risk);
        if inst.satisfies(&base.information, self.mode)? {
            self.offer(base);
            return Ok(Vec::new());
        }
        if self.prunable(bound) {
            return Ok(Vec::new());
        }
        let cov = spd_inverse(&base.information)?;
        let lifts: Vec<T> = (0..m)
            .map(|i| {
                let h = inst.batch.row(i);
                let s = inst.batch.sigmas[i];
                let r = inst.batch.values[i] - dot(h, &base.estimate);
                r * r / (cov.quad_form(h) + s * s)
            })
            .collect();
        bound = bound.max(base.risk + self.bottleneck(&base.information, &node.fixed, &lifts)?);
        if self.prunable(bound) {
            return Ok(Vec::new());
        }

        let rel = self.node_relaxation(&base, &cov)?;
        let Some((b_rel, warm)) = self.relax(&rel, &node, &mut bound)? else {
            return Ok(Vec::new());
        };
        if self.prunable(bound) {
            return Ok(Vec::new());
        }

        let rounded: Vec<bool> = (0..m)
            .map(|i| node.fixed[i].unwrap_or(b_rel[i] >= T::lit(0.5)))
            .collect();
        if let Some(c) = self.repair(rounded, &hi)? {
            self.offer(c);
        }
        if self.prunable(bound) {
            return Ok(Vec::new());
        }

        let free: Vec<usize> = (0..m).filter(|&i| node.fixed[i].is_none()).collect();
        let Some(&first) = free.first() else {
            return Ok(Vec::new());
        };
        let pick = match self.opts.branching {
            BranchRule::LowestIndex => first,
            BranchRule::MostFractional => {
                let frac = |i: usize| b_rel[i].min(T::one() - b_rel[i]);
                let mut best = first;
                for &i in &free {
                    if frac(i) > frac(best) {
                        best = i;
                    }
                }
                if frac(best) <= T::lit(INTEGRAL_TOL) {
                    first
                } else {
                    best
                }
            }
        };
        let warm = Some(Rc::new(warm));
        let zero = self.child(&node, pick, false, bound, &warm);
        let one = self.child(&node, pick, true, bound, &warm);
        Ok(vec![zero, one])
    }

    /// Solves the node relaxation, adding cuts in the matrix mode. Returns
    /// `None` when it is infeasible; otherwise the relaxed `b` and the final
    /// iterate. `bound` is raised to the dual value of every solve.
    fn relax(&mut self, rel: &Relaxation<T>, node: &Node<T>, bound: &mut T) -> Result<Option<(Vec<T>, NodeWarm<T>)>> {
        let inst = self.inst;
        let lo: Vec<T> = node
            .fixed
            .iter()
            .map(|f| if *f == Some(true) { T::one() } else { T::zero() })
            .collect();
        let hi: Vec<T> = node
            .fixed
            .iter()
            .map(|f| if *f == Some(false) { T::zero() } else { T::one() })
            .collect();
        let cap = self.opts.cut_pool_factor * inst.n();
        let mut warm_src = node.warm.clone();
        let mut last_lmin: Option<T> = None;
        let mut stall = 0;

        loop {
            let rows: Vec<&InfoRow<T>> = self.static_rows.iter().chain(&self.cuts).collect();
            let p = rel.node_problem(&lo, &hi, &rows);
            let warm = warm_src.as_ref().map(|w| {
                let mut duals = w.ineq.clone();
                duals.resize(p.ineq.rows(), T::zero());
                duals.extend_from_slice(&w.boxes);
                WarmStart { z: w.z.clone(), duals }
            });
            let sol = solve_qp_with(&p, &self.opts.qp, warm.as_ref())?;
            let b_rel: Vec<T> = sol.z[rel.b_range()]
                .iter()
                .map(|v| v.max(T::zero()).min(T::one()))
                .collect();
            let next = NodeWarm {
                z: sol.z.clone(),
                ineq: sol.ineq_duals.clone(),
                boxes: sol.box_duals.clone(),
            };
            if sol.status == QpStatus::Infeasible {
                return Ok(match sol.infeasibility {
                    Some(Infeasibility::Primal) | Some(Infeasibility::BoxContradiction) => None,
                    _ => Some((b_rel, next)),
                });
            }
            let dual = rel.dual_bound(&p, &sol.ineq_duals, &self.prior_cov, &inst.batch.sigmas);
            if dual.is_finite() {
                *bound = bound.max(dual);
            }
            if sol.status == QpStatus::MaxIter {
                return Ok(Some((b_rel, next)));
            }
            if self.mode == RapsMode::Diag || self.cuts.len() >= cap || self.prunable(*bound) {
                return Ok(Some((b_rel, next)));
            }
            let info = crate::estimators::weighted_information(&inst.prior_info, &inst.batch, &b_rel)?;
            let Some(v) = lmi_cut(&info.symmetrize(), &self.target)? else {
                return Ok(Some((b_rel, next)));
            };
            let lmin = info.quad_form(&v) - self.target.quad_form(&v);
            if let Some(prev) = last_lmin {
                if lmin - prev < T::lit(CUT_PROGRESS) {
                    stall += 1;
                    if stall >= self.opts.cut_stall_rounds {
                        return Ok(Some((b_rel, next)));
                    }
                } else {
                    stall = 0;
                }
            }
            last_lmin = Some(lmin);
            self.cuts.push(InfoRow::along(
                &v,
                &inst.batch.rows,
                &inst.batch.sigmas,
                &inst.prior_info,
                &self.target,
            ));
            warm_src = Some(Rc::new(next));
        }
    }

    fn finish(&self, outcome: Outcome<T>) -> SolveReport<T> {
        let best = self.incumbent.clone().expect("incumbent set before search");
        report(best, outcome.status, self.nodes, outcome.gap, self.start)
    }
}
