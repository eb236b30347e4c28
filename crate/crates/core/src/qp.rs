//! Dense convex QP solver used for the branch-and-bound node relaxations.
//!
//! Solves
//!
//! ```text
//! minimize    ½ zᵀ P z + qᵀ z
//! subject to  A z ≤ u,   lower ≤ z ≤ upper
//! ```
//!
//! with an operator-splitting (ADMM) iteration on the stacked constraint
//! matrix `C = [A; I]`. The problem is Ruiz-equilibrated, the reduced KKT
//! matrix `P + σI + Cᵀ diag(ρ) C` is factored once per ρ value, and ρ is
//! re-tuned from the primal/dual residual ratio. Once the iterates are close,
//! a polish step guesses the active set from the multipliers, solves the
//! resulting equality-constrained KKT system with iterative refinement and
//! keeps the result if it satisfies the KKT conditions at `tol`.
//!
//! Infeasibility is reported from the usual certificates on successive
//! iterate differences: a dual ray `δy` with `Cᵀδy ≈ 0` and negative support
//! value proves primal infeasibility, a primal ray `δz` with `Pδz ≈ 0`,
//! `qᵀδz < 0` and `Cδz` in the recession cone proves unboundedness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, Cholesky, Lu, Matrix};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpProblem<T> {
    pub hessian: Matrix<T>,
    pub linear: Vec<T>,
    /// Inequality rows `A`.
    pub ineq: Matrix<T>,
    /// Right-hand side `u` of `A z ≤ u`.
    pub ineq_upper: Vec<T>,
    /// Box bounds; entries may be infinite.
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> QpProblem<T> {
    /// Problem with no constraints at all.
    pub fn unconstrained(hessian: Matrix<T>, linear: Vec<T>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            ineq: Matrix::zeros(0, n),
            ineq_upper: Vec::new(),
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, z: &[T]) -> T {
        T::lit(0.5) * self.hessian.quad_form(z) + dot(&self.linear, z)
    }

    fn validate(&self, check_convexity: bool) -> Result<()> {
        let n = self.dim();
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        if self.hessian.rows() != n || self.hessian.cols() != n {
            return bad(format!(
                "hessian is {}x{} for {n} variables",
                self.hessian.rows(),
                self.hessian.cols()
            ));
        }
        if self.ineq.cols() != n || self.ineq.rows() != self.ineq_upper.len() {
            return bad(format!(
                "inequality block is {}x{} with {} right-hand sides",
                self.ineq.rows(),
                self.ineq.cols(),
                self.ineq_upper.len()
            ));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("box bounds length mismatch".into());
        }
        if !self.hessian.is_finite()
            || !self.ineq.is_finite()
            || self.linear.iter().any(|v| !v.is_finite())
            || self
                .ineq_upper
                .iter()
                .chain(&self.lower)
                .chain(&self.upper)
                .any(|v| v.is_nan())
        {
            return bad("non-finite problem data".into());
        }
        if !self.hessian.is_symmetric(T::lit(1e-10)) {
            return bad("hessian is not symmetric".into());
        }
        if check_convexity && n > 0 {
            // Cholesky of P + εI succeeds iff λ_min(P) > −ε.
            let eps = T::lit(1e-8) * T::one().max(self.hessian.max_abs());
            let shifted = &self.hessian + &Matrix::identity(n).scale(eps);
            if Cholesky::factor(&shifted).is_err() {
                return bad("hessian is not positive semidefinite".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infeasibility {
    /// Some box has `lower > upper`.
    BoxContradiction,
    /// Dual ray certificate: the constraints admit no point.
    Primal,
    /// Primal ray certificate: the objective is unbounded below.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution<T> {
    pub z: Vec<T>,
    pub objective: T,
    /// Multipliers of `A z ≤ u` (non-negative at a solution).
    pub ineq_duals: Vec<T>,
    /// Box multipliers: positive when the upper bound is active, negative
    /// when the lower bound is.
    pub box_duals: Vec<T>,
    pub primal_residual: T,
    pub dual_residual: T,
    pub complementarity: T,
    pub iterations: usize,
    pub status: QpStatus,
    pub polished: bool,
    pub infeasibility: Option<Infeasibility>,
}

impl<T: Real> QpSolution<T> {
    /// Lagrange dual function at the returned multipliers, assuming
    /// stationarity: `−½ zᵀPz − Σ (uᵢ yᵢ⁺ − lᵢ yᵢ⁻)`.
    pub fn dual_objective(&self, p: &QpProblem<T>) -> T {
        let mut support = T::zero();
        for (y, &u) in self.ineq_duals.iter().zip(&p.ineq_upper) {
            if *y > T::zero() {
                support += *y * u;
            }
        }
        for (i, &y) in self.box_duals.iter().enumerate() {
            if y > T::zero() {
                support += y * p.upper[i];
            } else if y < T::zero() {
                support += y * p.lower[i];
            }
        }
        -T::lit(0.5) * p.hessian.quad_form(&self.z) - support
    }

    /// Stacked multipliers, usable as a warm start.
    pub fn stacked_duals(&self) -> Vec<T> {
        self.ineq_duals.iter().chain(&self.box_duals).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings<T> {
    pub tol: T,
    pub max_iter: usize,
    pub rho: T,
    pub sigma: T,
    /// Over-relaxation factor in (0, 2).
    pub alpha: T,
    pub polish: bool,
    pub scaling_iters: usize,
    pub check_interval: usize,
    pub adaptive_rho_interval: usize,
    pub check_convexity: bool,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 50_000,
            rho: T::lit(0.1),
            sigma: T::lit(1e-6),
            alpha: T::lit(1.6),
            polish: true,
            scaling_iters: 10,
            check_interval: 25,
            adaptive_rho_interval: 100,
            check_convexity: true,
        }
    }
}

/// Initial point: primal variables and stacked multipliers (`A` rows first,
/// then boxes). Missing trailing multipliers are taken as zero.
#[derive(Debug, Clone, Default)]
pub struct WarmStart<T> {
    pub z: Vec<T>,
    pub duals: Vec<T>,
}

/// Solves `p` with default settings at the given tolerance and iteration cap.
pub fn solve_qp<T: Real>(p: &QpProblem<T>, tol: T, max_iter: usize) -> Result<QpSolution<T>> {
    let settings = QpSettings {
        tol,
        max_iter,
        ..QpSettings::default()
    };
    solve_qp_with(p, &settings, None)
}

pub fn solve_qp_with<T: Real>(
    p: &QpProblem<T>,
    settings: &QpSettings<T>,
    warm: Option<&WarmStart<T>>,
) -> Result<QpSolution<T>> {
    p.validate(settings.check_convexity)?;
    Admm::new(p, settings).run(warm)
}

/// Row-compressed copy of the stacked constraint matrix.
#[derive(Debug, Clone)]
struct SparseRows<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Real> SparseRows<T> {
    fn stacked(p: &QpProblem<T>) -> Self {
        let n = p.dim();
        let mut rows: Vec<Vec<(usize, T)>> = (0..p.ineq.rows())
            .map(|i| {
                p.ineq
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != T::zero())
                    .map(|(j, &v)| (j, v))
                    .collect()
            })
            .collect();
        rows.extend((0..n).map(|j| vec![(j, T::one())]));
        Self { rows }
    }

    fn mul_vec(&self, x: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(j, v)| v * x[j]).sum();
        }
    }

    fn tr_mul_vec(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (row, &yi) in self.rows.iter().zip(y) {
            if yi != T::zero() {
                for &(j, v) in row {
                    out[j] += v * yi;
                }
            }
        }
    }

    /// `out += Σ_{i ∈ rows} wᵢ cᵢ cᵢᵀ`.
    fn add_weighted_gram(&self, weights: impl Fn(usize) -> Option<T>, out: &mut Matrix<T>) {
        for (i, row) in self.rows.iter().enumerate() {
            if let Some(w) = weights(i) {
                for &(a, va) in row {
                    let s = w * va;
                    for &(b, vb) in row {
                        out[(a, b)] += s * vb;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Free,
    Equality,
    Inequality,
}

struct Admm<'a, T> {
    problem: &'a QpProblem<T>,
    settings: &'a QpSettings<T>,
    // original data
    c: SparseRows<T>,
    l: Vec<T>,
    u: Vec<T>,
    // scaled data
    p_s: Matrix<T>,
    q_s: Vec<T>,
    c_s: SparseRows<T>,
    l_s: Vec<T>,
    u_s: Vec<T>,
    d: Vec<T>,
    e: Vec<T>,
    cost_scale: T,
    kinds: Vec<RowKind>,
}

const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const INFEAS_TOL: f64 = 1e-7;

impl<'a, T: Real> Admm<'a, T> {
    fn new(problem: &'a QpProblem<T>, settings: &'a QpSettings<T>) -> Self {
        let n = problem.dim();
        let c = SparseRows::stacked(problem);
        let mut l = vec![T::neg_infinity(); problem.ineq.rows()];
        l.extend_from_slice(&problem.lower);
        let mut u = problem.ineq_upper.clone();
        u.extend_from_slice(&problem.upper);
        let kinds = l
            .iter()
            .zip(&u)
            .map(|(&lo, &hi)| {
                if lo == hi {
                    RowKind::Equality
                } else if lo.is_infinite() && hi.is_infinite() {
                    RowKind::Free
                } else {
                    RowKind::Inequality
                }
            })
            .collect();

        let mut me = Self {
            problem,
            settings,
            p_s: problem.hessian.clone(),
            q_s: problem.linear.clone(),
            c_s: c.clone(),
            c,
            l_s: l.clone(),
            u_s: u.clone(),
            l,
            u,
            d: vec![T::one(); n],
            e: vec![T::one(); problem.ineq.rows() + n],
            cost_scale: T::one(),
            kinds,
        };
        me.equilibrate();
        me
    }

    fn equilibrate(&mut self) {
        let n = self.problem.dim();
        let clamp = |v: T| v.max(T::lit(SCALE_MIN)).min(T::lit(SCALE_MAX));
        let inv_sqrt = |norm: T| {
            if norm <= T::lit(SCALE_MIN) {
                T::one()
            } else {
                clamp(T::one() / norm.sqrt())
            }
        };
        for _ in 0..self.settings.scaling_iters {
            let mut col = vec![T::zero(); n];
            for j in 0..n {
                col[j] = norm_inf(self.p_s.row(j));
            }
            for row in &self.c_s.rows {
                for &(j, v) in row {
                    col[j] = col[j].max(v.abs());
                }
            }
            let dj: Vec<T> = col.into_iter().map(inv_sqrt).collect();
            let ei: Vec<T> = self
                .c_s
                .rows
                .iter()
                .map(|row| inv_sqrt(row.iter().fold(T::zero(), |m, &(_, v)| m.max(v.abs()))))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    self.p_s[(i, j)] *= dj[i] * dj[j];
                }
                self.q_s[i] *= dj[i];
                self.d[i] *= dj[i];
            }
            for (r, row) in self.c_s.rows.iter_mut().enumerate() {
                for (j, v) in row.iter_mut() {
                    *v *= ei[r] * dj[*j];
                }
                self.e[r] *= ei[r];
            }
            // cost scaling
            let mean_col = if n == 0 {
                T::zero()
            } else {
                (0..n).map(|j| norm_inf(self.p_s.row(j))).sum::<T>() / T::from_usize_lossy(n)
            };
            let denom = mean_col.max(norm_inf(&self.q_s));
            let gamma = if denom <= T::lit(SCALE_MIN) {
                T::one()
            } else {
                clamp(T::one() / denom)
            };
            self.p_s = self.p_s.scale(gamma);
            self.q_s.iter_mut().for_each(|v| *v *= gamma);
            self.cost_scale *= gamma;
        }
        for r in 0..self.e.len() {
            self.l_s[r] = self.l[r] * self.e[r];
            self.u_s[r] = self.u[r] * self.e[r];
        }
    }

    fn rho_vec(&self, rho: T) -> Vec<T> {
        self.kinds
            .iter()
            .map(|k| match k {
                RowKind::Free => T::lit(RHO_MIN),
                RowKind::Equality => rho * T::lit(RHO_EQ_FACTOR),
                RowKind::Inequality => rho,
            })
            .collect()
    }

    fn factor(&self, rho: &[T]) -> Result<Cholesky<T>> {
        let n = self.problem.dim();
        let mut k = self.p_s.clone();
        for i in 0..n {
            k[(i, i)] += self.settings.sigma;
        }
        self.c_s.add_weighted_gram(|i| Some(rho[i]), &mut k);
        Cholesky::factor(&k)
    }

    fn unscale(&self, xs: &[T], ys: &[T]) -> (Vec<T>, Vec<T>) {
        let x = xs.iter().zip(&self.d).map(|(&v, &d)| v * d).collect();
        let y = ys.iter().zip(&self.e).map(|(&v, &e)| v * e / self.cost_scale).collect();
        (x, y)
    }

    fn bound_scale(&self) -> T {
        self.l
            .iter()
            .chain(&self.u)
            .filter(|v| v.is_finite())
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Unscaled KKT residuals at `(x, y)`: primal violation, stationarity,
    /// complementarity.
    fn residuals(&self, x: &[T], y: &[T]) -> (T, T, T) {
        let rows = self.c.rows.len();
        let mut cx = vec![T::zero(); rows];
        self.c.mul_vec(x, &mut cx);
        let mut prim = T::zero();
        let mut comp = T::zero();
        for i in 0..rows {
            let viol = (cx[i] - self.u[i]).max(self.l[i] - cx[i]).max(T::zero());
            prim = prim.max(viol);
            let yi = y[i];
            let c_i = if yi > T::zero() {
                if self.u[i].is_finite() {
                    yi * (self.u[i] - cx[i]).abs()
                } else {
                    yi
                }
            } else if yi < T::zero() {
                if self.l[i].is_finite() {
                    -yi * (cx[i] - self.l[i]).abs()
                } else {
                    -yi
                }
            } else {
                T::zero()
            };
            comp = comp.max(c_i);
        }
        let mut cty = vec![T::zero(); x.len()];
        self.c.tr_mul_vec(y, &mut cty);
        let px = self.problem.hessian.mul_vec(x).expect("dims validated");
        let dual = (0..x.len())
            .map(|j| (px[j] + self.problem.linear[j] + cty[j]).abs())
            .fold(T::zero(), T::max);
        (prim, dual, comp)
    }

    fn accepts(&self, x: &[T], y: &[T]) -> Option<(T, T, T)> {
        let (prim, dual, comp) = self.residuals(x, y);
        let tol = self.settings.tol;
        let obj = self.problem.objective(x).abs();
        let ok = prim <= tol * (T::one() + self.bound_scale())
            && dual <= tol * (T::one() + norm_inf(&self.problem.linear))
            && comp <= tol * (T::one() + obj);
        ok.then_some((prim, dual, comp))
    }

    fn solution(
        &self,
        x: Vec<T>,
        y: Vec<T>,
        iterations: usize,
        status: QpStatus,
        polished: bool,
        infeasibility: Option<Infeasibility>,
    ) -> QpSolution<T> {
        // multipliers of absent bounds are exactly zero
        let y: Vec<T> = y
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let v = if self.u[i].is_finite() { v } else { v.min(T::zero()) };
                if self.l[i].is_finite() {
                    v
                } else {
                    v.max(T::zero())
                }
            })
            .collect();
        let (prim, dual, comp) = self.residuals(&x, &y);
        let k = self.problem.ineq.rows();
        QpSolution {
            objective: self.problem.objective(&x),
            ineq_duals: y[..k].to_vec(),
            box_duals: y[k..].to_vec(),
            z: x,
            primal_residual: prim,
            dual_residual: dual,
            complementarity: comp,
            iterations,
            status,
            polished,
            infeasibility,
        }
    }

    fn infeasible(&self, infeasibility: Infeasibility, iterations: usize) -> QpSolution<T> {
        let n = self.problem.dim();
        let rows = self.c.rows.len();
        let nan = T::nan();
        QpSolution {
            z: vec![nan; n],
            objective: if infeasibility == Infeasibility::Unbounded {
                T::neg_infinity()
            } else {
                T::infinity()
            },
            ineq_duals: vec![nan; self.problem.ineq.rows()],
            box_duals: vec![nan; rows - self.problem.ineq.rows()],
            primal_residual: nan,
            dual_residual: nan,
            complementarity: nan,
            iterations,
            status: QpStatus::Infeasible,
            polished: false,
            infeasibility: Some(infeasibility),
        }
    }

    fn run(&self, warm: Option<&WarmStart<T>>) -> Result<QpSolution<T>> {
        let n = self.problem.dim();
        let rows = self.c.rows.len();
        if (0..n).any(|j| self.problem.lower[j] > self.problem.upper[j]) {
            return Ok(self.infeasible(Infeasibility::BoxContradiction, 0));
        }

        let s = self.settings;
        let mut xs = vec![T::zero(); n];
        let mut ys = vec![T::zero(); rows];
        if let Some(w) = warm {
            if w.z.len() == n {
                for j in 0..n {
                    let v = w.z[j] / self.d[j];
                    if v.is_finite() {
                        xs[j] = v;
                    }
                }
            }
            for (i, &v) in w.duals.iter().take(rows).enumerate() {
                let v = v * self.cost_scale / self.e[i];
                if v.is_finite() {
                    ys[i] = v;
                }
            }
        }
        let mut zs = vec![T::zero(); rows];
        self.c_s.mul_vec(&xs, &mut zs);
        for i in 0..rows {
            zs[i] = zs[i].max(self.l_s[i]).min(self.u_s[i]);
        }

        let mut rho_scalar = s.rho;
        let mut rho = self.rho_vec(rho_scalar);
        let mut chol = self.factor(&rho)?;

        let mut rhs = vec![T::zero(); n];
        let mut tmp_rows = vec![T::zero(); rows];
        let mut zt = vec![T::zero(); rows];
        let mut prev_xs = xs.clone();
        let mut prev_ys = ys.clone();
        let mut last_polish_prim = T::infinity();
        let alpha = s.alpha;
        let one = T::one();

        for iter in 1..=s.max_iter {
            prev_xs.copy_from_slice(&xs);
            prev_ys.copy_from_slice(&ys);

            for i in 0..rows {
                tmp_rows[i] = rho[i] * zs[i] - ys[i];
            }
            self.c_s.tr_mul_vec(&tmp_rows, &mut rhs);
            for j in 0..n {
                rhs[j] += s.sigma * xs[j] - self.q_s[j];
            }
            chol.solve_in_place(&mut rhs);
            self.c_s.mul_vec(&rhs, &mut zt);
            for j in 0..n {
                xs[j] = alpha * rhs[j] + (one - alpha) * xs[j];
            }
            for i in 0..rows {
                let zh = alpha * zt[i] + (one - alpha) * zs[i];
                let znew = (zh + ys[i] / rho[i]).max(self.l_s[i]).min(self.u_s[i]);
                ys[i] += rho[i] * (zh - znew);
                zs[i] = znew;
            }

            let check = iter % s.check_interval == 0 || iter == s.max_iter;
            if !check {
                continue;
            }

            let (x, y) = self.unscale(&xs, &ys);
            if let Some(_res) = self.accepts(&x, &y) {
                return Ok(self.solution(x, y, iter, QpStatus::Solved, false, None));
            }

            if let Some(kind) = self.certificate(&xs, &prev_xs, &ys, &prev_ys) {
                return Ok(self.infeasible(kind, iter));
            }

            // scaled residuals for polish triggering and rho adaptation
            let mut cx = vec![T::zero(); rows];
            self.c_s.mul_vec(&xs, &mut cx);
            let prim_s = (0..rows).map(|i| (cx[i] - zs[i]).abs()).fold(T::zero(), T::max);
            let mut cty = vec![T::zero(); n];
            self.c_s.tr_mul_vec(&ys, &mut cty);
            let px = self.p_s.mul_vec(&xs).expect("dims");
            let dual_s = (0..n)
                .map(|j| (px[j] + self.q_s[j] + cty[j]).abs())
                .fold(T::zero(), T::max);
            let prim_norm = norm_inf(&cx).max(norm_inf(&zs)).max(T::lit(1e-12));
            let dual_norm = norm_inf(&px)
                .max(norm_inf(&cty))
                .max(norm_inf(&self.q_s))
                .max(T::lit(1e-12));
            let prim_rel = prim_s / prim_norm;
            let dual_rel = dual_s / dual_norm;

            if s.polish && prim_rel.max(dual_rel) < T::lit(1e-3) && prim_rel < last_polish_prim * T::lit(0.5) {
                last_polish_prim = prim_rel;
                if let Some((x, y)) = self.polish(&xs, &zs, &ys) {
                    if self.accepts(&x, &y).is_some() {
                        return Ok(self.solution(x, y, iter, QpStatus::Solved, true, None));
                    }
                }
            }

            if iter % s.adaptive_rho_interval == 0 && dual_rel > T::zero() {
                let ratio = (prim_rel / dual_rel).sqrt();
                let new_rho = (rho_scalar * ratio).max(T::lit(RHO_MIN)).min(T::lit(RHO_MAX));
                if new_rho > rho_scalar * T::lit(5.0) || new_rho < rho_scalar * T::lit(0.2) {
                    rho_scalar = new_rho;
                    rho = self.rho_vec(rho_scalar);
                    chol = self.factor(&rho)?;
                }
            }
        }

        let (x, y) = self.unscale(&xs, &ys);
        if s.polish {
            if let Some((px, py)) = self.polish(&xs, &zs, &ys) {
                if self.accepts(&px, &py).is_some() {
                    return Ok(self.solution(px, py, s.max_iter, QpStatus::Solved, true, None));
                }
            }
        }
        Ok(self.solution(x, y, s.max_iter, QpStatus::MaxIter, false, None))
    }

    fn certificate(&self, xs: &[T], prev_xs: &[T], ys: &[T], prev_ys: &[T]) -> Option<Infeasibility> {
        let n = xs.len();
        let rows = ys.len();
        let eps = T::lit(INFEAS_TOL);

        let dy: Vec<T> = ys.iter().zip(prev_ys).map(|(&a, &b)| a - b).collect();
        let dy_norm = norm_inf(&dy);
        if dy_norm > T::lit(1e-12) {
            let mut cty = vec![T::zero(); n];
            self.c_s.tr_mul_vec(&dy, &mut cty);
            let mut support = T::zero();
            let mut finite = true;
            for i in 0..rows {
                if dy[i] > T::zero() {
                    if self.u_s[i].is_infinite() {
                        finite = dy[i] <= eps * dy_norm;
                        if !finite {
                            break;
                        }
                    } else {
                        support += self.u_s[i] * dy[i];
                    }
                } else if dy[i] < T::zero() {
                    if self.l_s[i].is_infinite() {
                        finite = -dy[i] <= eps * dy_norm;
                        if !finite {
                            break;
                        }
                    } else {
                        support += self.l_s[i] * dy[i];
                    }
                }
            }
            if finite && norm_inf(&cty) <= eps * dy_norm && support < -eps * dy_norm {
                return Some(Infeasibility::Primal);
            }
        }

        let dx: Vec<T> = xs.iter().zip(prev_xs).map(|(&a, &b)| a - b).collect();
        let dx_norm = norm_inf(&dx);
        if dx_norm > T::lit(1e-12) {
            let pdx = self.p_s.mul_vec(&dx).expect("dims");
            if norm_inf(&pdx) <= eps * dx_norm && dot(&self.q_s, &dx) < -eps * dx_norm {
                let mut cdx = vec![T::zero(); rows];
                self.c_s.mul_vec(&dx, &mut cdx);
                let in_cone = (0..rows).all(|i| {
                    let tol = eps * dx_norm;
                    (self.u_s[i].is_infinite() || cdx[i] <= tol) && (self.l_s[i].is_infinite() || cdx[i] >= -tol)
                });
                if in_cone {
                    return Some(Infeasibility::Unbounded);
                }
            }
        }
        None
    }

    /// Active-set polish in scaled space. Starts from the set suggested by
    /// the ADMM iterate, keeps only linearly independent rows, then drops
    /// wrong-signed multipliers and adds violated rows until the KKT point is
    /// consistent. Returns the unscaled candidate.
    fn polish(&self, xs: &[T], zs: &[T], ys: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        let n = xs.len();
        let rows = ys.len();
        // (row, target, confidence)
        let mut guess: Vec<(usize, T, T)> = Vec::new();
        for i in 0..rows {
            match self.kinds[i] {
                RowKind::Equality => guess.push((i, self.u_s[i], T::infinity())),
                RowKind::Free => {}
                RowKind::Inequality => {
                    if self.l_s[i].is_finite() && zs[i] - self.l_s[i] < -ys[i] {
                        guess.push((i, self.l_s[i], ys[i].abs()));
                    } else if self.u_s[i].is_finite() && self.u_s[i] - zs[i] < ys[i] {
                        guess.push((i, self.u_s[i], ys[i].abs()));
                    }
                }
            }
        }
        guess.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
        // candidates in priority order; the active set is their greedy
        // independent subset minus the rows dropped for a wrong sign
        let mut order: Vec<(usize, T)> = guess.into_iter().map(|g| (g.0, g.1)).collect();
        let mut banned: Vec<usize> = Vec::new();

        let sign_tol = T::lit(1e-9);
        for _ in 0..2 * rows + 2 {
            let mut active: Vec<(usize, T)> = Vec::new();
            let mut basis: Vec<Vec<T>> = Vec::new();
            for &(r, target) in &order {
                if !banned.contains(&r) && self.extend_basis(&mut basis, r, n) {
                    active.push((r, target));
                }
            }
            let (x, ya) = self.kkt_solve(&active, n)?;
            // most wrong-signed multiplier leaves the set
            let mut worst: Option<(usize, T)> = None;
            for (a, &(r, target)) in active.iter().enumerate() {
                if self.kinds[r] == RowKind::Equality {
                    continue;
                }
                let signed = if target == self.u_s[r] { ya[a] } else { -ya[a] };
                if signed < -sign_tol && worst.map_or(true, |w| signed < w.1) {
                    worst = Some((r, signed));
                }
            }
            if let Some((r, _)) = worst {
                banned.push(r);
                continue;
            }
            // most violated inactive row joins the set, ahead of the rest
            let mut cx = vec![T::zero(); rows];
            self.c_s.mul_vec(&x, &mut cx);
            let mut entering: Option<(usize, T, T)> = None;
            for i in 0..rows {
                if self.kinds[i] == RowKind::Free || active.iter().any(|a| a.0 == i) {
                    continue;
                }
                let (over, under) = (cx[i] - self.u_s[i], self.l_s[i] - cx[i]);
                let (viol, target) = if over >= under {
                    (over, self.u_s[i])
                } else {
                    (under, self.l_s[i])
                };
                let tol = self.settings.tol * T::lit(0.1) * (T::one() + target.abs());
                if viol > tol && entering.map_or(true, |e| viol > e.2) {
                    entering = Some((i, target, viol));
                }
            }
            if let Some((r, target, _)) = entering {
                order.retain(|o| o.0 != r);
                order.insert(0, (r, target));
                banned.retain(|&b| b != r);
                continue;
            }

            let mut y = vec![T::zero(); rows];
            for (a, &(r, _)) in active.iter().enumerate() {
                y[r] = ya[a];
            }
            if x.iter().chain(&y).any(|v| !v.is_finite()) {
                return None;
            }
            return Some(self.unscale(&x, &y));
        }
        None
    }

    /// Adds scaled row `r` to the orthonormal `basis` if it is linearly
    /// independent of it.
    fn extend_basis(&self, basis: &mut Vec<Vec<T>>, r: usize, n: usize) -> bool {
        let mut v = vec![T::zero(); n];
        for &(j, a) in &self.c_s.rows[r] {
            v[j] = a;
        }
        let norm0 = dot(&v, &v).sqrt();
        if norm0 == T::zero() {
            return false;
        }
        for _ in 0..2 {
            for b in basis.iter() {
                let c = dot(&v, b);
                for j in 0..n {
                    v[j] -= c * b[j];
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= T::lit(1e-8) * norm0 {
            return false;
        }
        basis.push(v.into_iter().map(|a| a / norm).collect());
        true
    }

    /// `(−q − P x − C_Aᵀ y_A, b_A − C_A x)` in scaled space.
    fn kkt_residual(&self, active: &[(usize, T)], x: &[T], ya: &[T]) -> Option<(Vec<T>, Vec<T>)> {
        let n = x.len();
        let px = self.p_s.mul_vec(x).ok()?;
        let mut r1: Vec<T> = (0..n).map(|j| -self.q_s[j] - px[j]).collect();
        let mut r2 = vec![T::zero(); active.len()];
        for (a, &(r, target)) in active.iter().enumerate() {
            let row = &self.c_s.rows[r];
            for &(j, v) in row {
                r1[j] -= v * ya[a];
            }
            r2[a] = target - row.iter().map(|&(j, v)| v * x[j]).sum::<T>();
        }
        Some((r1, r2))
    }

    /// Regularized KKT solve for the given active rows with iterative
    /// refinement against the exact system.
    fn kkt_solve(&self, active: &[(usize, T)], n: usize) -> Option<(Vec<T>, Vec<T>)> {
        let delta = T::lit(1e-7);
        let mut k = self.p_s.clone();
        for j in 0..n {
            k[(j, j)] += delta;
        }
        let inv_delta = T::one() / delta;
        for &(r, _) in active {
            let row = &self.c_s.rows[r];
            for &(a, va) in row {
                for &(b, vb) in row {
                    k[(a, b)] += inv_delta * va * vb;
                }
            }
        }
        let chol = Cholesky::factor(&k).ok()?;

        let na = active.len();
        let mut x = vec![T::zero(); n];
        let mut ya = vec![T::zero(); na];
        let done = T::epsilon() * T::lit(10.0);
        // iterative refinement against the unregularized KKT system
        let mut res = T::infinity();
        for _ in 0..8 {
            let (r1, r2) = self.kkt_residual(active, &x, &ya)?;
            res = norm_inf(&r1).max(norm_inf(&r2));
            if res <= done {
                break;
            }
            // (P + δI + C_AᵀC_A/δ) Δx = r1 + C_Aᵀ r2 / δ ;  Δy = (C_A Δx − r2)/δ
            let mut rhs = r1;
            for (a, &(r, _)) in active.iter().enumerate() {
                for &(j, v) in &self.c_s.rows[r] {
                    rhs[j] += v * r2[a] * inv_delta;
                }
            }
            chol.solve_in_place(&mut rhs);
            for j in 0..n {
                x[j] += rhs[j];
            }
            for (a, &(r, _)) in active.iter().enumerate() {
                let cdx: T = self.c_s.rows[r].iter().map(|&(j, v)| v * rhs[j]).sum();
                ya[a] += (cdx - r2[a]) * inv_delta;
            }
        }
        if res <= done {
            return Some((x, ya));
        }

        // slow refinement: refine with [P + εI, C_Aᵀ; C_A, 0] instead
        let dim = n + na;
        let eps = T::lit(1e-10) * self.p_s.max_abs().max(T::one());
        let mut kkt = Matrix::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                kkt[(r, c)] = self.p_s[(r, c)];
            }
            kkt[(r, r)] += eps;
        }
        for (a, &(r, _)) in active.iter().enumerate() {
            for &(j, v) in &self.c_s.rows[r] {
                kkt[(n + a, j)] = v;
                kkt[(j, n + a)] = v;
            }
        }
        let Ok(lu) = Lu::factor(&kkt) else {
            return Some((x, ya));
        };
        for _ in 0..6 {
            let (r1, r2) = self.kkt_residual(active, &x, &ya)?;
            let next = norm_inf(&r1).max(norm_inf(&r2));
            if next <= done {
                break;
            }
            let rhs: Vec<T> = r1.into_iter().chain(r2).collect();
            let step = lu.solve_vec(&rhs).ok()?;
            for j in 0..n {
                x[j] += step[j];
            }
            for a in 0..na {
                ya[a] += step[n + a];
            }
        }
        Some((x, ya))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_identity() {
        let p = QpProblem::unconstrained(Matrix::<f64>::identity(2), vec![-1.0, -2.0]);
        let s = solve_qp(&p, 1e-8, 50_000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z[0] - 1.0).abs() < 1e-8 && (s.z[1] - 2.0).abs() < 1e-8);
        assert!((s.objective + 2.5).abs() < 1e-8);
    }

    #[test]
    fn clamped_scalar() {
        let mut p = QpProblem::unconstrained(Matrix::<f64>::identity(1), vec![0.0]);
        p.lower = vec![2.0];
        p.upper = vec![3.0];
        let s = solve_qp(&p, 1e-8, 50_000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z[0] - 2.0).abs() < 1e-9);
        assert!(s.box_duals[0] < 0.0);
    }

    #[test]
    fn contradictory_box() {
        let mut p = QpProblem::unconstrained(Matrix::<f64>::identity(1), vec![0.0]);
        p.lower = vec![1.0];
        p.upper = vec![0.0];
        let s = solve_qp(&p, 1e-8, 1000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_eq!(s.infeasibility, Some(Infeasibility::BoxContradiction));
    }

    #[test]
    fn infeasible_rows_are_certified() {
        // z ≤ -1 and z ≥ 1 (as −z ≤ −1)
        let mut p = QpProblem::unconstrained(Matrix::<f64>::identity(1), vec![0.0]);
        p.ineq = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        p.ineq_upper = vec![-1.0, -1.0];
        let s = solve_qp(&p, 1e-8, 50_000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_eq!(s.infeasibility, Some(Infeasibility::Primal));
    }

    #[test]
    fn unbounded_linear_objective() {
        let mut p = QpProblem::unconstrained(Matrix::<f64>::zeros(1, 1), vec![1.0]);
        p.upper = vec![5.0];
        let s = solve_qp(&p, 1e-8, 50_000).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert_eq!(s.infeasibility, Some(Infeasibility::Unbounded));
    }

    #[test]
    fn rejects_indefinite_and_mismatched() {
        let p = QpProblem::unconstrained(Matrix::<f64>::from_diag(&[1.0, -1.0]), vec![0.0, 0.0]);
        assert!(matches!(solve_qp(&p, 1e-8, 10), Err(Error::InvalidProblem(_))));
        let p = QpProblem::unconstrained(Matrix::<f64>::identity(3), vec![0.0, 0.0]);
        assert!(matches!(solve_qp(&p, 1e-8, 10), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn linear_program_over_box_with_rows() {
        // min −z0 − z1  s.t. z0 + z1 ≤ 1, z ∈ [0, 1]²; any point on the edge is optimal
        let mut p = QpProblem::unconstrained(Matrix::<f64>::zeros(2, 2), vec![-1.0, -1.0]);
        p.ineq = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        p.ineq_upper = vec![1.0];
        p.lower = vec![0.0, 0.0];
        p.upper = vec![1.0, 1.0];
        let s = solve_qp(&p, 1e-8, 50_000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.objective + 1.0).abs() < 1e-7);
    }

    #[test]
    fn single_precision_solve() {
        let p = QpProblem::unconstrained(Matrix::<f32>::identity(2), vec![-1.0, 1.0]);
        let s = solve_qp(&p, 1e-5, 10_000).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.z[0] - 1.0).abs() < 1e-4);
    }
}
