//! Big-M mixed-integer reformulation and its continuous relaxation.
//!
//! Variables are `(δ, z, b)` with `δ = x − x̄`, `z ∈ ℝᵐ`, `b ∈ [0, 1]ᵐ`:
//!
//! ```text
//! min  δᵀ J⁻ δ + Σ zᵢ²/σᵢ²
//! s.t. |zᵢ|                ≤ Mᵢ bᵢ
//!      |νᵢ − hᵢ δ − zᵢ|    ≤ Mᵢ (1 − bᵢ)
//!      Σᵢ bᵢ aᵢₖ           ≥ cₖ           (information rows)
//! ```
//!
//! with `νᵢ = yᵢ − hᵢ x̄`. For binary `b`, `zᵢ` equals the residual when
//! `bᵢ = 1` and is zero otherwise, so the objective is the risk whenever
//! every unselected residual fits within `Mᵢ`.

use crate::linalg::Matrix;
use crate::qp::QpProblem;
use crate::scalar::Real;

/// A linear information row `Σ coeffs[i] bᵢ ≥ rhs`.
#[derive(Debug, Clone)]
pub(crate) struct InfoRow<T> {
    pub coeffs: Vec<T>,
    pub rhs: T,
}

impl<T: Real> InfoRow<T> {
    /// `vᵀ J(b) v ≥ vᵀ J_d v` written in `b`.
    pub fn along(v: &[T], rows: &Matrix<T>, sigmas: &[T], prior_info: &Matrix<T>, target: &Matrix<T>) -> Self {
        let coeffs = (0..rows.rows())
            .map(|i| {
                let hv = crate::linalg::dot(rows.row(i), v);
                hv * hv / (sigmas[i] * sigmas[i])
            })
            .collect();
        Self {
            coeffs,
            rhs: target.quad_form(v) - prior_info.quad_form(v),
        }
    }

    #[cfg(test)]
    pub fn violation(&self, b: &[T]) -> T {
        self.rhs - crate::linalg::dot(&self.coeffs, b)
    }
}

/// Fixed part of the node problem; nodes only change the `b` boxes and
/// append information rows.
#[derive(Debug, Clone)]
pub(crate) struct Relaxation<T> {
    n: usize,
    m: usize,
    base: QpProblem<T>,
}

impl<T: Real> Relaxation<T> {
    pub fn new(prior_info: &Matrix<T>, rows: &Matrix<T>, sigmas: &[T], innovations: &[T], big_m: &[T]) -> Self {
        let n = prior_info.rows();
        let m = rows.rows();
        let dim = n + 2 * m;
        let two = T::lit(2.0);

        let mut hessian = Matrix::zeros(dim, dim);
        for r in 0..n {
            for c in 0..n {
                hessian[(r, c)] = two * prior_info[(r, c)];
            }
        }
        for i in 0..m {
            hessian[(n + i, n + i)] = two / (sigmas[i] * sigmas[i]);
        }

        let mut ineq = Matrix::zeros(4 * m, dim);
        let mut upper = vec![T::zero(); 4 * m];
        for i in 0..m {
            let (zi, bi) = (n + i, n + m + i);
            let mi = big_m[i];
            let h = rows.row(i);
            let r0 = 4 * i;
            ineq[(r0, zi)] = T::one();
            ineq[(r0, bi)] = -mi;
            ineq[(r0 + 1, zi)] = -T::one();
            ineq[(r0 + 1, bi)] = -mi;
            for c in 0..n {
                ineq[(r0 + 2, c)] = -h[c];
                ineq[(r0 + 3, c)] = h[c];
            }
            ineq[(r0 + 2, zi)] = -T::one();
            ineq[(r0 + 2, bi)] = mi;
            upper[r0 + 2] = mi - innovations[i];
            ineq[(r0 + 3, zi)] = T::one();
            ineq[(r0 + 3, bi)] = mi;
            upper[r0 + 3] = mi + innovations[i];
        }

        let inf = T::infinity();
        let mut lower = vec![-inf; dim];
        let mut up = vec![inf; dim];
        for i in 0..m {
            lower[n + m + i] = T::zero();
            up[n + m + i] = T::one();
        }
        Self {
            n,
            m,
            base: QpProblem {
                hessian,
                linear: vec![T::zero(); dim],
                ineq,
                ineq_upper: upper,
                lower,
                upper: up,
            },
        }
    }

    pub fn b_range(&self) -> std::ops::Range<usize> {
        self.n + self.m..self.n + 2 * self.m
    }

    /// Lagrangian dual value of a node problem at multipliers `y ≥ 0` of its
    /// `A` rows (negative entries are clipped). The `(δ, z)` block is
    /// minimized in closed form and `b` over its box, so the result is a
    /// valid lower bound for any `y`, converged or not.
    pub fn dual_bound(&self, p: &QpProblem<T>, y: &[T], prior_cov: &Matrix<T>, sigmas: &[T]) -> T {
        let y: Vec<T> = y.iter().map(|v| v.max(T::zero())).collect();
        let g = p.ineq.tr_mul_vec(&y).expect("multiplier length matches rows");
        let quarter = T::lit(0.25);
        let mut val = -quarter * prior_cov.quad_form(&g[..self.n]);
        for i in 0..self.m {
            let gz = g[self.n + i];
            val -= quarter * sigmas[i] * sigmas[i] * gz * gz;
            let gb = g[self.n + self.m + i];
            let off = self.n + self.m + i;
            val += (gb * p.lower[off]).min(gb * p.upper[off]);
        }
        val - crate::linalg::dot(&y, &p.ineq_upper)
    }

    /// Node problem with `b ∈ [lo, hi]` and the given information rows
    /// (as `−Σ aᵢ bᵢ ≤ −c`).
    pub fn node_problem(&self, lo: &[T], hi: &[T], info_rows: &[&InfoRow<T>]) -> QpProblem<T> {
        let mut p = self.base.clone();
        let off = self.n + self.m;
        p.lower[off..off + self.m].copy_from_slice(lo);
        p.upper[off..off + self.m].copy_from_slice(hi);
        if !info_rows.is_empty() {
            let dim = p.dim();
            let k0 = p.ineq.rows();
            let mut data = p.ineq.as_slice().to_vec();
            data.resize((k0 + info_rows.len()) * dim, T::zero());
            for (k, row) in info_rows.iter().enumerate() {
                let start = (k0 + k) * dim + off;
                for (i, &a) in row.coeffs.iter().enumerate() {
                    data[start + i] = -a;
                }
                p.ineq_upper.push(-row.rhs);
            }
            p.ineq = Matrix::new(k0 + info_rows.len(), dim, data).expect("sized above");
        }
        p
    }
}
