//! Outlier-accommodating linear state estimation.
//!
//! The crate provides the selection-weighted MAP measurement update, the
//! Kalman-filter and threshold-decision baselines, and a risk-averse
//! measurement selector that picks the binary selection `b` minimizing
//!
//! ```text
//! Σ bᵢ ((yᵢ − hᵢ x)/σᵢ)² + (x − x̄)ᵀ J⁻ (x − x̄)
//! ```
//!
//! subject to a lower bound on the posterior information `J(b)`, either on
//! its diagonal ([`selector::solve_diag_raps`]) or as a matrix inequality
//! ([`selector::solve_full_raps`]). The products `bᵢ·(yᵢ − hᵢ x)` are
//! linearized with big-M constraints and the resulting mixed-binary convex
//! QP is solved exactly by branch-and-bound over [`qp`] relaxations.
//!
//! All numerics are generic over [`Real`]; the `*64` aliases below fix the
//! scalar to `f64`, which is what the simulation and CLI use.

pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod linalg;
pub mod qp;
pub mod scalar;
pub mod selector;
pub mod types;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use scalar::Real;
pub use types::{InfoSpec, MeasurementBatch, SelectionMode, SelectionVector, SolveReport, SolveStatus, StateBelief};

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type StateBelief64 = StateBelief<f64>;
pub type MeasurementBatch64 = MeasurementBatch<f64>;
pub type SelectionVector64 = SelectionVector<f64>;
pub type InfoSpec64 = InfoSpec<f64>;
pub type SolveReport64 = SolveReport<f64>;
pub type QpProblem64 = qp::QpProblem<f64>;
pub type RapsInstance64 = selector::RapsInstance<f64>;
pub type BnbOptions64 = selector::BnbOptions<f64>;
