//! Quasi-Newton bilevel optimization.
//!
//! The lower-level problem is solved with a few gradient steps followed by
//! matrix-free BFGS or SR1 steps; the curvature pairs that solve collects (or
//! a handful of fresh probe pairs) then give the inverse-Hessian action needed
//! for the hypergradient, without ever forming a Hessian.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common `f64` instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod direction;
pub mod driver;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod linalg;
pub mod lower;
pub mod problem;
pub mod problems;
pub mod rng;
pub mod scalar;

pub use baselines::{cg_direction, neumann_direction, CgConfig, NeumannConfig};
pub use direction::{
    shared_pairs_direction, subroutine_b, DirectionConfig, DirectionResult, Selection, XiRule,
};
pub use driver::{
    exact_hypergradient, fd_hypergradient, hypergradient_estimate, phi_value, qnbo_solve,
    qnbo_step, Estimator, IterateState, QSchedule, QnboConfig, QnboOutcome, QnboRun, SolveFailure,
    TraceRecord,
};
pub use error::{Phase, QnboError, Result};
pub use kernels::{
    apply_inverse, bfgs_two_loop, sr1_apply, CurvaturePair, InitScale, PairHistory, QnMode,
};
pub use lower::{solve_lower, LowerSolveConfig, LowerSolveResult};
pub use problem::{BilevelProblem, Counted, LowerConstants, OracleCounts};
pub use scalar::Scalar;

pub type PairHistoryF64 = PairHistory<f64>;
pub type LowerSolveConfigF64 = LowerSolveConfig<f64>;
pub type DirectionConfigF64 = DirectionConfig<f64>;
pub type QnboConfigF64 = QnboConfig<f64>;
pub type TraceRecordF64 = TraceRecord<f64>;
pub type IterateStateF64 = IterateState<f64>;
pub type QuadraticToyF64 = problems::QuadraticToy<f64>;
pub type LogRegHpoF64 = problems::LogRegHpo<f64>;
pub type HyperCleanF64 = problems::HyperCleanProblem<f64>;
pub type DatasetF64 = problems::Dataset<f64>;

pub type QnboConfigF32 = QnboConfig<f32>;
pub type QuadraticToyF32 = problems::QuadraticToy<f32>;
