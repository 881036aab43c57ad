//! Self-contained dense LP and QP solvers.
//!
//! Problem sizes in this toolkit are tiny in the decision dimension (≤ 10)
//! but can carry thousands of constraint rows, and test determinism
//! matters, so both solvers are implemented here rather than pulled in.

pub mod lp;
pub mod qp;

pub use lp::{solve_lp, LinearProgram, SolveResult, Status};
pub use qp::{solve_qp, solve_qp_warm, QuadraticProgram, WarmStart};
