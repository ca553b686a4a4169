//! Task-adaptive proximal ADMM for `min l(Qx) + g(y)  s.t.  Ax + By = c`.
//!
//! The x-subproblem is handed to a pluggable [`modules::TaskModule`] and its
//! output is accepted only when an error-control test on the fixed-point
//! residual passes; otherwise it is blended with a certified fallback.
//! Exact, linearized and proximal ADMM are provided as references, together
//! with TV restoration builders and PGM/PPM and CSV I/O.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod applications;
pub mod baseline;
pub mod cli;
pub mod error;
pub mod io;
pub mod linops;
pub mod modules;
pub mod problem;
pub mod subproblem;
pub mod tpadmm;
pub mod trace;

pub use error::{Error, Result};
pub use linops::{LinearMap, SpdSystem};
pub use problem::{IterateW, ProximalWeight, Regularizer, SeparableProblem, SmoothLoss};
pub use tpadmm::{tpadmm_solve, ErrorController, TpadmmConfig};
pub use trace::SolveTrace;
