//! Convex QP/LP solving with the dynamics of a two-layer event-based
//! recurrent network.
//!
//! The crate provides:
//!
//! * [`problem`]: the QP model, sparse matrices, validation and JSON files;
//! * [`precond`]: Ruiz equilibration and exact unscaling;
//! * [`reference`]: full-precision gradient-descent, constraint-corrected and
//!   primal-dual (PIPG) iterations, used as convergence oracles;
//! * [`fxp`]: saturating fixed-point tensors and quantized sparse weights;
//! * [`neurosolver`]: the fixed-point network solver with message/MAC
//!   accounting and a multi-core partition cost model;
//! * [`mpcgen`]: block-sparse MPC problem generation and resource counts;
//! * [`bench`]: gap, scaling and warm-start studies with CSV/JSON output.

pub mod bench;
pub mod error;
pub mod fxp;
pub mod mpcgen;
pub mod neurosolver;
pub mod precond;
pub mod problem;
pub mod reference;

pub use error::{Error, Result};
pub use problem::{BoxBounds, QpProblem, Sense, Solution, SparseMatrix};
