//! Numerical laboratory for the discrete coagulation-fragmentation equations
//! with spatial diffusion.
//!
//! The crate simulates the truncated system
//!
//! ```text
//! ∂_t c_i - d_i Δ c_i = Q_i^n(c) + F_i^n(c),   1 ≤ i ≤ n,   Neumann boundary,
//! ```
//!
//! records moments and gelation diagnostics across truncation refinement,
//! and audits the inequalities used in moment and duality estimates.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod audit;
pub mod cli;
pub mod diagnostics;
pub mod duality;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod oracle;
pub mod reaction;
pub mod scenario;
pub mod solver;
pub mod state;

pub use audit::{AuditCheck, AuditReport};
pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use kernels::{KernelSet, TruncatedKernels};
pub use state::{TruncatedState, TruncationMode};
