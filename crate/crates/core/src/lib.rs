//! Synthesis and formal verification of smooth control Lyapunov-barrier
//! functions for control-affine systems with bounded inputs.
//!
//! The pipeline: build a log-sum-exp barrier from state constraints, verify the
//! strict barrier, Lyapunov and compatibility conditions with an interval
//! branch-and-prune checker, rescale the Lyapunov candidate, patch the two into
//! one certificate, and extract admissible feedback laws from it.

pub mod certificates;
pub mod cli;
pub mod controllers;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod simulator;
pub mod system;
pub mod verifier;

pub use error::{Error, ExprError, Result};
pub use expr::{Expr, HyperBox, Interval};
