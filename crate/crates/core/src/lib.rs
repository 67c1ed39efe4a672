//! Relaxed hybrid proximal extragradient method of multipliers for smooth
//! convex programs `min f(x) s.t. g(x) <= 0`, driven by second-order models.

pub mod certificates;
pub mod decimal;
pub mod error;
pub mod error_measure;
pub mod hpe;
#[cfg(feature = "oracles")]
pub mod oracles;
pub mod problem;
pub mod quad_model;
pub mod saddle;
pub mod solver;
pub mod subproblem;

pub use error::{Error, Result};
pub use problem::{builtin_problem, ConvexProgram, PrimalDual, ProblemDescriptor};
