//! Multistage risk-averse optimal control on scenario trees.
//!
//! The problem is cast as `min f(z) + g(Lz)` and solved with Chambolle-Pock
//! iterations, globalised by a SuperMann outer loop that uses Anderson
//! acceleration for its fast directions. Every heavy kernel (projection on
//! the dynamics, the operator `L` and its adjoint, the cone projections) is
//! organised per stage or per node of the tree and runs on the rayon pool.
//!
//! All numerical code is generic over [`Real`]; the aliases at the bottom of
//! this file fix the scalar to `f64`, which is what the solver is tuned for.

pub mod error;
mod linalg;
pub mod oper;
pub mod oracle;
pub mod par;
pub mod problem;
pub mod proj;
pub mod risk;
pub mod scalar;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;

pub use oper::{DualLayout, LinearOperator, OpNormEstimate, PrimalLayout};
pub use problem::{BoxSet, Raocp};
pub use risk::{ConeDesc, ConeKind, RiskSpec};
pub use solver::{Solution, SpockParams, SpockStatus, Termination};
pub use tree::ScenarioTree;

/// Problem data in double precision.
pub type Raocp64 = problem::Raocp<f64>;
/// Problem data in single precision.
pub type Raocp32 = problem::Raocp<f32>;
/// Risk specification in double precision.
pub type RiskSpec64 = risk::RiskSpec<f64>;
/// Solver in double precision.
pub type Spock64 = solver::Spock<f64>;
/// Solver in single precision.
pub type Spock32 = solver::Spock<f32>;
/// Solver parameters in double precision.
pub type SpockParams64 = solver::SpockParams<f64>;
