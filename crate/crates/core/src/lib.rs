//! Prioritized control-barrier-function safety filtering for velocity-
//! controlled serial manipulators.
//!
//! The crate wraps an arbitrary velocity-level performance controller in a
//! quadratic program that enforces obstacle clearance constraints. Obstacles
//! carry priorities: when every constraint can be met the filter returns the
//! performance command (or its closest safe projection), and when the
//! constraint set becomes infeasible the filter buys feasibility by relaxing
//! low-priority constraints through penalized slack variables, never the
//! protected ones.
//!
//! Modules mirror the data flow: [`chain`] provides kinematics, [`barrier`]
//! turns obstacle states into linear velocity constraints, [`qp`] solves the
//! resulting programs, [`filter`] assembles and runs them, [`world`] steps
//! closed-loop scenarios, and [`metrics`] reduces rollouts to summary
//! statistics. [`reference`] holds slow independent implementations used only
//! by the test suites.

pub mod barrier;
pub mod chain;
pub mod controller;
pub mod error;
pub mod filter;
pub mod metrics;
pub mod qp;
pub mod reference;
pub mod scalar;
pub mod scenario;
pub mod trajectory;
pub mod world;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision kinematic chain, the default throughout the simulator.
pub type KinematicChain = chain::KinematicChain<f64>;
/// Double-precision QP problem.
pub type QpProblem = qp::QpProblem<f64>;
/// Double-precision safety filter, the default throughout the simulator.
pub type SafetyFilter = filter::SafetyFilter<f64>;
