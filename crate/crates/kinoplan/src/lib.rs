//! Constrained kinodynamic trajectory planning on planar serial arms.
//!
//! Trajectories are pairs of clamped B-splines over a phase variable: a
//! joint-space path and a positive inverse time rate. Boundary conditions are
//! solved into the first and last control points in closed form, constraints
//! become budgeted loss terms weighted by a learned diagonal metric, and both
//! a direct gradient planner and a self-supervised neural planner optimize
//! the same loss with exact reverse-mode gradients.
//!
//! Start at [`problem`] for task definitions, [`planner`] for per-problem
//! optimization, [`network`] for the amortized planner, and [`harness`] for
//! generation, validation, and evaluation.

pub mod constraints;
pub mod exec;
pub mod harness;
pub mod metric;
pub mod network;
pub mod planner;
pub mod problem;
pub mod robot;
pub mod selftest;
pub mod spline;
pub mod tape;
pub mod trajectory;

pub use constraints::{ConstraintSet, ConstraintTerm, LossBreakdown};
pub use metric::ManifoldMetric;
pub use network::PlannerNetwork;
pub use planner::{direct_plan, OptimizerConfig, PlanResult};
pub use problem::{PlanningProblem, TaskKind};
pub use robot::PlanarArm;
pub use trajectory::{BoundaryConditions, PhaseTrajectory, SplineShape};
