//! Planning problem definitions and the two benchmark task families.
//!
//! `reach_on_line` pins the end effector to a line segment while reaching a
//! goal configuration with a prescribed hit velocity along the line.
//! `transfer_with_orientation` carries an object between two pedestals with a
//! fixed end-effector heading and collision clearance. Both map onto the same
//! constraint-term vocabulary; only budgets, geometry, and initial metric
//! weights differ.

use crate::constraints::{Aabb, ConstraintSet, ConstraintTerm, SurfaceBounds, DEFAULT_CLEARANCE};
use crate::metric::{ManifoldMetric, DEFAULT_GAMMA};
use crate::trajectory::BoundaryConditions;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ReachOnLine,
    TransferWithOrientation,
}

/// One planning instance: boundary conditions plus the task's constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub kind: TaskKind,
    pub bc: BoundaryConditions,
    pub constraints: ConstraintSet,
}

impl PlanningProblem {
    pub fn dof(&self) -> usize {
        self.bc.dof()
    }

    /// Initial metric for this task's term ordering: unit weights except the
    /// reach task, whose weights start at `[1, 1, 1e-2, 1e-4]` for
    /// `[surface, velocity, acceleration, torque]` to equalize the initial
    /// gradient magnitudes of the loss terms.
    pub fn initial_metric(&self) -> ManifoldMetric {
        match self.kind {
            TaskKind::ReachOnLine => {
                ManifoldMetric::from_weights(&[1.0, 1.0, 1e-2, 1e-4], DEFAULT_GAMMA)
            }
            TaskKind::TransferWithOrientation => ManifoldMetric::identity(self.constraints.len()),
        }
    }
}

/// Geometry of the reach-on-line task, desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachGeometry {
    /// The work line `y = line_y` the end effector must stay on.
    pub line_y: f64,
    /// Reachable extent of the line.
    pub x_min: f64,
    pub x_max: f64,
    /// Start-position range along the line.
    pub start_x: [f64; 2],
    /// Goal-position range along the line.
    pub goal_x: [f64; 2],
    /// Minimum separation between start and goal along the line.
    pub min_separation: f64,
    /// Largest commanded end-effector hit speed along the line.
    pub max_hit_speed: f64,
}

impl Default for ReachGeometry {
    fn default() -> Self {
        Self {
            line_y: 0.4,
            x_min: -0.3,
            x_max: 0.5,
            start_x: [-0.25, -0.15],
            goal_x: [-0.05, 0.45],
            min_separation: 0.1,
            max_hit_speed: 0.8,
        }
    }
}

impl ReachGeometry {
    /// Constraint set with the reach-task violation budgets:
    /// surface 2e-6, velocity 6e-3, acceleration 6e-2, torque 6e-1, plus the
    /// curvature-regularized task loss with weight 0.01.
    pub fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet {
            terms: vec![
                ConstraintTerm::Surface {
                    budget: 2e-6,
                    bounds: SurfaceBounds {
                        x_min: self.x_min,
                        x_max: self.x_max,
                        y_line: self.line_y,
                    },
                },
                ConstraintTerm::Velocity { budget: 6e-3 },
                ConstraintTerm::Acceleration { budget: 6e-2 },
                ConstraintTerm::Torque { budget: 6e-1 },
            ],
            curvature_weight: 0.01,
        }
    }
}

/// Geometry of the pedestal-to-pedestal transfer task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferGeometry {
    pub pedestals: [Aabb; 2],
    /// Fixed end-effector heading to hold throughout the motion.
    pub carry_heading: f64,
    /// Chain clearance radius around the pedestals.
    pub clearance: f64,
    /// Carried-object corner offsets in the end-effector frame.
    pub object_corners: Vec<[f64; 2]>,
    /// End-effector height band for the pick and place poses.
    pub ee_height: [f64; 2],
    /// Lateral placement range over each pedestal, relative to its center.
    pub lateral_slack: f64,
}

impl Default for TransferGeometry {
    fn default() -> Self {
        Self {
            pedestals: [
                Aabb::new([-0.55, 0.0], [-0.25, 0.25]),
                Aabb::new([0.25, 0.0], [0.55, 0.25]),
            ],
            carry_heading: std::f64::consts::FRAC_PI_2,
            clearance: DEFAULT_CLEARANCE,
            // 0.10 x 0.15 object hanging below the grip point.
            object_corners: vec![[-0.05, -0.02], [0.05, -0.02], [-0.05, -0.17], [0.05, -0.17]],
            // The wrist rides one link length below the end effector at the
            // carry heading, so the carry band sits well above the pedestals.
            ee_height: [0.62, 0.68],
            lateral_slack: 0.08,
        }
    }
}

impl TransferGeometry {
    /// Constraint set with the transfer-task violation budgets: collision
    /// terms 1e-6, orientation 1e-5, velocity 6e-3, acceleration and torque
    /// 6e-2. Plain time-minimal task loss.
    pub fn constraint_set(&self) -> ConstraintSet {
        let boxes = self.pedestals.to_vec();
        ConstraintSet {
            terms: vec![
                ConstraintTerm::RobotCollision {
                    budget: 1e-6,
                    boxes: boxes.clone(),
                    clearance: self.clearance,
                },
                ConstraintTerm::ObjectCollision {
                    budget: 1e-6,
                    boxes,
                    corners: self.object_corners.clone(),
                },
                ConstraintTerm::Orientation {
                    budget: 1e-5,
                    heading: self.carry_heading,
                },
                ConstraintTerm::Velocity { budget: 6e-3 },
                ConstraintTerm::Acceleration { budget: 6e-2 },
                ConstraintTerm::Torque { budget: 6e-2 },
            ],
            curvature_weight: 0.0,
        }
    }
}
