//! Constraint-loss calculus.
//!
//! Every constraint is expressed as a non-negative pointwise loss over the
//! joint state `(q, dq, ddq)`: equalities through a Huber penalty on the
//! residual, inequalities through `huber(relu(violation))`. The relu-squared
//! shape near zero is what analytic slack elimination of `g + mu^2 = 0`
//! produces, so satisfied states have exactly zero loss and zero slope.
//!
//! Losses integrate over the phase grid against `1/r(s) ds`, which is the
//! time measure, so with a unit task loss the task integral is exactly the
//! trajectory duration.
//!
//! The pointwise kernels are generic over [`Real`]; the taped instantiation
//! drives the planner and trainer gradients.

use crate::metric::ManifoldMetric;
use crate::robot::{
    ee_curvature_speed_kernel, ee_position_kernel, heading_kernel, inverse_dynamics_kernel,
    joint_positions_kernel, PlanarArm,
};
use crate::tape::Real;
use crate::trajectory::{PhaseTrajectory, TrajectoryError};
use serde::{Deserialize, Serialize};

/// Huber threshold shared by all loss terms: quadratic inside the unit band,
/// linear outside, so constraint gradients stay bounded.
pub const HUBER_DELTA: f64 = 1.0;

/// Default clearance radius for the robot-chain collision term (meters).
pub const DEFAULT_CLEARANCE: f64 = 0.15;

/// Default spacing of the chain sample points used by collision terms.
pub const CHAIN_SPACING: f64 = 0.1;

/// Penalty form of an inequality constraint `c <= 0`: the analytic minimum
/// over the slack in `(c + mu^2)^2`, which collapses to `max(c, 0)^2`.
/// Continuous with zero derivative at the boundary.
pub fn inequality_penalty(c: f64) -> f64 {
    let r = c.max(0.0);
    r * r
}

pub fn huber(x: f64, delta: f64) -> f64 {
    assert!(delta > 0.0, "huber threshold must be positive");
    huber_kernel(x, delta)
}

fn huber_kernel<R: Real>(x: R, delta: f64) -> R {
    if x.value().abs() <= delta {
        x * x * 0.5
    } else {
        x.abs() * delta - delta * delta * 0.5
    }
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Aabb {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        assert!(min[0] <= max[0] && min[1] <= max[1], "degenerate box");
        Self { min, max }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Euclidean distance from a point to the box (zero inside).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        distance_kernel((), self, [p[0], p[1]])
    }

    /// Penetration depth for a point inside the box (zero outside): distance
    /// to the nearest face.
    pub fn penetration(&self, p: [f64; 2]) -> f64 {
        penetration_kernel((), self, [p[0], p[1]])
    }
}

fn distance_kernel<R: Real>(ctx: R::Ctx, b: &Aabb, p: [R; 2]) -> R {
    let dx = (p[0].rsub(b.min[0])).relu() + (p[0] - b.max[0]).relu();
    let dy = (p[1].rsub(b.min[1])).relu() + (p[1] - b.max[1]).relu();
    let sq = dx * dx + dy * dy;
    // Taped sqrt has an unbounded gradient at zero; inside the box the
    // distance is locally constant anyway.
    if sq.value() > 0.0 {
        sq.sqrt()
    } else {
        R::lift(ctx, 0.0)
    }
}

fn penetration_kernel<R: Real>(ctx: R::Ctx, b: &Aabb, p: [R; 2]) -> R {
    if !b.contains([p[0].value(), p[1].value()]) {
        return R::lift(ctx, 0.0);
    }
    let depth = (p[0] - b.min[0])
        .min2(p[0].rsub(b.max[0]))
        .min2(p[1] - b.min[1])
        .min2(p[1].rsub(b.max[1]));
    depth.relu()
}

fn min_distance_to_boxes<R: Real>(ctx: R::Ctx, boxes: &[Aabb], p: [R; 2]) -> R {
    let mut best = R::lift(ctx, f64::INFINITY);
    for b in boxes {
        best = best.min2(distance_kernel(ctx, b, p));
    }
    best
}

/// Bounds for the line-constrained end-effector task: the end effector must
/// stay inside `[x_min, x_max]` and on the line `y = y_line`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_line: f64,
}

/// One constraint term with its violation budget (the square of the tolerable
/// violation level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintTerm {
    Velocity {
        budget: f64,
    },
    Acceleration {
        budget: f64,
    },
    Torque {
        budget: f64,
    },
    Surface {
        budget: f64,
        bounds: SurfaceBounds,
    },
    Orientation {
        budget: f64,
        heading: f64,
    },
    RobotCollision {
        budget: f64,
        boxes: Vec<Aabb>,
        clearance: f64,
    },
    ObjectCollision {
        budget: f64,
        boxes: Vec<Aabb>,
        corners: Vec<[f64; 2]>,
    },
}

impl ConstraintTerm {
    pub fn budget(&self) -> f64 {
        match self {
            Self::Velocity { budget }
            | Self::Acceleration { budget }
            | Self::Torque { budget }
            | Self::Surface { budget, .. }
            | Self::Orientation { budget, .. }
            | Self::RobotCollision { budget, .. }
            | Self::ObjectCollision { budget, .. } => *budget,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Velocity { .. } => "velocity",
            Self::Acceleration { .. } => "acceleration",
            Self::Torque { .. } => "torque",
            Self::Surface { .. } => "surface",
            Self::Orientation { .. } => "orientation",
            Self::RobotCollision { .. } => "robot_collision",
            Self::ObjectCollision { .. } => "object_collision",
        }
    }
}

/// The constraint terms of a task plus the curvature weight of its task loss
/// (`task = 1 + weight * kappa * v^2` per unit time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub terms: Vec<ConstraintTerm>,
    #[serde(default)]
    pub curvature_weight: f64,
}

impl ConstraintSet {
    pub fn budgets(&self) -> Vec<f64> {
        self.terms.iter().map(ConstraintTerm::budget).collect()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Per-term integrated losses, integrated task loss, and the total under a
/// metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub per_term: Vec<f64>,
    pub task: f64,
    pub total: f64,
}

// Pointwise loss kernels, generic over plain and taped scalars.

pub(crate) fn velocity_loss_kernel<R: Real>(ctx: R::Ctx, model: &PlanarArm, dq: &[R]) -> R {
    limit_loss_kernel(ctx, dq, &model.limits.velocity)
}

pub(crate) fn acceleration_loss_kernel<R: Real>(ctx: R::Ctx, model: &PlanarArm, ddq: &[R]) -> R {
    limit_loss_kernel(ctx, ddq, &model.limits.acceleration)
}

pub(crate) fn torque_loss_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    q: &[R],
    dq: &[R],
    ddq: &[R],
) -> R {
    let tau = inverse_dynamics_kernel(ctx, model, q, dq, ddq);
    limit_loss_kernel(ctx, &tau, &model.limits.torque)
}

fn limit_loss_kernel<R: Real>(ctx: R::Ctx, values: &[R], limits: &[f64]) -> R {
    let mut total = R::lift(ctx, 0.0);
    for (v, &lim) in values.iter().zip(limits) {
        total = total + huber_kernel((v.abs() - lim).relu(), HUBER_DELTA);
    }
    total
}

pub(crate) fn surface_loss_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    q: &[R],
    bounds: &SurfaceBounds,
) -> R {
    let ee = ee_position_kernel(model, q);
    // x stays within bounds (inequalities), y tracks the line (equality).
    let lo = huber_kernel((ee[0].rsub(bounds.x_min)).relu(), HUBER_DELTA);
    let hi = huber_kernel((ee[0] - bounds.x_max).relu(), HUBER_DELTA);
    let line = huber_kernel(ee[1] - bounds.y_line, HUBER_DELTA);
    let _ = ctx;
    lo + hi + line
}

pub(crate) fn orientation_loss_kernel<R: Real>(q: &[R], heading_d: f64) -> R {
    let err = (heading_kernel(q) - heading_d).cos().rsub(1.0);
    huber_kernel(err, HUBER_DELTA)
}

pub(crate) fn robot_collision_loss_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    q: &[R],
    boxes: &[Aabb],
    clearance: f64,
) -> R {
    let joints = joint_positions_kernel(ctx, model, q);
    let mut total = R::lift(ctx, 0.0);
    let mut prev: [R; 2] = [R::lift(ctx, 0.0), R::lift(ctx, 0.0)];
    for (i, joint) in joints.iter().enumerate() {
        // Interpolate along the link so samples are at most CHAIN_SPACING apart.
        let link_len = model.links[i].length;
        let segments = (link_len / CHAIN_SPACING).ceil().max(1.0) as usize;
        for k in 1..=segments {
            let t = k as f64 / segments as f64;
            let p = [
                prev[0] + (joint[0] - prev[0]) * t,
                prev[1] + (joint[1] - prev[1]) * t,
            ];
            let d = min_distance_to_boxes(ctx, boxes, p);
            total = total + d.rsub(clearance).relu();
        }
        prev = *joint;
    }
    // Base point.
    let base = [R::lift(ctx, 0.0), R::lift(ctx, 0.0)];
    let d = min_distance_to_boxes(ctx, boxes, base);
    total = total + d.rsub(clearance).relu();
    huber_kernel(total, HUBER_DELTA)
}

pub(crate) fn object_collision_loss_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    q: &[R],
    boxes: &[Aabb],
    corners: &[[f64; 2]],
) -> R {
    let ee = ee_position_kernel(model, q);
    let heading = heading_kernel(q);
    let cos = heading.cos();
    let sin = heading.sin();
    let mut total = R::lift(ctx, 0.0);
    for c in corners {
        let p = [
            ee[0] + cos * c[0] - sin * c[1],
            ee[1] + sin * c[0] + cos * c[1],
        ];
        for b in boxes {
            total = total + penetration_kernel(ctx, b, p);
        }
    }
    huber_kernel(total, HUBER_DELTA)
}

pub(crate) fn task_step_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    q: &[R],
    dq: &[R],
    ddq: &[R],
    curvature_weight: f64,
) -> R {
    if curvature_weight == 0.0 {
        return R::lift(ctx, 1.0);
    }
    let (kappa, speed) = ee_curvature_speed_kernel(ctx, model, q, dq, ddq);
    kappa * speed * speed * curvature_weight + 1.0
}

pub(crate) fn term_loss_kernel<R: Real>(
    ctx: R::Ctx,
    model: &PlanarArm,
    term: &ConstraintTerm,
    q: &[R],
    dq: &[R],
    ddq: &[R],
) -> R {
    match term {
        ConstraintTerm::Velocity { .. } => velocity_loss_kernel(ctx, model, dq),
        ConstraintTerm::Acceleration { .. } => acceleration_loss_kernel(ctx, model, ddq),
        ConstraintTerm::Torque { .. } => torque_loss_kernel(ctx, model, q, dq, ddq),
        ConstraintTerm::Surface { bounds, .. } => surface_loss_kernel(ctx, model, q, bounds),
        ConstraintTerm::Orientation { heading, .. } => orientation_loss_kernel(q, *heading),
        ConstraintTerm::RobotCollision {
            boxes, clearance, ..
        } => robot_collision_loss_kernel(ctx, model, q, boxes, *clearance),
        ConstraintTerm::ObjectCollision { boxes, corners, .. } => {
            object_collision_loss_kernel(ctx, model, q, boxes, corners)
        }
    }
}

// Plain-state entry points.

pub fn velocity_loss(model: &PlanarArm, dq: &[f64]) -> f64 {
    velocity_loss_kernel((), model, dq)
}

pub fn acceleration_loss(model: &PlanarArm, ddq: &[f64]) -> f64 {
    acceleration_loss_kernel((), model, ddq)
}

pub fn torque_loss(model: &PlanarArm, q: &[f64], dq: &[f64], ddq: &[f64]) -> f64 {
    torque_loss_kernel((), model, q, dq, ddq)
}

pub fn surface_loss(model: &PlanarArm, q: &[f64], bounds: &SurfaceBounds) -> f64 {
    surface_loss_kernel((), model, q, bounds)
}

pub fn orientation_loss(model: &PlanarArm, q: &[f64], heading_d: f64) -> f64 {
    let _ = model;
    orientation_loss_kernel(q, heading_d)
}

pub fn robot_collision_loss(model: &PlanarArm, q: &[f64], boxes: &[Aabb], clearance: f64) -> f64 {
    assert!(clearance > 0.0, "clearance must be positive");
    robot_collision_loss_kernel((), model, q, boxes, clearance)
}

/// Penetration loss for explicit world-frame corner points.
pub fn object_collision_loss(corners_world: &[[f64; 2]], boxes: &[Aabb]) -> f64 {
    let mut total = 0.0;
    for &p in corners_world {
        for b in boxes {
            total += b.penetration(p);
        }
    }
    huber(total, HUBER_DELTA)
}

pub fn task_step_loss(
    model: &PlanarArm,
    q: &[f64],
    dq: &[f64],
    ddq: &[f64],
    curvature_weight: f64,
) -> f64 {
    assert!(curvature_weight >= 0.0);
    task_step_kernel((), model, q, dq, ddq, curvature_weight)
}

/// Raw pointwise violation magnitude of a term (the pre-Huber argument), used
/// for reporting maxima along a trajectory.
pub fn pointwise_violation(
    model: &PlanarArm,
    term: &ConstraintTerm,
    q: &[f64],
    dq: &[f64],
    ddq: &[f64],
) -> f64 {
    let excess = |values: &[f64], limits: &[f64]| {
        values
            .iter()
            .zip(limits)
            .map(|(v, l)| (v.abs() - l).max(0.0))
            .fold(0.0f64, f64::max)
    };
    match term {
        ConstraintTerm::Velocity { .. } => excess(dq, &model.limits.velocity),
        ConstraintTerm::Acceleration { .. } => excess(ddq, &model.limits.acceleration),
        ConstraintTerm::Torque { .. } => {
            let tau = inverse_dynamics_kernel((), model, q, dq, ddq);
            excess(&tau, &model.limits.torque)
        }
        ConstraintTerm::Surface { bounds, .. } => {
            let ee = ee_position_kernel(model, q);
            (bounds.x_min - ee[0])
                .max(ee[0] - bounds.x_max)
                .max(0.0)
                .max((ee[1] - bounds.y_line).abs())
        }
        ConstraintTerm::Orientation { heading, .. } => 1.0 - (heading_kernel(q) - heading).cos(),
        ConstraintTerm::RobotCollision {
            boxes, clearance, ..
        } => {
            let pts = model
                .chain_points(q, CHAIN_SPACING)
                .expect("dimension checked upstream");
            pts.iter()
                .map(|&p| {
                    let d = boxes
                        .iter()
                        .map(|b| b.distance(p))
                        .fold(f64::INFINITY, f64::min);
                    (clearance - d).max(0.0)
                })
                .sum()
        }
        ConstraintTerm::ObjectCollision { boxes, corners, .. } => {
            let ee = ee_position_kernel(model, q);
            let h = heading_kernel(q);
            corners
                .iter()
                .map(|c| {
                    let p = [
                        ee[0] + h.cos() * c[0] - h.sin() * c[1],
                        ee[1] + h.sin() * c[0] + h.cos() * c[1],
                    ];
                    boxes.iter().map(|b| b.penetration(p)).sum::<f64>()
                })
                .sum()
        }
    }
}

/// Integrates the task and per-term losses over the phase grid against the
/// time measure `ds / r(s)`, then weights the terms under the metric:
/// `total = task + sum_i e^{alpha_i} L_i`.
///
/// Accumulation runs in ascending sample order so totals are bit-reproducible.
pub fn integrate_trajectory_loss(
    traj: &PhaseTrajectory,
    model: &PlanarArm,
    set: &ConstraintSet,
    metric: &ManifoldMetric,
    cells: usize,
) -> Result<LossBreakdown, TrajectoryError> {
    if cells < 16 {
        return Err(TrajectoryError::QuadratureTooCoarse(cells));
    }
    assert_eq!(metric.len(), set.len(), "metric/term arity mismatch");
    let ds = 1.0 / cells as f64;
    let mut per_term = vec![0.0; set.len()];
    let mut task = 0.0;
    for k in 0..cells {
        let s = (k as f64 + 0.5) * ds;
        let st = traj.state_at_phase(s)?;
        let r = traj.rate.eval_scalar(s, 0)?;
        let w = ds / r;
        task += task_step_kernel((), model, &st.q, &st.dq, &st.ddq, set.curvature_weight) * w;
        for (acc, term) in per_term.iter_mut().zip(&set.terms) {
            *acc += term_loss_kernel((), model, term, &st.q, &st.dq, &st.ddq) * w;
        }
    }
    let total = task
        + metric
            .weighted_manifold_loss(&per_term)
            .expect("arity checked");
    Ok(LossBreakdown {
        per_term,
        task,
        total,
    })
}
