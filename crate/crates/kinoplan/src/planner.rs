//! Direct gradient planner over the free trajectory parameters.
//!
//! The decision vector is `[interior path control points (flattened), log of
//! the rate control points]`. Boundary control points are re-derived from the
//! rate endpoints at every evaluation, so their dependence is part of the
//! gradient, and boundary conditions hold structurally at every iterate.
//!
//! Gradients are exact: spline evaluation is linear in the control points, so
//! the quadrature basis rows (precomputed once, the grid is static) carry the
//! per-sample adjoints of `(p, p', p'', r, r')` back to the control points;
//! the per-sample loss itself is differentiated on a reverse-mode tape; and a
//! second small tape propagates the boundary-point adjoints into the three
//! rate endpoints. Rate points live in log space, which keeps them positive
//! without constraints.

use crate::constraints::{
    integrate_trajectory_loss, task_step_kernel, term_loss_kernel, ConstraintSet, LossBreakdown,
};
use crate::metric::{ManifoldMetric, MetricError};
use crate::problem::PlanningProblem;
use crate::robot::PlanarArm;
use crate::spline::{KnotVector, SplineCurve, SplineError};
use crate::tape::{Real, Tape};
use crate::trajectory::{
    boundary_control_points, BoundaryConditions, EndpointFactors, PhaseTrajectory, SplineShape,
    TrajectoryError, GOAL_FIXED, START_FIXED,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("free parameter vector has length {got}, expected {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("loss diverged to a non-finite value at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last: Box<PlanResult>,
    },
}

/// Fixed-step descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Step on interior path control points (radians per unit gradient).
    pub path_step: f64,
    /// Step on log-rate control points.
    pub rate_step: f64,
    /// Quadrature cells during optimization.
    pub quad_cells: usize,
    /// Convergence threshold on the change of total loss.
    pub tolerance: f64,
    /// Fraction of each violation budget targeted by the metric updates.
    /// The update law drives every term loss toward its target, so
    /// equilibrating on the raw budget leaves the final integrals straddling
    /// it; a margin below one keeps converged plans strictly inside.
    pub budget_margin: f64,
    /// Gradient-norm clip. Exploding metric weights during the initial
    /// transient can produce gradients that overshoot at a fixed step; the
    /// clip leaves ordinary iterations untouched.
    pub grad_clip: f64,
    /// Clamp on the metric exponents during planning. The lower bound keeps
    /// long-satisfied terms responsive (their exponents otherwise decay
    /// without bound and never recover when the term reactivates); the upper
    /// bound caps the weight ramp of unsatisfiable transients.
    pub alpha_range: [f64; 2],
    pub shape: SplineShape,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 2500,
            path_step: 5e-3,
            rate_step: 1e-3,
            quad_cells: 200,
            tolerance: 1e-10,
            budget_margin: 0.4,
            grad_clip: 20.0,
            alpha_range: [-8.0, 14.0],
            shape: SplineShape::default(),
        }
    }
}

/// Outcome of a direct planning run: the selected iterate, the loss history
/// (one entry per iteration plus a final entry re-evaluating the selected
/// iterate), and the metric state at that iterate. Re-integrating the
/// trajectory under the stored metric reproduces the final breakdown
/// bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: PhaseTrajectory,
    pub history: Vec<LossBreakdown>,
    pub iterations: usize,
    pub converged: bool,
    pub metric: ManifoldMetric,
}

impl PlanResult {
    /// Breakdown of the returned trajectory under the stored metric.
    pub fn final_breakdown(&self) -> &LossBreakdown {
        self.history.last().expect("history is never empty")
    }
}

/// Sparse basis rows of both splines on the static midpoint grid. The grid
/// depends only on the spline shape and cell count, so it is computed once
/// and shared across evaluations (and across problems during training).
pub struct QuadratureGrid {
    cells: usize,
    ds: f64,
    path_first: Vec<usize>,
    /// Per sample: rows for derivative orders 0..=2, each `degree + 1` wide.
    path_rows: Vec<Vec<Vec<f64>>>,
    rate_first: Vec<usize>,
    rate_rows: Vec<Vec<Vec<f64>>>,
}

impl QuadratureGrid {
    pub fn new(shape: &SplineShape, cells: usize) -> Result<Self, SplineError> {
        let path_kv = KnotVector::clamped(shape.path_ctrl, shape.path_degree)?;
        let rate_kv = KnotVector::clamped(shape.rate_ctrl, shape.rate_degree)?;
        let ds = 1.0 / cells as f64;
        let mut path_first = Vec::with_capacity(cells);
        let mut path_rows = Vec::with_capacity(cells);
        let mut rate_first = Vec::with_capacity(cells);
        let mut rate_rows = Vec::with_capacity(cells);
        for k in 0..cells {
            let s = (k as f64 + 0.5) * ds;
            let (pf, pr) = path_kv.basis_span(s, 2)?;
            path_first.push(pf);
            path_rows.push(pr);
            let (rf, rr) = rate_kv.basis_span(s, 1)?;
            rate_first.push(rf);
            rate_rows.push(rr);
        }
        Ok(Self {
            cells,
            ds,
            path_first,
            path_rows,
            rate_first,
            rate_rows,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }
}

/// Adjoints of the full control-point sets.
pub(crate) struct CpGrads {
    pub path: Vec<Vec<f64>>,
    pub rate: Vec<f64>,
}

/// Integrated losses plus exact adjoints of every path and rate control
/// point. Shared by the direct planner and the network trainer; the caller
/// chains these into its own parameterization. The returned values replay
/// [`integrate_trajectory_loss`] bit-for-bit.
pub(crate) fn cp_loss_and_grads(
    model: &PlanarArm,
    set: &ConstraintSet,
    weights: &[f64],
    grid: &QuadratureGrid,
    tape: &Tape,
    path_cps: &[Vec<f64>],
    rate_vals: &[f64],
) -> (f64, Vec<f64>, CpGrads) {
    let n = path_cps[0].len();
    let degree_p = grid.path_rows[0][0].len() - 1;
    let degree_r = grid.rate_rows[0][0].len() - 1;
    let mut per_term = vec![0.0; set.len()];
    let mut task_acc = 0.0;
    let mut d_path = vec![vec![0.0; n]; path_cps.len()];
    let mut d_rate = vec![0.0; rate_vals.len()];

    for k in 0..grid.cells {
        tape.reset();
        let pf = grid.path_first[k];
        let rows = &grid.path_rows[k];
        let mut p = vec![0.0; n];
        let mut dp = vec![0.0; n];
        let mut ddp = vec![0.0; n];
        for j in 0..=degree_p {
            let cp = &path_cps[pf + j];
            for d in 0..n {
                p[d] += rows[0][j] * cp[d];
                dp[d] += rows[1][j] * cp[d];
                ddp[d] += rows[2][j] * cp[d];
            }
        }
        let rf = grid.rate_first[k];
        let rrows = &grid.rate_rows[k];
        let mut r = 0.0;
        let mut dr = 0.0;
        for j in 0..=degree_r {
            r += rrows[0][j] * rate_vals[rf + j];
            dr += rrows[1][j] * rate_vals[rf + j];
        }

        let qv: Vec<_> = p.iter().map(|&v| tape.var(v)).collect();
        let dpv: Vec<_> = dp.iter().map(|&v| tape.var(v)).collect();
        let ddpv: Vec<_> = ddp.iter().map(|&v| tape.var(v)).collect();
        let rv = tape.var(r);
        let drv = tape.var(dr);
        let dqv: Vec<_> = dpv.iter().map(|&v| v * rv).collect();
        let ddqv: Vec<_> = ddpv
            .iter()
            .zip(&dpv)
            .map(|(&a, &v)| a * rv * rv + v * drv * rv)
            .collect();

        let w_time = grid.ds / r;
        let task = task_step_kernel(tape, model, &qv, &dqv, &ddqv, set.curvature_weight);
        task_acc += task.value() * w_time;
        let mut weighted = task;
        for (i, term) in set.terms.iter().enumerate() {
            let tl = term_loss_kernel(tape, model, term, &qv, &dqv, &ddqv);
            per_term[i] += tl.value() * w_time;
            weighted = weighted + tl * weights[i];
        }
        let integrand = weighted * rv.recip();
        let adj = tape.backward(&[(integrand, grid.ds)]);

        for j in 0..=degree_p {
            let row0 = rows[0][j];
            let row1 = rows[1][j];
            let row2 = rows[2][j];
            let dst = &mut d_path[pf + j];
            for d in 0..n {
                dst[d] += row0 * adj[qv[d].index()]
                    + row1 * adj[dpv[d].index()]
                    + row2 * adj[ddpv[d].index()];
            }
        }
        for j in 0..=degree_r {
            d_rate[rf + j] += rrows[0][j] * adj[rv.index()] + rrows[1][j] * adj[drv.index()];
        }
    }

    (
        task_acc,
        per_term,
        CpGrads {
            path: d_path,
            rate: d_rate,
        },
    )
}

/// Propagates adjoints of the derived boundary control points into the first
/// two and last rate control points, replaying the closed-form boundary
/// formulas on a tape. Returns `(d_r0, d_r1, d_r_last)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn boundary_rate_chain(
    bc: &BoundaryConditions,
    path_factors: EndpointFactors,
    rate_factors: EndpointFactors,
    rate_vals: &[f64],
    tape: &Tape,
    d_cp1: &[f64],
    d_cp2: &[f64],
    d_cp_prev: &[f64],
) -> [f64; 3] {
    let n = bc.dof();
    let last = rate_vals.len() - 1;
    tape.reset();
    let r0 = tape.var(rate_vals[0]);
    let r1 = tape.var(rate_vals[1]);
    let rl = tape.var(rate_vals[last]);
    let mut seeds = Vec::with_capacity(3 * n);
    for d in 0..n {
        let cp1 = r0.recip() * (bc.dq0[d] / path_factors.vel) + bc.q0[d];
        let diff = cp1 - bc.q0[d];
        let k = (diff * (r1 - r0) * r0 * (-path_factors.vel * rate_factors.vel) + bc.ddq0[d])
            / (r0 * r0);
        let cp2 = k / path_factors.acc + cp1 * 3.0 - 2.0 * bc.q0[d];
        let cp_prev = rl.recip() * (-bc.dqd[d] / path_factors.vel) + bc.qd[d];
        seeds.push((cp1, d_cp1[d]));
        seeds.push((cp2, d_cp2[d]));
        seeds.push((cp_prev, d_cp_prev[d]));
    }
    let adj = tape.backward(&seeds);
    [adj[r0.index()], adj[r1.index()], adj[rl.index()]]
}

/// Loss evaluation and differentiation for one planning problem.
pub struct Objective<'a> {
    pub model: &'a PlanarArm,
    pub bc: &'a BoundaryConditions,
    pub set: &'a ConstraintSet,
    pub shape: SplineShape,
    pub cells: usize,
    grid: QuadratureGrid,
}

impl<'a> Objective<'a> {
    pub fn new(
        model: &'a PlanarArm,
        bc: &'a BoundaryConditions,
        set: &'a ConstraintSet,
        shape: SplineShape,
        cells: usize,
    ) -> Result<Self, PlanError> {
        let grid = QuadratureGrid::new(&shape, cells)?;
        Ok(Self {
            model,
            bc,
            set,
            shape,
            cells,
            grid,
        })
    }

    pub fn for_problem(
        model: &'a PlanarArm,
        problem: &'a PlanningProblem,
        shape: SplineShape,
        cells: usize,
    ) -> Result<Self, PlanError> {
        Self::new(model, &problem.bc, &problem.constraints, shape, cells)
    }

    pub fn param_len(&self) -> usize {
        self.shape.free_interior() * self.bc.dof() + self.shape.rate_ctrl
    }

    fn check_params(&self, free: &[f64]) -> Result<(), PlanError> {
        if free.len() != self.param_len() {
            return Err(PlanError::ParamLength {
                expected: self.param_len(),
                got: free.len(),
            });
        }
        Ok(())
    }

    fn split_params<'p>(&self, free: &'p [f64]) -> (&'p [f64], &'p [f64]) {
        free.split_at(self.shape.free_interior() * self.bc.dof())
    }

    /// Assembles the trajectory encoded by a free-parameter vector.
    pub fn trajectory(&self, free: &[f64]) -> Result<PhaseTrajectory, PlanError> {
        self.check_params(free)?;
        let n = self.bc.dof();
        let (interior_flat, log_rate) = self.split_params(free);
        let rate_vals: Vec<f64> = log_rate.iter().map(|u| u.exp()).collect();
        let rate = SplineCurve::scalar(self.shape.rate_degree, &rate_vals)?;
        let bcp =
            boundary_control_points(self.bc, &rate, self.shape.path_degree, self.shape.path_ctrl)?;
        let mut cps = Vec::with_capacity(self.shape.path_ctrl);
        cps.extend(bcp.start.iter().cloned());
        cps.extend(interior_flat.chunks(n).map(<[f64]>::to_vec));
        cps.extend(bcp.end.iter().cloned());
        let path = SplineCurve::clamped(self.shape.path_degree, cps)?;
        Ok(PhaseTrajectory::new(path, rate)?)
    }

    /// Loss breakdown of the encoded trajectory under the metric.
    pub fn evaluate(
        &self,
        free: &[f64],
        metric: &ManifoldMetric,
    ) -> Result<LossBreakdown, PlanError> {
        let traj = self.trajectory(free)?;
        Ok(integrate_trajectory_loss(
            &traj, self.model, self.set, metric, self.cells,
        )?)
    }

    /// Loss breakdown plus the exact gradient with respect to the free
    /// parameters. The breakdown is bit-identical to [`Self::evaluate`]: the
    /// taped kernels replay the same floating-point operations.
    pub fn evaluate_with_gradient(
        &self,
        free: &[f64],
        metric: &ManifoldMetric,
    ) -> Result<(LossBreakdown, Vec<f64>), PlanError> {
        self.check_params(free)?;
        assert_eq!(metric.len(), self.set.len(), "metric/term arity mismatch");
        let n = self.bc.dof();
        let (interior_flat, log_rate) = self.split_params(free);
        let rate_vals: Vec<f64> = log_rate.iter().map(|u| u.exp()).collect();
        let rate = SplineCurve::scalar(self.shape.rate_degree, &rate_vals)?;
        let bcp =
            boundary_control_points(self.bc, &rate, self.shape.path_degree, self.shape.path_ctrl)?;

        let mut path_cps: Vec<Vec<f64>> = Vec::with_capacity(self.shape.path_ctrl);
        path_cps.extend(bcp.start.iter().cloned());
        path_cps.extend(interior_flat.chunks(n).map(<[f64]>::to_vec));
        path_cps.extend(bcp.end.iter().cloned());

        let tape = Tape::new();
        let weights = metric.weights();
        let (task_acc, per_term, cp_grads) = cp_loss_and_grads(
            self.model, self.set, &weights, &self.grid, &tape, &path_cps, &rate_vals,
        );
        let total = task_acc + metric.weighted_manifold_loss(&per_term)?;
        let breakdown = LossBreakdown {
            per_term,
            task: task_acc,
            total,
        };

        // Boundary chain: adjoints of the derived control points flow into
        // the first two and last rate control points.
        let path_kv = KnotVector::clamped(self.shape.path_ctrl, self.shape.path_degree)?;
        let pfac = EndpointFactors::derive(&path_kv)?;
        let rfac = EndpointFactors::derive(rate.knots())?;
        let last = self.shape.rate_ctrl - 1;
        let [d_r0, d_r1, d_rl] = boundary_rate_chain(
            self.bc,
            pfac,
            rfac,
            &rate_vals,
            &tape,
            &cp_grads.path[1],
            &cp_grads.path[2],
            &cp_grads.path[self.shape.path_ctrl - 2],
        );
        let mut d_rate = cp_grads.rate;
        d_rate[0] += d_r0;
        d_rate[1] += d_r1;
        d_rate[last] += d_rl;

        // Pack: interior points pass through unchanged, rate points chain
        // through the exponential.
        let m = self.shape.free_interior();
        let mut grad = Vec::with_capacity(self.param_len());
        for i in 0..m {
            grad.extend_from_slice(&cp_grads.path[START_FIXED + i]);
        }
        for j in 0..self.shape.rate_ctrl {
            grad.push(d_rate[j] * rate_vals[j]);
        }
        Ok((breakdown, grad))
    }
}

/// Straight-interior, constant-rate initial parameters.
///
/// The duration guess combines the per-joint velocity heuristic with the
/// acceleration-limited bang-bang time and the time to reach the goal
/// velocity, padded by 25%. Starting from the feasible side keeps the early
/// metric updates mild; a velocity-only guess routinely starts infeasible in
/// acceleration and sends the metric weights into a slow oscillation.
pub fn initial_params(
    bc: &BoundaryConditions,
    model: &PlanarArm,
    shape: &SplineShape,
) -> Result<Vec<f64>, PlanError> {
    let velocity_time = bc
        .q0
        .iter()
        .zip(&bc.qd)
        .zip(&model.limits.velocity)
        .map(|((a, b), v)| (b - a).abs() / v)
        .fold(0.0f64, f64::max);
    let accel_time = bang_bang_lower_bound(bc, model);
    let end_speed_time = bc
        .dq0
        .iter()
        .zip(&bc.dqd)
        .zip(&model.limits.acceleration)
        .map(|((a, b), acc)| (b - a).abs() / acc)
        .fold(0.0f64, f64::max);
    let t_guess = 1.25 * velocity_time.max(accel_time).max(end_speed_time).max(0.08);
    let log_rate = (1.0 / t_guess).ln();
    let rate_vals = vec![1.0 / t_guess; shape.rate_ctrl];
    let rate = SplineCurve::scalar(shape.rate_degree, &rate_vals)?;
    let bcp = boundary_control_points(bc, &rate, shape.path_degree, shape.path_ctrl)?;
    let m = shape.free_interior();
    let span = (shape.path_ctrl - START_FIXED - GOAL_FIXED - 1) as f64;
    let n = bc.dof();
    let mut params = Vec::with_capacity(m * n + shape.rate_ctrl);
    for i in 0..m {
        let frac = i as f64 / span;
        for d in 0..n {
            params.push(bcp.start[2][d] * (1.0 - frac) + bcp.end[0][d] * frac);
        }
    }
    params.extend(std::iter::repeat_n(log_rate, shape.rate_ctrl));
    Ok(params)
}

/// Acceleration-limited lower bound on the motion time of a rest-to-rest
/// move: the slowest joint's bang-bang time `2 sqrt(|dq| / a_max)`.
pub fn bang_bang_lower_bound(bc: &BoundaryConditions, model: &PlanarArm) -> f64 {
    bc.q0
        .iter()
        .zip(&bc.qd)
        .zip(&model.limits.acceleration)
        .map(|((a, b), acc)| 2.0 * ((b - a).abs() / acc).sqrt())
        .fold(0.0f64, f64::max)
}

/// Fixed-step gradient descent with an interleaved metric update per
/// iteration, followed, when the best iterate still violates a budget, by a
/// refinement phase under frozen budget-normalized weights and reduced steps.
/// A non-finite loss reports divergence carrying the last finite result.
pub fn direct_plan(
    problem: &PlanningProblem,
    model: &PlanarArm,
    cfg: &OptimizerConfig,
    metric: &ManifoldMetric,
) -> Result<PlanResult, PlanError> {
    let init = initial_params(&problem.bc, model, &cfg.shape)?;
    direct_plan_from(problem, model, &init, cfg, metric)
}

/// State of one descent phase; carried across phases so iterate selection
/// spans the whole run.
struct Descent {
    params: Vec<f64>,
    history: Vec<LossBreakdown>,
    best_params: Vec<f64>,
    best_metric: ManifoldMetric,
    best_feasible_task: f64,
    best_violation: f64,
    converged: bool,
}

impl Descent {
    /// Fastest fully feasible iterate seen so far, else the least normalized
    /// violation. Totals under an evolving metric are not comparable across
    /// iterations (the weights move by orders of magnitude), so selection
    /// works on task time and raw budgets instead.
    fn record(
        &mut self,
        breakdown: &LossBreakdown,
        raw_budgets: &[f64],
        metric: &ManifoldMetric,
        params: &[f64],
    ) {
        let feasible = breakdown
            .per_term
            .iter()
            .zip(raw_budgets)
            .all(|(l, b)| l <= b);
        let violation = breakdown
            .per_term
            .iter()
            .zip(raw_budgets)
            .map(|(l, b)| l / b)
            .fold(0.0f64, f64::max);
        let improved = if feasible {
            breakdown.task < self.best_feasible_task
        } else {
            self.best_feasible_task.is_infinite() && violation < self.best_violation
        };
        if improved {
            if feasible {
                self.best_feasible_task = breakdown.task;
            } else {
                self.best_violation = violation;
            }
            self.best_params.copy_from_slice(params);
            self.best_metric = metric.clone();
        }
    }

    fn found_feasible(&self) -> bool {
        self.best_feasible_task.is_finite()
    }
}

#[allow(clippy::too_many_arguments)]
fn descend(
    objective: &Objective<'_>,
    state: &mut Descent,
    metric0: &ManifoldMetric,
    cfg: &OptimizerConfig,
    raw_budgets: &[f64],
    alpha_budgets: Option<&[f64]>,
    step_scale: f64,
    max_iters: usize,
) -> Result<(), PlanError> {
    let split = objective.shape.free_interior() * objective.bc.dof();
    let mut metric_k = metric0.clone();
    let mut prev_total = f64::INFINITY;
    for iter in 0..max_iters {
        // Runaway parameters can also surface as a failed assembly (rate
        // underflowing to zero); both count as divergence.
        let diverged = |state: &Descent, iteration: usize| -> Result<PlanError, PlanError> {
            let last = build_result(
                objective,
                &state.best_params,
                &state.history,
                state.history.len(),
                false,
                &state.best_metric,
            )?;
            Ok(PlanError::Diverged {
                iteration,
                last: Box::new(last),
            })
        };
        let (breakdown, grad) = match objective.evaluate_with_gradient(&state.params, &metric_k) {
            Ok(v) => v,
            Err(PlanError::Trajectory(_) | PlanError::Spline(_)) => {
                return Err(diverged(state, iter)?)
            }
            Err(e) => return Err(e),
        };
        if !breakdown.total.is_finite() {
            return Err(diverged(state, iter)?);
        }
        state.record(&breakdown, raw_budgets, &metric_k, &state.params.clone());
        let delta = (prev_total - breakdown.total).abs();
        prev_total = breakdown.total;
        state.history.push(breakdown);
        if delta < cfg.tolerance {
            state.converged = true;
            return Ok(());
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        for (i, g) in grad.iter().enumerate() {
            let step = if i < split {
                cfg.path_step
            } else {
                cfg.rate_step
            };
            state.params[i] -= step * step_scale * clip * g;
        }
        if let Some(budgets) = alpha_budgets {
            let per_term = &state.history.last().expect("just pushed").per_term;
            metric_k = metric_k.updated(per_term, budgets)?;
            for a in &mut metric_k.alpha {
                *a = a.clamp(cfg.alpha_range[0], cfg.alpha_range[1]);
            }
        }
    }
    Ok(())
}

pub fn direct_plan_from(
    problem: &PlanningProblem,
    model: &PlanarArm,
    init: &[f64],
    cfg: &OptimizerConfig,
    metric: &ManifoldMetric,
) -> Result<PlanResult, PlanError> {
    let objective = Objective::for_problem(model, problem, cfg.shape, cfg.quad_cells)?;
    let raw_budgets = problem.constraints.budgets();
    let target_budgets: Vec<f64> = raw_budgets.iter().map(|b| b * cfg.budget_margin).collect();

    let mut state = Descent {
        params: init.to_vec(),
        history: Vec::new(),
        best_params: init.to_vec(),
        best_metric: metric.clone(),
        best_feasible_task: f64::INFINITY,
        best_violation: f64::INFINITY,
        converged: false,
    };

    descend(
        &objective,
        &mut state,
        metric,
        cfg,
        &raw_budgets,
        Some(&target_budgets),
        1.0,
        cfg.max_iters,
    )?;

    // Refinement: when the metric-equilibrium phase never produced a fully
    // feasible iterate, restart from the best one under frozen weights
    // proportional to the inverse margined budgets, with reduced steps. This
    // is plain weighted descent; constraint terms dominate until they drop
    // to the margined level, after which time takes over.
    if !state.found_feasible() && cfg.max_iters > 0 {
        let weights: Vec<f64> = target_budgets.iter().map(|b| 1.0 / b).collect();
        let frozen = ManifoldMetric::from_weights(&weights, metric.gamma);
        state.params.copy_from_slice(&state.best_params.clone());
        state.converged = false;
        descend(
            &objective,
            &mut state,
            &frozen,
            cfg,
            &raw_budgets,
            None,
            0.25,
            cfg.max_iters / 2,
        )?;
    }

    let iterations = state.history.len();
    build_result(
        &objective,
        &state.best_params,
        &state.history,
        iterations,
        state.converged,
        &state.best_metric,
    )
}

fn build_result(
    objective: &Objective<'_>,
    params: &[f64],
    history: &[LossBreakdown],
    iterations: usize,
    converged: bool,
    metric: &ManifoldMetric,
) -> Result<PlanResult, PlanError> {
    let trajectory = objective.trajectory(params)?;
    let mut history = history.to_vec();
    // The selection may pick any iterate, so the history ends with a fresh
    // evaluation of the returned trajectory under the stored metric.
    history.push(objective.evaluate(params, metric)?);
    Ok(PlanResult {
        trajectory,
        history,
        iterations,
        converged,
        metric: metric.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::ConstraintTerm;
    use crate::problem::{ReachGeometry, TaskKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reach_problem(bc: BoundaryConditions) -> PlanningProblem {
        PlanningProblem {
            kind: TaskKind::ReachOnLine,
            bc,
            constraints: ReachGeometry::default().constraint_set(),
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, obj: &Objective<'_>) -> Vec<f64> {
        let base = initial_params(obj.bc, obj.model, &obj.shape).unwrap();
        let split = obj.shape.free_interior() * obj.bc.dof();
        base.iter()
            .enumerate()
            .map(|(i, v)| {
                if i < split {
                    v + rng.random_range(-0.05..0.05)
                } else {
                    v + rng.random_range(-0.2..0.2)
                }
            })
            .collect()
    }

    #[test]
    fn breakdown_matches_revalidation_bitwise() {
        let model = PlanarArm::benchmark_3link();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let bc = BoundaryConditions::new(
            vec![0.5, -0.4, 0.3],
            vec![0.2, 0.0, -0.1],
            vec![0.5, -0.5, 0.0],
            vec![-0.2, 0.6, 0.1],
            vec![0.0, 0.3, 0.0],
        )
        .unwrap();
        let problem = reach_problem(bc);
        let obj = Objective::for_problem(&model, &problem, SplineShape::default(), 64).unwrap();
        let metric = problem.initial_metric();
        for _ in 0..5 {
            let params = random_params(&mut rng, &obj);
            let (bd_grad, _) = obj.evaluate_with_gradient(&params, &metric).unwrap();
            let bd_eval = obj.evaluate(&params, &metric).unwrap();
            assert_eq!(bd_grad.task, bd_eval.task);
            assert_eq!(bd_grad.total, bd_eval.total);
            assert_eq!(bd_grad.per_term, bd_eval.per_term);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = PlanarArm::benchmark_3link();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bc = BoundaryConditions::new(
            vec![0.9, -0.8, 0.2],
            vec![0.0, 0.1, 0.0],
            vec![0.3, 0.0, -0.2],
            vec![0.2, 0.4, -0.5],
            vec![0.4, 0.0, 0.2],
        )
        .unwrap();
        let problem = reach_problem(bc);
        let obj = Objective::for_problem(&model, &problem, SplineShape::default(), 48).unwrap();
        let metric = problem.initial_metric();
        let params = random_params(&mut rng, &obj);
        let (_, grad) = obj.evaluate_with_gradient(&params, &metric).unwrap();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += h;
            minus[i] -= h;
            let fp = obj.evaluate(&plus, &metric).unwrap().total;
            let fm = obj.evaluate(&minus, &metric).unwrap().total;
            let fd = (fp - fm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                ((grad[i] - fd) / denom).abs() < 1e-4,
                "param {i}: grad {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn constant_rate_time_gradient_is_quadrature_share() {
        // All constraints satisfied, plain time loss: the gradient with
        // respect to each log-rate point is -T times that point's quadrature
        // weight share.
        let model = PlanarArm::benchmark_3link();
        let bc = BoundaryConditions::rest_to_rest(vec![0.2, 0.1, -0.1], vec![0.25, 0.15, -0.05])
            .unwrap();
        let set = ConstraintSet {
            terms: vec![ConstraintTerm::Velocity { budget: 1.0 }],
            curvature_weight: 0.0,
        };
        let shape = SplineShape::default();
        let obj = Objective::new(&model, &bc, &set, shape, 200).unwrap();
        let metric = ManifoldMetric::identity(1);
        let params = initial_params(&bc, &model, &shape).unwrap();
        let (breakdown, grad) = obj.evaluate_with_gradient(&params, &metric).unwrap();
        assert_eq!(breakdown.per_term[0], 0.0);
        let t_total = breakdown.task;
        // Quadrature share of rate basis j.
        let kv = KnotVector::clamped(shape.rate_ctrl, shape.rate_degree).unwrap();
        let cells = 200;
        let split = shape.free_interior() * 3;
        let mut share_sum = 0.0;
        for j in 0..shape.rate_ctrl {
            let mut share = 0.0;
            for k in 0..cells {
                let s = (k as f64 + 0.5) / cells as f64;
                share += kv.basis_row(s, 0).unwrap()[j] / cells as f64;
            }
            share_sum += share;
            let expect = -t_total * share;
            let got = grad[split + j];
            assert!(
                (got - expect).abs() < 1e-9 * t_total.max(1.0),
                "rate {j}: {got} vs {expect}"
            );
        }
        assert!((share_sum - 1.0).abs() < 1e-12);
        // Interior path gradient vanishes: flat region of every term.
        for g in &grad[..split] {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn zero_loss_terms_have_zero_gradient() {
        let model = PlanarArm::benchmark_3link();
        let bc = BoundaryConditions::rest_to_rest(vec![0.3, -0.2, 0.1], vec![0.35, -0.15, 0.12])
            .unwrap();
        let set = ConstraintSet {
            terms: vec![
                ConstraintTerm::Velocity { budget: 1.0 },
                ConstraintTerm::Acceleration { budget: 1.0 },
            ],
            curvature_weight: 0.0,
        };
        let shape = SplineShape::default();
        let obj = Objective::new(&model, &bc, &set, shape, 64).unwrap();
        // Huge metric weights on satisfied terms still produce zero gradient
        // through them.
        let metric = ManifoldMetric::new(vec![20.0, 20.0], 0.01);
        let mut params = initial_params(&bc, &model, &shape).unwrap();
        // Slow the trajectory down so the limits hold with a wide margin.
        let split = shape.free_interior() * 3;
        for u in &mut params[split..] {
            *u = (1.0f64 / 2.0).ln();
        }
        let (breakdown, _) = obj.evaluate_with_gradient(&params, &metric).unwrap();
        assert_eq!(breakdown.per_term, vec![0.0, 0.0]);
    }

    #[test]
    fn single_joint_plan_approaches_bang_bang_bound() {
        let model = PlanarArm::new(
            vec![crate::robot::Link {
                length: 0.5,
                mass: 1.0,
                com: 0.25,
                inertia: 0.02,
            }],
            [0.0, 0.0],
            crate::robot::JointLimits {
                velocity: vec![2.0],
                acceleration: vec![8.0],
                torque: vec![50.0],
            },
        )
        .unwrap();
        let bc = BoundaryConditions::rest_to_rest(vec![0.0], vec![1.0]).unwrap();
        let problem = PlanningProblem {
            kind: TaskKind::ReachOnLine,
            bc: bc.clone(),
            constraints: ConstraintSet {
                terms: vec![
                    ConstraintTerm::Velocity { budget: 6e-3 },
                    ConstraintTerm::Acceleration { budget: 6e-2 },
                ],
                curvature_weight: 0.0,
            },
        };
        let cfg = OptimizerConfig {
            max_iters: 1500,
            ..OptimizerConfig::default()
        };
        let metric = ManifoldMetric::identity(2);
        let result = direct_plan(&problem, &model, &cfg, &metric).unwrap();
        let duration = result.trajectory.duration(1024).unwrap();
        let bound = bang_bang_lower_bound(&bc, &model);
        assert!((bound - 2.0 * (1.0f64 / 8.0).sqrt()).abs() < 1e-12);
        assert!(
            duration < 2.0 * bound,
            "duration {duration} vs bound {bound}"
        );
        // Structural boundary satisfaction on the final iterate.
        let s0 = result.trajectory.state_at_phase(0.0).unwrap();
        let s1 = result.trajectory.state_at_phase(1.0).unwrap();
        assert!((s0.q[0] - 0.0).abs() < 1e-8 && (s1.q[0] - 1.0).abs() < 1e-8);
        assert!(s0.dq[0].abs() < 1e-8 && s1.dq[0].abs() < 1e-8);
    }

    #[test]
    fn trivial_problem_loss_non_increasing() {
        let model = PlanarArm::benchmark_3link();
        let bc =
            BoundaryConditions::rest_to_rest(vec![0.4, -0.3, 0.2], vec![0.4, -0.3, 0.2]).unwrap();
        let problem = PlanningProblem {
            kind: TaskKind::ReachOnLine,
            bc,
            constraints: ConstraintSet {
                terms: vec![
                    ConstraintTerm::Velocity { budget: 6e-3 },
                    ConstraintTerm::Acceleration { budget: 6e-2 },
                ],
                curvature_weight: 0.0,
            },
        };
        let cfg = OptimizerConfig {
            max_iters: 300,
            ..OptimizerConfig::default()
        };
        let metric = ManifoldMetric::identity(2);
        let result = direct_plan(&problem, &model, &cfg, &metric).unwrap();
        for w in result.history.windows(2) {
            assert!(w[1].total <= w[0].total + 1e-9);
        }
    }

    #[test]
    fn final_breakdown_matches_revalidation() {
        let model = PlanarArm::benchmark_3link();
        let bc =
            BoundaryConditions::rest_to_rest(vec![0.6, -0.5, 0.3], vec![0.9, -0.8, 0.5]).unwrap();
        let problem = reach_problem(bc);
        let cfg = OptimizerConfig {
            max_iters: 200,
            ..OptimizerConfig::default()
        };
        let result = direct_plan(&problem, &model, &cfg, &problem.initial_metric()).unwrap();
        let again = crate::constraints::integrate_trajectory_loss(
            &result.trajectory,
            &model,
            &problem.constraints,
            &result.metric,
            cfg.quad_cells,
        )
        .unwrap();
        assert_eq!(result.final_breakdown(), &again);
    }

    #[test]
    fn rejects_wrong_param_length() {
        let model = PlanarArm::benchmark_3link();
        let bc = BoundaryConditions::rest_to_rest(vec![0.0; 3], vec![0.1; 3]).unwrap();
        let set = ConstraintSet {
            terms: vec![],
            curvature_weight: 0.0,
        };
        let obj = Objective::new(&model, &bc, &set, SplineShape::default(), 32).unwrap();
        let metric = ManifoldMetric::identity(0);
        assert!(matches!(
            obj.evaluate(&[0.0; 3], &metric),
            Err(PlanError::ParamLength { .. })
        ));
    }
}
