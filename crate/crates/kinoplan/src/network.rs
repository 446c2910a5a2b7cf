//! Amortized neural planner.
//!
//! A small feed-forward network maps the normalized problem description
//! `[q0, qd, dq0, dqd, ddq0]` to the trajectory parameters: a configuration
//! head emits the interior path offsets (scaled by pi at assembly) and a time
//! head emits the rate control points through an exponential, so every output
//! is a valid trajectory and the boundary conditions hold structurally for
//! any weights. Training is self-supervised: minibatch gradient descent on
//! the planning loss itself, differentiated through the whole composition of
//! network, control-point assembly, and loss integration, with the manifold
//! metric updated from batch-mean per-term losses after every batch.

use crate::constraints::LossBreakdown;
use crate::exec;
use crate::metric::{ManifoldMetric, MetricError};
use crate::planner::{boundary_rate_chain, cp_loss_and_grads, PlanError, QuadratureGrid};
use crate::problem::PlanningProblem;
use crate::robot::PlanarArm;
use crate::spline::{KnotVector, SplineCurve};
use crate::tape::Tape;
use crate::trajectory::{
    assemble_path, boundary_control_points, EndpointFactors, PhaseTrajectory, SplineShape,
    TrajectoryError, GOAL_FIXED, START_FIXED,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Spline(#[from] crate::spline::SplineError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("training split is empty")]
    EmptySplit,
    #[error("non-finite loss in batch {batch} (problem index {problem})")]
    NonFinite { batch: usize, problem: usize },
}

/// Fully connected layer, row-major weights (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut out = self.bias.clone();
        for (o, row) in out.iter_mut().zip(self.weights.chunks(self.inputs)) {
            *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input adjoint.
    fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut DenseGrad) -> Vec<f64> {
        let mut d_x = vec![0.0; self.inputs];
        for (o, d) in d_out.iter().enumerate() {
            grad.bias[o] += d;
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += d * x[i];
                d_x[i] += d * row[i];
            }
        }
        d_x
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone)]
struct DenseGrad {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseGrad {
    fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    fn add(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// d(tanh)/dx given the activated output.
fn tanh_back(activated: &[f64], d_out: &[f64]) -> Vec<f64> {
    activated
        .iter()
        .zip(d_out)
        .map(|(a, d)| d * (1.0 - a * a))
        .collect()
}

/// Shared trunk of two tanh layers plus a configuration head (linear output)
/// and a time head (exponential output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerNetwork {
    pub dof: usize,
    pub shape: SplineShape,
    trunk1: Dense,
    trunk2: Dense,
    cfg_hidden: Dense,
    cfg_out: Dense,
    time_hidden: Dense,
    time_out: Dense,
}

/// Raw head outputs: interior path offsets (pre-pi scaling) and positive rate
/// control points.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub offsets: Vec<Vec<f64>>,
    pub rate: Vec<f64>,
}

struct Activations {
    features: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    hc: Vec<f64>,
    ht: Vec<f64>,
    offsets_flat: Vec<f64>,
    rate_preact: Vec<f64>,
}

/// Gradients of every layer, in network order.
struct NetworkGrad {
    layers: [DenseGrad; 6],
}

impl PlannerNetwork {
    pub fn feature_len(dof: usize) -> usize {
        5 * dof
    }

    pub fn new(dof: usize, shape: SplineShape, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Self::feature_len(dof);
        let cfg_outputs = shape.free_interior() * dof;
        Self {
            dof,
            shape,
            trunk1: Dense::random(input, hidden, &mut rng),
            trunk2: Dense::random(hidden, hidden, &mut rng),
            cfg_hidden: Dense::random(hidden, hidden, &mut rng),
            cfg_out: Dense::random(hidden, cfg_outputs, &mut rng),
            time_hidden: Dense::random(hidden, hidden, &mut rng),
            time_out: Dense::random(hidden, shape.rate_ctrl, &mut rng),
        }
    }

    /// All-zero weights: offsets vanish and every rate point is `exp(0) = 1`,
    /// so the plan is the straight-interior, unit-rate trajectory.
    pub fn zeros(dof: usize, shape: SplineShape, hidden: usize) -> Self {
        let input = Self::feature_len(dof);
        let cfg_outputs = shape.free_interior() * dof;
        Self {
            dof,
            shape,
            trunk1: Dense::zeros(input, hidden),
            trunk2: Dense::zeros(hidden, hidden),
            cfg_hidden: Dense::zeros(hidden, hidden),
            cfg_out: Dense::zeros(hidden, cfg_outputs),
            time_hidden: Dense::zeros(hidden, hidden),
            time_out: Dense::zeros(hidden, shape.rate_ctrl),
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.trunk1.outputs
    }

    pub fn param_count(&self) -> usize {
        [
            &self.trunk1,
            &self.trunk2,
            &self.cfg_hidden,
            &self.cfg_out,
            &self.time_hidden,
            &self.time_out,
        ]
        .iter()
        .map(|l| l.param_count())
        .sum()
    }

    fn forward_cached(&self, features: Vec<f64>) -> Activations {
        let h1 = tanh_vec(&self.trunk1.forward(&features));
        let h2 = tanh_vec(&self.trunk2.forward(&h1));
        let hc = tanh_vec(&self.cfg_hidden.forward(&h2));
        let offsets_flat = self.cfg_out.forward(&hc);
        let ht = tanh_vec(&self.time_hidden.forward(&h2));
        let rate_preact = self.time_out.forward(&ht);
        Activations {
            features,
            h1,
            h2,
            hc,
            ht,
            offsets_flat,
            rate_preact,
        }
    }

    /// Deterministic network evaluation. The time head output is strictly
    /// positive by construction.
    pub fn forward(&self, features: &[f64]) -> NetworkOutput {
        assert_eq!(features.len(), Self::feature_len(self.dof));
        let acts = self.forward_cached(features.to_vec());
        NetworkOutput {
            offsets: acts
                .offsets_flat
                .chunks(self.dof)
                .map(<[f64]>::to_vec)
                .collect(),
            rate: acts.rate_preact.iter().map(|v| v.exp()).collect(),
        }
    }

    /// Backpropagates head adjoints (configuration offsets and time-head
    /// pre-activations) to all weights.
    fn backward(
        &self,
        acts: &Activations,
        d_offsets_flat: &[f64],
        d_rate_preact: &[f64],
        grad: &mut NetworkGrad,
    ) {
        let d_hc = self
            .cfg_out
            .backward(&acts.hc, d_offsets_flat, &mut grad.layers[3]);
        let d_hc_pre = tanh_back(&acts.hc, &d_hc);
        let d_h2_cfg = self
            .cfg_hidden
            .backward(&acts.h2, &d_hc_pre, &mut grad.layers[2]);

        let d_ht = self
            .time_out
            .backward(&acts.ht, d_rate_preact, &mut grad.layers[5]);
        let d_ht_pre = tanh_back(&acts.ht, &d_ht);
        let d_h2_time = self
            .time_hidden
            .backward(&acts.h2, &d_ht_pre, &mut grad.layers[4]);

        let d_h2: Vec<f64> = d_h2_cfg
            .iter()
            .zip(&d_h2_time)
            .map(|(a, b)| a + b)
            .collect();
        let d_h2_pre = tanh_back(&acts.h2, &d_h2);
        let d_h1 = self
            .trunk2
            .backward(&acts.h1, &d_h2_pre, &mut grad.layers[1]);
        let d_h1_pre = tanh_back(&acts.h1, &d_h1);
        let _ = self
            .trunk1
            .backward(&acts.features, &d_h1_pre, &mut grad.layers[0]);
    }

    fn apply(&mut self, grad: &NetworkGrad, step: f64) {
        let layers: [&mut Dense; 6] = [
            &mut self.trunk1,
            &mut self.trunk2,
            &mut self.cfg_hidden,
            &mut self.cfg_out,
            &mut self.time_hidden,
            &mut self.time_out,
        ];
        for (layer, g) in layers.into_iter().zip(&grad.layers) {
            for (w, d) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= step * d;
            }
            for (b, d) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= step * d;
            }
        }
    }

    fn layer_mut(&mut self, i: usize) -> &mut Dense {
        match i {
            0 => &mut self.trunk1,
            1 => &mut self.trunk2,
            2 => &mut self.cfg_hidden,
            3 => &mut self.cfg_out,
            4 => &mut self.time_hidden,
            5 => &mut self.time_out,
            _ => unreachable!(),
        }
    }

    fn grad_zeros(&self) -> NetworkGrad {
        NetworkGrad {
            layers: [
                DenseGrad::zeros_like(&self.trunk1),
                DenseGrad::zeros_like(&self.trunk2),
                DenseGrad::zeros_like(&self.cfg_hidden),
                DenseGrad::zeros_like(&self.cfg_out),
                DenseGrad::zeros_like(&self.time_hidden),
                DenseGrad::zeros_like(&self.time_out),
            ],
        }
    }

    /// Plans a trajectory for the problem. Boundary conditions hold
    /// structurally regardless of the weights.
    pub fn plan(
        &self,
        problem: &PlanningProblem,
        model: &PlanarArm,
    ) -> Result<PhaseTrajectory, TrajectoryError> {
        let features = normalize_inputs(&problem.bc, model);
        let out = self.forward(&features);
        let rate = SplineCurve::scalar(self.shape.rate_degree, &out.rate)?;
        let path = assemble_path(
            &problem.bc,
            &rate,
            &out.offsets,
            self.shape.path_degree,
            self.shape.path_ctrl,
        )?;
        PhaseTrajectory::new(path, rate)
    }
}

/// Problem features: boundary vectors scaled by the joint range (taken as pi)
/// and the model's velocity and acceleration limits.
pub fn normalize_inputs(bc: &crate::trajectory::BoundaryConditions, model: &PlanarArm) -> Vec<f64> {
    let n = bc.dof();
    let mut f = Vec::with_capacity(5 * n);
    let q_scale = std::f64::consts::PI;
    f.extend(bc.q0.iter().map(|v| v / q_scale));
    f.extend(bc.qd.iter().map(|v| v / q_scale));
    f.extend(
        bc.dq0
            .iter()
            .zip(&model.limits.velocity)
            .map(|(v, s)| v / s),
    );
    f.extend(
        bc.dqd
            .iter()
            .zip(&model.limits.velocity)
            .map(|(v, s)| v / s),
    );
    f.extend(
        bc.ddq0
            .iter()
            .zip(&model.limits.acceleration)
            .map(|(v, s)| v / s),
    );
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub quad_cells: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Fraction of each violation budget targeted by the metric updates (the
    /// update drives batch-mean losses toward this level, so a margin below
    /// one keeps typical problems inside the raw budget).
    pub budget_margin: f64,
    /// Clamp on the metric exponents. Without it the exponents ramp much
    /// faster than the network can respond at the training step size, and the
    /// runaway weight drives the time head into underflow.
    pub alpha_range: [f64; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 128,
            epochs: 100,
            quad_cells: 200,
            hidden: 128,
            seed: 0,
            budget_margin: 0.5,
            alpha_range: [-8.0, 10.0],
        }
    }
}

/// Per-epoch summary: batch-mean training losses and the mean validation
/// breakdown under the identity metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_total: f64,
    pub mean_task: f64,
    pub mean_per_term: Vec<f64>,
    pub validation: Option<LossBreakdown>,
}

struct SampleGrad {
    grad: NetworkGrad,
    per_term: Vec<f64>,
    task: f64,
    total: f64,
}

/// Loss and full network gradient for one problem.
fn sample_gradient(
    net: &PlannerNetwork,
    problem: &PlanningProblem,
    model: &PlanarArm,
    weights: &[f64],
    grid: &QuadratureGrid,
    pfac: EndpointFactors,
    rfac: EndpointFactors,
) -> Result<SampleGrad, TrainError> {
    let shape = &net.shape;
    let n = net.dof;
    let features = normalize_inputs(&problem.bc, model);
    let acts = net.forward_cached(features);
    let rate_vals: Vec<f64> = acts.rate_preact.iter().map(|v| v.exp()).collect();
    let rate = SplineCurve::scalar(shape.rate_degree, &rate_vals)?;
    let bcp = boundary_control_points(&problem.bc, &rate, shape.path_degree, shape.path_ctrl)?;

    // Interior points anchored between the innermost boundary points.
    let m = shape.free_interior();
    let span = (shape.path_ctrl - START_FIXED - GOAL_FIXED - 1) as f64;
    let mut path_cps = Vec::with_capacity(shape.path_ctrl);
    path_cps.extend(bcp.start.iter().cloned());
    for i in 0..m {
        let frac = i as f64 / span;
        let offs = &acts.offsets_flat[i * n..(i + 1) * n];
        path_cps.push(
            (0..n)
                .map(|d| {
                    bcp.start[2][d] * (1.0 - frac)
                        + bcp.end[0][d] * frac
                        + std::f64::consts::PI * offs[d]
                })
                .collect(),
        );
    }
    path_cps.extend(bcp.end.iter().cloned());

    let tape = Tape::new();
    let (task, per_term, cp_grads) = cp_loss_and_grads(
        model,
        &problem.constraints,
        weights,
        grid,
        &tape,
        &path_cps,
        &rate_vals,
    );
    let total = task
        + weights
            .iter()
            .zip(&per_term)
            .map(|(w, l)| w * l)
            .sum::<f64>();

    // Chain interior adjoints into the anchors and the offsets.
    let mut d_cp2 = cp_grads.path[2].clone();
    let mut d_cp_prev = cp_grads.path[shape.path_ctrl - 2].clone();
    let mut d_offsets_flat = vec![0.0; m * n];
    for i in 0..m {
        let frac = i as f64 / span;
        let d_p = &cp_grads.path[START_FIXED + i];
        for d in 0..n {
            d_cp2[d] += (1.0 - frac) * d_p[d];
            d_cp_prev[d] += frac * d_p[d];
            d_offsets_flat[i * n + d] = std::f64::consts::PI * d_p[d];
        }
    }

    // Boundary formulas chain the anchor adjoints into the rate endpoints.
    let [d_r0, d_r1, d_rl] = boundary_rate_chain(
        &problem.bc,
        pfac,
        rfac,
        &rate_vals,
        &tape,
        &cp_grads.path[1],
        &d_cp2,
        &d_cp_prev,
    );
    let mut d_rate = cp_grads.rate;
    d_rate[0] += d_r0;
    d_rate[1] += d_r1;
    let last = shape.rate_ctrl - 1;
    d_rate[last] += d_rl;

    // Exponential head: pre-activation adjoint is d_rate * rate.
    let d_rate_preact: Vec<f64> = d_rate.iter().zip(&rate_vals).map(|(d, r)| d * r).collect();

    let mut grad = net.grad_zeros();
    net.backward(&acts, &d_offsets_flat, &d_rate_preact, &mut grad);
    Ok(SampleGrad {
        grad,
        per_term,
        task,
        total,
    })
}

/// One training epoch: minibatch gradient descent over the train split with a
/// metric update from batch-mean per-term losses after every batch, then a
/// validation pass under the identity metric.
///
/// Per-sample gradients within a batch run in parallel; the reduction is in
/// fixed index order and weight updates are sequential across batches, so the
/// result is deterministic.
pub fn train_epoch(
    net: &mut PlannerNetwork,
    problems: &[PlanningProblem],
    train_idx: &[usize],
    val_idx: &[usize],
    model: &PlanarArm,
    metric: &mut ManifoldMetric,
    cfg: &TrainConfig,
) -> Result<EpochStats, TrainError> {
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let grid = QuadratureGrid::new(&net.shape, cfg.quad_cells)?;
    let path_kv = KnotVector::clamped(net.shape.path_ctrl, net.shape.path_degree)?;
    let rate_kv = KnotVector::clamped(net.shape.rate_ctrl, net.shape.rate_degree)?;
    let pfac = EndpointFactors::derive(&path_kv)?;
    let rfac = EndpointFactors::derive(&rate_kv)?;
    let budgets: Vec<f64> = problems[train_idx[0]]
        .constraints
        .budgets()
        .iter()
        .map(|b| b * cfg.budget_margin)
        .collect();

    let mut total_sum = 0.0;
    let mut task_sum = 0.0;
    let mut per_term_sum = vec![0.0; budgets.len()];
    let mut count = 0usize;

    for (batch_no, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
        let weights = metric.weights();
        let net_ref = &*net;
        let results = exec::map_collect(batch, |&idx| {
            sample_gradient(net_ref, &problems[idx], model, &weights, &grid, pfac, rfac)
                .map(|g| (idx, g))
        });
        let mut batch_grad = net.grad_zeros();
        let mut batch_per_term = vec![0.0; budgets.len()];
        let batch_len = batch.len() as f64;
        for res in results {
            let (idx, sample) = res?;
            if !sample.total.is_finite() {
                return Err(TrainError::NonFinite {
                    batch: batch_no,
                    problem: idx,
                });
            }
            for (acc, g) in batch_grad.layers.iter_mut().zip(&sample.grad.layers) {
                acc.add(g);
            }
            for (acc, v) in batch_per_term.iter_mut().zip(&sample.per_term) {
                *acc += v;
            }
            total_sum += sample.total;
            task_sum += sample.task;
            for (acc, v) in per_term_sum.iter_mut().zip(&sample.per_term) {
                *acc += v;
            }
            count += 1;
        }
        // Batch-mean gradient step, then the metric update from batch means.
        net.apply(&batch_grad, cfg.learning_rate / batch_len);
        for v in &mut batch_per_term {
            *v /= batch_len;
        }
        *metric = metric.updated(&batch_per_term, &budgets)?;
        for a in &mut metric.alpha {
            *a = a.clamp(cfg.alpha_range[0], cfg.alpha_range[1]);
        }
    }

    let validation = if val_idx.is_empty() {
        None
    } else {
        Some(validate_mean(
            net,
            problems,
            val_idx,
            model,
            cfg.quad_cells,
        )?)
    };

    Ok(EpochStats {
        mean_total: total_sum / count as f64,
        mean_task: task_sum / count as f64,
        mean_per_term: per_term_sum.iter().map(|v| v / count as f64).collect(),
        validation,
    })
}

/// Per-layer `(weights, bias)` gradient arrays in network order.
pub type LayerGradients = Vec<(Vec<f64>, Vec<f64>)>;

/// Per-layer analytic gradients of one problem's planning loss with respect
/// to every network parameter, in network order (trunk, trunk, configuration
/// hidden/out, time hidden/out). Exposed for gradient probes.
pub fn network_loss_gradient(
    net: &PlannerNetwork,
    problem: &PlanningProblem,
    model: &PlanarArm,
    metric: &ManifoldMetric,
    cells: usize,
) -> Result<LayerGradients, TrainError> {
    let grid = QuadratureGrid::new(&net.shape, cells)?;
    let path_kv = KnotVector::clamped(net.shape.path_ctrl, net.shape.path_degree)?;
    let rate_kv = KnotVector::clamped(net.shape.rate_ctrl, net.shape.rate_degree)?;
    let pfac = EndpointFactors::derive(&path_kv)?;
    let rfac = EndpointFactors::derive(&rate_kv)?;
    let weights = metric.weights();
    let sample = sample_gradient(net, problem, model, &weights, &grid, pfac, rfac)?;
    Ok(sample
        .grad
        .layers
        .iter()
        .map(|g| (g.weights.clone(), g.bias.clone()))
        .collect())
}

impl PlannerNetwork {
    pub const LAYERS: usize = 6;

    /// Copy of the network with one weight shifted; for finite-difference
    /// probes.
    pub fn with_weight_offset(&self, layer: usize, index: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.layer_mut(layer).weights[index] += delta;
        out
    }

    pub fn with_bias_offset(&self, layer: usize, index: usize, delta: f64) -> Self {
        let mut out = self.clone();
        out.layer_mut(layer).bias[index] += delta;
        out
    }
}

/// Mean loss breakdown over a problem subset under the identity metric.
pub fn validate_mean(
    net: &PlannerNetwork,
    problems: &[PlanningProblem],
    idx: &[usize],
    model: &PlanarArm,
    cells: usize,
) -> Result<LossBreakdown, TrainError> {
    let terms = problems[idx[0]].constraints.len();
    let identity = ManifoldMetric::identity(terms);
    let rows = exec::map_collect(idx, |&i| -> Result<LossBreakdown, TrainError> {
        let traj = net.plan(&problems[i], model)?;
        Ok(crate::constraints::integrate_trajectory_loss(
            &traj,
            model,
            &problems[i].constraints,
            &identity,
            cells,
        )?)
    });
    let mut per_term = vec![0.0; terms];
    let mut task = 0.0;
    let mut total = 0.0;
    let count = idx.len() as f64;
    for row in rows {
        let row = row?;
        for (a, b) in per_term.iter_mut().zip(&row.per_term) {
            *a += b / count;
        }
        task += row.task / count;
        total += row.total / count;
    }
    Ok(LossBreakdown {
        per_term,
        task,
        total,
    })
}

/// Plans a fresh trajectory that takes over from the current one at
/// `t_switch`: the predicted state there becomes the start of a new problem
/// with the given goal, so position, velocity, and acceleration are
/// continuous at the seam by construction.
#[allow(clippy::too_many_arguments)]
pub fn replan_from_time(
    net: &PlannerNetwork,
    current: &PhaseTrajectory,
    time_map: &crate::trajectory::TimeMap,
    t_switch: f64,
    qd_new: Vec<f64>,
    dqd_new: Vec<f64>,
    template: &PlanningProblem,
    model: &PlanarArm,
) -> Result<(PlanningProblem, PhaseTrajectory), TrajectoryError> {
    let state = current.state_at_time(time_map, t_switch)?;
    let bc =
        crate::trajectory::BoundaryConditions::new(state.q, state.dq, state.ddq, qd_new, dqd_new)?;
    let problem = PlanningProblem {
        kind: template.kind,
        bc,
        constraints: template.constraints.clone(),
    };
    let traj = net.plan(&problem, model)?;
    Ok((problem, traj))
}

/// Serialized training state: network, metric exponents, and the number of
/// completed training steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub network: PlannerNetwork,
    pub metric: ManifoldMetric,
    pub step: u64,
}
