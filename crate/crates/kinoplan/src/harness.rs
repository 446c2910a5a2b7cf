//! Problem generation, dense-grid validation, and planner evaluation.
//!
//! Generators draw boundary states by rejection sampling with inverse
//! kinematics, so every emitted problem satisfies its own scenario geometry
//! at the endpoints. Each problem index gets an independently derived RNG
//! stream, making datasets bit-identical under a seed regardless of how the
//! generation is parallelized.

use crate::constraints::{integrate_trajectory_loss, pointwise_violation};
use crate::exec;
use crate::metric::ManifoldMetric;
use crate::network::PlannerNetwork;
use crate::planner::{direct_plan, OptimizerConfig, PlanError};
use crate::problem::{PlanningProblem, ReachGeometry, TaskKind, TransferGeometry};
use crate::robot::PlanarArm;
use crate::trajectory::{BoundaryConditions, PhaseTrajectory, TrajectoryError};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("rejection limit exceeded after {attempts} attempts (problem {index})")]
    RejectionLimit { index: usize, attempts: usize },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Train(#[from] crate::network::TrainError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

const REJECTION_CAP: usize = 1000;

/// Per-index RNG stream derivation (SplitMix64 finalizer).
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Problem collection with a deterministic train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub problems: Vec<PlanningProblem>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub seed: u64,
}

impl Dataset {
    /// Tail split: the last tenth (at least one problem when possible) is
    /// validation.
    pub fn from_problems(problems: Vec<PlanningProblem>, seed: u64) -> Self {
        let n = problems.len();
        let val = if n >= 10 { n / 10 } else { usize::from(n > 1) };
        let train_idx: Vec<usize> = (0..n - val).collect();
        let val_idx: Vec<usize> = (n - val..n).collect();
        Self {
            problems,
            train_idx,
            val_idx,
            seed,
        }
    }

    /// One problem per line, JSON.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        for p in &self.problems {
            serde_json::to_writer(&mut w, p)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R, seed: u64) -> Result<Self, HarnessError> {
        let mut problems = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            problems.push(serde_json::from_str(&line)?);
        }
        Ok(Self::from_problems(problems, seed))
    }
}

const IK_GUESS: [f64; 3] = [1.5, -1.4, 0.5];

fn ik_guess(model: &PlanarArm) -> Vec<f64> {
    // The canonical elbow pose generalizes to other link counts by padding.
    (0..model.dof())
        .map(|i| IK_GUESS.get(i).copied().unwrap_or(0.1))
        .collect()
}

/// Candidate starts for pose IK: the canonical elbow pose and its mirror
/// about the y axis. Targets left of the base usually need the mirrored
/// branch to keep the first link clear of the left pedestal.
fn ik_guesses(model: &PlanarArm) -> [Vec<f64>; 2] {
    let canonical = ik_guess(model);
    let mut mirrored = canonical.clone();
    mirrored[0] = std::f64::consts::PI - canonical[0];
    for v in mirrored.iter_mut().skip(1) {
        *v = -*v;
    }
    [canonical, mirrored]
}

/// Reach problems: start at rest on the line, goal on the line with a hit
/// velocity along it. Half of the problems use the maximum hit speed, half a
/// uniformly scaled one; `max_hit_speed = 0` yields zero goal velocity.
pub fn generate_reach_problems(
    count: usize,
    seed: u64,
    model: &PlanarArm,
    geom: &ReachGeometry,
) -> Result<Dataset, HarnessError> {
    assert!(count > 0, "count must be positive");
    let set = geom.constraint_set();
    let results = exec::map_range(count, |index| -> Result<PlanningProblem, HarnessError> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
        for _attempt in 0..REJECTION_CAP {
            let x0 = rng.random_range(geom.start_x[0]..=geom.start_x[1]);
            let xd = rng.random_range(geom.goal_x[0]..=geom.goal_x[1]);
            if (xd - x0).abs() < geom.min_separation {
                continue;
            }
            let Some(q0) = model.solve_ik([x0, geom.line_y], None, &ik_guess(model), 1e-10) else {
                continue;
            };
            let Some(qd) = model.solve_ik([xd, geom.line_y], None, &q0, 1e-10) else {
                continue;
            };
            // Keep start and goal on the same elbow branch; branch-crossing
            // pairs force the straight-line seed far off the work line.
            if model.dof() >= 2 && q0[1].signum() != qd[1].signum() {
                continue;
            }
            let speed_cap = geom.max_hit_speed;
            let speed = if index % 2 == 0 {
                speed_cap
            } else {
                rng.random_range(0.0..=1.0) * speed_cap
            };
            let direction = (xd - x0).signum();
            let mut dqd = model
                .joint_velocity_for_ee(&qd, [direction * speed, 0.0])
                .expect("dimension fixed");
            // Scale down into the joint velocity limits with margin.
            let mut scale = 1.0f64;
            for (v, lim) in dqd.iter().zip(&model.limits.velocity) {
                if v.abs() > 0.9 * lim {
                    scale = scale.min(0.9 * lim / v.abs());
                }
            }
            dqd.iter_mut().for_each(|v| *v *= scale);
            let n = model.dof();
            let bc = BoundaryConditions::new(q0, vec![0.0; n], vec![0.0; n], qd, dqd)
                .expect("generator produces finite states");
            return Ok(PlanningProblem {
                kind: TaskKind::ReachOnLine,
                bc,
                constraints: set.clone(),
            });
        }
        Err(HarnessError::RejectionLimit {
            index,
            attempts: REJECTION_CAP,
        })
    });
    let problems = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::from_problems(problems, seed))
}

/// Transfer problems: rest-to-rest motion carrying an object between poses
/// above the two pedestals with a fixed heading; endpoints are verified
/// collision-free at clearance.
pub fn generate_transfer_problems(
    count: usize,
    seed: u64,
    model: &PlanarArm,
    geom: &TransferGeometry,
) -> Result<Dataset, HarnessError> {
    assert!(count > 0, "count must be positive");
    let set = geom.constraint_set();
    let endpoints_clear = |q: &[f64]| -> bool {
        let mut ok = true;
        for term in &set.terms {
            let zeros = vec![0.0; model.dof()];
            let loss = crate::constraints::pointwise_violation(model, term, q, &zeros, &zeros);
            match term {
                crate::constraints::ConstraintTerm::RobotCollision { .. }
                | crate::constraints::ConstraintTerm::ObjectCollision { .. }
                | crate::constraints::ConstraintTerm::Orientation { .. } => {
                    ok &= loss <= 1e-9;
                }
                _ => {}
            }
        }
        ok
    };
    let results = exec::map_range(count, |index| -> Result<PlanningProblem, HarnessError> {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
        for _attempt in 0..REJECTION_CAP {
            let mut poses = [[0.0; 2]; 2];
            for (p, pedestal) in poses.iter_mut().zip(&geom.pedestals) {
                let cx = 0.5 * (pedestal.min[0] + pedestal.max[0]);
                p[0] = cx + rng.random_range(-geom.lateral_slack..=geom.lateral_slack);
                p[1] = rng.random_range(geom.ee_height[0]..=geom.ee_height[1]);
            }
            let solve_clear = |pose: [f64; 2]| -> Option<Vec<f64>> {
                ik_guesses(model)
                    .into_iter()
                    .filter_map(|guess| {
                        model.solve_ik(pose, Some(geom.carry_heading), &guess, 1e-10)
                    })
                    .find(|q| endpoints_clear(q))
            };
            let Some(q0) = solve_clear(poses[0]) else {
                continue;
            };
            let Some(qd) = solve_clear(poses[1]) else {
                continue;
            };
            let bc = BoundaryConditions::rest_to_rest(q0, qd).expect("finite states");
            return Ok(PlanningProblem {
                kind: TaskKind::TransferWithOrientation,
                bc,
                constraints: set.clone(),
            });
        }
        Err(HarnessError::RejectionLimit {
            index,
            attempts: REJECTION_CAP,
        })
    });
    let problems = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::from_problems(problems, seed))
}

/// Validation metrics of one planned trajectory at dense resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub motion_time: f64,
    /// Per-term integrated losses under the identity metric.
    pub violation_integrals: Vec<f64>,
    /// Per-term maximum instantaneous violation magnitude over the grid.
    pub max_violations: Vec<f64>,
    /// Max-norm endpoint residuals: q(0), dq(0), ddq(0), q(1), dq(1).
    pub boundary_residuals: [f64; 5],
    /// Wall-clock planning time in seconds (zero when not planned here).
    pub planning_time: f64,
    /// Every violation integral within its budget.
    pub success: bool,
}

/// Dense-grid validation: loss integrals under the identity metric, maximum
/// pointwise violations, endpoint residuals, and the success verdict.
pub fn validate_trajectory(
    traj: &PhaseTrajectory,
    problem: &PlanningProblem,
    model: &PlanarArm,
    n_dense: usize,
) -> Result<Metrics, HarnessError> {
    assert!(
        n_dense >= 1024,
        "dense validation needs at least 1024 cells"
    );
    let identity = ManifoldMetric::identity(problem.constraints.len());
    let breakdown =
        integrate_trajectory_loss(traj, model, &problem.constraints, &identity, n_dense)?;

    let mut max_violations = vec![0.0f64; problem.constraints.len()];
    for k in 0..n_dense {
        let s = (k as f64 + 0.5) / n_dense as f64;
        let st = traj.state_at_phase(s)?;
        for (acc, term) in max_violations.iter_mut().zip(&problem.constraints.terms) {
            *acc = acc.max(pointwise_violation(model, term, &st.q, &st.dq, &st.ddq));
        }
    }

    let inf_norm = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max)
    };
    let s0 = traj.state_at_phase(0.0)?;
    let s1 = traj.state_at_phase(1.0)?;
    let bc = &problem.bc;
    let boundary_residuals = [
        inf_norm(&s0.q, &bc.q0),
        inf_norm(&s0.dq, &bc.dq0),
        inf_norm(&s0.ddq, &bc.ddq0),
        inf_norm(&s1.q, &bc.qd),
        inf_norm(&s1.dq, &bc.dqd),
    ];

    let budgets = problem.constraints.budgets();
    let success = breakdown.per_term.iter().zip(&budgets).all(|(l, b)| l <= b);

    Ok(Metrics {
        motion_time: traj.duration(n_dense)?,
        violation_integrals: breakdown.per_term,
        max_violations,
        boundary_residuals,
        planning_time: 0.0,
        success,
    })
}

/// A planner under evaluation.
pub enum Planner {
    Direct(OptimizerConfig),
    Network(Box<PlannerNetwork>),
}

impl Planner {
    /// Plans one problem, returning the trajectory and the wall time spent.
    pub fn plan(
        &self,
        problem: &PlanningProblem,
        model: &PlanarArm,
    ) -> Result<(PhaseTrajectory, f64), HarnessError> {
        let start = Instant::now();
        let traj = match self {
            Planner::Direct(cfg) => {
                let metric = problem.initial_metric();
                direct_plan(problem, model, cfg, &metric)?.trajectory
            }
            Planner::Network(net) => net.plan(problem, model)?,
        };
        Ok((traj, start.elapsed().as_secs_f64()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl Stats {
    fn from_values(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        let q = |frac: f64| {
            let pos = frac * (sorted.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let w = pos - lo as f64;
            sorted[lo] * (1.0 - w) + sorted[hi] * w
        };
        Stats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: q(0.5),
            p95: q(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub problems: usize,
    pub success_ratio: f64,
    pub motion_time: Stats,
    pub planning_time: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<Metrics>,
    pub summary: EvalSummary,
}

impl EvalReport {
    /// Aggregates recomputed from the rows alone.
    pub fn from_rows(rows: Vec<Metrics>) -> Self {
        let motion: Vec<f64> = rows.iter().map(|m| m.motion_time).collect();
        let planning: Vec<f64> = rows.iter().map(|m| m.planning_time).collect();
        let successes = rows.iter().filter(|m| m.success).count();
        let summary = EvalSummary {
            problems: rows.len(),
            success_ratio: successes as f64 / rows.len() as f64,
            motion_time: Stats::from_values(&motion),
            planning_time: Stats::from_values(&planning),
        };
        Self { rows, summary }
    }

    /// CSV rows, one per problem, floats at 17 significant digits. Planning
    /// wall time is the only non-deterministic column.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let terms = self.rows.first().map_or(0, |m| m.violation_integrals.len());
        out.push_str("index,motion_time,success");
        for i in 0..terms {
            out.push_str(&format!(",integral_{i}"));
        }
        for i in 0..terms {
            out.push_str(&format!(",max_violation_{i}"));
        }
        out.push_str(
            ",residual_q0,residual_dq0,residual_ddq0,residual_qd,residual_dqd,planning_time\n",
        );
        for (i, m) in self.rows.iter().enumerate() {
            out.push_str(&format!("{i},{:.16e},{}", m.motion_time, m.success));
            for v in &m.violation_integrals {
                out.push_str(&format!(",{v:.16e}"));
            }
            for v in &m.max_violations {
                out.push_str(&format!(",{v:.16e}"));
            }
            for v in &m.boundary_residuals {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push_str(&format!(",{:.16e}\n", m.planning_time));
        }
        out
    }

    /// The deterministic portion of the CSV: everything except wall time.
    pub fn to_csv_deterministic(&self) -> String {
        self.to_csv()
            .lines()
            .map(|line| {
                let cut = line.rfind(',').expect("csv rows have columns");
                &line[..cut]
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Plans and validates every problem. Parallel over problems with a fixed
/// output ordering by problem index.
pub fn evaluate_planner(
    planner: &Planner,
    problems: &[PlanningProblem],
    model: &PlanarArm,
    n_dense: usize,
) -> Result<EvalReport, HarnessError> {
    assert!(
        !problems.is_empty(),
        "evaluation needs at least one problem"
    );
    let rows = exec::map_collect(problems, |problem| -> Result<Metrics, HarnessError> {
        let (traj, seconds) = planner.plan(problem, model)?;
        let mut metrics = validate_trajectory(&traj, problem, model, n_dense)?;
        metrics.planning_time = seconds;
        Ok(metrics)
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport::from_rows(rows))
}
