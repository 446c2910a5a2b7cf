//! Release-gate self-tests: boundary exactness, gradient fidelity, and
//! quadrature consistency on the benchmark model. The CLI `check` subcommand
//! runs these and fails the process when any item fails.

use crate::constraints::{integrate_trajectory_loss, ConstraintSet};
use crate::harness::generate_reach_problems;
use crate::metric::ManifoldMetric;
use crate::network::PlannerNetwork;
use crate::planner::{initial_params, Objective};
use crate::problem::ReachGeometry;
use crate::robot::PlanarArm;
use crate::spline::SplineCurve;
use crate::trajectory::{assemble_path, BoundaryConditions, PhaseTrajectory, SplineShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct SelfTest {
    pub name: &'static str,
    pub passed: bool,
}

/// Runs every self-test and returns one result per item.
pub fn run_all() -> Vec<SelfTest> {
    vec![
        SelfTest {
            name: "boundary conditions hold to 1e-8 on 200 random assemblies",
            passed: boundary_self_test(200, 1).unwrap_or(false),
        },
        SelfTest {
            name: "planner gradient matches finite differences to 1e-4",
            passed: gradient_self_test().unwrap_or(false),
        },
        SelfTest {
            name: "quadrature refinement stable and duration-consistent",
            passed: quadrature_self_test().unwrap_or(false),
        },
    ]
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Assembles random (boundary, rate, offset) triples and checks all five
/// endpoint conditions numerically.
pub fn boundary_self_test(trials: usize, seed: u64) -> AnyResult<bool> {
    let shape = SplineShape::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3;
    for _ in 0..trials {
        let mut sample =
            |lim: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-lim..lim)).collect() };
        let (q0, dq0, ddq0, qd, dqd) = (
            sample(2.0),
            sample(1.5),
            sample(4.0),
            sample(2.0),
            sample(1.5),
        );
        let bc = BoundaryConditions::new(q0, dq0, ddq0, qd, dqd)?;
        let rate_vals: Vec<f64> = (0..shape.rate_ctrl)
            .map(|_| rng.random_range(0.3..3.0))
            .collect();
        let rate = SplineCurve::scalar(shape.rate_degree, &rate_vals)?;
        let offsets: Vec<Vec<f64>> = (0..shape.free_interior())
            .map(|_| (0..n).map(|_| rng.random_range(-0.3..0.3)).collect())
            .collect();
        let path = assemble_path(&bc, &rate, &offsets, shape.path_degree, shape.path_ctrl)?;
        let traj = PhaseTrajectory::new(path, rate)?;
        let s0 = traj.state_at_phase(0.0)?;
        let s1 = traj.state_at_phase(1.0)?;
        for d in 0..n {
            let worst = (s0.q[d] - bc.q0[d])
                .abs()
                .max((s0.dq[d] - bc.dq0[d]).abs())
                .max((s0.ddq[d] - bc.ddq0[d]).abs())
                .max((s1.q[d] - bc.qd[d]).abs())
                .max((s1.dq[d] - bc.dqd[d]).abs());
            if worst > 1e-8 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn gradient_self_test() -> AnyResult<bool> {
    let model = PlanarArm::benchmark_3link();
    let shape = SplineShape::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ds = generate_reach_problems(3, 5, &model, &ReachGeometry::default())?;
    for problem in &ds.problems {
        let metric = problem.initial_metric();
        let objective = Objective::for_problem(&model, problem, shape, 48)?;
        let mut params = initial_params(&problem.bc, &model, &shape)?;
        for v in params.iter_mut() {
            *v += rng.random_range(-0.02..0.02);
        }
        let (_, grad) = objective.evaluate_with_gradient(&params, &metric)?;
        let h = 1e-6;
        for i in (0..params.len()).step_by(7) {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (objective.evaluate(&plus, &metric)?.total
                - objective.evaluate(&minus, &metric)?.total)
                / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            if ((grad[i] - fd) / denom).abs() > 1e-4 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn quadrature_self_test() -> AnyResult<bool> {
    let model = PlanarArm::benchmark_3link();
    let shape = SplineShape::default();
    let ds = generate_reach_problems(3, 9, &model, &ReachGeometry::default())?;
    let net = PlannerNetwork::new(3, shape, 32, 4);
    for problem in &ds.problems {
        let traj = net.plan(problem, &model)?;
        let coarse = traj.duration(1024)?;
        let fine = traj.duration(2048)?;
        if ((coarse - fine) / fine).abs() > 1e-4 {
            return Ok(false);
        }
        // Unit task loss with no active constraints integrates to the
        // duration exactly (same quadrature rule).
        let free = ConstraintSet {
            terms: vec![],
            curvature_weight: 0.0,
        };
        let metric = ManifoldMetric::identity(0);
        let bd = integrate_trajectory_loss(&traj, &model, &free, &metric, 1024)?;
        if (bd.total - coarse).abs() > 1e-12 {
            return Ok(false);
        }
    }
    Ok(true)
}
