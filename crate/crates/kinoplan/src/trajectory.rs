//! Phase-parameterized trajectories.
//!
//! A trajectory is a pair of clamped B-splines over the phase variable
//! `s in [0, 1]`: a vector-valued path `p(s)` in joint space and a scalar,
//! strictly positive rate `r(s) = (dt/ds)^-1`. Time-domain kinematics follow
//! from the chain rule
//!
//! ```text
//! q  = p(s)
//! dq = p'(s) r(s)
//! ddq = p''(s) r(s)^2 + p'(s) r'(s) r(s)
//! ```
//!
//! and the duration is `T = integral of 1/r(s) ds`. Because the splines are
//! clamped, the first three and last two path control points can be solved in
//! closed form so that prescribed boundary positions, velocities, and the
//! initial acceleration hold exactly for any choice of the remaining control
//! points.

use crate::spline::{KnotVector, SplineCurve, SplineError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("boundary condition vectors must share one dimension and be finite")]
    BadBoundary,
    #[error("rate control points must be strictly positive")]
    NonPositiveRate,
    #[error("path needs at least 7 control points, got {0}")]
    PathTooShort(usize),
    #[error("expected {expected} interior offsets, got {got}")]
    OffsetCount { expected: usize, got: usize },
    #[error("quadrature needs at least 16 cells, got {0}")]
    QuadratureTooCoarse(usize),
    #[error("time {t} outside [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
}

/// Joint-space boundary conditions: full state at the start, position and
/// velocity at the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub q0: Vec<f64>,
    pub dq0: Vec<f64>,
    pub ddq0: Vec<f64>,
    pub qd: Vec<f64>,
    pub dqd: Vec<f64>,
}

impl BoundaryConditions {
    pub fn new(
        q0: Vec<f64>,
        dq0: Vec<f64>,
        ddq0: Vec<f64>,
        qd: Vec<f64>,
        dqd: Vec<f64>,
    ) -> Result<Self, TrajectoryError> {
        let n = q0.len();
        let all = [&q0, &dq0, &ddq0, &qd, &dqd];
        if n == 0
            || all.iter().any(|v| v.len() != n)
            || all.iter().any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(TrajectoryError::BadBoundary);
        }
        Ok(Self {
            q0,
            dq0,
            ddq0,
            qd,
            dqd,
        })
    }

    /// Rest-to-rest conditions between two configurations.
    pub fn rest_to_rest(q0: Vec<f64>, qd: Vec<f64>) -> Result<Self, TrajectoryError> {
        let n = q0.len();
        Self::new(q0, vec![0.0; n], vec![0.0; n], qd, vec![0.0; n])
    }

    pub fn dof(&self) -> usize {
        self.q0.len()
    }
}

/// Number of boundary-determined control points at the start (position,
/// velocity, acceleration) and at the goal (position, velocity).
pub const START_FIXED: usize = 3;
pub const GOAL_FIXED: usize = 2;

/// Control-point counts and degrees of the path and rate splines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineShape {
    pub path_ctrl: usize,
    pub path_degree: usize,
    pub rate_ctrl: usize,
    pub rate_degree: usize,
}

impl Default for SplineShape {
    fn default() -> Self {
        Self {
            path_ctrl: 15,
            path_degree: 7,
            rate_ctrl: 20,
            rate_degree: 7,
        }
    }
}

impl SplineShape {
    /// Number of freely chosen interior path control points.
    pub fn free_interior(&self) -> usize {
        self.path_ctrl - START_FIXED - GOAL_FIXED
    }
}

/// Endpoint derivative factors of a clamped basis:
///
/// ```text
/// p'(0)  =  vel * (P1 - P0)            p'(1) =  vel * (P_last - P_prev)
/// p''(0) =  acc * (2 P0 - 3 P1 + P2)
/// ```
///
/// The factors are read off the exact derivative basis rows at the endpoints,
/// which makes the boundary formulas below correct for any (control count,
/// degree) rather than relying on a closed form tied to one knot convention.
/// For the uniform clamped knots used here they evaluate to
/// `vel = D (C - D)` and `acc = D (D - 1) / 2 * (C - D)^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointFactors {
    pub vel: f64,
    pub acc: f64,
}

impl EndpointFactors {
    pub fn derive(kv: &KnotVector) -> Result<Self, SplineError> {
        let row1 = kv.basis_row(0.0, 1)?;
        let vel = row1[1];
        let acc = if kv.degree() >= 2 {
            let row2 = kv.basis_row(0.0, 2)?;
            debug_assert!((row2[0] - 2.0 * row2[2]).abs() <= 1e-9 * row2[2].abs().max(1.0));
            debug_assert!((row2[1] + 3.0 * row2[2]).abs() <= 1e-9 * row2[2].abs().max(1.0));
            row2[2]
        } else {
            0.0
        };
        debug_assert!({
            let end = kv.basis_row(1.0, 1).unwrap();
            (end[kv.num_ctrl() - 1] - vel).abs() <= 1e-9 * vel.abs().max(1.0)
        });
        Ok(Self { vel, acc })
    }
}

/// The five boundary-determined path control points.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryControlPoints {
    pub start: [Vec<f64>; 3],
    pub end: [Vec<f64>; 2],
}

/// Solves the boundary-determined path control points given the rate spline.
///
/// Only the first two and the last rate control points enter: `r(0)`, `r'(0)`,
/// and `r(1)` are linear in them at the clamped endpoints.
pub fn boundary_control_points(
    bc: &BoundaryConditions,
    rate: &SplineCurve,
    path_degree: usize,
    path_num_ctrl: usize,
) -> Result<BoundaryControlPoints, TrajectoryError> {
    if path_num_ctrl < START_FIXED + GOAL_FIXED + 2 {
        return Err(TrajectoryError::PathTooShort(path_num_ctrl));
    }
    if rate.control_points().iter().any(|p| p[0] <= 0.0) {
        return Err(TrajectoryError::NonPositiveRate);
    }
    let path_kv = KnotVector::clamped(path_num_ctrl, path_degree)?;
    let pf = EndpointFactors::derive(&path_kv)?;
    let rf = EndpointFactors::derive(rate.knots())?;

    let r0 = rate.control_points()[0][0];
    let r1 = rate.control_points()[1][0];
    let r_last = rate.control_points()[rate.num_ctrl() - 1][0];
    let n = bc.dof();

    let cp0 = bc.q0.clone();
    let cp1: Vec<f64> = (0..n).map(|i| cp0[i] + bc.dq0[i] / (r0 * pf.vel)).collect();
    // Solve p''(0) r0^2 + p'(0) r'(0) r0 = ddq0 for the third control point.
    let cp2: Vec<f64> = (0..n)
        .map(|i| {
            let k = (bc.ddq0[i] - pf.vel * rf.vel * (cp1[i] - cp0[i]) * (r1 - r0) * r0) / (r0 * r0);
            k / pf.acc + 3.0 * cp1[i] - 2.0 * cp0[i]
        })
        .collect();
    let cp_last = bc.qd.clone();
    let cp_prev: Vec<f64> = (0..n)
        .map(|i| cp_last[i] - bc.dqd[i] / (r_last * pf.vel))
        .collect();

    Ok(BoundaryControlPoints {
        start: [cp0, cp1, cp2],
        end: [cp_prev, cp_last],
    })
}

/// Interior path control points: linear interpolation between the innermost
/// boundary anchors plus `pi`-scaled offsets, one offset per free point.
pub fn assemble_inner_control_points(
    anchor_start: &[f64],
    anchor_end: &[f64],
    offsets: &[Vec<f64>],
    num_ctrl: usize,
    n_init: usize,
    n_goal: usize,
) -> Result<Vec<Vec<f64>>, TrajectoryError> {
    let fixed = n_init + n_goal + 1;
    let expected = num_ctrl - fixed + 1;
    if offsets.len() != expected {
        return Err(TrajectoryError::OffsetCount {
            expected,
            got: offsets.len(),
        });
    }
    let span = (num_ctrl - fixed) as f64;
    let n = anchor_start.len();
    let mut out = Vec::with_capacity(offsets.len());
    for (i, phi) in offsets.iter().enumerate() {
        if phi.len() != n {
            return Err(TrajectoryError::OffsetCount {
                expected: n,
                got: phi.len(),
            });
        }
        let frac = i as f64 / span;
        out.push(
            (0..n)
                .map(|k| {
                    anchor_start[k] * (1.0 - frac)
                        + anchor_end[k] * frac
                        + std::f64::consts::PI * phi[k]
                })
                .collect(),
        );
    }
    Ok(out)
}

/// Full path assembly: boundary points from the conditions and rate spline,
/// interior points from the offsets (`offsets.len() == num_ctrl - 5`).
pub fn assemble_path(
    bc: &BoundaryConditions,
    rate: &SplineCurve,
    offsets: &[Vec<f64>],
    path_degree: usize,
    path_num_ctrl: usize,
) -> Result<SplineCurve, TrajectoryError> {
    let bcp = boundary_control_points(bc, rate, path_degree, path_num_ctrl)?;
    let interior = assemble_inner_control_points(
        &bcp.start[2],
        &bcp.end[0],
        offsets,
        path_num_ctrl,
        START_FIXED,
        GOAL_FIXED,
    )?;
    // Interior points fill indices 3 ..= num_ctrl - 3; the first and last of
    // them sit at the anchor values (plus offset), not at the anchor indices.
    let mut cps = Vec::with_capacity(path_num_ctrl);
    cps.extend(bcp.start.iter().cloned());
    cps.extend(interior);
    cps.extend(bcp.end.iter().cloned());
    debug_assert_eq!(cps.len(), path_num_ctrl);
    Ok(SplineCurve::clamped(path_degree, cps)?)
}

/// Joint state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub ddq: Vec<f64>,
}

/// Paired path and rate splines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrajectory {
    pub path: SplineCurve,
    pub rate: SplineCurve,
}

impl PhaseTrajectory {
    pub fn new(path: SplineCurve, rate: SplineCurve) -> Result<Self, TrajectoryError> {
        if rate.dim() != 1 || rate.control_points().iter().any(|p| p[0] <= 0.0) {
            return Err(TrajectoryError::NonPositiveRate);
        }
        Ok(Self { path, rate })
    }

    pub fn dof(&self) -> usize {
        self.path.dim()
    }

    /// Chain-rule kinematic state at phase `s`. Derivative orders above the
    /// spline degree are identically zero.
    pub fn state_at_phase(&self, s: f64) -> Result<JointState, TrajectoryError> {
        let eval_or_zero = |c: &SplineCurve, order: usize| -> Result<Vec<f64>, SplineError> {
            if order > c.degree() {
                Ok(vec![0.0; c.dim()])
            } else {
                c.eval(s, order)
            }
        };
        let q = self.path.eval(s, 0)?;
        let dp = eval_or_zero(&self.path, 1)?;
        let ddp = eval_or_zero(&self.path, 2)?;
        let r = self.rate.eval_scalar(s, 0)?;
        let dr = eval_or_zero(&self.rate, 1)?[0];
        let dq = dp.iter().map(|v| v * r).collect();
        let ddq = ddp
            .iter()
            .zip(&dp)
            .map(|(a, v)| a * r * r + v * dr * r)
            .collect();
        Ok(JointState { q, dq, ddq })
    }

    /// Duration by the midpoint rule on `N` uniform cells.
    pub fn duration(&self, cells: usize) -> Result<f64, TrajectoryError> {
        if cells < 16 {
            return Err(TrajectoryError::QuadratureTooCoarse(cells));
        }
        let ds = 1.0 / cells as f64;
        let mut total = 0.0;
        for k in 0..cells {
            let s = (k as f64 + 0.5) * ds;
            total += ds / self.rate.eval_scalar(s, 0)?;
        }
        Ok(total)
    }

    /// Cumulative form of the duration integral on the same grid.
    pub fn time_map(&self, cells: usize) -> Result<TimeMap, TrajectoryError> {
        if cells < 16 {
            return Err(TrajectoryError::QuadratureTooCoarse(cells));
        }
        let ds = 1.0 / cells as f64;
        let mut phase = Vec::with_capacity(cells + 1);
        let mut time = Vec::with_capacity(cells + 1);
        phase.push(0.0);
        time.push(0.0);
        let mut t = 0.0;
        for k in 0..cells {
            let s_mid = (k as f64 + 0.5) * ds;
            t += ds / self.rate.eval_scalar(s_mid, 0)?;
            phase.push((k as f64 + 1.0) * ds);
            time.push(t);
        }
        Ok(TimeMap { phase, time })
    }

    /// State at time `t`, inverting the cached time map by bisection plus
    /// linear interpolation.
    pub fn state_at_time(&self, tm: &TimeMap, t: f64) -> Result<JointState, TrajectoryError> {
        self.state_at_phase(tm.phase_at_time(t)?)
    }
}

/// Monotone phase-to-time table with total duration at the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMap {
    phase: Vec<f64>,
    time: Vec<f64>,
}

impl TimeMap {
    pub fn duration(&self) -> f64 {
        *self.time.last().expect("time map is never empty")
    }

    pub fn grid(&self) -> (&[f64], &[f64]) {
        (&self.phase, &self.time)
    }

    /// Inverts the map: `t` in `[0, T]` to `s` in `[0, 1]`.
    pub fn phase_at_time(&self, t: f64) -> Result<f64, TrajectoryError> {
        let duration = self.duration();
        if !(0.0..=duration).contains(&t) {
            return Err(TrajectoryError::TimeOutOfRange { t, duration });
        }
        if t == duration {
            return Ok(1.0);
        }
        // Last index with time[i] <= t; times are strictly increasing.
        let i = self.time.partition_point(|&x| x <= t) - 1;
        let dt = self.time[i + 1] - self.time[i];
        let frac = (t - self.time[i]) / dt;
        Ok(self.phase[i] + frac * (self.phase[i + 1] - self.phase[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_bc(rng: &mut ChaCha8Rng, n: usize) -> BoundaryConditions {
        BoundaryConditions::new(
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
            (0..n).map(|_| rng.random_range(-4.0..4.0)).collect(),
            (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    }

    pub(crate) fn random_rate(rng: &mut ChaCha8Rng, num_ctrl: usize, degree: usize) -> SplineCurve {
        let vals: Vec<f64> = (0..num_ctrl).map(|_| rng.random_range(0.3..3.0)).collect();
        SplineCurve::scalar(degree, &vals).unwrap()
    }

    fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> PhaseTrajectory {
        let bc = random_bc(rng, n);
        let rate = random_rate(rng, 20, 7);
        let offsets: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..n).map(|_| rng.random_range(-0.3..0.3)).collect())
            .collect();
        let path = assemble_path(&bc, &rate, &offsets, 7, 15).unwrap();
        PhaseTrajectory::new(path, rate).unwrap()
    }

    #[test]
    fn endpoint_factors_match_closed_form() {
        // Uniform clamped knots: vel = D (C - D), acc = D (D - 1) / 2 (C - D)^2.
        for &(c, d) in &[(15usize, 7usize), (20, 7), (8, 3), (5, 2)] {
            let kv = KnotVector::clamped(c, d).unwrap();
            let f = EndpointFactors::derive(&kv).unwrap();
            let spans = (c - d) as f64;
            let deg = d as f64;
            assert!((f.vel - deg * spans).abs() < 1e-9 * (deg * spans));
            let acc_expect = deg * (deg - 1.0) / 2.0 * spans * spans;
            assert!((f.acc - acc_expect).abs() < 1e-9 * acc_expect.max(1.0));
        }
    }

    #[test]
    fn zero_velocity_duplicates_endpoint_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 3;
        let mut bc = random_bc(&mut rng, n);
        bc.dq0 = vec![0.0; n];
        bc.dqd = vec![0.0; n];
        let rate = random_rate(&mut rng, 20, 7);
        let bcp = boundary_control_points(&bc, &rate, 7, 15).unwrap();
        for i in 0..n {
            assert_eq!(bcp.start[1][i], bc.q0[i]);
            assert_eq!(bcp.end[0][i], bc.qd[i]);
        }
    }

    #[test]
    fn boundary_conditions_hold_numerically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let n = rng.random_range(1..4usize);
            let bc = random_bc(&mut rng, n);
            let rate = random_rate(&mut rng, 20, 7);
            let offsets: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..n).map(|_| rng.random_range(-0.5..0.5)).collect())
                .collect();
            let path = assemble_path(&bc, &rate, &offsets, 7, 15).unwrap();
            let traj = PhaseTrajectory::new(path, rate).unwrap();
            let s0 = traj.state_at_phase(0.0).unwrap();
            let s1 = traj.state_at_phase(1.0).unwrap();
            for i in 0..n {
                assert!((s0.q[i] - bc.q0[i]).abs() < 1e-8);
                assert!((s0.dq[i] - bc.dq0[i]).abs() < 1e-8);
                assert!((s0.ddq[i] - bc.ddq0[i]).abs() < 1e-8);
                assert!((s1.q[i] - bc.qd[i]).abs() < 1e-8);
                assert!((s1.dq[i] - bc.dqd[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn inner_points_interpolate_anchors() {
        let a = vec![1.0, 0.0];
        let b = vec![3.0, 2.0];
        let zeros: Vec<Vec<f64>> = vec![vec![0.0; 2]; 10];
        let pts = assemble_inner_control_points(&a, &b, &zeros, 15, 3, 2).unwrap();
        assert_eq!(pts.len(), 10);
        for (i, p) in pts.iter().enumerate() {
            let frac = i as f64 / 9.0;
            assert!((p[0] - (1.0 + 2.0 * frac)).abs() < 1e-12);
            assert!((p[1] - 2.0 * frac).abs() < 1e-12);
        }
        // Constant offsets shift every point by pi * v.
        let v = vec![0.25, -0.5];
        let shifted: Vec<Vec<f64>> = vec![v.clone(); 10];
        let pts2 = assemble_inner_control_points(&a, &b, &shifted, 15, 3, 2).unwrap();
        for (p0, p2) in pts.iter().zip(&pts2) {
            for k in 0..2 {
                assert!((p2[k] - p0[k] - std::f64::consts::PI * v[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inner_points_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let phi: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let pts = assemble_inner_control_points(&a, &b, &phi, 15, 3, 2).unwrap();
        // Index-by-index re-evaluation of the interpolation formula.
        for i in 0..=9usize {
            for k in 0..3 {
                let frac = i as f64 / 9.0;
                let expect = a[k] * (1.0 - frac) + b[k] * frac + std::f64::consts::PI * phi[i][k];
                assert_eq!(pts[i][k], expect);
            }
        }
    }

    #[test]
    fn chain_rule_constant_rate() {
        // Linear path, rate = 2: dq = 2 p', ddq = 0.
        let path = SplineCurve::clamped(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let rate = SplineCurve::scalar(1, &[2.0, 2.0]).unwrap();
        let traj = PhaseTrajectory::new(path, rate).unwrap();
        let st = traj.state_at_phase(0.5).unwrap();
        assert!((st.dq[0] - 2.0).abs() < 1e-12);
        assert!(st.ddq[0].abs() < 1e-12);
        // Unit rate: identity time map.
        let path = SplineCurve::clamped(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let rate = SplineCurve::scalar(1, &[1.0, 1.0]).unwrap();
        let traj = PhaseTrajectory::new(path, rate).unwrap();
        let st = traj.state_at_phase(0.3).unwrap();
        assert!((st.dq[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duration_of_constant_rates() {
        let path = SplineCurve::clamped(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let rate2 = SplineCurve::scalar(1, &[2.0, 2.0]).unwrap();
        let traj = PhaseTrajectory::new(path.clone(), rate2).unwrap();
        assert!((traj.duration(64).unwrap() - 0.5).abs() < 1e-12);
        let rate1 = SplineCurve::scalar(1, &[1.0, 1.0]).unwrap();
        let traj = PhaseTrajectory::new(path, rate1).unwrap();
        assert!((traj.duration(64).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duration_quadrature_refines() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let traj = random_trajectory(&mut rng, 2);
            let coarse = traj.duration(1024).unwrap();
            let fine = traj.duration(4096).unwrap();
            assert!(((coarse - fine) / fine).abs() < 1e-4);
        }
    }

    #[test]
    fn time_map_identities() {
        let path = SplineCurve::clamped(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let rate = SplineCurve::scalar(1, &[1.0, 1.0]).unwrap();
        let traj = PhaseTrajectory::new(path.clone(), rate).unwrap();
        let tm = traj.time_map(32).unwrap();
        let (phase, time) = tm.grid();
        for (s, t) in phase.iter().zip(time) {
            assert!((s - t).abs() < 1e-12);
        }
        let rate2 = SplineCurve::scalar(1, &[2.0, 2.0]).unwrap();
        let traj = PhaseTrajectory::new(path, rate2).unwrap();
        let tm = traj.time_map(32).unwrap();
        let (phase, time) = tm.grid();
        for (s, t) in phase.iter().zip(time) {
            assert!((s / 2.0 - t).abs() < 1e-12);
        }
    }

    #[test]
    fn time_map_is_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let traj = random_trajectory(&mut rng, 3);
            let tm = traj.time_map(256).unwrap();
            let (_, time) = tm.grid();
            assert!(time.windows(2).all(|w| w[1] > w[0]));
            assert!((tm.duration() - traj.duration(256).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn state_at_time_hits_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let bc = random_bc(&mut rng, 3);
        let rate = random_rate(&mut rng, 20, 7);
        let offsets: Vec<Vec<f64>> = vec![vec![0.1; 3]; 10];
        let path = assemble_path(&bc, &rate, &offsets, 7, 15).unwrap();
        let traj = PhaseTrajectory::new(path, rate).unwrap();
        let tm = traj.time_map(512).unwrap();
        let s0 = traj.state_at_time(&tm, 0.0).unwrap();
        let s1 = traj.state_at_time(&tm, tm.duration()).unwrap();
        for i in 0..3 {
            assert!((s0.q[i] - bc.q0[i]).abs() < 1e-8);
            assert!((s0.dq[i] - bc.dq0[i]).abs() < 1e-8);
            assert!((s0.ddq[i] - bc.ddq0[i]).abs() < 1e-8);
            assert!((s1.q[i] - bc.qd[i]).abs() < 1e-8);
            assert!((s1.dq[i] - bc.dqd[i]).abs() < 1e-8);
        }
        assert!(matches!(
            traj.state_at_time(&tm, tm.duration() + 0.1),
            Err(TrajectoryError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn unit_rate_time_equals_phase() {
        let path = SplineCurve::clamped(
            3,
            vec![vec![0.0], vec![0.2], vec![0.9], vec![1.0], vec![1.5]],
        )
        .unwrap();
        let rate = SplineCurve::scalar(1, &[1.0, 1.0]).unwrap();
        let traj = PhaseTrajectory::new(path, rate).unwrap();
        let tm = traj.time_map(64).unwrap();
        let at_time = traj.state_at_time(&tm, 0.5).unwrap();
        let at_phase = traj.state_at_phase(0.5).unwrap();
        assert!((at_time.q[0] - at_phase.q[0]).abs() < 1e-12);
    }

    #[test]
    fn phase_and_time_derivatives_agree() {
        // dq from the chain rule vs a central difference of q along time. The
        // map is piecewise linear, so its resolution bounds the achievable
        // agreement; 2^16 cells keeps the interpolation error below the
        // finite-difference tolerance.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let traj = random_trajectory(&mut rng, 2);
            let tm = traj.time_map(1 << 16).unwrap();
            let duration = tm.duration();
            let t = rng.random_range(0.2..0.8) * duration;
            let h = 1e-5 * duration;
            let mid = traj.state_at_time(&tm, t).unwrap();
            let lo = traj.state_at_time(&tm, t - h).unwrap();
            let hi = traj.state_at_time(&tm, t + h).unwrap();
            for i in 0..2 {
                let fd = (hi.q[i] - lo.q[i]) / (2.0 * h);
                let denom = mid.dq[i].abs().max(1.0);
                assert!(
                    ((mid.dq[i] - fd) / denom).abs() < 1e-4,
                    "dq {} vs fd {fd}",
                    mid.dq[i]
                );
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let bc = random_bc(&mut rng, 2);
        let bad_rate = SplineCurve::scalar(1, &[1.0, -0.5]).unwrap();
        assert_eq!(
            boundary_control_points(&bc, &bad_rate, 7, 15).unwrap_err(),
            TrajectoryError::NonPositiveRate
        );
        let rate = random_rate(&mut rng, 20, 7);
        assert_eq!(
            boundary_control_points(&bc, &rate, 3, 5).unwrap_err(),
            TrajectoryError::PathTooShort(5)
        );
        assert!(BoundaryConditions::new(
            vec![0.0],
            vec![0.0, 1.0],
            vec![0.0],
            vec![0.0],
            vec![0.0]
        )
        .is_err());
        assert!(BoundaryConditions::new(
            vec![f64::NAN],
            vec![0.0],
            vec![0.0],
            vec![0.0],
            vec![0.0]
        )
        .is_err());
    }
}
