//! Clamped B-spline curves on the unit interval.
//!
//! All curves in this crate share the parameter domain `[0, 1]` and a clamped,
//! uniformly spaced knot vector, so the curve interpolates its first and last
//! control points and its endpoint derivatives are simple linear functions of
//! the boundary control points. Evaluation returns exact analytic derivatives
//! up to the spline degree, and [`KnotVector::basis_row`] exposes the
//! evaluation as a linear map over control points, which is what the planner
//! gradients are built on.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SplineError {
    #[error("need at least degree+1 control points (got {num_ctrl} for degree {degree})")]
    InvalidDimensions { num_ctrl: usize, degree: usize },
    #[error("degree must be at least 1")]
    ZeroDegree,
    #[error("parameter {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("derivative order {order} exceeds spline degree {degree}")]
    OrderTooHigh { order: usize, degree: usize },
    #[error("control point count {got} does not match knot vector ({expected})")]
    ControlPointCount { got: usize, expected: usize },
    #[error("control points must share one dimension")]
    MixedDimensions,
    #[error("control point dimension must be at least 1")]
    EmptyPoint,
}

/// Clamped knot vector: `degree + 1` zeros, `num_ctrl - degree - 1` uniform
/// interior knots at `j / (num_ctrl - degree)`, then `degree + 1` ones.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    degree: usize,
    num_ctrl: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn clamped(num_ctrl: usize, degree: usize) -> Result<Self, SplineError> {
        if degree == 0 {
            return Err(SplineError::ZeroDegree);
        }
        if num_ctrl < degree + 1 {
            return Err(SplineError::InvalidDimensions { num_ctrl, degree });
        }
        let spans = num_ctrl - degree;
        let mut knots = Vec::with_capacity(num_ctrl + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for j in 1..spans {
            knots.push(j as f64 / spans as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        debug_assert_eq!(knots.len(), num_ctrl + degree + 1);
        Ok(Self {
            degree,
            num_ctrl,
            knots,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_ctrl(&self) -> usize {
        self.num_ctrl
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot span containing `s`: the unique `i` with `knots[i] <= s < knots[i+1]`,
    /// except `s = 1` which resolves to the final non-empty span.
    fn find_span(&self, s: f64) -> usize {
        if s >= self.knots[self.num_ctrl] {
            return self.num_ctrl - 1;
        }
        let raw = self.knots.partition_point(|&k| k <= s);
        raw.saturating_sub(1).clamp(self.degree, self.num_ctrl - 1)
    }

    /// Nonzero basis weights and their derivatives at `s`, for all orders
    /// `0..=max_order`. Row `k` holds the order-`k` weights of control points
    /// `span - degree ..= span`.
    fn ders_basis(&self, span: usize, s: f64, max_order: usize) -> Vec<Vec<f64>> {
        let p = self.degree;
        let n = max_order.min(p);
        let u = s;
        let k = &self.knots;

        // Triangular table of knot differences (lower) and basis values (upper).
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - k[span + 1 - j];
            right[j] = k[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let mut ders = vec![vec![0.0; p + 1]; n + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }

        let mut a_prev = vec![0.0; p + 1];
        let mut a_cur = vec![0.0; p + 1];
        for r in 0..=p {
            a_prev[0] = 1.0;
            for kk in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - kk as isize;
                let pk = p - kk;
                if r >= kk {
                    a_cur[0] = a_prev[0] / ndu[pk + 1][rk as usize];
                    d = a_cur[0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize {
                    kk - 1
                } else {
                    p - r
                };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a_cur[j] = (a_prev[j] - a_prev[j - 1]) / ndu[pk + 1][idx];
                    d += a_cur[j] * ndu[idx][pk];
                }
                if r <= pk {
                    a_cur[kk] = -a_prev[kk - 1] / ndu[pk + 1][r];
                    d += a_cur[kk] * ndu[r][pk];
                }
                ders[kk][r] = d;
                std::mem::swap(&mut a_prev, &mut a_cur);
            }
            // Reset the sliding rows for the next r.
            a_prev.iter_mut().for_each(|v| *v = 0.0);
            a_cur.iter_mut().for_each(|v| *v = 0.0);
        }

        let mut factor = p as f64;
        for (kk, row) in ders.iter_mut().enumerate().skip(1) {
            row.iter_mut().for_each(|v| *v *= factor);
            factor *= (p - kk) as f64;
        }
        ders
    }

    /// Sparse order-0 basis: at most `degree + 1` pairs `(index, weight)` whose
    /// weights sum to 1.
    pub fn basis_functions(&self, s: f64) -> Result<Vec<(usize, f64)>, SplineError> {
        check_range(s)?;
        let span = self.find_span(s);
        let ders = self.ders_basis(span, s, 0);
        Ok(ders[0]
            .iter()
            .enumerate()
            .map(|(j, &w)| (span - self.degree + j, w))
            .collect())
    }

    /// Dense weight vector of length `num_ctrl` such that the order-`order`
    /// derivative of any curve on this knot vector equals the dot product of
    /// the row with its control points.
    pub fn basis_row(&self, s: f64, order: usize) -> Result<Vec<f64>, SplineError> {
        check_range(s)?;
        if order > self.degree {
            return Err(SplineError::OrderTooHigh {
                order,
                degree: self.degree,
            });
        }
        let span = self.find_span(s);
        let ders = self.ders_basis(span, s, order);
        let mut row = vec![0.0; self.num_ctrl];
        for (j, &w) in ders[order].iter().enumerate() {
            row[span - self.degree + j] = w;
        }
        Ok(row)
    }

    /// Sparse form of [`basis_row`](Self::basis_row): first control index plus
    /// the `degree + 1` weights for all orders `0..=max_order`. Used by the
    /// gradient code to avoid dense rows in inner loops.
    pub fn basis_span(
        &self,
        s: f64,
        max_order: usize,
    ) -> Result<(usize, Vec<Vec<f64>>), SplineError> {
        check_range(s)?;
        if max_order > self.degree {
            return Err(SplineError::OrderTooHigh {
                order: max_order,
                degree: self.degree,
            });
        }
        let span = self.find_span(s);
        let ders = self.ders_basis(span, s, max_order);
        Ok((span - self.degree, ders))
    }
}

fn check_range(s: f64) -> Result<(), SplineError> {
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(SplineError::OutOfRange(s));
    }
    Ok(())
}

/// B-spline curve with vector-valued control points (dimension `m >= 1`).
///
/// Serialized as `{"degree", "num_ctrl", "control_points"}`; the knot vector is
/// always reconstructed from the counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineCurveData", into = "SplineCurveData")]
pub struct SplineCurve {
    knots: KnotVector,
    control_points: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SplineCurveData {
    degree: usize,
    num_ctrl: usize,
    control_points: Vec<Vec<f64>>,
}

impl From<SplineCurve> for SplineCurveData {
    fn from(c: SplineCurve) -> Self {
        Self {
            degree: c.knots.degree(),
            num_ctrl: c.knots.num_ctrl(),
            control_points: c.control_points,
        }
    }
}

impl TryFrom<SplineCurveData> for SplineCurve {
    type Error = SplineError;
    fn try_from(d: SplineCurveData) -> Result<Self, SplineError> {
        if d.control_points.len() != d.num_ctrl {
            return Err(SplineError::ControlPointCount {
                got: d.control_points.len(),
                expected: d.num_ctrl,
            });
        }
        SplineCurve::clamped(d.degree, d.control_points)
    }
}

impl SplineCurve {
    /// Builds a clamped curve; the knot vector is derived from the control
    /// point count.
    pub fn clamped(degree: usize, control_points: Vec<Vec<f64>>) -> Result<Self, SplineError> {
        let knots = KnotVector::clamped(control_points.len(), degree)?;
        Self::new(knots, control_points)
    }

    pub fn new(knots: KnotVector, control_points: Vec<Vec<f64>>) -> Result<Self, SplineError> {
        if control_points.len() != knots.num_ctrl() {
            return Err(SplineError::ControlPointCount {
                got: control_points.len(),
                expected: knots.num_ctrl(),
            });
        }
        let dim = control_points.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(SplineError::EmptyPoint);
        }
        if control_points.iter().any(|p| p.len() != dim) {
            return Err(SplineError::MixedDimensions);
        }
        Ok(Self {
            knots,
            control_points,
        })
    }

    /// Scalar curve from one value per control point.
    pub fn scalar(degree: usize, values: &[f64]) -> Result<Self, SplineError> {
        Self::clamped(degree, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.knots.degree()
    }

    pub fn num_ctrl(&self) -> usize {
        self.knots.num_ctrl()
    }

    pub fn dim(&self) -> usize {
        self.control_points[0].len()
    }

    pub fn control_points(&self) -> &[Vec<f64>] {
        &self.control_points
    }

    pub fn control_points_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.control_points
    }

    /// Value of the order-`order` derivative of the curve at `s`.
    pub fn eval(&self, s: f64, order: usize) -> Result<Vec<f64>, SplineError> {
        let (first, ders) = self.knots.basis_span(s, order)?;
        let mut out = vec![0.0; self.dim()];
        for (j, &w) in ders[order].iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(&self.control_points[first + j]) {
                *o += w * c;
            }
        }
        Ok(out)
    }

    /// Scalar convenience for one-dimensional curves.
    pub fn eval_scalar(&self, s: f64, order: usize) -> Result<f64, SplineError> {
        debug_assert_eq!(self.dim(), 1);
        Ok(self.eval(s, order)?[0])
    }
}
