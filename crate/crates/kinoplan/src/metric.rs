//! Learned diagonal metric over constraint-loss terms.
//!
//! Each constraint term carries a weight `e^alpha_i`; the weights multiply the
//! per-term integrated losses in the planning objective. The update drives
//! each term toward its violation budget: terms above budget gain weight,
//! terms below budget lose it, with the multiplicative-log step
//! `alpha_i += gamma * ln(L_i / budget_i)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("expected {expected} per-term values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("violation budgets must be positive")]
    NonPositiveBudget,
}

/// Default update step for the metric exponents.
pub const DEFAULT_GAMMA: f64 = 1e-2;

/// Per-term losses are floored here before the log; the update is otherwise
/// undefined at exactly zero loss.
pub const LOSS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMetric {
    pub alpha: Vec<f64>,
    pub gamma: f64,
}

impl ManifoldMetric {
    pub fn new(alpha: Vec<f64>, gamma: f64) -> Self {
        Self { alpha, gamma }
    }

    /// Unit weights (`alpha = 0`) for `terms` constraint terms.
    pub fn identity(terms: usize) -> Self {
        Self::new(vec![0.0; terms], DEFAULT_GAMMA)
    }

    /// Metric whose weights equal the given values (`alpha = ln w`).
    pub fn from_weights(weights: &[f64], gamma: f64) -> Self {
        Self::new(weights.iter().map(|w| w.ln()).collect(), gamma)
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a.exp()).collect()
    }

    /// Weighted sum of per-term losses under the metric.
    pub fn weighted_manifold_loss(&self, per_term: &[f64]) -> Result<f64, MetricError> {
        if per_term.len() != self.alpha.len() {
            return Err(MetricError::LengthMismatch {
                expected: self.alpha.len(),
                got: per_term.len(),
            });
        }
        Ok(self
            .alpha
            .iter()
            .zip(per_term)
            .map(|(a, l)| a.exp() * l)
            .sum())
    }

    /// One metric update step from observed per-term losses and budgets.
    pub fn updated(&self, per_term: &[f64], budgets: &[f64]) -> Result<Self, MetricError> {
        if per_term.len() != self.alpha.len() || budgets.len() != self.alpha.len() {
            return Err(MetricError::LengthMismatch {
                expected: self.alpha.len(),
                got: per_term.len().max(budgets.len()),
            });
        }
        if budgets.iter().any(|&b| b <= 0.0) {
            return Err(MetricError::NonPositiveBudget);
        }
        let alpha = self
            .alpha
            .iter()
            .zip(per_term.iter().zip(budgets))
            .map(|(a, (&l, &b))| a + self.gamma * (l.max(LOSS_FLOOR) / b).ln())
            .collect();
        Ok(Self {
            alpha,
            gamma: self.gamma,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_metric_sums_terms() {
        let m = ManifoldMetric::identity(3);
        let total = m.weighted_manifold_loss(&[1.0, 2.0, 0.5]).unwrap();
        assert!((total - 3.5).abs() < 1e-15);
    }

    #[test]
    fn single_term_weighting() {
        let m = ManifoldMetric::new(vec![2.0f64.ln()], DEFAULT_GAMMA);
        assert!((m.weighted_manifold_loss(&[3.0]).unwrap() - 6.0).abs() < 1e-12);
        // Zero losses stay zero for any alpha.
        let m = ManifoldMetric::new(vec![17.0, -4.0], DEFAULT_GAMMA);
        assert_eq!(m.weighted_manifold_loss(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn update_at_budget_is_neutral() {
        let m = ManifoldMetric::new(vec![0.7], 0.01);
        let next = m.updated(&[0.5], &[0.5]).unwrap();
        assert_eq!(next.alpha[0], 0.7);
    }

    #[test]
    fn update_step_arithmetic() {
        // Loss e^2 times over budget with gamma 0.01: delta alpha = 0.02.
        let m = ManifoldMetric::new(vec![0.0], 0.01);
        let b = 0.125;
        let next = m.updated(&[b * 1.0f64.exp()], &[b]).unwrap();
        assert!((next.alpha[0] - 0.01).abs() < 1e-12);
        let next = m.updated(&[b * 2.0f64.exp()], &[b]).unwrap();
        assert!((next.alpha[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn weight_decays_under_budget() {
        let m = ManifoldMetric::new(vec![0.3, 0.3], 0.05);
        let next = m.updated(&[1e-4, 1e-1], &[1e-2, 1e-2]).unwrap();
        assert!(next.alpha[0] < 0.3);
        assert!(next.alpha[1] > 0.3);
        assert!(next.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn zero_loss_is_floored() {
        let m = ManifoldMetric::new(vec![0.0], 1.0);
        let next = m.updated(&[0.0], &[1e-2]).unwrap();
        assert!((next.alpha[0] - (LOSS_FLOOR / 1e-2).ln()).abs() < 1e-12);
        assert!(next.alpha[0].is_finite());
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let m = ManifoldMetric::identity(2);
        assert!(matches!(
            m.updated(&[1.0], &[1.0, 1.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert_eq!(
            m.updated(&[1.0, 1.0], &[1.0, 0.0]).unwrap_err(),
            MetricError::NonPositiveBudget
        );
    }
}
