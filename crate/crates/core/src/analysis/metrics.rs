use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::NodeId;

/// Differences at or below this are treated as ties by the comparisons.
pub const COMPARE_TOL: f64 = 1e-9;

/// Outcome of comparing two runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparison {
    FirstBetter,
    SecondBetter,
    Incomparable,
}

/// Per-round evaluation snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// `(client, accuracy in [0, 1])` for every benign client.
    pub accuracy: Vec<(NodeId, f64)>,
    /// `(client, mean loss)` on the same evaluation set.
    pub loss: Vec<(NodeId, f64)>,
    /// Mean accuracy in `[0, 1]`.
    pub mean_acc: f64,
    /// Variance of the accuracies in percentage points squared.
    pub acc_var: f64,
    /// Aggregation weights `(client, neighbour, weight)` of the round, when
    /// the rule produces explicit weights.
    pub weights: Vec<(NodeId, NodeId, f64)>,
}

fn nonempty(values: &[f64], what: &str) -> Result<()> {
    if values.is_empty() {
        return Err(Error::arg(format!("{what} of an empty accuracy list")));
    }
    Ok(())
}

/// Arithmetic mean of per-client accuracies (benign clients only in
/// Byzantine runs).
pub fn mean_accuracy(per_client: &[f64]) -> Result<f64> {
    nonempty(per_client, "mean")?;
    Ok(per_client.iter().sum::<f64>() / per_client.len() as f64)
}

/// Population variance (divides by `N`). Callers pass percentage points.
pub fn accuracy_variance(per_client: &[f64]) -> Result<f64> {
    let mean = mean_accuracy(per_client)?;
    Ok(per_client.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / per_client.len() as f64)
}

/// The run with strictly smaller accuracy variance is the more client-fair one.
pub fn fairness_compare(run_a: &[f64], run_b: &[f64]) -> Result<Comparison> {
    let (va, vb) = (accuracy_variance(run_a)?, accuracy_variance(run_b)?);
    Ok(order_by(vb, va))
}

/// The run with the higher benign mean accuracy is the more robust one.
pub fn robustness_compare(run_a: &[f64], run_b: &[f64]) -> Result<Comparison> {
    let (ma, mb) = (mean_accuracy(run_a)?, mean_accuracy(run_b)?);
    Ok(order_by(ma, mb))
}

/// `FirstBetter` when `a` exceeds `b` by more than the tolerance.
fn order_by(a: f64, b: f64) -> Comparison {
    if (a - b).abs() <= COMPARE_TOL {
        Comparison::Incomparable
    } else if a > b {
        Comparison::FirstBetter
    } else {
        Comparison::SecondBetter
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    #[test]
    fn means() {
        assert_eq!(mean_accuracy(&[1.0, 1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(mean_accuracy(&[0.8, 0.9]).unwrap(), 0.85, epsilon = 1e-15);
        assert!(mean_accuracy(&[]).is_err());
    }

    #[test]
    fn variances() {
        assert_eq!(accuracy_variance(&[91.0, 91.0, 91.0]).unwrap(), 0.0);
        assert_eq!(accuracy_variance(&[80.0, 90.0]).unwrap(), 25.0);
        let base = [71.5, 88.25, 93.0, 60.125];
        let shifted: Vec<f64> = base.iter().map(|a| a + 12.75).collect();
        assert_abs_diff_eq!(
            accuracy_variance(&base).unwrap(),
            accuracy_variance(&shifted).unwrap(),
            epsilon = 1e-9
        );
        assert!(accuracy_variance(&[]).is_err());
    }

    #[test]
    fn fairness_ordering() {
        assert_eq!(fairness_compare(&[90.0, 90.0], &[80.0, 100.0]).unwrap(), Comparison::FirstBetter);
        assert_eq!(fairness_compare(&[80.0, 100.0], &[90.0, 90.0]).unwrap(), Comparison::SecondBetter);
        assert_eq!(fairness_compare(&[70.0, 75.0], &[70.0, 75.0]).unwrap(), Comparison::Incomparable);
    }

    #[test]
    fn robustness_ordering() {
        assert_eq!(robustness_compare(&[92.5], &[18.7]).unwrap(), Comparison::FirstBetter);
        assert_eq!(robustness_compare(&[50.0, 60.0], &[55.0]).unwrap(), Comparison::Incomparable);
        let a = [40.0, 42.0];
        let b = [41.5, 43.0];
        let shift = |v: &[f64]| v.iter().map(|x| x + 7.0).collect::<Vec<_>>();
        assert_eq!(
            robustness_compare(&a, &b).unwrap(),
            robustness_compare(&shift(&a), &shift(&b)).unwrap()
        );
    }
}
