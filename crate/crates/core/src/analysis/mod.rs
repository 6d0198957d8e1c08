//! Fairness and robustness metrics, and convergence-bound evaluators.

mod bounds;
mod metrics;

pub use bounds::{
    bound_trajectory, quadratic_testbed, theorem1_bound, theorem2_bound, write_bound_csv, BoundEvaluation,
    BoundParams, BoundRow, BoundsConfig, LearningRateSchedule, QuadraticTestbed,
};
pub use metrics::{
    accuracy_variance, fairness_compare, mean_accuracy, robustness_compare, Comparison, RoundMetrics,
    COMPARE_TOL,
};
