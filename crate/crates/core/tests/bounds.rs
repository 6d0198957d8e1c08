use dflsim::analysis::{
    bound_trajectory, theorem1_bound, theorem2_bound, write_bound_csv, BoundParams, BoundsConfig,
    LearningRateSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn constant(l: f64, g: f64, eta: f64, d0: f64) -> BoundParams {
    BoundParams {
        l,
        g,
        schedule: LearningRateSchedule::Constant(eta),
        d0,
    }
}

#[test]
fn recursion_equals_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let l = rng.random_range(0.1..5.0);
        let eta = rng.random_range(0.0..1.0 / (3.0 * l));
        let p = constant(l, rng.random_range(0.0..3.0), eta, rng.random_range(0.0..10.0));
        for t in 0..=100 {
            let a = theorem1_bound(&p, t).unwrap().value;
            let b = theorem2_bound(&p, t).unwrap().value;
            assert!((a - b).abs() <= 1e-10, "t={t}: {a} vs {b}");
        }
    }
}

#[test]
fn long_run_value_is_the_plateau() {
    let p = constant(1.0, 1.0, 0.1, 5.0);
    let plateau = 0.1 / 3.0;
    let v = theorem2_bound(&p, 1_000_000).unwrap();
    assert!(v.contractive);
    assert!((v.value - plateau).abs() <= 1e-12, "{}", v.value);
}

#[test]
fn bound_moves_monotonically_toward_the_plateau() {
    let above = constant(1.0, 1.0, 0.1, 5.0);
    let below = constant(1.0, 1.0, 0.1, 0.0);
    for t in 0..200 {
        assert!(theorem2_bound(&above, t + 1).unwrap().value <= theorem2_bound(&above, t).unwrap().value);
        assert!(theorem2_bound(&below, t + 1).unwrap().value >= theorem2_bound(&below, t).unwrap().value);
    }
}

#[test]
fn large_rate_is_flagged_not_contractive() {
    let p = constant(1.0, 1.0, 0.5, 1.0);
    assert!(!theorem1_bound(&p, 3).unwrap().contractive);
    assert!(!theorem2_bound(&p, 3).unwrap().contractive);
}

#[test]
fn per_round_schedule_must_cover_every_round() {
    let p = BoundParams {
        l: 1.0,
        g: 1.0,
        schedule: LearningRateSchedule::PerRound(vec![0.1, 0.05]),
        d0: 1.0,
    };
    assert!(theorem1_bound(&p, 1).is_ok());
    assert!(theorem1_bound(&p, 2).is_err());
    assert!(theorem2_bound(&p, 0).is_err());
}

#[test]
fn trajectory_csv_has_one_row_per_round() {
    let cfg = BoundsConfig {
        rounds: 40,
        ..Default::default()
    };
    let rows = bound_trajectory(&cfg).unwrap();
    assert_eq!(rows.len(), 40);
    for r in &rows {
        assert!(r.empirical_sq_dist.is_finite() && r.theorem_bound.is_finite());
        assert_eq!(r.slack, r.theorem_bound - r.empirical_sq_dist);
    }
    let mut buf = Vec::new();
    write_bound_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,empirical_sq_dist,theorem_bound,slack"));
    assert_eq!(lines.count(), 40);
    assert_eq!(rows, bound_trajectory(&cfg).unwrap());
}
