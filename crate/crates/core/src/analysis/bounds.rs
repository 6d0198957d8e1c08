//! Squared-distance bounds for reweighted decentralized SGD on smooth convex
//! objectives, plus an isotropic quadratic testbed to report them against.
//!
//! With contraction factors `a_i = 1 - 3 eta_i L`, the per-round recursion is
//!
//! ```text
//! B_0     = D0
//! B_{j+1} = a_j * B_j + (eta_j * G)^2
//! ```
//!
//! and the bound after `t + 1` rounds is `B_{t+1}`. For a constant rate it has
//! the closed form `a^{t+1} D0 + (eta G^2 / 3L) (1 - a^{t+1})`, which tends to
//! the plateau `eta G^2 / 3L`.
//!
//! The bounds are diagnostics only: the inner-product step behind them is an
//! upper estimate used where a lower one is needed, so real trajectories can
//! sit above them. Reports carry the slack and never assert dominance.

use std::io::Write;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamKey};
use crate::topology::{generate, neighbors, TopologyConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRateSchedule {
    Constant(f64),
    /// `eta^t` for `t = 0, 1, ...`; must cover every round evaluated.
    PerRound(Vec<f64>),
}

impl LearningRateSchedule {
    pub fn at(&self, round: usize) -> Result<f64> {
        match self {
            LearningRateSchedule::Constant(eta) => Ok(*eta),
            LearningRateSchedule::PerRound(v) => v.get(round).copied().ok_or_else(|| {
                Error::arg(format!("learning-rate schedule has no entry for round {round}"))
            }),
        }
    }
}

/// Constants entering the bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    /// Smoothness constant `L > 0`.
    pub l: f64,
    /// Gradient second-moment bound `G >= 0`.
    pub g: f64,
    pub schedule: LearningRateSchedule,
    /// Initial weighted squared distance `sum_i v_i^0 |w_i^0 - w*|^2`.
    pub d0: f64,
}

impl BoundParams {
    fn validate(&self) -> Result<()> {
        if !(self.l > 0.0) || !(self.g >= 0.0) || !(self.d0 >= 0.0) {
            return Err(Error::arg(format!(
                "bound parameters need L > 0, G >= 0, D0 >= 0 (got {}, {}, {})",
                self.l, self.g, self.d0
            )));
        }
        Ok(())
    }
}

/// A bound value and whether every factor `1 - 3 eta L` was in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundEvaluation {
    pub value: f64,
    pub contractive: bool,
}

fn check_eta(eta: f64, l: f64) -> Result<bool> {
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::arg(format!("learning rate must be nonnegative, got {eta}")));
    }
    Ok(eta < 1.0 / (3.0 * l))
}

/// Bound on `|w^{t+1} - w*|^2` for an arbitrary rate schedule, by forward
/// recursion.
pub fn theorem1_bound(p: &BoundParams, t: usize) -> Result<BoundEvaluation> {
    p.validate()?;
    let mut b = p.d0;
    let mut contractive = true;
    for j in 0..=t {
        let eta = p.schedule.at(j)?;
        contractive &= check_eta(eta, p.l)?;
        b = (1.0 - 3.0 * eta * p.l) * b + (eta * p.g).powi(2);
    }
    if !contractive {
        warn!("learning rate reaches 1/(3L) = {}; bound is not contractive", 1.0 / (3.0 * p.l));
    }
    Ok(BoundEvaluation { value: b, contractive })
}

/// Closed-form bound for a constant rate.
pub fn theorem2_bound(p: &BoundParams, t: usize) -> Result<BoundEvaluation> {
    p.validate()?;
    let LearningRateSchedule::Constant(eta) = p.schedule else {
        return Err(Error::arg("the closed-form bound needs a constant learning rate"));
    };
    let contractive = check_eta(eta, p.l)? && eta > 0.0;
    if !contractive {
        warn!("learning rate {eta} outside (0, 1/(3L)); closed form is not contractive");
    }
    let a = 1.0 - 3.0 * eta * p.l;
    let decay = a.powf(t as f64 + 1.0);
    let plateau = eta * p.g * p.g / (3.0 * p.l);
    Ok(BoundEvaluation {
        value: decay * p.d0 + plateau * (1.0 - decay),
        contractive,
    })
}

/// `f(w) = (L / 2) |w - w*|^2` with a random optimum.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTestbed {
    pub l: f64,
    pub optimum: Vec<f64>,
}

impl QuadraticTestbed {
    pub fn objective(&self, w: &[f64]) -> f64 {
        0.5 * self.l * self.sq_dist(w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.optimum).map(|(x, o)| self.l * (x - o)).collect()
    }

    pub fn sq_dist(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.optimum).map(|(x, o)| (x - o) * (x - o)).sum()
    }
}

pub fn quadratic_testbed(l: f64, dim: usize, seed: u64) -> Result<QuadraticTestbed> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(Error::arg(format!("smoothness constant must be positive, got {l}")));
    }
    let mut rng = StreamKey::new(seed, Purpose::Testbed).rng();
    let optimum = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Ok(QuadraticTestbed { l, optimum })
}

fn default_l() -> f64 {
    1.0
}
fn default_dim() -> usize {
    10
}
fn default_clients() -> usize {
    10
}
fn default_edge_prob() -> f64 {
    0.7
}
fn default_eta() -> f64 {
    0.05
}
fn default_rounds() -> usize {
    200
}
fn default_noise() -> f64 {
    0.1
}
fn default_init_scale() -> f64 {
    5.0
}
fn default_seed() -> u64 {
    43
}

/// Settings for [`bound_trajectory`]: decentralized SGD with uniform
/// closed-neighbourhood weights on a shared quadratic objective, with
/// Gaussian gradient noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "default_l")]
    pub l: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_clients")]
    pub num_clients: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Client whose trajectory is reported.
    #[serde(default)]
    pub client: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// One reported round: `|w^{t+1} - w*|^2`, the bound, and `bound - empirical`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub t: usize,
    pub empirical_sq_dist: f64,
    pub theorem_bound: f64,
    pub slack: f64,
}

/// Runs the quadratic testbed and pairs the tracked client's squared
/// distance with the constant-rate bound. `G` is the largest observed norm of
/// the client's weighted stochastic gradient; `D0` uses the round-0 weights.
pub fn bound_trajectory(cfg: &BoundsConfig) -> Result<Vec<BoundRow>> {
    if cfg.client >= cfg.num_clients {
        return Err(Error::arg(format!("client {} out of range", cfg.client)));
    }
    if !(cfg.noise_std >= 0.0) || !(cfg.init_scale >= 0.0) {
        return Err(Error::arg("noise_std and init_scale must be nonnegative"));
    }
    let graph = generate(&TopologyConfig {
        num_benign: cfg.num_clients,
        num_malicious: 0,
        edge_prob: cfg.edge_prob,
        seed: cfg.seed,
        ..Default::default()
    })?;
    let bed = quadratic_testbed(cfg.l, cfg.dim, cfg.seed)?;
    let closed: Vec<Vec<usize>> = (0..cfg.num_clients)
        .map(|k| {
            let mut v: Vec<usize> = neighbors(&graph, k).map(|s| s.into_iter().collect())?;
            v.push(k);
            v.sort_unstable();
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let mut init = StreamKey::new(cfg.seed, Purpose::Init).rng();
    let mut models: Vec<Vec<f64>> = (0..cfg.num_clients)
        .map(|_| {
            bed.optimum
                .iter()
                .map(|o| o + cfg.init_scale * init.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();

    let k = cfg.client;
    let v0 = 1.0 / closed[k].len() as f64;
    let d0: f64 = closed[k].iter().map(|&i| v0 * bed.sq_dist(&models[i])).sum();

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::arg(e.to_string()))?;
    let mut empirical = Vec::with_capacity(cfg.rounds);
    let mut g_sq_max: f64 = 0.0;
    for t in 0..cfg.rounds {
        let grads: Vec<Vec<f64>> = models
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut rng = StreamKey::new(cfg.seed, Purpose::Minibatch).node(i).round(t).rng();
                bed.gradient(w).into_iter().map(|g| g + noise.sample(&mut rng)).collect()
            })
            .collect();
        let half: Vec<Vec<f64>> = models
            .iter()
            .zip(&grads)
            .map(|(w, g)| w.iter().zip(g).map(|(x, gi)| x - cfg.eta * gi).collect())
            .collect();

        let vk = 1.0 / closed[k].len() as f64;
        let mut mixed = vec![0.0; cfg.dim];
        for &i in &closed[k] {
            for (m, g) in mixed.iter_mut().zip(&grads[i]) {
                *m += vk * g;
            }
        }
        g_sq_max = g_sq_max.max(mixed.iter().map(|x| x * x).sum());

        models = closed
            .iter()
            .map(|nbrs| {
                let v = 1.0 / nbrs.len() as f64;
                let mut out = vec![0.0; cfg.dim];
                for &i in nbrs {
                    for (o, x) in out.iter_mut().zip(&half[i]) {
                        *o += v * x;
                    }
                }
                out
            })
            .collect();
        empirical.push(bed.sq_dist(&models[k]));
    }

    let params = BoundParams {
        l: cfg.l,
        g: g_sq_max.sqrt(),
        schedule: LearningRateSchedule::Constant(cfg.eta),
        d0,
    };
    empirical
        .into_iter()
        .enumerate()
        .map(|(t, e)| {
            let bound = theorem1_bound(&params, t)?.value;
            Ok(BoundRow {
                t,
                empirical_sq_dist: e,
                theorem_bound: bound,
                slack: bound - e,
            })
        })
        .collect()
}

/// Writes `t,empirical_sq_dist,theorem_bound,slack` rows.
pub fn write_bound_csv<W: Write>(rows: &[BoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    fn constant(l: f64, g: f64, eta: f64, d0: f64) -> BoundParams {
        BoundParams {
            l,
            g,
            schedule: LearningRateSchedule::Constant(eta),
            d0,
        }
    }

    #[test]
    fn single_contraction_step() {
        // 1 - 3 eta L = 0.5
        let p = constant(1.0, 0.0, 1.0 / 6.0, 4.0);
        assert_abs_diff_eq!(theorem1_bound(&p, 0).unwrap().value, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(theorem2_bound(&p, 0).unwrap().value, 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_keeps_d0() {
        let p = BoundParams {
            l: 2.0,
            g: 3.0,
            schedule: LearningRateSchedule::PerRound(vec![0.0; 20]),
            d0: 7.5,
        };
        for t in 0..20 {
            assert_eq!(theorem1_bound(&p, t).unwrap().value, 7.5);
        }
        assert!(theorem1_bound(&p, 20).is_err());
    }

    #[test]
    fn plateau_limit() {
        let p = constant(1.0, 1.0, 0.1, 5.0);
        let v = theorem2_bound(&p, 1_000_000).unwrap().value;
        assert_abs_diff_eq!(v, 1.0 / 30.0, epsilon = 1e-12);
    }

    #[test]
    fn noise_free_is_geometric() {
        let p = constant(2.0, 0.0, 0.05, 3.0);
        for t in [0usize, 1, 5, 40] {
            let expected = 0.7f64.powi(t as i32 + 1) * 3.0;
            assert_abs_diff_eq!(theorem2_bound(&p, t).unwrap().value, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn non_contractive_is_flagged() {
        let p = constant(1.0, 1.0, 0.5, 1.0);
        assert!(!theorem1_bound(&p, 3).unwrap().contractive);
        assert!(!theorem2_bound(&p, 3).unwrap().contractive);
        assert!(theorem2_bound(&constant(1.0, 1.0, 0.1, 1.0), 3).unwrap().contractive);
    }

    #[test]
    fn closed_form_rejects_schedules() {
        let p = BoundParams {
            l: 1.0,
            g: 1.0,
            schedule: LearningRateSchedule::PerRound(vec![0.1]),
            d0: 1.0,
        };
        assert!(theorem2_bound(&p, 0).is_err());
        assert!(theorem1_bound(&constant(0.0, 1.0, 0.1, 1.0), 0).is_err());
    }

    #[test]
    fn testbed_gradient() {
        let bed = quadratic_testbed(3.0, 5, 11).unwrap();
        assert!(bed.gradient(&bed.optimum).iter().all(|&g| g == 0.0));
        // one step with eta = 1/L lands on the optimum
        let w: Vec<f64> = bed.optimum.iter().map(|o| o + 2.5).collect();
        let g = bed.gradient(&w);
        let next: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x - gi / 3.0).collect();
        assert!(bed.sq_dist(&next) < 1e-24);
        assert!(quadratic_testbed(0.0, 5, 1).is_err());
    }

    #[test]
    fn trajectory_rows() {
        let cfg = BoundsConfig {
            rounds: 30,
            ..Default::default()
        };
        let rows = bound_trajectory(&cfg).unwrap();
        assert_eq!(rows.len(), 30);
        for r in &rows {
            assert_abs_diff_eq!(r.slack, r.theorem_bound - r.empirical_sq_dist, epsilon = 1e-12);
            assert!(r.empirical_sq_dist.is_finite() && r.theorem_bound.is_finite());
        }
        let mut buf = Vec::new();
        write_bound_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,empirical_sq_dist,theorem_bound,slack\n"));
        assert_eq!(text.lines().count(), 31);
    }
}
