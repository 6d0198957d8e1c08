//! Deterministic simulator for decentralized federated learning.
//!
//! Clients train softmax-regression models on local data, exchange them with
//! their graph neighbours, and aggregate. The crate provides the reweighting
//! aggregation (score neighbours' models on local auxiliary data, then turn
//! the scores into weights), baseline robust aggregators, Byzantine attacks,
//! heterogeneous partitioners, fairness/robustness metrics and
//! convergence-bound evaluators.

pub mod analysis;
pub mod attacks;
pub mod baselines;
pub mod data;
mod error;
pub mod model;
pub mod reweight;
pub mod rng;
pub mod sim;
pub mod topology;

pub use error::{Error, Result};
pub use model::{Dataset, LabeledExample, Minibatch, ParamVector, Shape};
pub use topology::{NodeId, TopologyGraph};
