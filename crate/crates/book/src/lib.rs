//! Compiles the guide under `book/src` so its snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}
#[doc = include_str!("../../../book/src/topology.md")]
pub mod topology {}
#[doc = include_str!("../../../book/src/partitioning.md")]
pub mod partitioning {}
#[doc = include_str!("../../../book/src/reweighting.md")]
pub mod reweighting {}
#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}
#[doc = include_str!("../../../book/src/attacks.md")]
pub mod attacks {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}
