//! Objective-oriented reweighting aggregation.
//!
//! Each benign client scores every model in its closed neighbourhood (its
//! neighbours plus itself) on its own auxiliary data, giving one *target
//! performance metric* per model. A *customized reweighting strategy* turns
//! those metrics into aggregation weights, and the next local model is the
//! weighted sum of the neighbourhood's post-training models. Nodes outside
//! the neighbourhood implicitly get weight zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{evaluate_accuracy, evaluate_mean_loss, Dataset, ParamVector};
use crate::topology::NodeId;

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Which score a client computes for each received model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetricKind {
    /// Accuracy on the auxiliary set, in `[0, 1]`.
    AccuracyOnAux,
    /// Mean cross-entropy on the auxiliary set; `+inf` if not finite.
    LossOnAux,
}

/// How metrics become weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CrsKind {
    /// `v_i = exp(m_i / T) / sum_j exp(m_j / T)`.
    TempSoftmax { temperature: f64 },
    /// Zero every loss above the neighbourhood mean, normalise the rest.
    LossClip,
    /// Zero every accuracy below the neighbourhood mean, normalise the rest.
    AccClip,
}

impl std::fmt::Display for CrsKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrsKind::TempSoftmax { temperature } => write!(f, "TempSoftmax(T={temperature})"),
            CrsKind::LossClip => write!(f, "LossClip"),
            CrsKind::AccClip => write!(f, "AccClip"),
        }
    }
}

/// Metric values over a closed neighbourhood, keyed by node id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricVector(Vec<(NodeId, f64)>);

impl MetricVector {
    /// Ids must be distinct; values must be finite or `+inf`.
    pub fn new(entries: Vec<(NodeId, f64)>) -> Result<Self> {
        check_distinct(entries.iter().map(|e| e.0))?;
        if let Some((id, v)) = entries
            .iter()
            .find(|(_, v)| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::arg(format!("metric for node {id} is {v}")));
        }
        Ok(Self(entries))
    }

    /// Convenience constructor assigning ids `0..values.len()`.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().copied().enumerate().collect())
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.0
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().map(|e| e.1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Aggregation weights: nonnegative and summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<(NodeId, f64)>);

impl WeightVector {
    pub fn new(entries: Vec<(NodeId, f64)>) -> Result<Self> {
        check_distinct(entries.iter().map(|e| e.0))?;
        if entries.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::arg("weights must be finite and nonnegative"));
        }
        let sum: f64 = entries.iter().map(|e| e.1).sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::arg(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(entries))
    }

    /// Uniform weights over `ids`.
    pub fn uniform(ids: &[NodeId]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::arg("uniform weights over an empty set"));
        }
        let w = 1.0 / ids.len() as f64;
        Self::new(ids.iter().map(|&i| (i, w)).collect())
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.0
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.0.iter().map(|e| e.0)
    }

    /// Weight of `id`; zero for nodes outside the neighbourhood.
    pub fn get(&self, id: NodeId) -> f64 {
        self.0.iter().find(|e| e.0 == id).map_or(0.0, |e| e.1)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_distinct(ids: impl Iterator<Item = NodeId>) -> Result<()> {
    let mut seen: Vec<NodeId> = ids.collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::arg(format!("node id {} appears twice", w[0])));
    }
    Ok(())
}

/// Scores one model on the client's auxiliary set.
pub fn compute_tpm(kind: TargetMetricKind, model: &ParamVector, aux: &Dataset) -> Result<f64> {
    if aux.is_empty() {
        return Err(Error::arg("target metric needs a nonempty auxiliary set"));
    }
    if !model.is_finite() {
        return Ok(match kind {
            TargetMetricKind::AccuracyOnAux => 0.0,
            TargetMetricKind::LossOnAux => f64::INFINITY,
        });
    }
    match kind {
        TargetMetricKind::AccuracyOnAux => evaluate_accuracy(model, aux),
        TargetMetricKind::LossOnAux => {
            let loss = evaluate_mean_loss(model, aux)?;
            Ok(if loss.is_finite() { loss } else { f64::INFINITY })
        }
    }
}

/// Arithmetic mean, pulled back into `[min, max]` so that rounding can never
/// put the threshold outside the data (equal inputs give exactly that value).
fn clip_threshold(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mean.clamp(lo, hi)
}

fn normalise_survivors(metrics: &MetricVector, survives: impl Fn(f64) -> bool) -> Result<WeightVector> {
    let kept: Vec<bool> = metrics.values().map(&survives).collect();
    let count = kept.iter().filter(|&&k| k).count();
    if count == 0 {
        return Err(Error::arg("no entry survived clipping"));
    }
    let total: f64 = metrics
        .values()
        .zip(&kept)
        .filter(|(_, &k)| k)
        .map(|(v, _)| v)
        .sum();
    let entries = metrics
        .entries()
        .iter()
        .zip(&kept)
        .map(|(&(id, v), &k)| {
            let w = match (k, total > 0.0) {
                (false, _) => 0.0,
                (true, true) => v / total,
                // all survivors are zero: uniform over survivors
                (true, false) => 1.0 / count as f64,
            };
            (id, w)
        })
        .collect();
    WeightVector::new(entries)
}

/// Temperature-scaled softmax over the metrics.
pub fn crs_temp_softmax(metrics: &MetricVector, temperature: f64) -> Result<WeightVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::arg(format!("temperature must be positive, got {temperature}")));
    }
    if metrics.is_empty() {
        return Err(Error::arg("softmax over an empty metric vector"));
    }
    if let Some((id, _)) = metrics.entries().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::arg(format!(
            "temperature softmax needs finite metrics; node {id} has the non-finite sentinel"
        )));
    }
    let max = metrics.values().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = metrics.values().map(|m| ((m - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    WeightVector::new(
        metrics
            .entries()
            .iter()
            .zip(exps)
            .map(|(&(id, _), e)| (id, e / sum))
            .collect(),
    )
}

/// Loss clipping: losses above the mean (over finite entries) get weight 0,
/// survivors are weighted by their raw loss. `+inf` entries are always clipped.
pub fn crs_loss_clip(metrics: &MetricVector) -> Result<WeightVector> {
    let finite: Vec<f64> = metrics.values().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::arg("loss clipping needs at least one finite loss"));
    }
    let mu = clip_threshold(&finite);
    normalise_survivors(metrics, |m| m.is_finite() && m <= mu)
}

/// Accuracy clipping: accuracies below the mean get weight 0, survivors are
/// weighted by their raw accuracy.
pub fn crs_acc_clip(metrics: &MetricVector) -> Result<WeightVector> {
    if metrics.is_empty() {
        return Err(Error::arg("accuracy clipping over an empty metric vector"));
    }
    if let Some((id, v)) = metrics
        .entries()
        .iter()
        .find(|(_, v)| !(0.0..=1.0).contains(v))
    {
        return Err(Error::arg(format!("accuracy for node {id} is {v}, outside [0, 1]")));
    }
    let values: Vec<f64> = metrics.values().collect();
    let mu = clip_threshold(&values);
    normalise_survivors(metrics, |m| m >= mu)
}

/// Applies a reweighting strategy.
pub fn apply_crs(crs: CrsKind, metrics: &MetricVector) -> Result<WeightVector> {
    match crs {
        CrsKind::TempSoftmax { temperature } => crs_temp_softmax(metrics, temperature),
        CrsKind::LossClip => crs_loss_clip(metrics),
        CrsKind::AccClip => crs_acc_clip(metrics),
    }
}

/// `sum_i v_i w_i`. Entries with zero weight are skipped before any
/// arithmetic, so they may hold non-finite values. Summation runs in
/// ascending node-id order.
pub fn reweight_aggregate(models: &[(NodeId, ParamVector)], weights: &WeightVector) -> Result<ParamVector> {
    if models.len() != weights.len() {
        return Err(Error::arg(format!(
            "{} models for {} weights",
            models.len(),
            weights.len()
        )));
    }
    check_distinct(models.iter().map(|m| m.0))?;
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_unstable_by_key(|&i| models[i].0);
    let first = &models
        .first()
        .ok_or_else(|| Error::arg("aggregation over an empty model list"))?
        .1;
    let mut out = ParamVector::zeros(first.shape());
    for i in order {
        let (id, model) = &models[i];
        if !weights.ids().any(|w| w == *id) {
            return Err(Error::arg(format!("no weight for node {id}")));
        }
        first.check_same_shape(model)?;
        let w = weights.get(*id);
        if w == 0.0 {
            continue;
        }
        out.axpy(w, model)?;
    }
    Ok(out)
}

/// Scores the closed neighbourhood (`own` plus `received`) on `aux` and turns
/// the scores into weights. Entries are ordered by node id.
pub fn dfedreweighting_round_weights(
    kind: TargetMetricKind,
    crs: CrsKind,
    received: &[(NodeId, ParamVector)],
    own: (NodeId, &ParamVector),
    aux: &Dataset,
) -> Result<WeightVector> {
    let mut entries = Vec::with_capacity(received.len() + 1);
    entries.push((own.0, compute_tpm(kind, own.1, aux)?));
    for (id, model) in received {
        entries.push((*id, compute_tpm(kind, model, aux)?));
    }
    entries.sort_by_key(|e| e.0);
    apply_crs(crs, &MetricVector::new(entries)?)
}
