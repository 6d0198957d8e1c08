//! Reference aggregators: plain averaging and the Byzantine-robust rules
//! used for comparison.
//!
//! Every rule takes the closed neighbourhood's post-training models as a
//! [`CandidateSet`]. Ties (equal Krum scores) are broken by lower node id,
//! and every sum runs in a fixed order so results do not depend on how the
//! candidates were listed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::topology::NodeId;

fn default_f() -> usize {
    2
}
fn default_m() -> usize {
    2
}
fn default_beta() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Baseline aggregation rule and its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaselineKind {
    #[serde(rename = "dfedavg")]
    DFedAvg,
    Median,
    Krum {
        #[serde(default = "default_f")]
        f: usize,
    },
    MultiKrum {
        #[serde(default = "default_f")]
        f: usize,
        #[serde(default = "default_m")]
        m: usize,
    },
    TrimmedMean {
        #[serde(default = "default_f")]
        f: usize,
    },
    /// Distance-weighted averaging (`u_j = 1 / (|w_i - w_j|^2 + beta)`), not
    /// the clustering/clipping/noising FLAME defence.
    Flame {
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_true")]
        include_self: bool,
    },
}

impl BaselineKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BaselineKind::MultiKrum { m: 0, .. } => Err(Error::arg("multi-krum needs m >= 1")),
            BaselineKind::Flame { beta, .. } if !(beta > 0.0) || !beta.is_finite() => {
                Err(Error::arg(format!("flame beta must be positive, got {beta}")))
            }
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaselineKind::DFedAvg => write!(f, "DFedAvg"),
            BaselineKind::Median => write!(f, "Median"),
            BaselineKind::Krum { f: ff } => write!(f, "Krum(f={ff})"),
            BaselineKind::MultiKrum { f: ff, m } => write!(f, "mKrum(f={ff},m={m})"),
            BaselineKind::TrimmedMean { f: ff } => write!(f, "TrimmedMean(f={ff})"),
            BaselineKind::Flame { beta, .. } => write!(f, "Flame(beta={beta})"),
        }
    }
}

/// Closed-neighbourhood models: nonempty, one shape, distinct ids.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    // sorted by node id
    entries: Vec<(NodeId, ParamVector)>,
}

impl CandidateSet {
    pub fn new(mut entries: Vec<(NodeId, ParamVector)>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::arg("empty candidate set"))?
            .1
            .clone();
        for (_, m) in &entries {
            first.check_same_shape(m)?;
        }
        entries.sort_by_key(|e| e.0);
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::arg(format!("candidate id {} appears twice", w[0].0)));
        }
        Ok(Self { entries })
    }

    /// Candidates with ids `0..n`.
    pub fn from_models(models: Vec<ParamVector>) -> Result<Self> {
        Self::new(models.into_iter().enumerate().collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(NodeId, ParamVector)] {
        &self.entries
    }

    pub fn get(&self, id: NodeId) -> Option<&ParamVector> {
        self.entries
            .binary_search_by_key(&id, |e| e.0)
            .ok()
            .map(|i| &self.entries[i].1)
    }

    fn dim(&self) -> usize {
        self.entries[0].1.len()
    }

    fn template(&self) -> &ParamVector {
        &self.entries[0].1
    }

    fn with_values(&self, values: Vec<f64>) -> ParamVector {
        let mut out = self.template().clone();
        out.values_mut().copy_from_slice(&values);
        out
    }

    /// Per-coordinate values sorted ascending.
    fn sorted_column(&self, k: usize, buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend(self.entries.iter().map(|(_, m)| m.values()[k]));
        buf.sort_by(f64::total_cmp);
    }
}

fn mean_of<'a>(models: impl Iterator<Item = &'a ParamVector>, template: &ParamVector) -> ParamVector {
    let mut out = ParamVector::zeros(template.shape());
    let mut n = 0usize;
    for m in models {
        for (o, v) in out.values_mut().iter_mut().zip(m.values()) {
            *o += v;
        }
        n += 1;
    }
    let inv = 1.0 / n as f64;
    for o in out.values_mut() {
        *o *= inv;
    }
    out
}

/// Unweighted mean of all candidates.
pub fn dfedavg(c: &CandidateSet) -> ParamVector {
    mean_of(c.entries.iter().map(|e| &e.1), c.template())
}

/// Coordinate-wise lower median: element `(n - 1) / 2` of the sorted values.
pub fn median_agg(c: &CandidateSet) -> ParamVector {
    let n = c.len();
    let mut buf = Vec::with_capacity(n);
    let values = (0..c.dim())
        .map(|k| {
            c.sorted_column(k, &mut buf);
            buf[(n - 1) / 2]
        })
        .collect();
    c.with_values(values)
}

fn krum_terms(n: usize, f: usize) -> Result<usize> {
    match n.checked_sub(f + 2) {
        Some(k) if k >= 1 => Ok(k),
        _ => Err(Error::arg(format!(
            "krum requires n - f - 2 >= 1, got n = {n}, f = {f}"
        ))),
    }
}

/// Sum of each candidate's `n - f - 2` smallest squared distances to the
/// others, in ascending id order.
pub fn krum_scores(c: &CandidateSet, f: usize) -> Result<Vec<(NodeId, f64)>> {
    let n = c.len();
    let terms = krum_terms(n, f)?;
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = c.entries[i].1.squared_distance(&c.entries[j].1)?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok((0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(f64::total_cmp);
            (c.entries[i].0, others[..terms].iter().sum())
        })
        .collect())
}

/// Candidate ids ordered by (score, id).
fn ranked(c: &CandidateSet, f: usize) -> Result<Vec<NodeId>> {
    let mut scores = krum_scores(c, f)?;
    scores.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(scores.into_iter().map(|s| s.0).collect())
}

/// The candidate with the smallest Krum score.
pub fn krum(c: &CandidateSet, f: usize) -> Result<ParamVector> {
    let best = ranked(c, f)?[0];
    Ok(c.get(best).expect("ranked ids come from the set").clone())
}

/// Mean of the `m` lowest-scoring candidates.
pub fn multi_krum(c: &CandidateSet, f: usize, m: usize) -> Result<ParamVector> {
    if m == 0 || m > c.len() {
        return Err(Error::arg(format!("multi-krum needs 1 <= m <= n, got m = {m}, n = {}", c.len())));
    }
    let mut chosen = ranked(c, f)?;
    chosen.truncate(m);
    chosen.sort_unstable();
    Ok(mean_of(chosen.iter().filter_map(|&id| c.get(id)), c.template()))
}

/// Coordinate-wise mean after dropping the `f` smallest and `f` largest values.
pub fn trimmed_mean(c: &CandidateSet, f: usize) -> Result<ParamVector> {
    let n = c.len();
    if n <= 2 * f {
        return Err(Error::arg(format!("trimmed mean requires n > 2f, got n = {n}, f = {f}")));
    }
    let kept = (n - 2 * f) as f64;
    let mut buf = Vec::with_capacity(n);
    let values = (0..c.dim())
        .map(|k| {
            c.sorted_column(k, &mut buf);
            buf[f..n - f].iter().sum::<f64>() / kept
        })
        .collect();
    Ok(c.with_values(values))
}

/// Distance-weighted average around the client's own model:
/// `u_j = 1 / (|own - w_j|^2 + beta)`, `p_j = u_j / sum u`, result `sum p_j w_j`.
/// With `include_self` the own model takes part with distance 0.
pub fn flame_weighted(
    own: (NodeId, &ParamVector),
    received: &[(NodeId, ParamVector)],
    beta: f64,
    include_self: bool,
) -> Result<ParamVector> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::arg(format!("flame beta must be positive, got {beta}")));
    }
    if received.is_empty() && !include_self {
        return Err(Error::arg("flame needs at least one received model"));
    }
    let mut pool: Vec<(NodeId, &ParamVector)> = received.iter().map(|(i, m)| (*i, m)).collect();
    if include_self {
        pool.push(own);
    }
    pool.sort_by_key(|e| e.0);
    let raw: Vec<f64> = pool
        .iter()
        .map(|(_, m)| Ok(1.0 / (own.1.squared_distance(m)? + beta)))
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().sum();
    let mut out = ParamVector::zeros(own.1.shape());
    for ((_, m), u) in pool.iter().zip(&raw) {
        let p = u / total;
        if p == 0.0 {
            continue;
        }
        out.axpy(p, m)?;
    }
    Ok(out)
}

/// Flame weights `(id, p_j)` over the same pool [`flame_weighted`] uses.
pub fn flame_weights(
    own: (NodeId, &ParamVector),
    received: &[(NodeId, ParamVector)],
    beta: f64,
    include_self: bool,
) -> Result<Vec<(NodeId, f64)>> {
    let mut pool: Vec<(NodeId, &ParamVector)> = received.iter().map(|(i, m)| (*i, m)).collect();
    if include_self {
        pool.push(own);
    }
    pool.sort_by_key(|e| e.0);
    let raw: Vec<(NodeId, f64)> = pool
        .iter()
        .map(|(i, m)| Ok((*i, 1.0 / (own.1.squared_distance(m)? + beta))))
        .collect::<Result<_>>()?;
    let total: f64 = raw.iter().map(|e| e.1).sum();
    Ok(raw.into_iter().map(|(i, u)| (i, u / total)).collect())
}

/// Runs `kind` over a closed neighbourhood whose own model has id `own`.
pub fn aggregate(kind: BaselineKind, own: NodeId, c: &CandidateSet) -> Result<ParamVector> {
    match kind {
        BaselineKind::DFedAvg => Ok(dfedavg(c)),
        BaselineKind::Median => Ok(median_agg(c)),
        BaselineKind::Krum { f } => krum(c, f),
        BaselineKind::MultiKrum { f, m } => multi_krum(c, f, m),
        BaselineKind::TrimmedMean { f } => trimmed_mean(c, f),
        BaselineKind::Flame { beta, include_self } => {
            let own_model = c
                .get(own)
                .ok_or_else(|| Error::arg(format!("own id {own} missing from candidates")))?;
            let received: Vec<(NodeId, ParamVector)> =
                c.entries.iter().filter(|e| e.0 != own).cloned().collect();
            flame_weighted((own, own_model), &received, beta, include_self)
        }
    }
}
