//! Splitting a labelled dataset across benign clients.

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::{Purpose, StreamKey};

/// How labels are distributed over clients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeterogeneityScheme {
    Iid,
    Dirichlet { alpha: f64 },
    LabelSkew { h: usize },
}

impl HeterogeneityScheme {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match *self {
            HeterogeneityScheme::Iid => Ok(()),
            HeterogeneityScheme::Dirichlet { alpha } if alpha > 0.0 && alpha.is_finite() => Ok(()),
            HeterogeneityScheme::Dirichlet { alpha } => {
                Err(Error::arg(format!("dirichlet alpha must be positive, got {alpha}")))
            }
            HeterogeneityScheme::LabelSkew { h } if h >= 1 && h <= num_classes => Ok(()),
            HeterogeneityScheme::LabelSkew { h } => Err(Error::arg(format!(
                "label skew needs 1 <= h <= {num_classes}, got {h}"
            ))),
        }
    }
}

impl std::fmt::Display for HeterogeneityScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeterogeneityScheme::Iid => write!(f, "IID"),
            HeterogeneityScheme::Dirichlet { alpha } => write!(f, "Diri({alpha})"),
            HeterogeneityScheme::LabelSkew { h } => write!(f, "LabelSkew({h})"),
        }
    }
}

/// Example indices (into the global training set) held by each benign client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: HeterogeneityScheme,
    pub seed: u64,
    pub clients: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Checks disjointness, index validity against `data_len`, and that no
    /// client is empty.
    pub fn validate(&self, data_len: usize) -> Result<()> {
        let mut seen = vec![false; data_len];
        for (k, idx) in self.clients.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::Partition(format!("client {k} received no data")));
            }
            for &i in idx {
                if i >= data_len {
                    return Err(Error::Partition(format!("client {k}: index {i} out of range")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Partition(format!("index {i} assigned twice")));
                }
            }
        }
        Ok(())
    }
}

fn indices_by_class(data: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); data.num_classes()];
    for (i, label) in data.labels().enumerate() {
        by_class[label].push(i);
    }
    by_class
}

fn finish(scheme: HeterogeneityScheme, seed: u64, mut clients: Vec<Vec<usize>>, data: &Dataset) -> Result<PartitionPlan> {
    for c in &mut clients {
        c.sort_unstable();
    }
    let plan = PartitionPlan {
        scheme,
        seed,
        clients,
    };
    plan.validate(data.len())?;
    Ok(plan)
}

fn check_clients(num_clients: usize) -> Result<()> {
    if num_clients == 0 {
        return Err(Error::arg("at least one client is required"));
    }
    Ok(())
}

/// Every client gets `floor(count_c / num_clients)` examples of each class.
pub fn partition_iid(data: &Dataset, num_clients: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(num_clients)?;
    let mut rng = StreamKey::new(seed, Purpose::Partition).rng();
    let mut clients = vec![Vec::new(); num_clients];
    for (class, mut idx) in indices_by_class(data).into_iter().enumerate() {
        if idx.len() < num_clients {
            return Err(Error::Partition(format!(
                "class {class} has {} examples for {num_clients} clients",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let share = idx.len() / num_clients;
        for (k, chunk) in idx.chunks_exact(share).take(num_clients).enumerate() {
            clients[k].extend_from_slice(chunk);
        }
    }
    finish(HeterogeneityScheme::Iid, seed, clients, data)
}

/// Each client holds exactly `h` distinct classes; classes are dealt
/// round-robin from a shuffled order and each class is split equally among
/// its holders.
pub fn partition_label_skew(data: &Dataset, num_clients: usize, h: usize, seed: u64) -> Result<PartitionPlan> {
    check_clients(num_clients)?;
    let classes = data.num_classes();
    let scheme = HeterogeneityScheme::LabelSkew { h };
    scheme.validate(classes)?;
    let mut rng = StreamKey::new(seed, Purpose::Partition).rng();

    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);
    // consecutive windows of length h <= C over a cyclic sequence are distinct
    let held: Vec<Vec<usize>> = (0..num_clients)
        .map(|k| (0..h).map(|j| order[(k * h + j) % classes]).collect())
        .collect();

    let mut holders = vec![Vec::new(); classes];
    for (k, cs) in held.iter().enumerate() {
        for &c in cs {
            holders[c].push(k);
        }
    }

    let mut clients = vec![Vec::new(); num_clients];
    for (class, mut idx) in indices_by_class(data).into_iter().enumerate() {
        let owners = &holders[class];
        if owners.is_empty() {
            continue;
        }
        if idx.len() < owners.len() {
            return Err(Error::Partition(format!(
                "class {class} has {} examples for {} holders",
                idx.len(),
                owners.len()
            )));
        }
        idx.shuffle(&mut rng);
        let share = idx.len() / owners.len();
        for (&k, chunk) in owners.iter().zip(idx.chunks_exact(share)) {
            clients[k].extend_from_slice(chunk);
        }
    }
    finish(scheme, seed, clients, data)
}

/// Integer counts summing to `total` with `|count_k - p_k * total| < 1`.
pub(crate) fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // largest fractional part first, ties to the lower index
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn sample_dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: f64, k: usize) -> Result<Vec<f64>> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::arg(e.to_string()))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        Ok(draws.into_iter().map(|g| g / sum).collect())
    } else {
        // every gamma draw underflowed: the limit is a point mass
        let mut p = vec![0.0; k];
        p[rng.random_range(0..k)] = 1.0;
        Ok(p)
    }
}

/// Per-class proportions drawn from a symmetric Dirichlet(`alpha`).
pub fn partition_dirichlet(data: &Dataset, num_clients: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    check_clients(num_clients)?;
    let scheme = HeterogeneityScheme::Dirichlet { alpha };
    scheme.validate(data.num_classes())?;
    if data.len() < num_clients {
        return Err(Error::Partition(format!(
            "{} examples cannot cover {num_clients} clients",
            data.len()
        )));
    }
    let mut rng = StreamKey::new(seed, Purpose::Partition).rng();
    let mut clients = vec![Vec::new(); num_clients];
    for mut idx in indices_by_class(data) {
        let p = sample_dirichlet(&mut rng, alpha, num_clients)?;
        let counts = largest_remainder(&p, idx.len());
        idx.shuffle(&mut rng);
        let mut start = 0;
        for (k, &n) in counts.iter().enumerate() {
            clients[k].extend_from_slice(&idx[start..start + n]);
            start += n;
        }
    }
    while let Some(empty) = clients.iter().position(Vec::is_empty) {
        let donor = (0..num_clients)
            .max_by(|&a, &b| clients[a].len().cmp(&clients[b].len()).then(b.cmp(&a)))
            .expect("at least one client");
        let moved = clients[donor].pop().expect("donor is nonempty");
        clients[empty].push(moved);
    }
    finish(scheme, seed, clients, data)
}

/// Dispatches on the scheme.
pub fn partition(data: &Dataset, scheme: HeterogeneityScheme, num_clients: usize, seed: u64) -> Result<PartitionPlan> {
    match scheme {
        HeterogeneityScheme::Iid => partition_iid(data, num_clients, seed),
        HeterogeneityScheme::Dirichlet { alpha } => partition_dirichlet(data, num_clients, alpha, seed),
        HeterogeneityScheme::LabelSkew { h } => partition_label_skew(data, num_clients, h, seed),
    }
}

/// Train/auxiliary indices of one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientSplit {
    pub train_indices: Vec<usize>,
    pub aux_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxiliarySplit {
    pub aux_fraction: f64,
    pub clients: Vec<ClientSplit>,
}

/// Class-stratified holdout of `ceil(fraction * n_k)` examples per client.
///
/// A client with a single example gets that example on both sides.
pub fn split_auxiliary(plan: &PartitionPlan, data: &Dataset, aux_fraction: f64, seed: u64) -> Result<AuxiliarySplit> {
    if !(aux_fraction > 0.0 && aux_fraction < 1.0) {
        return Err(Error::arg(format!("aux fraction must lie in (0, 1), got {aux_fraction}")));
    }
    let mut clients = Vec::with_capacity(plan.clients.len());
    for (k, idx) in plan.clients.iter().enumerate() {
        let n = idx.len();
        if n == 0 {
            return Err(Error::Partition(format!("client {k} received no data")));
        }
        if n == 1 {
            warn!("client {k} holds a single example; it serves as both train and auxiliary data");
            clients.push(ClientSplit {
                train_indices: idx.clone(),
                aux_indices: idx.clone(),
            });
            continue;
        }
        let mut rng = StreamKey::new(seed, Purpose::AuxSplit).node(k).rng();
        let target = ((aux_fraction * n as f64).ceil() as usize).clamp(1, n - 1);

        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
        for &i in idx {
            let label = data
                .examples()
                .get(i)
                .ok_or_else(|| Error::Partition(format!("client {k}: index {i} out of range")))?
                .label;
            by_class[label].push(i);
        }
        let props: Vec<f64> = by_class.iter().map(|c| c.len() as f64 / n as f64).collect();
        let per_class = largest_remainder(&props, target);

        let mut train = Vec::with_capacity(n - target);
        let mut aux = Vec::with_capacity(target);
        for (mut members, take) in by_class.into_iter().zip(per_class) {
            members.shuffle(&mut rng);
            let take = take.min(members.len());
            aux.extend_from_slice(&members[..take]);
            train.extend_from_slice(&members[take..]);
        }
        train.sort_unstable();
        aux.sort_unstable();
        clients.push(ClientSplit {
            train_indices: train,
            aux_indices: aux,
        });
    }
    Ok(AuxiliarySplit {
        aux_fraction,
        clients,
    })
}
