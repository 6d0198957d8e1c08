//! Communication graphs: Erdős–Rényi sampling with a benign/malicious split.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

pub type NodeId = usize;

fn default_num_benign() -> usize {
    10
}
fn default_num_malicious() -> usize {
    2
}
fn default_edge_prob() -> f64 {
    0.7
}
fn default_max_retries() -> usize {
    1000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default = "default_num_benign")]
    pub num_benign: usize,
    #[serde(default = "default_num_malicious")]
    pub num_malicious: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            num_benign: default_num_benign(),
            num_malicious: default_num_malicious(),
            edge_prob: default_edge_prob(),
            seed: 0,
            max_retries: default_max_retries(),
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_benign < 2 {
            return Err(Error::arg(format!(
                "at least 2 benign nodes are required, got {}",
                self.num_benign
            )));
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return Err(Error::arg(format!(
                "edge probability must lie in [0, 1], got {}",
                self.edge_prob
            )));
        }
        if self.max_retries == 0 {
            return Err(Error::arg("max_retries must be at least 1"));
        }
        Ok(())
    }
}

/// Undirected graph over nodes `0..n`, benign ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologyGraph {
    adjacency: Vec<Vec<bool>>,
    benign: Vec<NodeId>,
    malicious: Vec<NodeId>,
}

/// JSON form of a graph: `{n, edges: [[i, j], ...], benign, malicious}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    pub n: usize,
    pub edges: Vec<[NodeId; 2]>,
    pub benign: Vec<NodeId>,
    pub malicious: Vec<NodeId>,
}

impl TopologyGraph {
    /// Builds a graph from an edge list, checking every structural invariant
    /// except benign connectivity (see [`is_benign_connected`]).
    pub fn from_edges(
        n: usize,
        edges: &[[NodeId; 2]],
        benign: Vec<NodeId>,
        malicious: Vec<NodeId>,
    ) -> Result<Self> {
        let mut adjacency = vec![vec![false; n]; n];
        for &[i, j] in edges {
            if i >= n || j >= n {
                return Err(Error::arg(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if i == j {
                return Err(Error::arg(format!("self-loop at node {i}")));
            }
            adjacency[i][j] = true;
            adjacency[j][i] = true;
        }
        let mut seen = vec![false; n];
        for &id in benign.iter().chain(&malicious) {
            if id >= n || seen[id] {
                return Err(Error::arg(format!(
                    "benign and malicious sets must partition 0..{n} (node {id})"
                )));
            }
            seen[id] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::arg(format!(
                "benign and malicious sets must cover 0..{n}"
            )));
        }
        let mut benign = benign;
        let mut malicious = malicious;
        benign.sort_unstable();
        malicious.sort_unstable();
        Ok(Self {
            adjacency,
            benign,
            malicious,
        })
    }

    pub fn complete(num_benign: usize, num_malicious: usize) -> Self {
        let n = num_benign + num_malicious;
        let mut adjacency = vec![vec![true; n]; n];
        for (i, row) in adjacency.iter_mut().enumerate() {
            row[i] = false;
        }
        Self {
            adjacency,
            benign: (0..num_benign).collect(),
            malicious: (num_benign..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn benign(&self) -> &[NodeId] {
        &self.benign
    }

    pub fn malicious(&self) -> &[NodeId] {
        &self.malicious
    }

    pub fn is_benign(&self, k: NodeId) -> bool {
        self.benign.binary_search(&k).is_ok()
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.adjacency
            .get(i)
            .and_then(|row| row.get(j))
            .copied()
            .unwrap_or(false)
    }

    pub fn edges(&self) -> Vec<[NodeId; 2]> {
        let n = self.n();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| [i, j]))
            .filter(|&[i, j]| self.adjacency[i][j])
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn to_doc(&self) -> TopologyDoc {
        TopologyDoc {
            n: self.n(),
            edges: self.edges(),
            benign: self.benign.clone(),
            malicious: self.malicious.clone(),
        }
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Self> {
        Self::from_edges(doc.n, &doc.edges, doc.benign.clone(), doc.malicious.clone())
    }
}

/// Samples an Erdős–Rényi graph, redrawing until the benign-induced subgraph
/// is connected. Nodes `0..num_benign` are benign, the rest malicious.
pub fn generate(config: &TopologyConfig) -> Result<TopologyGraph> {
    config.validate()?;
    let n = config.num_benign + config.num_malicious;
    let mut rng = stream(config.seed, Purpose::Topology);
    for _ in 0..config.max_retries {
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let edge = rng.random::<f64>() < config.edge_prob;
                adjacency[i][j] = edge;
                adjacency[j][i] = edge;
            }
        }
        let g = TopologyGraph {
            adjacency,
            benign: (0..config.num_benign).collect(),
            malicious: (config.num_benign..n).collect(),
        };
        if is_benign_connected(&g) {
            return Ok(g);
        }
    }
    Err(Error::Generation {
        attempts: config.max_retries,
        assumption: format!(
            "the subgraph of {} benign nodes was never connected at edge probability {}",
            config.num_benign, config.edge_prob
        ),
    })
}

/// Open neighbourhood of `k`.
pub fn neighbors(g: &TopologyGraph, k: NodeId) -> Result<BTreeSet<NodeId>> {
    let row = g
        .adjacency
        .get(k)
        .ok_or_else(|| Error::arg(format!("node {k} out of range for {} nodes", g.n())))?;
    Ok(row
        .iter()
        .enumerate()
        .filter_map(|(i, &e)| e.then_some(i))
        .collect())
}

/// Breadth-first search over benign-benign edges only.
pub fn is_benign_connected(g: &TopologyGraph) -> bool {
    let Some(&start) = g.benign.first() else {
        return true;
    };
    let mut reached = vec![false; g.n()];
    reached[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &g.benign {
            if !reached[v] && g.adjacency[u][v] {
                reached[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count == g.benign.len()
}
