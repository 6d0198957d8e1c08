use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::index;
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AggregatorSpec, AttackerKnowledge, DatasetSource, EvaluationMode, RunConfig};
use crate::analysis::{accuracy_variance, mean_accuracy, RoundMetrics};
use crate::attacks::{craft_payload, AdversaryView, AttackKind};
use crate::baselines::{aggregate, flame_weights, BaselineKind, CandidateSet};
use crate::data::{gen_synthetic_blobs, load_idx, partition, split_auxiliary};
use crate::error::{Error, Result};
use crate::model::{batch_gradient, evaluate_accuracy, evaluate_mean_loss, sgd_step, Dataset, Minibatch, ParamVector};
use crate::reweight::{dfedreweighting_round_weights, reweight_aggregate, WeightVector};
use crate::rng::{stream, Purpose, StreamKey};
use crate::topology::{generate, neighbors, NodeId, TopologyDoc, TopologyGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

/// One node of the simulation. Malicious nodes hold no data.
///
/// Random draws are not stored here: each use derives a fresh stream keyed by
/// `(seed, id, round, purpose)`.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub id: NodeId,
    pub role: Role,
    pub model: ParamVector,
    pub train: Dataset,
    pub aux: Dataset,
}

/// Per-round behaviour shared by every client.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_steps: usize,
    pub aggregator: AggregatorSpec,
    pub attack: Option<AttackKind>,
    pub knowledge: AttackerKnowledge,
}

impl RoundSettings {
    pub fn from_config(config: &RunConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            local_steps: config.local_steps,
            aggregator: config.aggregator,
            attack: config.attack,
            knowledge: config.attacker_knowledge,
        }
    }
}

/// Aggregation weights used in one round, as `(client, neighbour, weight)`.
pub type WeightTriples = Vec<(NodeId, NodeId, f64)>;

/// Whole-network state between rounds.
#[derive(Clone, Debug)]
pub struct SimState {
    pub seed: u64,
    /// Number of completed rounds.
    pub round: usize,
    pub graph: TopologyGraph,
    /// Indexed by node id.
    pub clients: Vec<ClientState>,
    /// Shared test set for global evaluation.
    pub test: Option<Dataset>,
    pub settings: RoundSettings,
    neighborhoods: Vec<Vec<NodeId>>,
}

impl SimState {
    /// Assembles a state from a graph and one `(train, aux)` pair per benign
    /// node, in id order. All models start at zero.
    pub fn from_parts(
        seed: u64,
        graph: TopologyGraph,
        local_data: Vec<(Dataset, Dataset)>,
        test: Option<Dataset>,
        settings: RoundSettings,
    ) -> Result<Self> {
        if local_data.len() != graph.benign().len() {
            return Err(Error::arg(format!(
                "{} local datasets for {} benign nodes",
                local_data.len(),
                graph.benign().len()
            )));
        }
        let Some((first, _)) = local_data.first() else {
            return Err(Error::arg("a simulation needs at least one benign node"));
        };
        let shape = first.shape();
        for (train, aux) in &local_data {
            if train.shape() != shape || aux.shape() != shape {
                return Err(Error::Shape {
                    expected: format!("{shape:?}"),
                    actual: format!("{:?} / {:?}", train.shape(), aux.shape()),
                });
            }
        }
        let empty = Dataset::new(Vec::new(), shape.classes)?;
        let mut data = local_data.into_iter();
        let mut clients = Vec::with_capacity(graph.n());
        for id in 0..graph.n() {
            let (role, (train, aux)) = if graph.is_benign(id) {
                (Role::Benign, data.next().expect("counted above"))
            } else {
                (Role::Malicious, (empty.clone(), empty.clone()))
            };
            clients.push(ClientState {
                id,
                role,
                model: ParamVector::zeros(shape),
                train,
                aux,
            });
        }
        let neighborhoods = (0..graph.n())
            .map(|k| neighbors(&graph, k).map(|s| s.into_iter().collect()))
            .collect::<Result<_>>()?;
        Ok(Self {
            seed,
            round: 0,
            graph,
            clients,
            test,
            settings,
            neighborhoods,
        })
    }

    /// Topology, data, partition and auxiliary split for one seed.
    pub fn initialize(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let graph = generate(&config.topology.with_seed(seed))?;
        let (data, test) = load_data(&config.dataset, seed)?;
        let plan = partition(&data, config.heterogeneity, config.topology.num_benign, seed)?;
        plan.validate(data.len())?;
        let split = split_auxiliary(&plan, &data, config.aux_fraction, seed)?;
        let local = split
            .clients
            .iter()
            .map(|c| Ok((data.subset(&c.train_indices)?, data.subset(&c.aux_indices)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(seed, graph, local, test, RoundSettings::from_config(config))
    }

    /// Open neighbourhood of `k`, sorted.
    pub fn neighborhood(&self, k: NodeId) -> &[NodeId] {
        &self.neighborhoods[k]
    }

    pub fn benign_models(&self) -> Vec<(NodeId, &ParamVector)> {
        self.graph.benign().iter().map(|&k| (k, &self.clients[k].model)).collect()
    }

    /// Runs one synchronous round and returns the weights each benign client
    /// used (rules without explicit weights contribute nothing).
    pub fn run_round(&mut self) -> Result<WeightTriples> {
        let t = self.round;
        let benign = self.graph.benign().to_vec();

        let trained: Vec<ParamVector> = benign
            .par_iter()
            .map(|&k| self.local_train(k, t))
            .collect::<Result<_>>()?;
        let mut half: Vec<Option<ParamVector>> = vec![None; self.graph.n()];
        for (&k, m) in benign.iter().zip(trained) {
            half[k] = Some(m);
        }

        if let Some(attack) = self.settings.attack {
            let payloads: Vec<(NodeId, ParamVector)> = self
                .graph
                .malicious()
                .par_iter()
                .map(|&m| Ok((m, self.payload(attack, m, t, &half)?)))
                .collect::<Result<_>>()?;
            for (m, p) in payloads {
                half[m] = Some(p);
            }
        }

        let results: Vec<(ParamVector, WeightTriples)> = benign
            .par_iter()
            .map(|&k| self.aggregate_for(k, t, &half))
            .collect::<Result<_>>()?;
        let mut triples = Vec::new();
        for (&k, (model, w)) in benign.iter().zip(results) {
            self.clients[k].model = model;
            triples.extend(w);
        }
        self.round += 1;
        Ok(triples)
    }

    fn local_train(&self, k: NodeId, t: usize) -> Result<ParamVector> {
        let client = &self.clients[k];
        let mut model = client.model.clone();
        let mut rng = StreamKey::new(self.seed, Purpose::Minibatch).node(k).round(t).rng();
        for _ in 0..self.settings.local_steps {
            let batch = Minibatch::sample(&mut rng, &client.train, self.settings.batch_size)?;
            let grad = batch_gradient(&model, &client.train, &batch)?;
            model = sgd_step(&model, &grad, self.settings.learning_rate)?;
        }
        Ok(model)
    }

    fn payload(&self, attack: AttackKind, m: NodeId, t: usize, half: &[Option<ParamVector>]) -> Result<ParamVector> {
        let visible = |k: &NodeId| match self.settings.knowledge {
            AttackerKnowledge::Omniscient => true,
            AttackerKnowledge::Neighborhood => self.graph.has_edge(m, *k),
        };
        let mut seen: Vec<&ParamVector> = self
            .graph
            .benign()
            .iter()
            .filter(|k| visible(k))
            .filter_map(|&k| half[k].as_ref())
            .collect();
        if seen.is_empty() {
            // an isolated attacker reaches nobody; give it the full view
            seen = self.graph.benign().iter().filter_map(|&k| half[k].as_ref()).collect();
        }
        let own = &self.clients[m].model;
        let view = AdversaryView {
            benign: seen,
            own,
            shape: own.shape(),
            num_nodes: self.graph.n(),
            num_malicious: self.graph.malicious().len(),
        };
        let mut rng = StreamKey::new(self.seed, Purpose::Attack).node(m).round(t).rng();
        craft_payload(attack, &view, &mut rng)
    }

    fn aggregate_for(&self, k: NodeId, t: usize, half: &[Option<ParamVector>]) -> Result<(ParamVector, WeightTriples)> {
        let own = half[k].as_ref().expect("benign nodes always train");
        // silent malicious neighbours (no attack) have no entry
        let received: Vec<(NodeId, ParamVector)> = self.neighborhoods[k]
            .iter()
            .filter_map(|&j| half[j].as_ref().map(|m| (j, m.clone())))
            .collect();
        let (model, weights) = match self.settings.aggregator {
            AggregatorSpec::DFedReweighting { tpm, crs } => {
                let w = dfedreweighting_round_weights(tpm, crs, &received, (k, own), &self.clients[k].aux)?;
                let mut all = received;
                all.push((k, own.clone()));
                (reweight_aggregate(&all, &w)?, Some(w))
            }
            spec => {
                let kind = effective_baseline(spec.baseline().expect("baseline spec"), received.len() + 1);
                let weights = match kind {
                    Some(BaselineKind::DFedAvg) => {
                        let mut ids: Vec<NodeId> = received.iter().map(|e| e.0).collect();
                        ids.push(k);
                        ids.sort_unstable();
                        Some(WeightVector::uniform(&ids)?)
                    }
                    Some(BaselineKind::Flame { beta, include_self }) => {
                        Some(WeightVector::new(flame_weights((k, own), &received, beta, include_self)?)?)
                    }
                    _ => None,
                };
                let mut all = received;
                all.push((k, own.clone()));
                let set = CandidateSet::new(all)?;
                let model = match kind {
                    Some(kind) => aggregate(kind, k, &set)?,
                    None => {
                        debug!("client {k}, round {t}: neighbourhood of {} too small, keeping own model", set.len());
                        own.clone()
                    }
                };
                (model, weights)
            }
        };
        if !model.is_finite() {
            return Err(Error::NonFinite {
                seed: self.seed,
                round: t,
                client: k,
                dump: nonfinite_dump(k, t, own, half, &self.neighborhoods[k], weights.as_ref()),
            });
        }
        let triples = weights
            .map(|w| w.entries().iter().map(|&(j, v)| (k, j, v)).collect())
            .unwrap_or_default();
        Ok((model, triples))
    }

    /// Accuracy and loss of every benign client, on its aux set (local) or
    /// the shared test set (global).
    pub fn evaluate(&self, mode: EvaluationMode) -> Result<Vec<(NodeId, f64, f64)>> {
        let benign = self.graph.benign().to_vec();
        benign
            .par_iter()
            .map(|&k| {
                let client = &self.clients[k];
                let data = match mode {
                    EvaluationMode::Local => &client.aux,
                    EvaluationMode::Global => self
                        .test
                        .as_ref()
                        .ok_or_else(|| Error::Config("global evaluation without a test set".into()))?,
                };
                Ok((k, evaluate_accuracy(&client.model, data)?, evaluate_mean_loss(&client.model, data)?))
            })
            .collect()
    }

    /// Evaluates and packages the snapshot for the current round.
    pub fn snapshot(&self, mode: EvaluationMode, weights: WeightTriples) -> Result<RoundMetrics> {
        let scores = self.evaluate(mode)?;
        let accs: Vec<f64> = scores.iter().map(|s| s.1).collect();
        Ok(RoundMetrics {
            round: self.round,
            accuracy: scores.iter().map(|s| (s.0, s.1)).collect(),
            loss: scores.iter().map(|s| (s.0, s.2)).collect(),
            mean_acc: mean_accuracy(&accs)?,
            acc_var: accuracy_variance(&to_points(&accs))?,
            weights,
        })
    }
}

/// Krum-family rules need `n - f - 2 >= 1`; shrink `f` (and `m`) to what the
/// neighbourhood supports, or `None` when even `f = 0` is impossible.
fn effective_baseline(kind: BaselineKind, n: usize) -> Option<BaselineKind> {
    match kind {
        BaselineKind::Krum { f } => (n >= 3).then(|| BaselineKind::Krum { f: f.min(n - 3) }),
        BaselineKind::MultiKrum { f, m } => (n >= 3).then(|| BaselineKind::MultiKrum {
            f: f.min(n - 3),
            m: m.min(n),
        }),
        BaselineKind::TrimmedMean { f } => Some(BaselineKind::TrimmedMean { f: f.min((n - 1) / 2) }),
        other => Some(other),
    }
}

fn nonfinite_dump(
    k: NodeId,
    t: usize,
    own: &ParamVector,
    half: &[Option<ParamVector>],
    neighborhood: &[NodeId],
    weights: Option<&WeightVector>,
) -> String {
    let summary = |m: &ParamVector| {
        serde_json::json!({
            "finite": m.is_finite(),
            "norm_squared": m.norm_squared(),
        })
    };
    let received: serde_json::Map<String, serde_json::Value> = neighborhood
        .iter()
        .filter_map(|&j| half[j].as_ref().map(|m| (j.to_string(), summary(m))))
        .collect();
    serde_json::json!({
        "client": k,
        "round": t,
        "own": summary(own),
        "received": received,
        "weights": weights.map(|w| w.entries().to_vec()),
    })
    .to_string()
}

fn to_points(accs: &[f64]) -> Vec<f64> {
    accs.iter().map(|a| a * 100.0).collect()
}

fn load_data(source: &DatasetSource, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    match source {
        DatasetSource::Synthetic {
            classes,
            dim,
            n_per_class,
            spread,
            test_per_class,
        } => {
            let train = gen_synthetic_blobs(*classes, *dim, *n_per_class, *spread, seed)?;
            let test_seed = stream(seed, Purpose::Synthetic).next_u64();
            let test = gen_synthetic_blobs(*classes, *dim, *test_per_class, *spread, test_seed)?;
            Ok((train, Some(test)))
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            subsample,
        } => {
            let train = subsample_dataset(load_idx(train_images, train_labels)?, *subsample, seed, 0)?;
            let test = match (test_images, test_labels) {
                (Some(i), Some(l)) => Some(subsample_dataset(load_idx(i, l)?, *subsample, seed, 1)?),
                _ => None,
            };
            if let Some(test) = &test {
                if test.feature_dim() != train.feature_dim() {
                    return Err(Error::Config(format!(
                        "train images have {} features, test images {}",
                        train.feature_dim(),
                        test.feature_dim()
                    )));
                }
            }
            Ok((train, test))
        }
    }
}

/// Keeps `ceil(fraction * n)` examples chosen by a seeded stream, in their
/// original order.
fn subsample_dataset(data: Dataset, fraction: f64, seed: u64, which: usize) -> Result<Dataset> {
    if fraction >= 1.0 {
        return Ok(data);
    }
    let n = data.len();
    let keep = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = StreamKey::new(seed, Purpose::Subsample).node(which).rng();
    let mut idx = index::sample(&mut rng, n, keep).into_vec();
    idx.sort_unstable();
    let classes = data.num_classes();
    let sub = data.subset(&idx)?;
    Dataset::new(sub.examples().to_vec(), classes)
}

/// Results of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub topology: TopologyDoc,
    /// Evaluation snapshots: round 0, every `eval_every` rounds, and the last round.
    pub rounds: Vec<RoundMetrics>,
}

impl SeedRun {
    pub fn final_metrics(&self) -> &RoundMetrics {
        self.rounds.last().expect("round 0 is always evaluated")
    }
}

/// Final accuracies of one seed with their mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedNumbers {
    pub seed: u64,
    pub round: usize,
    /// `(client, accuracy in [0, 1])`.
    pub accuracy: Vec<(NodeId, f64)>,
    /// In `[0, 1]`.
    pub mean_acc: f64,
    /// In percentage points squared.
    pub acc_var: f64,
}

/// Headline numbers: per-seed finals and their cross-seed means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryNumbers {
    pub per_seed: Vec<SeedNumbers>,
    pub mean_acc: f64,
    pub acc_var: f64,
}

impl SummaryNumbers {
    /// Recomputes everything from `(seed, round, per-client accuracies)`.
    pub fn from_finals(finals: Vec<(u64, usize, Vec<(NodeId, f64)>)>) -> Result<Self> {
        if finals.is_empty() {
            return Err(Error::arg("summary over no seeds"));
        }
        let per_seed = finals
            .into_iter()
            .map(|(seed, round, accuracy)| {
                let accs: Vec<f64> = accuracy.iter().map(|a| a.1).collect();
                Ok(SeedNumbers {
                    seed,
                    round,
                    mean_acc: mean_accuracy(&accs)?,
                    acc_var: accuracy_variance(&to_points(&accs))?,
                    accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_seed.len() as f64;
        Ok(Self {
            mean_acc: per_seed.iter().map(|s| s.mean_acc).sum::<f64>() / n,
            acc_var: per_seed.iter().map(|s| s.acc_var).sum::<f64>() / n,
            per_seed,
        })
    }
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seeds: Vec<SeedRun>,
    pub numbers: SummaryNumbers,
    pub wall_clock_secs: f64,
    pub fingerprint: String,
}

impl RunSummary {
    /// Cross-seed mean accuracy in percentage points.
    pub fn mean_acc_points(&self) -> f64 {
        self.numbers.mean_acc * 100.0
    }
}

/// Execution knobs that never change results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads; 0 means one per core.
    pub parallel: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { parallel: 1 }
    }
}

/// Runs every seed of `config` and summarises the final evaluations.
pub fn run_experiment(config: &RunConfig, options: RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallel)
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?;
    let start = Instant::now();
    let seeds = pool.install(|| {
        config
            .seeds
            .iter()
            .map(|&seed| run_seed(config, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    let numbers = SummaryNumbers::from_finals(
        seeds
            .iter()
            .map(|s| {
                let last = s.final_metrics();
                (s.seed, last.round, last.accuracy.clone())
            })
            .collect(),
    )?;
    let summary = RunSummary {
        config: config.clone(),
        seeds,
        numbers,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        fingerprint: fingerprint(config)?,
    };
    info!(
        "{}: mean acc {:.3}%, var {:.3}",
        config.name,
        summary.mean_acc_points(),
        summary.numbers.acc_var
    );
    Ok(summary)
}

fn run_seed(config: &RunConfig, seed: u64) -> Result<SeedRun> {
    let in_run = |round: usize| move |e: Error| Error::InRun {
        seed,
        round,
        source: Box::new(e),
    };
    let mut state = SimState::initialize(config, seed).map_err(in_run(0))?;
    if config.attack.is_none() && !state.graph.malicious().is_empty() {
        warn!("seed {seed}: no attack configured; malicious nodes stay silent");
    }
    let mut rounds = vec![state.snapshot(config.evaluation, Vec::new()).map_err(in_run(0))?];
    for t in 0..config.rounds {
        let weights = match state.run_round() {
            Ok(w) => w,
            Err(e @ Error::NonFinite { .. }) => return Err(e),
            Err(e) => return Err(in_run(t)(e)),
        };
        let done = t + 1;
        if done % config.eval_every == 0 || done == config.rounds {
            let weights = if config.export_weights { weights } else { Vec::new() };
            let m = state.snapshot(config.evaluation, weights).map_err(in_run(done))?;
            debug!("seed {seed}, round {done}: mean acc {:.4}, var {:.3}", m.mean_acc, m.acc_var);
            rounds.push(m);
        }
    }
    Ok(SeedRun {
        seed,
        topology: state.graph.to_doc(),
        rounds,
    })
}

/// Crate version plus an FNV-1a hash of the canonical config JSON.
pub fn fingerprint(config: &RunConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    Ok(format!("dflsim-{}+config.{h:016x}", env!("CARGO_PKG_VERSION")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HeterogeneityScheme;
    use crate::model::LabeledExample;

    fn tiny_data(seed: u64) -> Dataset {
        gen_synthetic_blobs(3, 4, 12, 0.5, seed).unwrap()
    }

    fn settings(aggregator: AggregatorSpec) -> RoundSettings {
        RoundSettings {
            learning_rate: 0.1,
            batch_size: 8,
            local_steps: 1,
            aggregator,
            attack: None,
            knowledge: AttackerKnowledge::Omniscient,
        }
    }

    #[test]
    fn symmetric_pair_stays_identical() {
        let d = tiny_data(1);
        let graph = TopologyGraph::complete(2, 0);
        let mut s = SimState::from_parts(
            5,
            graph,
            vec![(d.clone(), d.clone()), (d.clone(), d)],
            None,
            settings(AggregatorSpec::DFedAvg),
        )
        .unwrap();
        for _ in 0..5 {
            s.run_round().unwrap();
            assert_eq!(s.clients[0].model, s.clients[1].model);
        }
    }

    #[test]
    fn lone_client_round_is_one_sgd_step() {
        let d = tiny_data(2);
        let graph = TopologyGraph::from_edges(1, &[], vec![0], vec![]).unwrap();
        for agg in [
            AggregatorSpec::DFedAvg,
            AggregatorSpec::Median,
            AggregatorSpec::Krum { f: 2 },
            AggregatorSpec::TrimmedMean { f: 2 },
            AggregatorSpec::Flame {
                beta: 1.0,
                include_self: true,
            },
        ] {
            let mut s =
                SimState::from_parts(9, graph.clone(), vec![(d.clone(), d.clone())], None, settings(agg)).unwrap();
            let mut expected = ParamVector::zeros(d.shape());
            for t in 0..3 {
                let mut rng = StreamKey::new(9, Purpose::Minibatch).node(0).round(t).rng();
                let batch = Minibatch::sample(&mut rng, &d, 8).unwrap();
                let g = batch_gradient(&expected, &d, &batch).unwrap();
                expected = sgd_step(&expected, &g, 0.1).unwrap();
                s.run_round().unwrap();
                assert_eq!(s.clients[0].model, expected, "{agg}");
            }
        }
    }

    #[test]
    fn malicious_clients_hold_no_data() {
        let config = RunConfig::from_json(
            r#"{"dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n_per_class": 20},
                "rounds": 2, "seeds": [1]}"#,
        )
        .unwrap();
        let s = SimState::initialize(&config, 1).unwrap();
        for c in &s.clients {
            match c.role {
                Role::Malicious => assert!(c.train.is_empty() && c.aux.is_empty()),
                Role::Benign => assert!(!c.train.is_empty() && !c.aux.is_empty()),
            }
        }
        let total: usize = s.clients.iter().map(|c| c.train.len() + c.aux.len()).sum();
        assert_eq!(total, 60);
    }

    #[test]
    fn zero_rounds_reports_initial_model() {
        let config = RunConfig::from_json(
            r#"{"dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n_per_class": 20},
                "rounds": 0, "seeds": [1, 2]}"#,
        )
        .unwrap();
        let s = run_experiment(&config, RunOptions::default()).unwrap();
        for seed in &s.seeds {
            assert_eq!(seed.rounds.len(), 1);
            assert_eq!(seed.rounds[0].round, 0);
        }
        // the zero model predicts class 0 everywhere
        assert_eq!(s.numbers.per_seed.len(), 2);
    }

    #[test]
    fn consensus_under_complete_iid_dfedavg() {
        let mut config = RunConfig::from_json(
            r#"{"dataset": {"kind": "synthetic", "classes": 3, "dim": 2, "n_per_class": 30},
                "topology": {"num_benign": 4, "num_malicious": 0, "edge_prob": 1.0},
                "rounds": 3, "seeds": [3]}"#,
        )
        .unwrap();
        config.heterogeneity = HeterogeneityScheme::Iid;
        let mut s = SimState::initialize(&config, 3).unwrap();
        for _ in 0..3 {
            s.run_round().unwrap();
            let first = &s.clients[0].model;
            for c in &s.clients[1..] {
                for (a, b) in first.values().iter().zip(c.model.values()) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonfinite_aggregate_aborts_with_dump() {
        let d = Dataset::new(
            vec![
                LabeledExample {
                    features: vec![f64::MAX],
                    label: 0,
                },
                LabeledExample {
                    features: vec![-f64::MAX],
                    label: 1,
                },
            ],
            2,
        )
        .unwrap();
        let graph = TopologyGraph::complete(2, 0);
        let mut st = settings(AggregatorSpec::DFedAvg);
        st.learning_rate = 1e300;
        let mut s = SimState::from_parts(0, graph, vec![(d.clone(), d.clone()), (d.clone(), d)], None, st).unwrap();
        let mut hit = None;
        for _ in 0..5 {
            if let Err(e) = s.run_round() {
                hit = Some(e);
                break;
            }
        }
        match hit {
            Some(Error::NonFinite { dump, .. }) => assert!(dump.contains("\"finite\":false")),
            other => panic!("expected a non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn effective_baseline_clamps() {
        assert_eq!(effective_baseline(BaselineKind::Krum { f: 2 }, 2), None);
        assert_eq!(
            effective_baseline(BaselineKind::Krum { f: 2 }, 4),
            Some(BaselineKind::Krum { f: 1 })
        );
        assert_eq!(
            effective_baseline(BaselineKind::TrimmedMean { f: 2 }, 4),
            Some(BaselineKind::TrimmedMean { f: 1 })
        );
        assert_eq!(
            effective_baseline(BaselineKind::MultiKrum { f: 2, m: 9 }, 6),
            Some(BaselineKind::MultiKrum { f: 2, m: 6 })
        );
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.rounds += 1;
        assert_eq!(fingerprint(&a).unwrap(), fingerprint(&a).unwrap());
        assert_ne!(fingerprint(&a).unwrap(), fingerprint(&b).unwrap());
    }
}
