use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::baselines::BaselineKind;
use crate::data::HeterogeneityScheme;
use crate::error::{Error, Result};
use crate::reweight::{CrsKind, TargetMetricKind};
use crate::topology::TopologyConfig;

fn default_classes() -> usize {
    10
}
fn default_dim() -> usize {
    64
}
fn default_n_per_class() -> usize {
    100
}
fn default_spread() -> f64 {
    1.0
}
fn default_test_per_class() -> usize {
    50
}
fn default_subsample() -> f64 {
    1.0
}
fn default_name() -> String {
    "run".to_string()
}
fn default_rounds() -> usize {
    500
}
fn default_lr() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_aux_fraction() -> f64 {
    0.2
}
fn default_seeds() -> Vec<u64> {
    vec![43, 44, 45, 46]
}
fn default_eval_every() -> usize {
    10
}

/// Where the examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Gaussian blobs; the test set shares the class means.
    Synthetic {
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_n_per_class")]
        n_per_class: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default = "default_test_per_class")]
        test_per_class: usize,
    },
    /// IDX image/label files. Relative paths resolve against the config
    /// file's directory. `subsample` keeps that fraction of each file.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default = "default_subsample")]
        subsample: f64,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            classes: default_classes(),
            dim: default_dim(),
            n_per_class: default_n_per_class(),
            spread: default_spread(),
            test_per_class: default_test_per_class(),
        }
    }
}

/// Graph settings; the seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySettings {
    #[serde(default = "TopologySettings::default_benign")]
    pub num_benign: usize,
    #[serde(default = "TopologySettings::default_malicious")]
    pub num_malicious: usize,
    #[serde(default = "TopologySettings::default_edge_prob")]
    pub edge_prob: f64,
    #[serde(default = "TopologySettings::default_retries")]
    pub max_retries: usize,
}

impl TopologySettings {
    fn default_benign() -> usize {
        TopologyConfig::default().num_benign
    }
    fn default_malicious() -> usize {
        TopologyConfig::default().num_malicious
    }
    fn default_edge_prob() -> f64 {
        TopologyConfig::default().edge_prob
    }
    fn default_retries() -> usize {
        TopologyConfig::default().max_retries
    }

    pub fn with_seed(&self, seed: u64) -> TopologyConfig {
        TopologyConfig {
            num_benign: self.num_benign,
            num_malicious: self.num_malicious,
            edge_prob: self.edge_prob,
            seed,
            max_retries: self.max_retries,
        }
    }
}

impl Default for TopologySettings {
    fn default() -> Self {
        let t = TopologyConfig::default();
        Self {
            num_benign: t.num_benign,
            num_malicious: t.num_malicious,
            edge_prob: t.edge_prob,
            max_retries: t.max_retries,
        }
    }
}

/// Aggregation rule run by every benign client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorSpec {
    #[serde(rename = "dfedreweighting")]
    DFedReweighting { tpm: TargetMetricKind, crs: CrsKind },
    #[serde(rename = "dfedavg")]
    DFedAvg,
    Median,
    Krum {
        #[serde(default = "AggregatorSpec::default_f")]
        f: usize,
    },
    MultiKrum {
        #[serde(default = "AggregatorSpec::default_f")]
        f: usize,
        #[serde(default = "AggregatorSpec::default_m")]
        m: usize,
    },
    TrimmedMean {
        #[serde(default = "AggregatorSpec::default_f")]
        f: usize,
    },
    Flame {
        #[serde(default = "AggregatorSpec::default_beta")]
        beta: f64,
        #[serde(default = "AggregatorSpec::default_include_self")]
        include_self: bool,
    },
}

impl AggregatorSpec {
    fn default_f() -> usize {
        2
    }
    fn default_m() -> usize {
        2
    }
    fn default_beta() -> f64 {
        1.0
    }
    fn default_include_self() -> bool {
        true
    }

    /// The baseline rule, or `None` for reweighting.
    pub fn baseline(&self) -> Option<BaselineKind> {
        Some(match *self {
            AggregatorSpec::DFedReweighting { .. } => return None,
            AggregatorSpec::DFedAvg => BaselineKind::DFedAvg,
            AggregatorSpec::Median => BaselineKind::Median,
            AggregatorSpec::Krum { f } => BaselineKind::Krum { f },
            AggregatorSpec::MultiKrum { f, m } => BaselineKind::MultiKrum { f, m },
            AggregatorSpec::TrimmedMean { f } => BaselineKind::TrimmedMean { f },
            AggregatorSpec::Flame { beta, include_self } => BaselineKind::Flame { beta, include_self },
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AggregatorSpec::DFedReweighting { tpm, crs } => match crs {
                CrsKind::TempSoftmax { temperature } if !(temperature > 0.0) || !temperature.is_finite() => Err(
                    Error::Config(format!("temperature must be positive, got {temperature}")),
                ),
                CrsKind::AccClip if tpm != TargetMetricKind::AccuracyOnAux => {
                    Err(Error::Config("acc_clip needs the accuracy_on_aux metric".into()))
                }
                CrsKind::LossClip if tpm != TargetMetricKind::LossOnAux => {
                    Err(Error::Config("loss_clip needs the loss_on_aux metric".into()))
                }
                _ => Ok(()),
            },
            _ => self
                .baseline()
                .expect("non-reweighting spec")
                .validate()
                .map_err(|e| Error::Config(e.to_string())),
        }
    }
}

impl std::fmt::Display for AggregatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregatorSpec::DFedReweighting { tpm, crs } => write!(f, "DFedReweighting({tpm:?}, {crs:?})"),
            other => write!(f, "{}", other.baseline().expect("baseline")),
        }
    }
}

/// How much of the network an attacker sees when crafting its payload.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerKnowledge {
    /// Every benign model of the round.
    #[default]
    Omniscient,
    /// Only the benign neighbours' models.
    Neighborhood,
}

/// Which data the per-client accuracy is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// The client's own auxiliary holdout (fairness runs).
    #[default]
    Local,
    /// A test set shared by all clients (robustness runs).
    Global,
}

/// Full description of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Run id; outputs go to `<output_dir>/<name>`.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default = "RunConfig::default_heterogeneity")]
    pub heterogeneity: HeterogeneityScheme,
    #[serde(default)]
    pub topology: TopologySettings,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub local_steps: usize,
    #[serde(default = "RunConfig::default_aggregator")]
    pub aggregator: AggregatorSpec,
    #[serde(default)]
    pub attack: Option<AttackKind>,
    #[serde(default)]
    pub attacker_knowledge: AttackerKnowledge,
    #[serde(default = "default_aux_fraction")]
    pub aux_fraction: f64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub evaluation: EvaluationMode,
    /// Write `weights_round_<t>.csv` at every evaluation round.
    #[serde(default)]
    pub export_weights: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    fn default_heterogeneity() -> HeterogeneityScheme {
        HeterogeneityScheme::Iid
    }
    fn default_aggregator() -> AggregatorSpec {
        AggregatorSpec::DFedAvg
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative IDX paths become relative to its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    /// Makes relative dataset paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            for p in [Some(train_images), Some(train_labels), test_images.as_mut(), test_labels.as_mut()]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad(format!("name {:?} is not usable as a directory name", self.name));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.local_steps == 0 || self.eval_every == 0 {
            return bad("batch_size, local_steps and eval_every must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(self.aux_fraction > 0.0 && self.aux_fraction < 1.0) {
            return bad(format!("aux_fraction must lie in (0, 1), got {}", self.aux_fraction));
        }
        self.topology
            .with_seed(0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let classes = match &self.dataset {
            DatasetSource::Synthetic {
                classes,
                dim,
                n_per_class,
                spread,
                test_per_class,
            } => {
                if *classes < 2 || *dim < 1 || *n_per_class < 1 || *test_per_class < 1 {
                    return bad("synthetic data needs classes >= 2 and positive dim and counts".into());
                }
                if !(*spread >= 0.0) || !spread.is_finite() {
                    return bad(format!("spread must be nonnegative, got {spread}"));
                }
                Some(*classes)
            }
            DatasetSource::Idx {
                test_images,
                test_labels,
                subsample,
                ..
            } => {
                if !(*subsample > 0.0 && *subsample <= 1.0) {
                    return bad(format!("subsample must lie in (0, 1], got {subsample}"));
                }
                if test_images.is_some() != test_labels.is_some() {
                    return bad("test_images and test_labels go together".into());
                }
                if self.evaluation == EvaluationMode::Global && test_images.is_none() {
                    return bad("global evaluation needs test_images and test_labels".into());
                }
                None
            }
        };
        match (self.heterogeneity, classes) {
            (scheme, Some(c)) => scheme.validate(c),
            (scheme, None) => scheme.validate(usize::MAX),
        }
        .map_err(|e| Error::Config(e.to_string()))?;
        self.aggregator.validate()?;
        if let Some(attack) = self.attack {
            attack.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.rounds, 500);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.local_steps, 1);
        assert_eq!(c.seeds, vec![43, 44, 45, 46]);
        assert_eq!(c.eval_every, 10);
        assert_eq!(c.topology.num_benign, 10);
        assert_eq!(c.topology.num_malicious, 2);
        assert_eq!(c.aggregator, AggregatorSpec::DFedAvg);
        assert_eq!(c.attack, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            r#"{"round": 3}"#,
            r#"{"topology": {"seed": 1}}"#,
            r#"{"dataset": {"kind": "synthetic", "colour": 1}}"#,
            r#"{"aggregator": {"kind": "krum", "g": 1}}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert!(err.is_config(), "{doc}: {err}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for doc in [
            r#"{"learning_rate": 0}"#,
            r#"{"seeds": []}"#,
            r#"{"seeds": [1, 1]}"#,
            r#"{"aux_fraction": 1.0}"#,
            r#"{"heterogeneity": {"kind": "label_skew", "h": 11}}"#,
            r#"{"topology": {"num_benign": 1}}"#,
            r#"{"aggregator": {"kind": "dfedreweighting", "tpm": "loss_on_aux", "crs": {"kind": "acc_clip"}}}"#,
            r#"{"aggregator": {"kind": "dfedreweighting", "tpm": "accuracy_on_aux", "crs": {"kind": "temp_softmax", "temperature": 0}}}"#,
            r#"{"attack": {"kind": "gaussian", "sigma": -1}}"#,
            r#"{"name": "a/b"}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert!(err.is_config(), "{doc}: {err}");
        }
    }

    #[test]
    fn zero_rounds_is_allowed() {
        assert_eq!(RunConfig::from_json(r#"{"rounds": 0}"#).unwrap().rounds, 0);
    }

    #[test]
    fn round_trips_through_json() {
        let c = RunConfig::from_json(
            r#"{"aggregator": {"kind": "dfedreweighting", "tpm": "loss_on_aux", "crs": {"kind": "loss_clip"}},
                "attack": {"kind": "alie", "z": "auto"}, "evaluation": "global"}"#,
        )
        .unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn relative_idx_paths_follow_the_config_file() {
        let mut c = RunConfig {
            dataset: DatasetSource::Idx {
                train_images: "a".into(),
                train_labels: "/abs/b".into(),
                test_images: None,
                test_labels: None,
                subsample: 1.0,
            },
            ..RunConfig::default()
        };
        c.resolve_paths(Path::new("/cfg"));
        let DatasetSource::Idx {
            train_images,
            train_labels,
            ..
        } = &c.dataset
        else {
            unreachable!()
        };
        assert_eq!(train_images, Path::new("/cfg/a"));
        assert_eq!(train_labels, Path::new("/abs/b"));
    }
}
