use serde::{Deserialize, Serialize};

use super::config::{AggregatorSpec, RunConfig};
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::reweight::CrsKind;

/// A base run plus the values to vary. Empty lists keep the base value;
/// `null` in `attacks` means no attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    #[serde(default)]
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub attacks: Vec<Option<AttackKind>>,
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub name: String,
    pub temperature: Option<f64>,
    pub attack: String,
    pub mean_acc: f64,
    pub acc_var: f64,
}

fn attack_slug(attack: &Option<AttackKind>) -> &'static str {
    match attack {
        None => "none",
        Some(AttackKind::Gaussian { .. }) => "gaussian",
        Some(AttackKind::SignFlip { .. }) => "sign_flip",
        Some(AttackKind::Alie { .. }) => "alie",
    }
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SweepConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.expand()?;
        Ok(s)
    }

    /// The cartesian product, temperatures outermost. Each run is named
    /// `<base>-T<temperature>-<attack>` with the varied parts only.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        self.base.validate()?;
        if !self.temperatures.is_empty() {
            let ok = matches!(
                self.base.aggregator,
                AggregatorSpec::DFedReweighting {
                    crs: CrsKind::TempSoftmax { .. },
                    ..
                }
            );
            if !ok {
                return Err(Error::Config(
                    "temperatures need a dfedreweighting base with temp_softmax".into(),
                ));
            }
        }
        let temps: Vec<Option<f64>> = if self.temperatures.is_empty() {
            vec![None]
        } else {
            self.temperatures.iter().copied().map(Some).collect()
        };
        let attacks: Vec<Option<Option<AttackKind>>> = if self.attacks.is_empty() {
            vec![None]
        } else {
            self.attacks.iter().copied().map(Some).collect()
        };
        let mut out = Vec::with_capacity(temps.len() * attacks.len());
        for t in &temps {
            for a in &attacks {
                let mut c = self.base.clone();
                let mut name = c.name.clone();
                if let Some(t) = t {
                    if let AggregatorSpec::DFedReweighting {
                        crs: CrsKind::TempSoftmax { temperature },
                        ..
                    } = &mut c.aggregator
                    {
                        *temperature = *t;
                    }
                    name.push_str(&format!("-T{t}"));
                }
                if let Some(a) = a {
                    c.attack = *a;
                    name.push('-');
                    name.push_str(attack_slug(a));
                }
                c.name = name;
                c.validate()?;
                out.push(c);
            }
        }
        let mut names: Vec<&str> = out.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("sweep produces duplicate run names".into()));
        }
        Ok(out)
    }
}

impl SweepRow {
    pub fn new(config: &RunConfig, mean_acc: f64, acc_var: f64) -> Self {
        let temperature = match config.aggregator {
            AggregatorSpec::DFedReweighting {
                crs: CrsKind::TempSoftmax { temperature },
                ..
            } => Some(temperature),
            _ => None,
        };
        Self {
            name: config.name.clone(),
            temperature,
            attack: attack_slug(&config.attack).to_string(),
            mean_acc,
            acc_var,
        }
    }
}
