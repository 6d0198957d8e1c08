use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::engine::{RunSummary, SummaryNumbers};
use crate::error::{Error, Result};
use crate::topology::{NodeId, TopologyDoc};

/// Column order of `metrics.csv`.
pub const METRICS_HEADER: [&str; 7] = ["round", "seed", "client", "acc", "loss", "mean_acc", "var"];

/// One `metrics.csv` line. `acc` and `mean_acc` are in `[0, 1]`, `var` in
/// percentage points squared; `mean_acc` and `var` repeat the round's values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub seed: u64,
    pub client: NodeId,
    pub acc: f64,
    pub loss: f64,
    pub mean_acc: f64,
    pub var: f64,
}

#[derive(Serialize, Deserialize)]
struct SeedTopology {
    seed: u64,
    topology: TopologyDoc,
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub name: String,
    pub numbers: SummaryNumbers,
    pub wall_clock_secs: f64,
    pub fingerprint: String,
}

/// Writes rows in seed, round, client order. Floats use Rust's shortest
/// round-trip formatting.
pub fn write_metrics_csv<W: Write>(summary: &RunSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for seed in &summary.seeds {
        for m in &seed.rounds {
            for (&(client, acc), &(_, loss)) in m.accuracy.iter().zip(&m.loss) {
                w.write_record([
                    m.round.to_string(),
                    seed.seed.to_string(),
                    client.to_string(),
                    acc.to_string(),
                    loss.to_string(),
                    m.mean_acc.to_string(),
                    m.acc_var.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Writes the run directory `dir`: config, topologies, metrics, optional
/// weight snapshots and the summary.
pub fn write_run(dir: &Path, summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), &summary.config)?;
    let topologies: Vec<SeedTopology> = summary
        .seeds
        .iter()
        .map(|s| SeedTopology {
            seed: s.seed,
            topology: s.topology.clone(),
        })
        .collect();
    write_json(&dir.join("topology.json"), &topologies)?;
    write_metrics_csv(summary, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    if summary.config.export_weights {
        write_weight_snapshots(dir, summary)?;
    }
    write_json(
        &dir.join("summary.json"),
        &SummaryDoc {
            name: summary.config.name.clone(),
            numbers: summary.numbers.clone(),
            wall_clock_secs: summary.wall_clock_secs,
            fingerprint: summary.fingerprint.clone(),
        },
    )
}

/// One file per evaluated round that carries weights, with all seeds.
fn write_weight_snapshots(dir: &Path, summary: &RunSummary) -> Result<()> {
    let mut rounds: Vec<usize> = summary
        .seeds
        .iter()
        .flat_map(|s| s.rounds.iter().filter(|m| !m.weights.is_empty()).map(|m| m.round))
        .collect();
    rounds.sort_unstable();
    rounds.dedup();
    for t in rounds {
        let mut w = csv::Writer::from_path(dir.join(format!("weights_round_{t}.csv")))?;
        w.write_record(["seed", "client", "neighbor", "weight"])?;
        for s in &summary.seeds {
            for m in s.rounds.iter().filter(|m| m.round == t) {
                for &(client, neighbor, weight) in &m.weights {
                    w.write_record([
                        s.seed.to_string(),
                        client.to_string(),
                        neighbor.to_string(),
                        weight.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Numbers re-derived from `metrics.csv` next to the stored summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub derived: SummaryNumbers,
    pub stored: SummaryNumbers,
}

impl Report {
    pub fn matches(&self) -> bool {
        self.derived == self.stored
    }
}

/// Recomputes the per-seed finals and cross-seed means of a run directory.
pub fn report(dir: impl AsRef<Path>) -> Result<Report> {
    let dir = dir.as_ref();
    let rows = read_metrics_csv(dir.join("metrics.csv"))?;
    let mut finals: Vec<(u64, usize, Vec<(NodeId, f64)>)> = Vec::new();
    for row in &rows {
        match finals.iter_mut().find(|f| f.0 == row.seed) {
            Some(f) if row.round > f.1 => *f = (row.seed, row.round, vec![(row.client, row.acc)]),
            Some(f) if row.round == f.1 => f.2.push((row.client, row.acc)),
            Some(_) => {}
            None => finals.push((row.seed, row.round, vec![(row.client, row.acc)])),
        }
    }
    let derived = SummaryNumbers::from_finals(finals)?;
    let doc: SummaryDoc = serde_json::from_str(&fs::read_to_string(dir.join("summary.json"))?)?;
    let config: RunConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    Ok(Report {
        dir: dir.to_path_buf(),
        config,
        derived,
        stored: doc.numbers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_experiment, RunOptions};

    fn small_run(export_weights: bool) -> RunSummary {
        let mut c = RunConfig::from_json(
            r#"{"name": "t", "dataset": {"kind": "synthetic", "classes": 3, "dim": 3, "n_per_class": 20},
                "topology": {"num_benign": 3, "num_malicious": 1},
                "aggregator": {"kind": "dfedreweighting", "tpm": "loss_on_aux", "crs": {"kind": "loss_clip"}},
                "attack": {"kind": "gaussian"},
                "rounds": 7, "eval_every": 3, "seeds": [1, 2]}"#,
        )
        .unwrap();
        c.export_weights = export_weights;
        run_experiment(&c, RunOptions::default()).unwrap()
    }

    #[test]
    fn metrics_csv_layout() {
        let s = small_run(false);
        let mut buf = Vec::new();
        write_metrics_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("round,seed,client,acc,loss,mean_acc,var"));
        // rounds 0, 3, 6, 7 for two seeds and three clients
        assert_eq!(lines.count(), 4 * 2 * 3);
    }

    #[test]
    fn report_reproduces_summary() {
        let s = small_run(true);
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &s).unwrap();
        for f in ["config.json", "topology.json", "metrics.csv", "summary.json", "weights_round_3.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(!dir.path().join("weights_round_0.csv").exists());
        let r = report(dir.path()).unwrap();
        assert!(r.matches());
        assert_eq!(r.derived, s.numbers);
        assert_eq!(r.config, s.config);
    }

    #[test]
    fn weights_files_sum_to_one_per_client() {
        let s = small_run(true);
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &s).unwrap();
        let mut r = csv::Reader::from_path(dir.path().join("weights_round_6.csv")).unwrap();
        let mut sums = std::collections::BTreeMap::new();
        for rec in r.records() {
            let rec = rec.unwrap();
            let key = (rec[0].to_string(), rec[1].to_string());
            *sums.entry(key).or_insert(0.0) += rec[3].parse::<f64>().unwrap();
        }
        assert_eq!(sums.len(), 6);
        for v in sums.values() {
            assert!((v - 1.0f64).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_metrics_csv(&p), Err(Error::Format { .. })));
    }
}
