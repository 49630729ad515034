//! Per-(method, seed) runs, JSONL metrics and cross-seed summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hew_core::algorithms::{Federation, MethodRunner};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodEntry};
use crate::prepare::{prepare, Prepared};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperRecord {
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "Q")]
    pub q: f64,
}

/// One line of a metrics stream, written after each completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: String,
    pub seed: u64,
    /// Number of completed rounds (starts at 1).
    pub round: usize,
    pub comm_cumulative: u64,
    pub train_objective: f64,
    pub train_gap: f64,
    pub test_accuracy: f64,
    #[serde(rename = "weight_mass_by_H")]
    pub weight_mass_by_h: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<UpperRecord>,
}

/// Records of one run; `error` is set when the run stopped early.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub method: String,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub error: Option<String>,
}

pub fn mass_by_horizon(weights: &[f64], horizons: &[usize]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for (w, &h) in weights.iter().zip(horizons) {
        *out.entry(h).or_insert(0.0) += w;
    }
    out
}

/// Run one method from the zero model for `rounds` rounds.
pub fn run_single(prep: &Prepared, cfg: &ExperimentConfig, entry: &MethodEntry, seed: u64, rounds: usize) -> RunOutcome {
    let method = entry.kind.name().to_string();
    let mut records = Vec::with_capacity(rounds);
    let result = (|| -> Result<()> {
        let spec = prep.method_spec(cfg, entry)?;
        let fed = Federation::new(&prep.model, prep.horizons.clone(), prep.batches.clone(), prep.ball.l_hat, seed)?;
        let mut runner = MethodRunner::new(&fed, spec, vec![0.0; prep.dim()])?;
        let mut comm = 0u64;
        for round in 1..=rounds {
            let rec = runner.step()?;
            comm += rec.metrics.comm;
            let x = &runner.state().x;
            let (train_objective, train_gap) = prep.train_objective(x);
            if !train_objective.is_finite() {
                bail!("training objective became non-finite at round {round}");
            }
            records.push(MetricsRecord {
                method: method.clone(),
                seed,
                round,
                comm_cumulative: comm,
                train_objective,
                train_gap,
                test_accuracy: prep.test_accuracy(x),
                weight_mass_by_h: mass_by_horizon(&rec.metrics.weights, &prep.horizons),
                certificate: rec.upper.map(|u| UpperRecord { u: u.u, q: u.q }),
            });
        }
        Ok(())
    })();
    RunOutcome { method, seed, records, error: result.err().map(|e| format!("{e:#}")) }
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), k + 1)))
        .collect()
}

/// Every `*.jsonl` stream in a directory, in file-name order.
pub fn read_metrics_dir(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_jsonl(&f)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub comm_cumulative: u64,
    pub train_objective: MeanStd,
    pub train_gap: MeanStd,
    pub test_accuracy: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    /// Only rounds reached by every seed are aggregated.
    pub rounds: Vec<RoundSummary>,
    /// Seed-averaged weight mass per horizon after the last aggregated round.
    #[serde(rename = "final_weight_mass_by_H")]
    pub final_weight_mass_by_h: BTreeMap<usize, f64>,
}

/// Aggregate raw records by method (alphabetical) and round.
pub fn summarize(records: &[MetricsRecord]) -> Vec<MethodSummary> {
    let mut by_method: BTreeMap<&str, BTreeMap<u64, Vec<&MetricsRecord>>> = BTreeMap::new();
    for r in records {
        by_method.entry(&r.method).or_default().entry(r.seed).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(method, runs)| {
            let mut runs: Vec<(u64, Vec<&MetricsRecord>)> = runs.into_iter().collect();
            for (_, rs) in &mut runs {
                rs.sort_by_key(|r| r.round);
            }
            let len = runs.iter().map(|(_, rs)| rs.len()).min().unwrap_or(0);
            let rounds = (0..len)
                .map(|k| {
                    let at: Vec<&MetricsRecord> = runs.iter().map(|(_, rs)| rs[k]).collect();
                    let col = |f: fn(&MetricsRecord) -> f64| MeanStd::of(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
                    RoundSummary {
                        round: at[0].round,
                        comm_cumulative: at[0].comm_cumulative,
                        train_objective: col(|r| r.train_objective),
                        train_gap: col(|r| r.train_gap),
                        test_accuracy: col(|r| r.test_accuracy),
                    }
                })
                .collect();
            let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
            if len > 0 {
                for (_, rs) in &runs {
                    for (&h, &m) in &rs[len - 1].weight_mass_by_h {
                        *mass.entry(h).or_insert(0.0) += m / runs.len() as f64;
                    }
                }
            }
            MethodSummary {
                method: method.to_string(),
                seeds: runs.iter().map(|(s, _)| *s).collect(),
                rounds,
                final_weight_mass_by_h: mass,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunFailure {
    pub method: String,
    pub seed: u64,
    pub completed_rounds: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub methods: Vec<MethodSummary>,
    pub failures: Vec<RunFailure>,
}

/// Result of `run_experiment`: the run directory and the written summary.
pub struct RunReport {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Run every (method, seed) pair in parallel and write the metrics streams and summary.
/// Failed runs keep their partial streams and are listed in the summary.
pub fn run_experiment(cfg: &ExperimentConfig, prepared: Option<&Prepared>) -> Result<RunReport> {
    cfg.validate()?;
    let owned;
    let prep = match prepared {
        Some(p) => p,
        None => {
            owned = prepare(cfg)?;
            &owned
        }
    };
    let dir = cfg.run_dir()?;
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = cfg.hash()?;
    std::fs::write(dir.join("config.toml"), format!("# config_hash = \"{hash}\"\n{}", cfg.to_toml()?))?;
    let jobs: Vec<(MethodEntry, u64)> =
        cfg.methods.iter().flat_map(|m| cfg.seeds.iter().map(move |&s| (*m, s))).collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|(m, s)| {
            let out = run_single(prep, cfg, m, *s, cfg.rounds);
            let path = dir.join(format!("{}_seed{}.jsonl", out.method, out.seed));
            if let Err(e) = write_jsonl(&path, &out.records) {
                return RunOutcome { error: Some(format!("writing {}: {e:#}", path.display())), ..out };
            }
            out
        })
        .collect();
    let failures: Vec<RunFailure> = outcomes
        .iter()
        .filter_map(|o| {
            o.error.as_ref().map(|e| RunFailure {
                method: o.method.clone(),
                seed: o.seed,
                completed_rounds: o.records.len(),
                error: e.clone(),
            })
        })
        .collect();
    for f in &failures {
        log::error!("{} seed {} stopped after {} rounds: {}", f.method, f.seed, f.completed_rounds, f.error);
    }
    let all: Vec<MetricsRecord> = outcomes.into_iter().flat_map(|o| o.records).collect();
    let summary = RunSummary { name: cfg.name.clone(), config_hash: hash, methods: summarize(&all), failures };
    std::fs::write(dir.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
    Ok(RunReport { dir, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(method: &str, seed: u64, round: usize, obj: f64) -> MetricsRecord {
        MetricsRecord {
            method: method.into(),
            seed,
            round,
            comm_cumulative: 10 * round as u64,
            train_objective: obj,
            train_gap: obj - 1.0,
            test_accuracy: 0.5,
            weight_mass_by_h: BTreeMap::from([(1, 0.25), (4, 0.75)]),
            certificate: None,
        }
    }

    #[test]
    fn summary_matches_raw_records() {
        let recs = vec![rec("a", 1, 1, 3.0), rec("a", 2, 1, 5.0), rec("a", 1, 2, 2.0), rec("a", 2, 2, 2.0)];
        let s = summarize(&recs);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].rounds[0].train_objective, MeanStd { mean: 4.0, std: 1.0 });
        assert_eq!(s[0].rounds[1].train_objective, MeanStd { mean: 2.0, std: 0.0 });
        assert_eq!(s[0].final_weight_mass_by_h[&4], 0.75);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let recs = vec![rec("fedavg", 3, 1, 0.5), rec("fedavg", 3, 2, 0.25)];
        write_jsonl(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"weight_mass_by_H\":{\"1\":0.25,\"4\":0.75}"));
        assert_eq!(read_jsonl(&p).unwrap(), recs);
    }
}
