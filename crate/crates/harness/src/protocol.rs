//! The full tuning-and-evaluation pipeline over datasets and client regimes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use hew_core::algorithms::MethodKind;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig, Regime};
use crate::plot::emit_plots;
use crate::prepare::prepare;
use crate::runner::{read_metrics_dir, run_experiment};
use crate::sweep::{hyperparameter_sweep, tuned_config, MethodSelection, SweepGrid};

#[derive(Debug, Clone)]
pub struct ProtocolOptions {
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub datasets: Vec<String>,
    pub regimes: Vec<Regime>,
    pub grid: SweepGrid,
}

impl ProtocolOptions {
    pub fn new(data_dir: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            out: out.into(),
            datasets: vec!["covertype".into(), "mnist".into()],
            regimes: Regime::ALL.to_vec(),
            grid: SweepGrid::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeOutcome {
    pub dataset: String,
    pub regime: Regime,
    pub run_dir: PathBuf,
    pub selections: Vec<MethodSelection>,
    pub failed_runs: usize,
    pub plots: Vec<PathBuf>,
    pub seconds: f64,
}

/// Final training objectives of HEW and HEW-Fixed in one regime, per seed and averaged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HewComparison {
    pub dataset: String,
    pub regime: Regime,
    pub seeds: Vec<u64>,
    pub hew: Vec<f64>,
    pub hew_fixed: Vec<f64>,
    pub hew_mean: f64,
    pub hew_fixed_mean: f64,
    /// Whether HEW's mean final objective is at most HEW-Fixed's.
    pub observed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub outcomes: Vec<RegimeOutcome>,
    pub comparisons: Vec<HewComparison>,
    pub seconds: f64,
}

pub fn data_present(dataset: &str, dir: &Path) -> bool {
    match DatasetSpec::from_data_dir(dataset, dir) {
        Ok(DatasetSpec::Covertype { path }) => path.exists(),
        Ok(DatasetSpec::Mnist { images, labels }) => images.exists() && labels.exists(),
        _ => false,
    }
}

fn compare(dataset: &str, regime: Regime, dir: &Path) -> Result<Option<HewComparison>> {
    let records = read_metrics_dir(dir)?;
    let finals = |kind: MethodKind| -> Vec<(u64, f64)> {
        let mut by_seed: std::collections::BTreeMap<u64, (usize, f64)> = Default::default();
        for r in records.iter().filter(|r| r.method == kind.name()) {
            let e = by_seed.entry(r.seed).or_insert((0, f64::NAN));
            if r.round >= e.0 {
                *e = (r.round, r.train_objective);
            }
        }
        by_seed.into_iter().map(|(s, (_, v))| (s, v)).collect()
    };
    let hew = finals(MethodKind::Hew);
    let fixed = finals(MethodKind::HewFixed);
    if hew.is_empty() || fixed.is_empty() {
        return Ok(None);
    }
    let mean = |v: &[(u64, f64)]| v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64;
    let (hm, fm) = (mean(&hew), mean(&fixed));
    Ok(Some(HewComparison {
        dataset: dataset.to_string(),
        regime,
        seeds: hew.iter().map(|x| x.0).collect(),
        hew: hew.iter().map(|x| x.1).collect(),
        hew_fixed: fixed.iter().map(|x| x.1).collect(),
        hew_mean: hm,
        hew_fixed_mean: fm,
        observed: hm <= fm,
    }))
}

/// Sweep, run and plot every requested (dataset, regime) pair; writes `protocol_report.json`.
pub fn run_protocol(opts: &ProtocolOptions) -> Result<ProtocolReport> {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut comparisons = Vec::new();
    for ds_name in &opts.datasets {
        let dataset = DatasetSpec::from_data_dir(ds_name, &opts.data_dir)?;
        for &regime in &opts.regimes {
            let t0 = Instant::now();
            let mut cfg = ExperimentConfig::protocol(dataset.clone(), regime, &opts.out);
            cfg.cache_dir = Some(opts.out.join("cache"));
            log::info!("{}: preparing", cfg.name);
            let prep = prepare(&cfg)?;
            log::info!("{}: sweeping", cfg.name);
            let selections = hyperparameter_sweep(&cfg, Some(&prep), &opts.grid)?;
            let tuned = tuned_config(&cfg, &selections);
            log::info!("{}: running tuned methods", cfg.name);
            let report = run_experiment(&tuned, Some(&prep))?;
            std::fs::write(report.dir.join("sweep.json"), serde_json::to_vec_pretty(&selections)?)?;
            let plots = emit_plots(&report.dir)?;
            if let Some(c) = compare(ds_name, regime, &report.dir)? {
                comparisons.push(c);
            }
            outcomes.push(RegimeOutcome {
                dataset: ds_name.clone(),
                regime,
                run_dir: report.dir,
                selections,
                failed_runs: report.summary.failures.len(),
                plots,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }
    }
    let report = ProtocolReport { outcomes, comparisons, seconds: start.elapsed().as_secs_f64() };
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join("protocol_report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
