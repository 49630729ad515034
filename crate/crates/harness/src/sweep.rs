//! Short tuning sweeps with selection by mean final training objective.

use anyhow::Result;
use hew_core::algorithms::MethodKind;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MethodEntry};
use crate::prepare::{prepare, Prepared};
use crate::runner::run_single;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub vartheta: Vec<f64>,
    pub lambda_ratio: Vec<f64>,
    pub lr_scale: Vec<f64>,
    pub prox_mu: Vec<f64>,
    pub rounds: usize,
    /// Leading seeds of the configuration used for tuning.
    pub seeds: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            vartheta: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            lambda_ratio: vec![1.1, 1.25, 1.5, 1.75, 2.0],
            lr_scale: vec![0.2, 0.4, 0.8, 1.6],
            prox_mu: vec![0.01, 0.1],
            rounds: 20,
            seeds: 3,
        }
    }
}

/// Candidate entries for one method in lexicographic grid order.
///
/// Amplitude methods vary `(vartheta, Lambda/L)`; the fixed-weight variant never
/// uses `Lambda` and only varies `vartheta`. Certificate-mode HEW draws its
/// amplitudes from the certificate box, so it has a single point.
pub fn grid_points(kind: MethodKind, grid: &SweepGrid, certificate_mode: bool) -> Vec<MethodEntry> {
    let base = MethodEntry::new(kind);
    match kind {
        MethodKind::Hew if certificate_mode => vec![base],
        MethodKind::HewFixed => grid.vartheta.iter().map(|&v| MethodEntry { vartheta: v, ..base }).collect(),
        MethodKind::Hew | MethodKind::PostHet | MethodKind::PostHom => grid
            .vartheta
            .iter()
            .flat_map(|&v| grid.lambda_ratio.iter().map(move |&r| MethodEntry { vartheta: v, lambda_ratio: r, ..base }))
            .collect(),
        MethodKind::FedProx => grid
            .lr_scale
            .iter()
            .flat_map(|&lr| grid.prox_mu.iter().map(move |&mu| MethodEntry { lr_scale: lr, prox_mu: mu, ..base }))
            .collect(),
        _ => grid.lr_scale.iter().map(|&lr| MethodEntry { lr_scale: lr, ..base }).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub entry: MethodEntry,
    /// Mean over seeds; `None` when any seed failed or ended non-finite.
    pub final_train_objective: Option<f64>,
    pub final_test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSelection {
    pub kind: MethodKind,
    pub points: Vec<SweepPoint>,
    pub selected: MethodEntry,
    /// True when no grid point produced a finite objective; the first point is kept.
    pub all_failed: bool,
}

/// First point with the smallest finite objective.
pub fn select(points: &[SweepPoint]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in points.iter().enumerate() {
        if let Some(v) = p.final_train_objective.filter(|v| v.is_finite()) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// Evaluate every grid point of every configured method and pick one entry per method.
pub fn hyperparameter_sweep(cfg: &ExperimentConfig, prepared: Option<&Prepared>, grid: &SweepGrid) -> Result<Vec<MethodSelection>> {
    let owned;
    let prep = match prepared {
        Some(p) => p,
        None => {
            owned = prepare(cfg)?;
            &owned
        }
    };
    let seeds: Vec<u64> = cfg.seeds.iter().copied().take(grid.seeds.max(1)).collect();
    let mut out = Vec::new();
    for m in &cfg.methods {
        let entries = grid_points(m.kind, grid, cfg.certificate_mode);
        let points: Vec<SweepPoint> = entries
            .par_iter()
            .map(|e| {
                let runs: Vec<_> = seeds.par_iter().map(|&s| run_single(prep, cfg, e, s, grid.rounds)).collect();
                let finals: Option<Vec<(f64, f64)>> = runs
                    .iter()
                    .map(|r| match (&r.error, r.records.last()) {
                        (None, Some(last)) => Some((last.train_objective, last.test_accuracy)),
                        _ => None,
                    })
                    .collect();
                let n = seeds.len() as f64;
                let obj = finals.as_ref().map(|f| f.iter().map(|x| x.0).sum::<f64>() / n).filter(|v| v.is_finite());
                let acc = finals.as_ref().map(|f| f.iter().map(|x| x.1).sum::<f64>() / n);
                SweepPoint { entry: *e, final_train_objective: obj, final_test_accuracy: acc }
            })
            .collect();
        let (selected, all_failed) = match select(&points) {
            Some(k) => (points[k].entry, false),
            None => {
                log::warn!("every sweep point for {} failed; keeping the first grid point", m.kind);
                (entries[0], true)
            }
        };
        out.push(MethodSelection { kind: m.kind, points, selected, all_failed });
    }
    Ok(out)
}

/// Copy of `cfg` with each method replaced by its selected entry.
pub fn tuned_config(cfg: &ExperimentConfig, selections: &[MethodSelection]) -> ExperimentConfig {
    let mut tuned = cfg.clone();
    for m in &mut tuned.methods {
        if let Some(s) = selections.iter().find(|s| s.kind == m.kind) {
            *m = s.selected;
        }
    }
    tuned
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(v: Option<f64>, lr: f64) -> SweepPoint {
        SweepPoint {
            entry: MethodEntry { lr_scale: lr, ..MethodEntry::new(MethodKind::FedAvg) },
            final_train_objective: v,
            final_test_accuracy: None,
        }
    }

    #[test]
    fn grid_sizes() {
        let g = SweepGrid::default();
        assert_eq!(grid_points(MethodKind::Hew, &g, false).len(), 25);
        assert_eq!(grid_points(MethodKind::Hew, &g, true).len(), 1);
        assert_eq!(grid_points(MethodKind::HewFixed, &g, false).len(), 5);
        assert_eq!(grid_points(MethodKind::FedProx, &g, false).len(), 8);
        assert_eq!(grid_points(MethodKind::Mbsgd, &g, false).len(), 4);
        let hew = grid_points(MethodKind::Hew, &g, false);
        assert_eq!((hew[1].vartheta, hew[1].lambda_ratio), (0.5, 1.25));
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select(&[point(Some(1.0), 0.2)]), Some(0));
        assert_eq!(select(&[point(None, 0.2), point(Some(3.0), 0.4)]), Some(1));
        assert_eq!(select(&[point(Some(f64::INFINITY), 0.2), point(Some(3.0), 0.4)]), Some(1));
        assert_eq!(select(&[point(Some(2.0), 0.2), point(Some(2.0), 0.4)]), Some(0));
        assert_eq!(select(&[point(None, 0.2)]), None);
    }
}
