use anyhow::Result;
use hew_core::solver::kkt_threshold_weights;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{unif, Check, Tracker};

const INSTANCES: usize = 1000;
const GRID: usize = 1000;

/// `-sum mu_i w_i + (L/2) sum kappa_i w_i^2`.
pub(super) fn block_objective(mu: &[f64], kappa: &[f64], l: f64, w: &[f64]) -> f64 {
    (0..w.len()).map(|i| -mu[i] * w[i] + 0.5 * l * kappa[i] * w[i] * w[i]).sum()
}

/// Exact minimiser of a separable objective over the simplex grid with step `1/GRID`,
/// found by a min-plus dynamic program over the nodes (equivalent to enumerating the grid).
pub(super) fn grid_minimum(mu: &[f64], kappa: &[f64], l: f64) -> Vec<f64> {
    let s = mu.len();
    let cost = |i: usize, k: usize| {
        let w = k as f64 / GRID as f64;
        -mu[i] * w + 0.5 * l * kappa[i] * w * w
    };
    let mut best: Vec<f64> = (0..=GRID).map(|k| cost(0, k)).collect();
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(s);
    choice.push((0..=GRID).collect());
    for i in 1..s {
        let ci: Vec<f64> = (0..=GRID).map(|k| cost(i, k)).collect();
        let mut next = vec![f64::INFINITY; GRID + 1];
        let mut pick = vec![0; GRID + 1];
        for total in 0..=GRID {
            for j in 0..=total {
                let v = best[total - j] + ci[j];
                if v < next[total] {
                    next[total] = v;
                    pick[total] = j;
                }
            }
        }
        best = next;
        choice.push(pick);
    }
    let mut w = vec![0.0; s];
    let mut left = GRID;
    for i in (0..s).rev() {
        let k = if i == 0 { left } else { choice[i][left] };
        w[i] = k as f64 / GRID as f64;
        left -= k;
    }
    w
}

struct Instance {
    mu: Vec<f64>,
    kappa: Vec<f64>,
    l: f64,
}

pub fn run() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x44c7);
    let instances: Vec<Instance> = (0..INSTANCES)
        .map(|_| {
            let s = rng.random_range(1..=5);
            Instance {
                mu: (0..s).map(|_| unif(&mut rng, -1.0, 1.0)).collect(),
                kappa: (0..s).map(|_| unif(&mut rng, 0.2, 0.5)).collect(),
                l: unif(&mut rng, 0.5, 2.0),
            }
        })
        .collect();
    let results: Vec<_> = instances
        .par_iter()
        .map(|inst| -> Result<_> {
            let (w, lambda) = kkt_threshold_weights(&inst.mu, &inst.kappa, inst.l)?;
            Ok((w, lambda, grid_minimum(&inst.mu, &inst.kappa, inst.l)))
        })
        .collect::<Result<_>>()?;

    let mut feas = Tracker::new("simplex feasibility  [max(|sum w - 1|, -min w)]", 1e-12);
    let mut wdist = Tracker::new("agreement with grid minimiser  [max |w - w_grid|_inf]", 1e-3);
    let mut obj = Tracker::new("objective vs grid  [max J(w_grid) - J(w)]", 1e-6);
    let mut below = Tracker::new("threshold weights never worse than grid  [max J(w) - J(w_grid)]", 1e-12);
    let mut stat = Tracker::new("stationarity on support  [max |mu_i - L kappa_i w_i - lambda|]", 1e-10);
    let mut compl = Tracker::new("complementarity off support  [max (mu_i - lambda)_+]", 1e-10);
    for (k, (inst, (w, lambda, wg))) in instances.iter().zip(&results).enumerate() {
        let ctx = || format!("instance {k}: mu={:?}, kappa={:?}, L={}", inst.mu, inst.kappa, inst.l);
        let sum: f64 = w.iter().sum();
        let neg = w.iter().fold(0.0f64, |m, &x| m.max(-x));
        feas.record((sum - 1.0).abs().max(neg), ctx);
        wdist.record(w.iter().zip(wg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max), ctx);
        let jw = block_objective(&inst.mu, &inst.kappa, inst.l, w);
        let jg = block_objective(&inst.mu, &inst.kappa, inst.l, wg);
        obj.record(jg - jw, ctx);
        below.record(jw - jg, ctx);
        for i in 0..w.len() {
            if w[i] > 0.0 {
                stat.record((inst.mu[i] - inst.l * inst.kappa[i] * w[i] - lambda).abs(), ctx);
            } else {
                compl.record((inst.mu[i] - lambda).max(0.0), ctx);
            }
        }
    }
    Ok(vec![feas, wdist, obj, below, stat, compl].into_iter().map(Tracker::finish).collect())
}
