use anyhow::Result;
use hew_core::algorithms::{Federation, MethodKind, MethodRunner};
use hew_core::linalg::{axpy, dist, mean_of, norm, rel_dev};
use hew_core::models::MinibatchOracle;

use super::comm::smoke_config;
use super::{Check, Tracker};
use crate::config::{MethodEntry, Regime};
use crate::prepare::prepare;

const ROUNDS: usize = 10;
const TOL: f64 = 1e-10;

/// Replayed local path: displacement and mean of the sampled gradients.
fn replay(fed: &Federation, i: usize, x: &[f64], eta: f64, shift: Option<&[f64]>, round: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let oracle = MinibatchOracle::new(fed.model, i, fed.batches[i], fed.seed)?;
    let mut y = x.to_vec();
    let mut gsum = vec![0.0; x.len()];
    for step in 0..fed.horizons[i] {
        let mut g = oracle.gradient(fed.model, round as u64, step as u64, &y);
        axpy(1.0, &g, &mut gsum);
        if let Some(s) = shift {
            axpy(1.0, s, &mut g);
        }
        axpy(-eta, &g, &mut y);
    }
    let h = fed.horizons[i] as f64;
    Ok((y.iter().zip(x).map(|(a, b)| a - b).collect(), gsum.iter().map(|g| g / h).collect()))
}

pub fn run() -> Result<Vec<Check>> {
    let mut cfg = smoke_config(Regime::HetRandom);
    cfg.methods = [MethodKind::Hew, MethodKind::HewFixed, MethodKind::PostHet, MethodKind::Scaffold, MethodKind::PostHom]
        .into_iter()
        .map(|k| MethodEntry { vartheta: 0.2, ..MethodEntry::new(k) })
        .collect();
    let prep = prepare(&cfg)?;
    let n = cfg.n_clients;
    let fed = Federation::new(&prep.model, prep.horizons.clone(), prep.batches.clone(), prep.ball.l_hat, 9)?;
    let mut server = Tracker::new("server-average identity c = mean_i c_i after every corrected round  [max rel dev]", TOL);
    let mut control = Tracker::new("control-variate identity c_i+ = mean local gradient  [max rel dev, replayed]", TOL);
    let mut reported = Tracker::new("control-variate residual reported by the round  [max]", TOL);
    let mut update = Tracker::new("server step equals the weighted replayed displacements  [max rel dev]", TOL);
    let mut hom = Tracker::new("uniform displacement d(uniform) = -(vartheta/L) g_bar  [max rel dev, replayed]", TOL);
    let mut hom_reported = Tracker::new("uniform displacement identity reported by the round  [max]", TOL);
    for m in &cfg.methods {
        let spec = prep.method_spec(&cfg, m)?;
        let mut runner = MethodRunner::new(&fed, spec, vec![0.0; prep.dim()])?;
        for round in 0..ROUNDS {
            let pre = runner.state().clone();
            let rec = runner.step()?;
            let post = runner.state();
            let ctx = || format!("{} round {round}", m.kind);
            let mut step = vec![0.0; pre.x.len()];
            if m.kind == MethodKind::PostHom {
                let vt = m.vartheta;
                let mut d_uniform = vec![0.0; pre.x.len()];
                let mut g_bar = vec![0.0; pre.x.len()];
                for i in 0..n {
                    let eta = vt / (fed.l * fed.horizons[i] as f64);
                    let (delta, gmean) = replay(&fed, i, &pre.x, eta, None, round)?;
                    axpy(1.0 / n as f64, &delta, &mut d_uniform);
                    axpy(1.0 / n as f64, &gmean, &mut g_bar);
                    axpy(rec.metrics.weights[i], &delta, &mut step);
                }
                let predicted: Vec<f64> = g_bar.iter().map(|g| -vt / fed.l * g).collect();
                hom.record(rel_dev(&d_uniform, &predicted), ctx);
                hom_reported.record(rec.metrics.hom_identity.unwrap_or(f64::NAN), ctx);
            } else {
                let thetas: Vec<f64> = match &rec.metrics.thetas {
                    Some(t) => t.clone(),
                    None => (0..n).map(|i| m.lr_scale * fed.horizons[i] as f64).collect(),
                };
                for i in 0..n {
                    let eta = thetas[i] / (fed.l * fed.horizons[i] as f64);
                    let shift: Vec<f64> = pre.c.iter().zip(&pre.c_i[i]).map(|(a, b)| a - b).collect();
                    let (delta, gmean) = replay(&fed, i, &pre.x, eta, Some(&shift), round)?;
                    control.record(dist(&post.c_i[i], &gmean) / (1.0 + norm(&gmean)), ctx);
                    axpy(rec.metrics.weights[i], &delta, &mut step);
                }
                let avg = mean_of(&post.c_i, post.c.len());
                server.record(dist(&post.c, &avg) / (1.0 + norm(&avg)), ctx);
                reported.record(rec.metrics.control_identity.unwrap_or(f64::NAN), ctx);
            }
            let actual: Vec<f64> = post.x.iter().zip(&pre.x).map(|(a, b)| a - b).collect();
            update.record(dist(&actual, &step) / (1.0 + norm(&step)), ctx);
        }
    }
    Ok(vec![server, control, reported, update, hom, hom_reported].into_iter().map(Tracker::finish).collect())
}
