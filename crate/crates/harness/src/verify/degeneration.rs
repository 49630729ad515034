use anyhow::Result;
use hew_core::algorithms::{hew_round, post_het_round, post_hom_round, Federation, ServerState};
use hew_core::linalg::{axpy, dist, norm};
use hew_core::models::{FiniteSumModel, SyntheticConfig, SyntheticQuadratic};
use hew_core::solver::{ControlPair, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{unif, Check, Tracker};

const ROUNDS: usize = 50;
const CLIENTS: usize = 4;

fn config(n: usize, seed: u64) -> SyntheticConfig {
    SyntheticConfig {
        n_clients: n,
        components_per_client: vec![5; n],
        dim: 6,
        eig_range: (0.1, 2.0),
        offset_scale: 1.0,
        client_shift: 1.0,
        shared_client_hessian: false,
        seed,
    }
}

fn full_batches(m: &dyn FiniteSumModel) -> Vec<usize> {
    (0..m.n_clients()).map(|i| m.component_count(i)).collect()
}

fn rel_err(x: &[f64], z: &[f64]) -> f64 {
    dist(x, z) / norm(z).max(1.0)
}

/// `H` centralized gradient steps of size `vartheta / (L H)`.
fn microsteps(model: &dyn FiniteSumModel, z: &mut [f64], vartheta: f64, l: f64, h: usize) {
    for _ in 0..h {
        let g = model.gradient(z);
        axpy(-vartheta / (l * h as f64), &g, z);
    }
}

#[derive(Clone, Copy)]
enum Method {
    Hew,
    PostHet,
    PostHom,
}

pub fn run() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xde9e);
    let base = SyntheticQuadratic::random(&config(1, 11))?;
    let model = SyntheticQuadratic::replicate(base.client_components(0).to_vec(), CLIENTS, 6)?;
    let l = model.exact_smoothness();
    let solver = SolverConfig::default();
    let active: Vec<usize> = (0..CLIENTS).collect();
    let x0: Vec<f64> = (0..6).map(|k| 2.0 - 0.5 * k as f64).collect();
    let mut out = Vec::new();
    for (method, label) in [(Method::Hew, "HEW"), (Method::PostHet, "PostHet"), (Method::PostHom, "PostHom")] {
        for h in [1usize, 4] {
            let mut tr = Tracker::new(
                format!("{label}, identical clients, H = {h}: iterate vs centralized microsteps  [max rel dev]"),
                1e-10,
            );
            for vartheta in [0.2, 0.9] {
                let fed = Federation::new(&model, vec![h; CLIENTS], full_batches(&model), l, 3)?;
                let mut state = ServerState::with_exact_controls(&model, x0.clone());
                let mut z = x0.clone();
                for round in 0..ROUNDS {
                    match method {
                        Method::Hew => {
                            // Any simplex weights give the same endpoint under symmetry.
                            let raw: Vec<f64> = (0..CLIENTS).map(|_| unif(&mut rng, 0.1, 1.0)).collect();
                            let tot: f64 = raw.iter().sum();
                            let pair = ControlPair { w: raw.iter().map(|r| r / tot).collect(), theta: vec![vartheta; CLIENTS] };
                            hew_round(&mut state, &fed, &active, &pair, 0)?;
                        }
                        Method::PostHet => {
                            post_het_round(&mut state, &fed, &active, vartheta, 1.5 * l, &solver)?;
                        }
                        Method::PostHom => {
                            post_hom_round(&mut state, &fed, vartheta, 1.5 * l, &solver)?;
                        }
                    }
                    microsteps(&model, &mut z, vartheta, l, h);
                    let e = rel_err(&state.x, &z);
                    tr.record(e, || format!("vartheta={vartheta}, round {round}"));
                }
            }
            out.push(tr.finish());
        }
    }

    // H = 1 with node-specific amplitudes: one round from exact controls is a single
    // gradient step with the effective amplitude, even for heterogeneous clients.
    let hetero = SyntheticQuadratic::random(&config(CLIENTS, 12))?;
    let lh = hetero.exact_smoothness();
    let fed = Federation::new(&hetero, vec![1; CLIENTS], full_batches(&hetero), lh, 5)?;
    let mut eff = Tracker::new("HEW at H = 1, per-node amplitudes: step with sum w_i theta_i  [max rel dev]", 1e-10);
    for trial in 0..50 {
        let x: Vec<f64> = (0..6).map(|_| unif(&mut rng, -3.0, 3.0)).collect();
        let raw: Vec<f64> = (0..CLIENTS).map(|_| rng.random::<f64>() + 0.05).collect();
        let tot: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|r| r / tot).collect();
        let theta: Vec<f64> = (0..CLIENTS).map(|_| unif(&mut rng, 0.05, 1.0)).collect();
        let theta_eff: f64 = w.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let mut state = ServerState::with_exact_controls(&hetero, x.clone());
        hew_round(&mut state, &fed, &active, &ControlPair { w, theta }, 0)?;
        let mut z = x.clone();
        axpy(-theta_eff / lh, &hetero.gradient(&x), &mut z);
        eff.record(rel_err(&state.x, &z), || format!("trial {trial}"));
    }
    out.push(eff.finish());
    Ok(out)
}
