use anyhow::Result;
use hew_core::algorithms::MethodKind;

use super::{Check, Tracker};
use crate::config::{DatasetSpec, ExperimentConfig, MethodEntry, Regime};
use crate::prepare::prepare;
use crate::runner::run_single;

const ROUNDS: usize = 5;

/// Scalars per round written out from the transmitted objects, independent of the
/// method's own accounting: `x` (and `c` for corrected methods) down, one endpoint
/// (plus a control increment) per node up, one weight per node where the server
/// assigns node-specific weights, and `nu` uploaded proxies.
fn expected(kind: MethodKind, s: u64, d: u64, nu: u64) -> u64 {
    match kind {
        MethodKind::Hew | MethodKind::HewFixed | MethodKind::PostHet => 2 * d + 2 * d * s + s + nu,
        MethodKind::PostHom => d + d * s + s,
        MethodKind::Scaffold => 2 * d + 2 * d * s,
        _ => d + d * s,
    }
}

pub fn smoke_config(regime: Regime) -> ExperimentConfig {
    let ds = DatasetSpec::Synthetic { examples: 600, features: 5, classes: 3, separation: 2.0, seed: 7 };
    let mut cfg = ExperimentConfig::protocol(ds, regime, std::env::temp_dir());
    cfg.n_clients = 6;
    cfg.rounds = ROUNDS;
    cfg.batch = 8;
    cfg.seeds = vec![1];
    cfg.reference_max_iter = 2000;
    cfg.certificate.theta_lo = 0.05;
    cfg.methods = MethodKind::ALL.iter().map(|&k| MethodEntry { vartheta: 0.2, ..MethodEntry::new(k) }).collect();
    cfg
}

pub fn run() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for regime in Regime::ALL {
        for certificate_mode in [false, true] {
            let mut cfg = smoke_config(regime);
            cfg.certificate_mode = certificate_mode;
            cfg.certificate.upload_proxies = certificate_mode;
            if certificate_mode {
                cfg.methods.retain(|m| m.kind == MethodKind::Hew);
            }
            let prep = prepare(&cfg)?;
            let s = cfg.n_clients as u64;
            let d = prep.dim() as u64;
            let label = if certificate_mode { format!("{} (certificate mode, proxies uploaded)", regime.name()) } else { regime.name().to_string() };
            let mut inc = Tracker::new(format!("{label}: per-round increment equals the transmitted scalar count  [max |diff|]"), 0.0);
            let mut grow = Tracker::new(format!("{label}: cumulative communication strictly increasing  [violations]"), 0.0);
            for m in &cfg.methods {
                let run = run_single(&prep, &cfg, m, cfg.seeds[0], ROUNDS);
                let nu = if certificate_mode { s } else { 0 };
                let want = expected(m.kind, s, d, nu);
                if let Some(e) = &run.error {
                    inc.record(f64::NAN, || format!("{} failed: {e}", m.kind));
                    continue;
                }
                let mut prev = 0u64;
                for r in &run.records {
                    let step = r.comm_cumulative - prev;
                    inc.record((step as f64 - want as f64).abs(), || {
                        format!("{} round {}: got {step}, expected {want} (S={s}, d={d}, nu={nu})", m.kind, r.round)
                    });
                    grow.record_bool(r.comm_cumulative > prev, || format!("{} round {}", m.kind, r.round));
                    prev = r.comm_cumulative;
                }
                inc.record((run.records.len() as f64 - ROUNDS as f64).abs(), || format!("{}: missing rounds", m.kind));
            }
            out.push(inc.finish());
            out.push(grow.finish());
        }
    }
    Ok(out)
}
