use anyhow::Result;
use hew_core::certificate::{pl_coeffs, UniformCoeffs, UniformParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{lu, Check, Tracker};

const DRAWS: usize = 10_000;

fn params(rng: &mut ChaCha8Rng, vartheta: f64, l: f64) -> UniformParams {
    UniformParams {
        vartheta,
        n: rng.random_range(1..=50),
        h: rng.random_range(1..=8),
        b: rng.random_range(1..=64),
        v2: if rng.random::<f64>() < 0.1 { 0.0 } else { lu(rng, 1e-6, 10.0) },
        l,
        r: lu(rng, 0.1, 10.0),
    }
}

pub fn run() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x91a0);
    let mut id1 = Tracker::new("a_PL - B_q lambda = rho  [max abs err]", 1e-12);
    let mut id2 = Tracker::new("(1 - C_q) - gamma_dir / lambda = rho  [max abs err]", 1e-12);
    let mut rejected = 0usize;
    let mut accepted = 0usize;
    while accepted < DRAWS {
        let l = lu(&mut rng, 0.1, 10.0);
        let mu = l * lu(&mut rng, 1e-4, 1.0);
        let vartheta = lu(&mut rng, 1e-4, 0.05);
        let p = params(&mut rng, vartheta, l);
        let uc = UniformCoeffs::new(&p)?;
        let Ok(pl) = pl_coeffs(&uc, mu, &p) else {
            rejected += 1;
            continue;
        };
        accepted += 1;
        let ctx = || format!("{p:?}, mu={mu:e}");
        id1.record((pl.a_pl - uc.b_q * pl.lambda_pl - pl.rho_pl).abs(), ctx);
        id2.record(((1.0 - uc.c_q) - uc.gamma_dir / pl.lambda_pl - pl.rho_pl).abs(), ctx);
    }
    log::debug!("pl suite: {accepted} feasible draws, {rejected} rejected");

    let mut feasible = Tracker::new("safe regime satisfies every PL feasibility condition  [failures]", 0.0);
    let mut floor = Tracker::new("safe regime rate floor rho >= mu vartheta / (8L)  [max mu vartheta/(8L) - rho]", 0.0);
    for _ in 0..DRAWS {
        let l = lu(&mut rng, 0.1, 10.0);
        let mu = l * lu(&mut rng, 1e-4, 1.0);
        let cap = (l / (2.0 * mu)).min((mu / (400.0 * l)).min(1.0 / 576.0).sqrt());
        let vartheta = cap * rng.random_range(1e-3..=1.0);
        let p = params(&mut rng, vartheta, l);
        let uc = UniformCoeffs::new(&p)?;
        let ctx = || format!("{p:?}, mu={mu:e}");
        match pl_coeffs(&uc, mu, &p) {
            Ok(pl) => {
                feasible.record(0.0, ctx);
                floor.record(mu * vartheta / (8.0 * l) - pl.rho_pl, ctx);
            }
            Err(e) => feasible.record(1.0, || format!("{}: {e}", ctx())),
        }
    }
    Ok(vec![id1, id2, feasible, floor].into_iter().map(Tracker::finish).collect())
}
