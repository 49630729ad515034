use anyhow::Result;
use hew_core::certificate::{
    het_rate, ho_best_iterate_bound, hom_pl_rate, hom_rate, HOCoeffs, HetParams, HoParams, HomParams, PostLocalHetCoeffs,
    PostLocalHomCoeffs, UniformParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{excess, lu, unif, Check, Tracker, DOMINATION_TOL};

const DRAWS: usize = 1000;
const MAX_T: u64 = 1000;
const MAX_REJECTIONS: usize = 1_000_000;

struct Nodes {
    horizons: Vec<usize>,
    batches: Vec<usize>,
    v2: Vec<f64>,
}

fn nodes(rng: &mut ChaCha8Rng) -> Nodes {
    let n = rng.random_range(1..=10);
    Nodes {
        horizons: (0..n).map(|_| [1, 2, 4, 8][rng.random_range(0..4)]).collect(),
        batches: (0..n).map(|_| rng.random_range(1..=32)).collect(),
        v2: (0..n).map(|_| lu(rng, 1e-6, 10.0)).collect(),
    }
}

fn slack(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        unif(rng, 0.5, 1.0)
    }
}

/// Amplitude and `Lambda` inside the post-local window with `288 vartheta^2 < 1`.
fn window(rng: &mut ChaCha8Rng, l: f64) -> (f64, f64) {
    let lambda = l * unif(rng, 1.01, 2.0);
    let cap = (l / (2.0 * lambda)).min(0.99 / 288f64.sqrt());
    (cap * lu(rng, 1e-3, 1.0), lambda)
}

/// Iterate `x -> s * step(x)` and return the worst `x_t - bound(t)`, or `None` if the
/// recursion leaves the nonnegative half-line (no admissible sequence exists).
fn worst_excess(
    rng: &mut ChaCha8Rng,
    x0: f64,
    horizon: u64,
    step: impl Fn(f64) -> f64,
    bound: impl Fn(u64) -> f64,
) -> Option<f64> {
    let mut x = x0;
    let mut worst = f64::NEG_INFINITY;
    for t in 1..=horizon {
        let next = step(x);
        if !(next >= 0.0) {
            return None;
        }
        x = slack(rng) * next;
        worst = worst.max(excess(x, bound(t)));
    }
    Some(worst)
}

fn fill(name: &str, rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<(f64, String)>) -> Result<Check> {
    let mut tr = Tracker::new(name, DOMINATION_TOL);
    let mut rejected = 0;
    let mut accepted = 0;
    while accepted < DRAWS {
        match draw(rng) {
            Some((v, ctx)) => {
                accepted += 1;
                tr.record(v, || ctx);
            }
            None => {
                rejected += 1;
                if rejected > MAX_REJECTIONS {
                    anyhow::bail!("{name}: could not draw {DRAWS} feasible instances");
                }
            }
        }
    }
    Ok(tr.finish())
}

pub fn run() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xe7e1);
    let het = fill("het_rate dominates U - a U^2 + beta U + d  [max U_t - rate, relative]", &mut rng, |rng| {
        let l = lu(rng, 0.1, 10.0);
        let r = lu(rng, 0.1, 10.0);
        let (vartheta, lambda) = window(rng, l);
        let nd = nodes(rng);
        let n = nd.horizons.len();
        let comparator = if rng.random::<bool>() {
            vec![1.0 / n as f64; n]
        } else {
            let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        let p = HetParams {
            vartheta,
            lambda,
            l,
            r,
            horizons: nd.horizons,
            batches: nd.batches,
            v2: nd.v2,
            comparator,
            q0: lu(rng, 1e-6, 1.0) * l * l * r * r,
        };
        let c = PostLocalHetCoeffs::new(&p).ok()?;
        let u0 = unif(rng, 0.0, 1.0) * c.bar_f;
        het_rate(&c, u0, 1).ok()?;
        let horizon = rng.random_range(1..=MAX_T);
        let a = c.a_het_lower;
        let w = worst_excess(
            rng,
            u0,
            horizon,
            |u| u - a * u * u + c.beta_het * u + c.d_het,
            |t| het_rate(&c, u0, t).unwrap(),
        )?;
        Some((w, format!("vartheta={vartheta:e}, Lambda={lambda:e}, L={l:e}, R={r:e}, U0={u0:e}")))
    })?;

    let hom_draw = |rng: &mut ChaCha8Rng| {
        let l = lu(rng, 0.1, 10.0);
        let r = lu(rng, 0.1, 10.0);
        let (vartheta, lambda) = window(rng, l);
        let nd = nodes(rng);
        let mu = l * lu(rng, 1e-3, 1.0);
        let p = HomParams { vartheta, lambda, l, r, horizons: nd.horizons, batches: nd.batches, v2: nd.v2, mu: Some(mu) };
        let c = PostLocalHomCoeffs::new(&p).ok()?;
        let g0 = unif(rng, 0.0, 1.0) * 0.5 * l * r * r;
        Some((c, g0, format!("vartheta={vartheta:e}, Lambda={lambda:e}, L={l:e}, R={r:e}, mu={mu:e}, g0={g0:e}")))
    };
    let hom = fill("hom_rate dominates g - a g^2 + beta g + delta  [max g_t - rate, relative]", &mut rng, |rng| {
        let (c, g0, ctx) = hom_draw(rng)?;
        hom_rate(&c, g0, 1).ok()?;
        let horizon = rng.random_range(1..=MAX_T);
        let a = c.a_hom_lower;
        let w = worst_excess(
            rng,
            g0,
            horizon,
            |g| g - a * g * g + c.beta_hom * g + c.delta_hom,
            |t| hom_rate(&c, g0, t).unwrap(),
        )?;
        Some((w, ctx))
    })?;
    let hom_pl = fill("hom_pl_rate dominates (1 - rho) g + delta  [max g_t - rate, relative]", &mut rng, |rng| {
        let (c, g0, ctx) = hom_draw(rng)?;
        hom_pl_rate(&c, g0, 1).ok()?;
        let rho = c.rho_hom?;
        let horizon = rng.random_range(1..=MAX_T);
        let w = worst_excess(rng, g0, horizon, |g| (1.0 - rho) * g + c.delta_hom, |t| hom_pl_rate(&c, g0, t).unwrap())?;
        Some((w, ctx))
    })?;

    let ho = fill(
        "ho_best_iterate_bound dominates min_{t<T} g_t of g - a g^2 + beta g + delta  [max min g - bound]",
        &mut rng,
        |rng| {
            let l = lu(rng, 0.1, 10.0);
            let r = lu(rng, 0.1, 10.0);
            let vartheta = lu(rng, 1e-4, 0.05);
            let uniform = UniformParams {
                vartheta,
                n: rng.random_range(1..=50),
                h: rng.random_range(1..=8),
                b: rng.random_range(1..=64),
                v2: lu(rng, 1e-6, 10.0),
                l,
                r,
            };
            let p = HoParams { uniform, h_sim: lu(rng, 1e-3, 10.0), m_lip: lu(rng, 1e-3, 10.0), q0: lu(rng, 1e-6, 1.0) };
            let c = HOCoeffs::new(&p).ok()?;
            let g0 = unif(rng, 0.0, 1.0) * 0.5 * l * r * r;
            let horizon = rng.random_range(1..=MAX_T);
            let a = c.a_ho_lower;
            let mut g = g0;
            let mut best = g0;
            let mut worst = best - ho_best_iterate_bound(&c, g0, 1).unwrap();
            for t in 2..=horizon {
                let next = g - a * g * g + c.beta_ho * g + c.delta_ho;
                if !(next >= 0.0) {
                    return None;
                }
                g = slack(rng) * next;
                best = best.min(g);
                worst = worst.max(best - ho_best_iterate_bound(&c, g0, t).unwrap());
            }
            Some((worst, format!("{p:?}, g0={g0:e}")))
        },
    )?;
    Ok(vec![het, hom, hom_pl, ho])
}
