use hew_core::scalar::{cumulative_gronwall, linear_envelope, quadlin_envelope, t_a_apply, telescope_envelope, QuadLinParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{excess, lu, rel, unif, Check, Tracker, DOMINATION_TOL};

const N: usize = 10_000;

fn t(a: f64, u: f64) -> f64 {
    t_a_apply(a, u).expect("nonnegative inputs")
}

/// Zero with some probability, otherwise log-uniform.
fn maybe_zero(rng: &mut ChaCha8Rng, p: f64, lo: f64, hi: f64) -> f64 {
    if rng.random::<f64>() < p {
        0.0
    } else {
        lu(rng, lo, hi)
    }
}

/// Slack factor for "<=" recursions: equality half the time.
fn slack(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        unif(rng, 0.5, 1.0)
    }
}

pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a01);
    let mut upper = Tracker::new("T_a(u) <= u  [max T_a(u) - u]", 0.0);
    let mut lower = Tracker::new("u - a u^2 <= T_a(u)  [max u - a u^2 - T_a(u)]", 0.0);
    let mut comp = Tracker::new("T_a(T_b(u)) = T_{a+b}(u)  [max rel err]", 1e-12);
    let mut lip = Tracker::new("|T_a(u) - T_a(v)| <= |u - v|  [max excess]", 0.0);
    let mut mono = Tracker::new("u <= v implies T_a(u) <= T_a(v)  [max T_a(u) - T_a(v)]", 0.0);
    for _ in 0..N {
        let a = maybe_zero(&mut rng, 0.05, 1e-6, 1e3);
        let b = maybe_zero(&mut rng, 0.05, 1e-6, 1e3);
        let u = unif(&mut rng, 0.0, 100.0);
        let v = unif(&mut rng, 0.0, 100.0);
        let tu = t(a, u);
        upper.record(tu - u, || format!("a={a:e}, u={u:e}"));
        lower.record(u - a * u * u - tu, || format!("a={a:e}, u={u:e}"));
        comp.record(rel(t(a, t(b, u)), t(a + b, u), f64::MIN_POSITIVE), || format!("a={a:e}, b={b:e}, u={u:e}"));
        let tv = t(a, v);
        lip.record((tu - tv).abs() - (u - v).abs(), || format!("a={a:e}, u={u:e}, v={v:e}"));
        let (lo, hi) = if u <= v { (tu, tv) } else { (tv, tu) };
        mono.record(lo - hi, || format!("a={a:e}, u={u:e}, v={v:e}"));
    }

    let mut tele = Tracker::new("telescoped branch domination  [max z_H - envelope, relative]", DOMINATION_TOL);
    for _ in 0..N {
        let h = rng.random_range(1..=64);
        let steps: Vec<(f64, f64)> =
            (0..h).map(|_| (maybe_zero(&mut rng, 0.05, 1e-4, 10.0), maybe_zero(&mut rng, 0.2, 1e-6, 1.0))).collect();
        let z0 = unif(&mut rng, 0.0, 100.0);
        let mut z = z0;
        for &(a, b) in &steps {
            z = slack(&mut rng) * (t(a, z) + b);
        }
        let env = telescope_envelope(z0, &steps).unwrap();
        tele.record(excess(z, env), || format!("z0={z0:e}, H={h}"));
    }

    let mut quad = Tracker::new("quadratic-linear envelope domination, T <= 1e4  [max x_t - envelope, relative]", DOMINATION_TOL);
    let mut done = 0;
    while done < N {
        let a = lu(&mut rng, 1e-4, 1.0);
        let beta = maybe_zero(&mut rng, 0.2, 1e-6, 0.5);
        let delta = maybe_zero(&mut rng, 0.2, 1e-8, 1.0);
        let mut p = QuadLinParams::with_root(a, beta, delta).unwrap();
        if rng.random::<bool>() {
            p.m *= 1.0 + rng.random::<f64>();
        }
        if !p.super_ok() || !p.safe_ok() {
            continue;
        }
        let x0 = unif(&mut rng, 0.0, 1.0) * (1.0 + beta) / a;
        let horizon = rng.random_range(1..=10_000u64);
        let mut x = x0;
        let mut feasible = true;
        let mut worst = f64::NEG_INFINITY;
        let mut at = 0;
        for step in 1..=horizon {
            let next = x - a * x * x + beta * x + delta;
            if next < 0.0 {
                feasible = false;
                break;
            }
            x = slack(&mut rng) * next;
            let gap = excess(x, quadlin_envelope(&p, x0, step).unwrap());
            if gap > worst {
                worst = gap;
                at = step;
            }
        }
        if !feasible {
            continue;
        }
        done += 1;
        quad.record(worst, || format!("a={a:e}, beta={beta:e}, delta={delta:e}, m={:e}, x0={x0:e}, t={at}", p.m));
    }

    let mut lin = Tracker::new("linear envelope domination, T <= 1e4  [max x_t - envelope, relative]", DOMINATION_TOL);
    for _ in 0..N {
        let a = lu(&mut rng, 1e-4, 1.0);
        let delta = maybe_zero(&mut rng, 0.2, 1e-8, 1.0);
        let mut m = delta / a;
        while m * a < delta {
            m = m.next_up();
        }
        if rng.random::<f64>() < 0.5 {
            m *= 1.0 + rng.random::<f64>();
        }
        let x0 = unif(&mut rng, 0.0, 100.0) * m.max(1.0);
        let horizon = rng.random_range(1..=10_000u64);
        let mut x = x0;
        let mut worst = f64::NEG_INFINITY;
        for step in 1..=horizon {
            x = slack(&mut rng) * ((1.0 - a) * x + delta);
            worst = worst.max(excess(x, linear_envelope(a, delta, m, x0, step).unwrap()));
        }
        lin.record(worst, || format!("a={a:e}, delta={delta:e}, m={m:e}, x0={x0:e}"));
    }

    let mut gron = Tracker::new("cumulative Gronwall domination  [max x_l - envelope, relative]", DOMINATION_TOL);
    for _ in 0..N {
        let len = rng.random_range(1..=200);
        let beta = maybe_zero(&mut rng, 0.05, 1e-4, 1.0);
        let mut a_seq = Vec::with_capacity(len);
        let mut a = unif(&mut rng, 0.0, 10.0);
        for _ in 0..len {
            a_seq.push(a);
            a += maybe_zero(&mut rng, 0.3, 1e-6, 1.0);
        }
        let env = cumulative_gronwall(&a_seq, beta).unwrap();
        let mut sum = 0.0;
        let mut worst = f64::NEG_INFINITY;
        for (l, &al) in a_seq.iter().enumerate() {
            let x = slack(&mut rng) * (al + beta * sum);
            sum += x;
            worst = worst.max(excess(x, env[l]));
        }
        gron.record(worst, || format!("len={len}, beta={beta:e}, a0={:e}", a_seq[0]));
    }

    vec![upper, lower, comp, lip, mono, tele, quad, lin, gron].into_iter().map(Tracker::finish).collect()
}
