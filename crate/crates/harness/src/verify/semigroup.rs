use hew_core::scalar::{conjugacy_coordinate, flow_apply, slope_modulus, t_a_apply, GeneratorFamily};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{lu, rel, unif, Check, Tracker};

const N: usize = 10_000;

fn family(kind: usize, rng: &mut ChaCha8Rng) -> GeneratorFamily {
    match kind {
        0 => GeneratorFamily::Quadratic { kappa: lu(rng, 0.1, 10.0) },
        1 => GeneratorFamily::PowerLaw { kappa: lu(rng, 0.1, 10.0), p: lu(rng, 0.1, 3.0) },
        _ => GeneratorFamily::Exponential { rho: lu(rng, 0.1, 10.0) },
    }
}

pub fn run() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e31);
    let mut out = Vec::new();
    for (kind, label) in ["quadratic", "power-law", "exponential"].into_iter().enumerate() {
        let mut semi = Tracker::new(format!("{label}: R_a(R_b(s)) = R_(a+b)(s)  [max rel err]"), 1e-12);
        let mut contr = Tracker::new(format!("{label}: R_a(s) <= s  [max R_a(s) - s]"), 0.0);
        let mut mono = Tracker::new(format!("{label}: monotone in s  [max R(s1) - R(s2), s1 <= s2]"), 0.0);
        let mut conc = Tracker::new(format!("{label}: concave in s  [max second difference / R(s)]"), 1e-12);
        let mut slope = Tracker::new(format!("{label}: slope modulus vs central difference  [max rel err]"), 1e-6);
        let mut conj = Tracker::new(format!("{label}: chi(R_a(s)) = chi(s) + a  [max scaled err]"), 1e-10);
        let mut exact = Tracker::new(format!("{label}: quadratic flow equals T_(kappa a) bitwise  [max abs diff]"), 0.0);
        for _ in 0..N {
            let f = family(kind, &mut rng);
            let a = unif(&mut rng, 0.0, 10.0);
            let b = unif(&mut rng, 0.0, 10.0);
            let s = unif(&mut rng, 1e-3, 10.0);
            let r = |a: f64, s: f64| flow_apply(&f, a, s).unwrap();
            let ctx = || format!("{f:?}, a={a:e}, b={b:e}, s={s:e}");

            semi.record(rel(r(a, r(b, s)), r(a + b, s), f64::MIN_POSITIVE), ctx);
            contr.record(r(a, s) - s, ctx);
            let s2 = unif(&mut rng, 0.0, 10.0);
            let (lo, hi) = if s <= s2 { (s, s2) } else { (s2, s) };
            mono.record(r(a, lo) - r(a, hi), ctx);
            let h = 0.5 * s * unif(&mut rng, 0.01, 1.0);
            conc.record((r(a, s - h) + r(a, s + h) - 2.0 * r(a, s)) / r(a, s), ctx);
            let dh = 1e-5 * s;
            let numeric = (r(a, s + dh) - r(a, s - dh)) / (2.0 * dh);
            slope.record(rel(slope_modulus(&f, a, s).unwrap(), numeric, f64::MIN_POSITIVE), ctx);
            let s_ref = unif(&mut rng, 0.1, 10.0);
            let before = conjugacy_coordinate(&f, s, s_ref).unwrap();
            let after = conjugacy_coordinate(&f, r(a, s), s_ref).unwrap();
            conj.record((after - before - a).abs() / after.abs().max(a).max(1.0), ctx);
            if let GeneratorFamily::Quadratic { kappa } = f {
                exact.record((r(a, s) - t_a_apply(kappa * a, s).unwrap()).abs(), ctx);
            }
        }
        out.extend([semi, contr, mono, conc, slope, conj].into_iter().map(Tracker::finish));
        if kind == 0 {
            out.push(exact.finish());
        }
    }
    out
}
