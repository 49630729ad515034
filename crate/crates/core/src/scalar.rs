//! Scalar envelope kernels.
//!
//! Every global rate in the crate is eventually evaluated through one of these
//! functions: the hyperbolic contraction `T_a(u) = u / (1 + a u)`, its
//! telescoped and perturbed envelopes, and three closed-form generator flows
//! (quadratic, power-law, exponential) with their slope moduli and conjugacy
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{domain, precondition, Result};

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(domain(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(domain(format!("{name} must be finite and positive, got {v}")));
    }
    Ok(())
}

/// `T_a(u) = u / (1 + a u)`.
pub fn t_a_apply(a: f64, u: f64) -> Result<f64> {
    check_nonneg("a", a)?;
    check_nonneg("u", u)?;
    Ok(t_a(a, u))
}

#[inline]
pub(crate) fn t_a(a: f64, u: f64) -> f64 {
    u / (1.0 + a * u)
}

/// Upper envelope `T_{Σa}(z0) + Σb` for any sequence with `z_{l+1} <= T_{a_l}(z_l) + b_l`.
pub fn telescope_envelope(z0: f64, steps: &[(f64, f64)]) -> Result<f64> {
    check_nonneg("z0", z0)?;
    let mut sum_a = 0.0;
    let mut sum_b = 0.0;
    for (l, &(a, b)) in steps.iter().enumerate() {
        check_nonneg(&format!("a[{l}]"), a)?;
        check_nonneg(&format!("b[{l}]"), b)?;
        sum_a += a;
        sum_b += b;
    }
    Ok(t_a(sum_a, z0) + sum_b)
}

/// Coefficients of the recursion `x_{t+1} <= x_t - a x_t^2 + beta x_t + delta` and a floor `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadLinParams {
    pub a: f64,
    pub beta: f64,
    pub delta: f64,
    pub m: f64,
}

impl QuadLinParams {
    pub fn new(a: f64, beta: f64, delta: f64, m: f64) -> Result<Self> {
        check_pos("a", a)?;
        check_nonneg("beta", beta)?;
        check_nonneg("delta", delta)?;
        check_nonneg("m", m)?;
        Ok(Self { a, beta, delta, m })
    }

    /// Uses the positive root of `a m^2 - beta m - delta = 0` as the floor.
    pub fn with_root(a: f64, beta: f64, delta: f64) -> Result<Self> {
        check_pos("a", a)?;
        check_nonneg("beta", beta)?;
        check_nonneg("delta", delta)?;
        let m = (beta + (beta * beta + 4.0 * a * delta).sqrt()) / (2.0 * a);
        Ok(Self { a, beta, delta, m })
    }

    /// `a m^2 - beta m - delta >= 0`. The positive root is accepted up to rounding.
    pub fn super_ok(&self) -> bool {
        let lhs = self.a * self.m * self.m - self.beta * self.m - self.delta;
        let scale = self.a * self.m * self.m + self.beta * self.m + self.delta;
        lhs >= -1e-14 * scale
    }

    /// `2 a m <= 1 + beta`.
    pub fn safe_ok(&self) -> bool {
        2.0 * self.a * self.m <= 1.0 + self.beta
    }

    fn check(&self) -> Result<()> {
        if !self.super_ok() {
            return Err(precondition(format!(
                "a*m^2 - beta*m - delta >= 0 fails (a={}, beta={}, delta={}, m={})",
                self.a, self.beta, self.delta, self.m
            )));
        }
        if !self.safe_ok() {
            return Err(precondition(format!(
                "2*a*m <= 1 + beta fails (2am={}, 1+beta={})",
                2.0 * self.a * self.m,
                1.0 + self.beta
            )));
        }
        Ok(())
    }
}

/// `m + 1 / ((x0 - m)_+^{-1} + a T)`, equal to `m` when `x0 <= m`.
pub fn quadlin_envelope(params: &QuadLinParams, x0: f64, t: u64) -> Result<f64> {
    check_nonneg("x0", x0)?;
    params.check()?;
    let excess = x0 - params.m;
    if excess <= 0.0 {
        // Infinite reciprocal: the excess term vanishes.
        return Ok(params.m);
    }
    Ok(params.m + excess / (1.0 + params.a * t as f64 * excess))
}

/// `m + (1 - a)^T (x0 - m)_+` for `x_{t+1} <= (1 - a) x_t + delta` with `m >= delta / a`.
pub fn linear_envelope(a: f64, delta: f64, m: f64, x0: f64, t: u64) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(domain(format!("a must lie in (0, 1], got {a}")));
    }
    check_nonneg("delta", delta)?;
    check_nonneg("x0", x0)?;
    if !(m * a >= delta) {
        return Err(precondition(format!("m >= delta/a fails (m={m}, delta/a={})", delta / a)));
    }
    let excess = (x0 - m).max(0.0);
    Ok(m + (1.0 - a).powf(t as f64) * excess)
}

/// Envelope `a_l (1 + beta)^l` for `x_l <= a_l + beta * sum_{s<l} x_s`.
pub fn cumulative_gronwall(a_seq: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_nonneg("beta", beta)?;
    for (l, &a) in a_seq.iter().enumerate() {
        check_nonneg(&format!("a[{l}]"), a)?;
        if l > 0 && a < a_seq[l - 1] {
            return Err(domain(format!("a_seq must be nondecreasing, a[{l}] < a[{}]", l - 1)));
        }
    }
    Ok(a_seq
        .iter()
        .enumerate()
        .map(|(l, &a)| a * (1.0 + beta).powi(l as i32))
        .collect())
}

/// Closed-form generator flows `ds/da = -phi(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GeneratorFamily {
    /// `phi(s) = kappa s^2`
    Quadratic { kappa: f64 },
    /// `phi(s) = kappa s^{1+p}`
    PowerLaw { kappa: f64, p: f64 },
    /// `phi(s) = rho s`
    Exponential { rho: f64 },
}

impl GeneratorFamily {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GeneratorFamily::Quadratic { kappa } => check_pos("kappa", kappa),
            GeneratorFamily::PowerLaw { kappa, p } => {
                check_pos("kappa", kappa)?;
                check_pos("p", p)
            }
            GeneratorFamily::Exponential { rho } => check_pos("rho", rho),
        }
    }

    /// Generator `phi(s)`.
    pub fn generator(&self, s: f64) -> f64 {
        match *self {
            GeneratorFamily::Quadratic { kappa } => kappa * s * s,
            GeneratorFamily::PowerLaw { kappa, p } => kappa * s.powf(1.0 + p),
            GeneratorFamily::Exponential { rho } => rho * s,
        }
    }
}

/// Flow `R_a(s)` of the family at time `a`.
pub fn flow_apply(family: &GeneratorFamily, a: f64, s: f64) -> Result<f64> {
    family.validate()?;
    check_nonneg("a", a)?;
    check_nonneg("s", s)?;
    Ok(flow(family, a, s))
}

pub(crate) fn flow(family: &GeneratorFamily, a: f64, s: f64) -> f64 {
    match *family {
        GeneratorFamily::Quadratic { kappa } => t_a(kappa * a, s),
        GeneratorFamily::PowerLaw { kappa, p } => {
            if s == 0.0 {
                0.0
            } else {
                s * (1.0 + kappa * p * a * s.powf(p)).powf(-1.0 / p)
            }
        }
        GeneratorFamily::Exponential { rho } => (-rho * a).exp() * s,
    }
}

/// Slope `d/ds R_a(s)` at `s = m`.
pub fn slope_modulus(family: &GeneratorFamily, a: f64, m: f64) -> Result<f64> {
    family.validate()?;
    check_nonneg("a", a)?;
    check_nonneg("m", m)?;
    Ok(slope(family, a, m))
}

pub(crate) fn slope(family: &GeneratorFamily, a: f64, m: f64) -> f64 {
    match *family {
        GeneratorFamily::Quadratic { kappa } => {
            if m == 0.0 {
                1.0
            } else {
                (1.0 + kappa * a * m).powi(-2)
            }
        }
        GeneratorFamily::PowerLaw { kappa, p } => {
            if m == 0.0 {
                1.0
            } else {
                (1.0 + kappa * p * a * m.powf(p)).powf(-1.0 - 1.0 / p)
            }
        }
        GeneratorFamily::Exponential { rho } => (-rho * a).exp(),
    }
}

/// `chi(s) = int_s^{s_ref} dxi / phi(xi)`, so that `chi(R_a(s)) = chi(s) + a`.
pub fn conjugacy_coordinate(family: &GeneratorFamily, s: f64, s_ref: f64) -> Result<f64> {
    family.validate()?;
    check_pos("s", s)?;
    check_pos("s_ref", s_ref)?;
    Ok(match *family {
        GeneratorFamily::Quadratic { kappa } => (1.0 / s - 1.0 / s_ref) / kappa,
        GeneratorFamily::PowerLaw { kappa, p } => (s.powf(-p) - s_ref.powf(-p)) / (kappa * p),
        GeneratorFamily::Exponential { rho } => (s_ref / s).ln() / rho,
    })
}

/// One entry `(a_t, b_t, d_t, eps_t)` of a perturbed flow recursion
/// `S_{t+1} <= R_{a_t}(S_t) + b_t S_t + d_t + eps_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisyEntry {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoisySchedule {
    pub entries: Vec<NoisyEntry>,
}

impl NoisySchedule {
    pub fn new(entries: Vec<NoisyEntry>) -> Result<Self> {
        for (t, e) in entries.iter().enumerate() {
            check_nonneg(&format!("a[{t}]"), e.a)?;
            check_nonneg(&format!("b[{t}]"), e.b)?;
            check_nonneg(&format!("d[{t}]"), e.d)?;
            check_nonneg(&format!("eps[{t}]"), e.eps)?;
        }
        Ok(Self { entries })
    }

    pub fn is_noiseless(&self) -> bool {
        self.entries.iter().all(|e| e.b == 0.0 && e.d == 0.0 && e.eps == 0.0)
    }

    pub fn total_time(&self) -> f64 {
        self.entries.iter().map(|e| e.a).sum()
    }
}

/// Envelope for a perturbed flow recursion around the floor `m`.
///
/// With noise present it returns `m + (prod_t lambda_t) (S0 - m)_+` where
/// `lambda_t = L_{a_t}(m) + b_t` must be below one and `m` must satisfy the floor
/// condition `R_{a_t}(m) + b_t m + d_t + eps_t <= m` at every step. A noiseless
/// schedule is bounded by the flow over the total time `R_{sum a}(S0)`, and by
/// the smaller of the two bounds when the contracted floor bound is also valid.
pub fn noisy_master_envelope(
    family: &GeneratorFamily,
    schedule: &NoisySchedule,
    m: f64,
    s0: f64,
) -> Result<f64> {
    family.validate()?;
    check_nonneg("m", m)?;
    check_nonneg("S0", s0)?;
    let master = master_bound(family, schedule, m, s0);
    if schedule.is_noiseless() {
        let flow_bound = flow(family, schedule.total_time(), s0);
        return Ok(match master {
            Ok(v) => v.min(flow_bound),
            Err(_) => flow_bound,
        });
    }
    master
}

fn master_bound(family: &GeneratorFamily, schedule: &NoisySchedule, m: f64, s0: f64) -> Result<f64> {
    let mut prod = 1.0;
    for (t, e) in schedule.entries.iter().enumerate() {
        let lambda = slope(family, e.a, m) + e.b;
        if !(lambda < 1.0) {
            return Err(precondition(format!("lambda_{t} = {lambda} must be < 1")));
        }
        let g = flow(family, e.a, m) + e.b * m + e.d + e.eps;
        if g > m * (1.0 + 1e-14) {
            return Err(precondition(format!("floor condition g_{t}(m) = {g} <= m = {m} fails")));
        }
        prod *= lambda;
    }
    Ok(m + prod * (s0 - m).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn t_a_examples() {
        assert_eq!(t_a_apply(0.0, 5.0).unwrap(), 5.0);
        assert_eq!(t_a_apply(1.0, 1.0).unwrap(), 0.5);
        let two = t_a_apply(0.7, t_a_apply(0.3, 2.0).unwrap()).unwrap();
        assert_relative_eq!(two, t_a_apply(1.0, 2.0).unwrap(), max_relative = 1e-15);
        assert!(t_a_apply(-1.0, 1.0).is_err());
        assert!(t_a_apply(1.0, -1.0).is_err());
    }

    #[test]
    fn telescope_examples() {
        assert_eq!(telescope_envelope(1.0, &[(0.0, 0.0), (0.0, 0.0)]).unwrap(), 1.0);
        assert_relative_eq!(
            telescope_envelope(1.0, &[(1.0, 0.0), (1.0, 0.0)]).unwrap(),
            1.0 / 3.0,
            max_relative = 1e-15
        );
        // Oracle: 2 / (1 + 0.75 * 2) + 0.3 = 0.8 + 0.3.
        let env = telescope_envelope(2.0, &[(0.5, 0.1), (0.25, 0.2)]).unwrap();
        assert_relative_eq!(env, 1.1, max_relative = 1e-15);
        let mut z = 2.0;
        for (a, b) in [(0.5, 0.1), (0.25, 0.2)] {
            z = t_a(a, z) + b;
        }
        assert!(z <= env);
        assert!(telescope_envelope(1.0, &[(-0.1, 0.0)]).is_err());
    }

    #[test]
    fn quadlin_examples() {
        let p = QuadLinParams::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(quadlin_envelope(&p, 1.0, 1).unwrap(), 0.5);
        let p = QuadLinParams::with_root(0.2, 0.05, 0.01).unwrap();
        assert_eq!(quadlin_envelope(&p, p.m, 10).unwrap(), p.m);
        let mut x: f64 = 3.0;
        for t in 0..=100u64 {
            assert!(x <= quadlin_envelope(&p, 3.0, t).unwrap(), "t={t}");
            x = x - p.a * x * x + p.beta * x + p.delta;
        }
        let bad = QuadLinParams::new(1.0, 0.0, 0.0, 2.0).unwrap();
        let err = quadlin_envelope(&bad, 3.0, 1).unwrap_err().to_string();
        assert!(err.contains("2*a*m"), "{err}");
        let bad = QuadLinParams::new(1.0, 1.0, 1.0, 0.5).unwrap();
        let err = quadlin_envelope(&bad, 3.0, 1).unwrap_err().to_string();
        assert!(err.contains("a*m^2"), "{err}");
    }

    #[test]
    fn linear_examples() {
        assert_eq!(linear_envelope(1.0, 0.0, 0.0, 7.0, 1).unwrap(), 0.0);
        assert_relative_eq!(linear_envelope(0.5, 0.1, 0.2, 1.2, 2).unwrap(), 0.45, max_relative = 1e-15);
        assert!(linear_envelope(0.5, 0.1, 0.1, 1.0, 1).is_err());
        assert!(linear_envelope(1.5, 0.0, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn gronwall_examples() {
        assert_eq!(cumulative_gronwall(&[2.0; 4], 0.0).unwrap(), vec![2.0; 4]);
        assert_eq!(cumulative_gronwall(&[1.0; 4], 1.0).unwrap()[3], 8.0);
        assert!(cumulative_gronwall(&[2.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn flow_examples() {
        let q = GeneratorFamily::Quadratic { kappa: 1.0 };
        assert_eq!(flow_apply(&q, 2.0, 3.0).unwrap(), t_a_apply(2.0, 3.0).unwrap());
        assert_relative_eq!(flow_apply(&q, 2.0, 3.0).unwrap(), 3.0 / 7.0, max_relative = 1e-15);
        let e = GeneratorFamily::Exponential { rho: 2f64.ln() };
        assert_relative_eq!(flow_apply(&e, 1.0, 4.0).unwrap(), 2.0, max_relative = 1e-15);
        let p = GeneratorFamily::PowerLaw { kappa: 1.0, p: 1.0 };
        assert_relative_eq!(flow_apply(&p, 2.0, 3.0).unwrap(), 3.0 / 7.0, max_relative = 1e-15);
        assert!(flow_apply(&GeneratorFamily::Quadratic { kappa: 0.0 }, 1.0, 1.0).is_err());
    }

    #[test]
    fn slope_examples() {
        let q = GeneratorFamily::Quadratic { kappa: 1.0 };
        assert_eq!(slope_modulus(&q, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(slope_modulus(&q, 1.0, 1.0).unwrap(), 0.25);
        let e = GeneratorFamily::Exponential { rho: 1.0 };
        assert_eq!(slope_modulus(&e, 0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn conjugacy_examples() {
        let q = GeneratorFamily::Quadratic { kappa: 1.0 };
        assert_eq!(conjugacy_coordinate(&q, 2.0, 2.0).unwrap(), 0.0);
        let r = flow_apply(&q, 1.5, 2.0).unwrap();
        assert_relative_eq!(conjugacy_coordinate(&q, r, 2.0).unwrap(), 1.5, max_relative = 1e-14);
        // Midpoint-rule quadrature of 1/(2 xi) over [1, e^2].
        let e = GeneratorFamily::Exponential { rho: 2.0 };
        let (lo, hi) = (1.0f64, 2f64.exp());
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let quad: f64 = (0..n).map(|k| h / (2.0 * (lo + (k as f64 + 0.5) * h))).sum();
        let closed = conjugacy_coordinate(&e, lo, hi).unwrap();
        assert_relative_eq!(closed, 1.0, max_relative = 1e-15);
        assert_relative_eq!(quad, closed, max_relative = 1e-8);
        assert!(conjugacy_coordinate(&q, 0.0, 1.0).is_err());
    }

    #[test]
    fn noisy_master_examples() {
        let q = GeneratorFamily::Quadratic { kappa: 1.0 };
        let entries = vec![NoisyEntry { a: 0.5, b: 0.0, d: 0.0, eps: 0.0 }; 4];
        let sched = NoisySchedule::new(entries).unwrap();
        let env = noisy_master_envelope(&q, &sched, 0.0, 3.0).unwrap();
        assert_eq!(env, flow_apply(&q, 2.0, 3.0).unwrap());

        let e = GeneratorFamily::Exponential { rho: 1.0 };
        let sched = NoisySchedule::new(vec![NoisyEntry { a: 0.3, b: 0.1, d: 0.05, eps: 0.01 }; 5]).unwrap();
        assert_eq!(noisy_master_envelope(&e, &sched, 2.0, 2.0).unwrap(), 2.0);

        let sched = NoisySchedule::new(vec![NoisyEntry { a: 0.0, b: 0.1, d: 0.0, eps: 0.0 }]).unwrap();
        let err = noisy_master_envelope(&e, &sched, 1.0, 2.0).unwrap_err().to_string();
        assert!(err.contains("lambda_0"), "{err}");
    }

    fn exp_schedule_floor(entries: &[NoisyEntry], rho: f64) -> f64 {
        // Smallest m with e^{-rho a} m + b m + d + eps <= m at every step.
        entries
            .iter()
            .map(|e| (e.d + e.eps) / (1.0 - (-rho * e.a).exp() - e.b))
            .fold(0.0, f64::max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn t_a_sandwich_and_lipschitz(a in 0.0f64..10.0, u in 0.0f64..10.0, v in 0.0f64..10.0) {
            let tu = t_a(a, u);
            prop_assert!(tu <= u);
            prop_assert!(u - a * u * u <= tu + 1e-12 * (1.0 + u));
            prop_assert!((tu - t_a(a, v)).abs() <= (u - v).abs() + 1e-15);
        }

        #[test]
        fn semigroup_law(a in 0.0f64..10.0, b in 0.0f64..10.0, s in 0.0f64..10.0,
                         kappa in 0.1f64..3.0, p in 0.2f64..3.0, rho in 0.05f64..2.0) {
            for f in [GeneratorFamily::Quadratic { kappa }, GeneratorFamily::PowerLaw { kappa, p },
                      GeneratorFamily::Exponential { rho }] {
                let lhs = flow(&f, a + b, s);
                let rhs = flow(&f, a, flow(&f, b, s));
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + s));
                prop_assert!(lhs >= 0.0 && lhs <= s);
            }
        }

        #[test]
        fn quadlin_dominates(a in 0.01f64..1.0, beta in 0.0f64..0.2, delta in 0.0f64..0.1, frac in 0.0f64..1.0) {
            let p = QuadLinParams::with_root(a, beta, delta).unwrap();
            prop_assume!(p.safe_ok());
            let x0 = frac * (1.0 + beta) / a;
            let mut x = x0;
            for t in 0..500u64 {
                prop_assert!(x <= quadlin_envelope(&p, x0, t).unwrap() * (1.0 + 1e-12) + 1e-15);
                x = (x - a * x * x + beta * x + delta).max(0.0);
            }
        }

        #[test]
        fn noisy_master_dominates_exact(rho in 0.1f64..2.0, n in 1usize..20, seed in 0u64..1000) {
            use rand::Rng;
            let mut rng = crate::rng::keyed_rng(seed, 0, 0, 0);
            let entries: Vec<NoisyEntry> = (0..n).map(|_| {
                let a = rng.random_range(0.1..1.0);
                let gap = 1.0 - (-rho * a).exp();
                NoisyEntry {
                    a,
                    b: rng.random_range(0.0..0.5) * gap,
                    d: rng.random_range(0.0..0.1),
                    eps: rng.random_range(0.0..0.1),
                }
            }).collect();
            let f = GeneratorFamily::Exponential { rho };
            let m = exp_schedule_floor(&entries, rho) * (1.0 + 1e-9);
            let sched = NoisySchedule::new(entries.clone()).unwrap();
            let s0 = rng.random_range(0.0..20.0);
            let env = noisy_master_envelope(&f, &sched, m, s0).unwrap();
            let mut s = s0;
            for e in &entries {
                s = flow(&f, e.a, s) + e.b * s + e.d + e.eps;
            }
            prop_assert!(s <= env * (1.0 + 1e-12));
        }
    }
}
