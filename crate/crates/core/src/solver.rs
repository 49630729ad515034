//! Minimisers for the control objectives.
//!
//! The weight block of the certificate objective has an exact threshold solution; the
//! amplitude block is separable and convex per node; post-local aggregation minimises a
//! convex quadratic over a face of the simplex with away-step Frank–Wolfe.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{cert_row, objective_value, CertCoeffs, Geometry, NodeSchedule, UpperState};
use crate::error::{domain, HewError, Result};

/// Weights on the active simplex and per-node amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Sweeps stop once the objective drops by at most `sweep_eps * (|J_0| + 1)`.
    pub sweep_eps: f64,
    pub theta_tol: f64,
    pub qp_tol: f64,
    pub qp_max_iters: usize,
    pub max_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { sweep_eps: 1e-10, theta_tol: 1e-6, qp_tol: 1e-8, qp_max_iters: 20_000, max_sweeps: 200 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sweep_eps > 0.0 && self.theta_tol > 0.0 && self.qp_tol > 0.0)
            || self.qp_max_iters == 0
            || self.max_sweeps == 0
        {
            return Err(domain("solver tolerances and iteration caps must be positive"));
        }
        Ok(())
    }
}

/// Exact minimiser of `-sum w_i mu_i + (L/2) sum w_i^2 kappa_i` over the simplex.
///
/// Returns the weights and the threshold `lambda`. Nonpositive curvatures fall back to the
/// general simplex QP (lambda is then reported as NaN).
pub fn kkt_threshold_weights(mu: &[f64], kappa: &[f64], l: f64) -> Result<(Vec<f64>, f64)> {
    let s = mu.len();
    if s == 0 || kappa.len() != s {
        return Err(domain("KKT weights need matching nonempty mu and kappa"));
    }
    if !(l > 0.0) {
        return Err(domain("L must be positive"));
    }
    if mu.iter().chain(kappa).any(|x| !x.is_finite()) {
        return Err(HewError::Numerical("nonfinite certificate coefficients".into()));
    }
    if kappa.iter().any(|&k| k <= 0.0) {
        warn!("nonpositive curvature in the weight block; using the general simplex QP");
        let gram: Vec<f64> = (0..s * s)
            .map(|ij| if ij / s == ij % s { l * kappa[ij / s].max(0.0) } else { 0.0 })
            .collect();
        let lin: Vec<f64> = mu.iter().map(|m| -m).collect();
        let active: Vec<usize> = (0..s).collect();
        let sol = gram_simplex_qp(&lin, &gram, s, &active, 1e-14, 100_000);
        return Ok((sol.w, f64::NAN));
    }
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&i, &j| mu[j].total_cmp(&mu[i]).then(i.cmp(&j)));
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lambda = f64::NAN;
    for k in 0..s {
        let i = order[k];
        let inv = 1.0 / (l * kappa[i]);
        num += mu[i] * inv;
        den += inv;
        // Equal mu values join the segment together.
        if k + 1 < s && mu[order[k + 1]] == mu[i] {
            continue;
        }
        let lam = (num - 1.0) / den;
        let next = if k + 1 < s { mu[order[k + 1]] } else { f64::NEG_INFINITY };
        if lam < mu[i] && lam >= next {
            lambda = lam;
            break;
        }
    }
    if lambda.is_nan() {
        // Rounding left no segment exactly consistent; bisect the decreasing mass map.
        let mass = |lam: f64| -> f64 { (0..s).map(|i| (mu[i] - lam).max(0.0) / (l * kappa[i])).sum() };
        let top = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut hi = top;
        let mut step = 1.0;
        let mut lo = top - step;
        while mass(lo) < 1.0 {
            step *= 2.0;
            lo = top - step;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mass(mid) >= 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lambda = lo;
    }
    let mut w: Vec<f64> = (0..s).map(|i| (mu[i] - lambda).max(0.0) / (l * kappa[i])).collect();
    // Tiny curvatures amplify rounding in lambda; project the mass back to one.
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok((w, lambda))
}

/// Golden-section search for a convex slice on `[lo, hi]`.
///
/// The midpoint of the final bracket is compared with both endpoints and the best is
/// returned, so boundary minima are hit exactly.
pub fn amplitude_line_search<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo <= hi) || !(tol > 0.0) {
        return Err(domain(format!("invalid search interval [{lo}, {hi}]")));
    }
    let eval = |t: f64| -> Result<f64> {
        let v = f(t);
        if v.is_nan() {
            Err(HewError::Numerical(format!("objective is NaN at theta = {t}")))
        } else {
            Ok(v)
        }
    };
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = eval(d)?;
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (eval(mid)?, mid);
    for t in [lo, hi] {
        let v = eval(t)?;
        if v < best.0 {
            best = (v, t);
        }
    }
    Ok(best.1)
}

/// Result of the alternating block solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlternatingOutcome {
    pub pair: ControlPair,
    pub objective: f64,
    /// Threshold of the last weight solve.
    pub lambda: f64,
    /// Objective after initialisation and after every accepted block step.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub coeffs: CertCoeffs,
}

struct Problem<'a> {
    state: &'a UpperState,
    schedules: &'a [NodeSchedule],
    geom: &'a Geometry,
    u_sharp: f64,
}

impl Problem<'_> {
    fn coeffs(&self, theta: &[f64]) -> CertCoeffs {
        CertCoeffs {
            rows: theta
                .iter()
                .zip(self.schedules)
                .map(|(&t, s)| cert_row(t, self.state, s, self.geom))
                .collect(),
        }
    }

    fn value(&self, w: &[f64], theta: &[f64]) -> f64 {
        objective_value(&self.coeffs(theta), w, self.u_sharp, self.geom.l)
    }

    fn amplitudes(&self, w: &[f64], current: &[f64], tol: f64) -> Result<Vec<f64>> {
        let l = self.geom.l;
        (0..self.schedules.len())
            .into_par_iter()
            .map(|i| {
                let sc = &self.schedules[i];
                if w[i] == 0.0 {
                    return Ok(current[i]);
                }
                amplitude_line_search(
                    |t| {
                        let row = cert_row(t, self.state, sc, self.geom);
                        -w[i] * row.mu + 0.5 * l * w[i] * w[i] * row.kappa
                    },
                    sc.theta_lo,
                    sc.theta_hi,
                    tol,
                )
            })
            .collect()
    }
}

/// Alternating minimisation of the certificate objective over weights and amplitudes.
///
/// Start: the best of uniform weights paired with per-node optimal, lower, upper and
/// midpoint amplitudes, and the optional `benchmark` pair. Each block step is accepted only
/// if it does not increase the objective, so the trace is nonincreasing.
pub fn alternating_solve(
    state: &UpperState,
    schedules: &[NodeSchedule],
    geom: &Geometry,
    config: &SolverConfig,
    benchmark: Option<&ControlPair>,
) -> Result<AlternatingOutcome> {
    config.validate()?;
    let s = schedules.len();
    if s == 0 {
        return Err(domain("alternating solve needs at least one node"));
    }
    for sc in schedules {
        sc.validate()?;
    }
    let prob = Problem { state, schedules, geom, u_sharp: state.sharp(geom.bar_f()) };
    let uniform = vec![1.0 / s as f64; s];
    let lo: Vec<f64> = schedules.iter().map(|x| x.theta_lo).collect();
    let hi: Vec<f64> = schedules.iter().map(|x| x.theta_hi).collect();
    let mid: Vec<f64> = schedules.iter().map(|x| 0.5 * (x.theta_lo + x.theta_hi)).collect();
    let searched = prob.amplitudes(&uniform, &mid, config.theta_tol)?;
    let mut candidates = vec![
        ControlPair { w: uniform.clone(), theta: searched },
        ControlPair { w: uniform.clone(), theta: mid },
        ControlPair { w: uniform.clone(), theta: lo },
        ControlPair { w: uniform, theta: hi },
    ];
    if let Some(b) = benchmark {
        if b.w.len() != s || b.theta.len() != s {
            return Err(domain("benchmark pair has the wrong length"));
        }
        candidates.push(b.clone());
    }
    let mut best = candidates.swap_remove(0);
    let mut best_val = prob.value(&best.w, &best.theta);
    for c in candidates {
        let v = prob.value(&c.w, &c.theta);
        if v < best_val {
            best = c;
            best_val = v;
        }
    }
    if !best_val.is_finite() {
        return Err(HewError::Numerical(format!("certificate objective is {best_val} at the start")));
    }
    let stop = config.sweep_eps * (best_val.abs() + 1.0);
    let mut trace = vec![best_val];
    let mut lambda = f64::NAN;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let start = best_val;
        let coeffs = prob.coeffs(&best.theta);
        let (w, lam) = kkt_threshold_weights(&coeffs.mu(), &coeffs.kappa(), geom.l)?;
        let v = objective_value(&coeffs, &w, prob.u_sharp, geom.l);
        if v <= best_val {
            best.w = w;
            best_val = v;
            lambda = lam;
            trace.push(v);
        }
        let theta = prob.amplitudes(&best.w, &best.theta, config.theta_tol)?;
        let v = prob.value(&best.w, &theta);
        if v <= best_val {
            best.theta = theta;
            best_val = v;
            trace.push(v);
        }
        if start - best_val <= stop {
            break;
        }
    }
    let coeffs = prob.coeffs(&best.theta);
    Ok(AlternatingOutcome { pair: best, objective: best_val, lambda, trace, sweeps, coeffs })
}

/// Frank–Wolfe solution of a simplex QP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimise `<g, D w> + (curvature/2) ||D w||^2` over the simplex face on `active`.
///
/// `endpoints[i]` is column `i` of `D`; the returned vector has zeros off `active`.
pub fn simplex_quadratic_minimize(
    linear: &[f64],
    endpoints: &[Vec<f64>],
    curvature: f64,
    active: &[usize],
    config: &SolverConfig,
) -> Result<QpSolution> {
    if active.is_empty() {
        return Err(domain("active set must be nonempty"));
    }
    if !(curvature > 0.0) {
        return Err(domain("curvature must be positive"));
    }
    let n = endpoints.len();
    if active.iter().any(|&i| i >= n) || endpoints.iter().any(|c| c.len() != linear.len()) {
        return Err(domain("endpoint matrix and active set are inconsistent"));
    }
    let k = active.len();
    let cols: Vec<&Vec<f64>> = active.iter().map(|&i| &endpoints[i]).collect();
    let mut gram = vec![0.0; k * k];
    for a in 0..k {
        for b in a..k {
            let v = curvature * crate::linalg::dot(cols[a], cols[b]);
            gram[a * k + b] = v;
            gram[b * k + a] = v;
        }
    }
    let lin: Vec<f64> = cols.iter().map(|c| crate::linalg::dot(linear, c)).collect();
    let all: Vec<usize> = (0..k).collect();
    let sol = gram_simplex_qp(&lin, &gram, k, &all, config.qp_tol, config.qp_max_iters);
    if !sol.converged {
        warn!("simplex QP hit the iteration cap with gap {:.3e}", sol.gap);
    }
    let mut w = vec![0.0; n];
    for (j, &i) in active.iter().enumerate() {
        w[i] = sol.w[j];
    }
    Ok(QpSolution { w, ..sol })
}

/// Away-step Frank–Wolfe for `c^T w + w^T G w / 2` on the simplex face `active`, started from
/// the uniform point on that face.
pub(crate) fn gram_simplex_qp(c: &[f64], gram: &[f64], s: usize, active: &[usize], tol: f64, max_iters: usize) -> QpSolution {
    let mut w = vec![0.0; s];
    for &i in active {
        w[i] = 1.0 / active.len() as f64;
    }
    let mut gw = vec![0.0; s];
    for i in 0..s {
        gw[i] = (0..s).map(|j| gram[i * s + j] * w[j]).sum();
    }
    let objective = |w: &[f64], gw: &[f64]| -> f64 { (0..s).map(|i| w[i] * (c[i] + 0.5 * gw[i])).sum() };
    let mut gap = f64::INFINITY;
    let mut it = 0;
    while it < max_iters {
        let grad: Vec<f64> = (0..s).map(|i| c[i] + gw[i]).collect();
        let fw = *active.iter().min_by(|&&a, &&b| grad[a].total_cmp(&grad[b])).unwrap();
        let away = *active
            .iter()
            .filter(|&&i| w[i] > 0.0)
            .max_by(|&&a, &&b| grad[a].total_cmp(&grad[b]))
            .unwrap();
        let wg: f64 = (0..s).map(|i| w[i] * grad[i]).sum();
        gap = wg - grad[fw];
        if gap <= tol {
            break;
        }
        it += 1;
        // Pick the direction with the larger first-order decrease.
        let away_gap = grad[away] - wg;
        let (toward, sign, gmax) = if gap >= away_gap {
            (fw, 1.0, 1.0)
        } else {
            let wa = w[away];
            (away, -1.0, if wa < 1.0 { wa / (1.0 - wa) } else { f64::INFINITY })
        };
        // Direction d = sign * (e_toward - w); G d = sign * (G e_toward - G w).
        let slope = sign * (grad[toward] - wg);
        let curv = gram[toward * s + toward] - 2.0 * gw[toward] + (0..s).map(|i| w[i] * gw[i]).sum::<f64>();
        let mut gamma = if curv > 0.0 { -slope / curv } else { gmax };
        gamma = gamma.clamp(0.0, gmax);
        if !gamma.is_finite() || gamma == 0.0 {
            break;
        }
        for i in 0..s {
            let e = if i == toward { 1.0 } else { 0.0 };
            w[i] += gamma * sign * (e - w[i]);
            gw[i] += gamma * sign * (gram[i * s + toward] - gw[i]);
        }
        for i in 0..s {
            if w[i] < 1e-300 {
                w[i] = 0.0;
            }
        }
    }
    // Renormalise against drift and refresh the cached product.
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    for i in 0..s {
        gw[i] = (0..s).map(|j| gram[i * s + j] * w[j]).sum();
    }
    let obj = objective(&w, &gw);
    QpSolution { w, objective: obj, gap, iterations: it, converged: gap <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn weight_obj(mu: &[f64], kappa: &[f64], l: f64, w: &[f64]) -> f64 {
        (0..mu.len()).map(|i| -w[i] * mu[i] + 0.5 * l * w[i] * w[i] * kappa[i]).sum()
    }

    /// Exact minimiser by enumerating supports of the threshold law.
    fn support_oracle(mu: &[f64], kappa: &[f64], l: f64) -> Vec<f64> {
        let s = mu.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << s) {
            let idx: Vec<usize> = (0..s).filter(|i| mask >> i & 1 == 1).collect();
            let den: f64 = idx.iter().map(|&i| 1.0 / (l * kappa[i])).sum();
            let num: f64 = idx.iter().map(|&i| mu[i] / (l * kappa[i])).sum();
            let lam = (num - 1.0) / den;
            let mut w = vec![0.0; s];
            let mut ok = true;
            for &i in &idx {
                w[i] = (mu[i] - lam) / (l * kappa[i]);
                if w[i] < 0.0 {
                    ok = false;
                }
            }
            if ok {
                let v = weight_obj(mu, kappa, l, &w);
                if best.as_ref().is_none_or(|b| v < b.0) {
                    best = Some((v, w));
                }
            }
        }
        best.unwrap().1
    }

    fn grid_min(s: usize, step: f64, f: &dyn Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
        let m = (1.0 / step).round() as usize;
        let mut best = (f64::INFINITY, vec![]);
        let mut w = vec![0.0; s];
        fn rec(k: usize, left: usize, m: usize, w: &mut Vec<f64>, f: &dyn Fn(&[f64]) -> f64, best: &mut (f64, Vec<f64>)) {
            let s = w.len();
            if k == s - 1 {
                w[k] = left as f64 / m as f64;
                let v = f(w);
                if v < best.0 {
                    *best = (v, w.clone());
                }
                return;
            }
            for j in 0..=left {
                w[k] = j as f64 / m as f64;
                rec(k + 1, left - j, m, w, f, best);
            }
        }
        rec(0, m, m, &mut w, f, &mut best);
        best
    }

    #[test]
    fn kkt_examples() {
        let (w, l) = kkt_threshold_weights(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!((w[0], w[1], l), (0.5, 0.5, 0.5));
        let (w, l) = kkt_threshold_weights(&[2.0, 1.0], &[1.0, 1.0], 2.0).unwrap();
        assert!((l - 0.5).abs() < 1e-15 && (w[0] - 0.75).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        let (w, _) = kkt_threshold_weights(&[1.0, -5.0], &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(w, vec![1.0, 0.0]);
    }

    #[test]
    fn kkt_zero_curvature_falls_back() {
        let (w, l) = kkt_threshold_weights(&[0.0, 0.0, 0.0], &[0.0, 0.0, 0.0], 1.0).unwrap();
        assert!(l.is_nan());
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let (w, _) = kkt_threshold_weights(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kkt_matches_grid_and_support_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let s = 2 + trial % 4;
            let mu: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let kappa: Vec<f64> = (0..s).map(|_| rng.random_range(0.1..2.0)).collect();
            let l = rng.random_range(0.5..3.0);
            let (w, _) = kkt_threshold_weights(&mu, &kappa, l).unwrap();
            let exact = support_oracle(&mu, &kappa, l);
            for i in 0..s {
                assert!((w[i] - exact[i]).abs() < 1e-10);
            }
            if s <= 3 {
                let (gv, gw) = grid_min(s, 1e-3, &|x| weight_obj(&mu, &kappa, l, x));
                let v = weight_obj(&mu, &kappa, l, &w);
                assert!(v <= gv + 1e-12);
                assert!((v - gv).abs() <= 1e-6);
                for i in 0..s {
                    assert!((w[i] - gw[i]).abs() <= 1e-3 + 1e-12, "{w:?} vs {gw:?}");
                }
            }
        }
    }

    #[test]
    fn line_search_examples() {
        let t = amplitude_line_search(|t| t, 0.01, 1.0, 1e-6).unwrap();
        assert_eq!(t, 0.01);
        let t = amplitude_line_search(|t| (t - 0.3) * (t - 0.3), 0.01, 1.0, 1e-6).unwrap();
        assert!((t - 0.3).abs() <= 1e-6);
        let err = amplitude_line_search(|t| if t > 0.5 { f64::NAN } else { t }, 0.01, 1.0, 1e-6).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }

    fn random_instance(rng: &mut ChaCha8Rng, s: usize) -> (UpperState, Vec<NodeSchedule>, Geometry) {
        let geom = Geometry::new(rng.random_range(0.5..2.0), rng.random_range(0.5..3.0)).unwrap();
        let state = UpperState { u: rng.random_range(0.0..geom.bar_f() * 1.5), q: rng.random_range(0.0..1.0) };
        let scheds = (0..s)
            .map(|_| {
                let lo = rng.random_range(0.001..0.05);
                let hi = rng.random_range(lo..0.3);
                NodeSchedule::new(rng.random_range(1..8), rng.random_range(1..16), rng.random_range(0.0..2.0), lo, hi).unwrap()
            })
            .collect();
        (state, scheds, geom)
    }

    #[test]
    fn certificate_slice_matches_grid_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let (state, scheds, geom) = random_instance(&mut rng, 1);
            let sc = scheds[0];
            let f = |t: f64| {
                let r = cert_row(t, &state, &sc, &geom);
                -r.mu + 0.5 * geom.l * r.kappa
            };
            let t = amplitude_line_search(f, sc.theta_lo, sc.theta_hi, 1e-9).unwrap();
            let step = (sc.theta_hi - sc.theta_lo) / 1e4;
            let (mut gv, mut gt) = (f64::INFINITY, 0.0);
            for k in 0..=10_000 {
                let x = sc.theta_lo + k as f64 * step;
                if f(x) < gv {
                    gv = f(x);
                    gt = x;
                }
            }
            assert!(f(t) <= gv + 1e-15 * gv.abs().max(1.0));
            assert!((t - gt).abs() <= step + 1e-9);
        }
    }

    #[test]
    fn symmetric_and_single_node_cases() {
        let geom = Geometry::new(1.0, 2.0).unwrap();
        let state = UpperState { u: 1.5, q: 0.2 };
        let sc = NodeSchedule::new(4, 8, 0.5, 0.001, 0.2).unwrap();
        let out = alternating_solve(&state, &[sc; 4], &geom, &SolverConfig::default(), None).unwrap();
        for i in 0..4 {
            assert!((out.pair.w[i] - 0.25).abs() < 1e-12, "{out:?}");
            assert!((out.pair.theta[i] - out.pair.theta[0]).abs() < 1e-12);
        }
        let out1 = alternating_solve(&state, &[sc], &geom, &SolverConfig::default(), None).unwrap();
        assert_eq!(out1.pair.w, vec![1.0]);
        let f = |t: f64| {
            let r = cert_row(t, &state, &sc, &geom);
            -r.mu + 0.5 * geom.l * r.kappa
        };
        let t = amplitude_line_search(f, sc.theta_lo, sc.theta_hi, 1e-6).unwrap();
        assert!((out1.pair.theta[0] - t).abs() <= 1e-6);
    }

    #[test]
    fn alternating_beats_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let (state, scheds, geom) = random_instance(&mut rng, 3);
            let out = alternating_solve(&state, &scheds, &geom, &SolverConfig::default(), None).unwrap();
            assert!(out.trace.windows(2).all(|p| p[1] <= p[0]));
            let mid: Vec<f64> = scheds.iter().map(|s| 0.5 * (s.theta_lo + s.theta_hi)).collect();
            let uni = crate::certificate::objective_at(&state, &scheds, &geom, &[1.0 / 3.0; 3], &mid).unwrap();
            assert!(out.objective <= uni);
            for _ in 0..1000 {
                let mut w: Vec<f64> = (0..3).map(|_| -rng.random::<f64>().ln()).collect();
                let t: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= t);
                let th: Vec<f64> = scheds.iter().map(|s| rng.random_range(s.theta_lo..=s.theta_hi)).collect();
                let v = crate::certificate::objective_at(&state, &scheds, &geom, &w, &th).unwrap();
                assert!(out.objective <= v + 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn qp_examples() {
        let cfg = SolverConfig::default();
        let d = vec![vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.5]];
        let sol = simplex_quadratic_minimize(&[1.0, 1.0], &d, 1.0, &[1], &cfg).unwrap();
        assert_eq!(sol.w, vec![0.0, 1.0, 0.0]);
        let same = vec![vec![1.0, -2.0]; 3];
        let sol = simplex_quadratic_minimize(&[0.3, 0.1], &same, 2.0, &[0, 1, 2], &cfg).unwrap();
        for x in sol.w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn qp_matches_grid() {
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..14 {
            let n = if trial < 12 { 2 + trial % 2 } else { 4 };
            let d = 1 + trial % 3;
            let cols: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lam = rng.random_range(0.5..3.0);
            let active: Vec<usize> = (0..n).collect();
            let sol = simplex_quadratic_minimize(&g, &cols, lam, &active, &cfg).unwrap();
            assert!(sol.gap <= cfg.qp_tol);
            let psi = |w: &[f64]| {
                let mut dw = vec![0.0; d];
                for i in 0..n {
                    crate::linalg::axpy(w[i], &cols[i], &mut dw);
                }
                crate::linalg::dot(&g, &dw) + 0.5 * lam * crate::linalg::norm_sq(&dw)
            };
            let (gv, _) = grid_min(n, 1e-3, &psi);
            let v = psi(&sol.w);
            assert!(v <= gv + 1e-6, "{v} vs grid {gv}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn kkt_feasible_complementary_stationary(
            mu in proptest::collection::vec(-2.0f64..2.0, 1..8),
            kap in proptest::collection::vec(0.05f64..3.0, 8),
            l in 0.1f64..5.0,
        ) {
            let s = mu.len();
            let kappa = &kap[..s];
            let (w, lam) = kkt_threshold_weights(&mu, kappa, l).unwrap();
            let sum: f64 = w.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for i in 0..s {
                prop_assert!(w[i] >= 0.0);
                let r = l * kappa[i] * w[i] - mu[i] + lam;
                prop_assert!(r >= -1e-10);
                if w[i] > 0.0 {
                    prop_assert!(mu[i] > lam);
                    prop_assert!(r.abs() <= 1e-10);
                }
            }
            // Mass map is strictly decreasing around the solved threshold.
            let mass = |x: f64| -> f64 { (0..s).map(|i| (mu[i] - x).max(0.0) / (l * kappa[i])).sum() };
            prop_assert!(mass(lam - 1e-6) > mass(lam + 1e-6));
        }

        #[test]
        fn kkt_scale_invariance(
            mu in proptest::collection::vec(-2.0f64..2.0, 1..8),
            kap in proptest::collection::vec(0.05f64..3.0, 8),
            l in 0.1f64..5.0,
            c in 0.1f64..10.0,
        ) {
            let s = mu.len();
            let (w1, _) = kkt_threshold_weights(&mu, &kap[..s], l).unwrap();
            let mu2: Vec<f64> = mu.iter().map(|m| m * c).collect();
            let (w2, _) = kkt_threshold_weights(&mu2, &kap[..s], l * c).unwrap();
            for i in 0..s {
                prop_assert!((w1[i] - w2[i]).abs() <= 1e-10);
            }
        }
    }
}
