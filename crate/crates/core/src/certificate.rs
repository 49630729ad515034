//! One-step certificate objective and the coefficient systems behind every rate.
//!
//! * per-node certificate rows `(A_i, s_i, rho_i, kappa_i, mu_i)` and the objective `J`;
//! * the deterministic surrogate upper-state system `(u, chi)`;
//! * uniform-controller, PL and higher-order coefficients;
//! * heterogeneous and homogeneous post-local coefficient systems with closed rates.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, precondition, Result};
use crate::scalar::{linear_envelope, quadlin_envelope, t_a, QuadLinParams};

/// Pair bounding the gap and the worst control-variate tracking error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpperState {
    pub u: f64,
    pub q: f64,
}

impl UpperState {
    pub fn new(u: f64, q: f64) -> Result<Self> {
        if !(u >= 0.0 && q >= 0.0) || !u.is_finite() || !q.is_finite() {
            return Err(domain(format!("upper state must be finite and nonnegative, got ({u}, {q})")));
        }
        Ok(Self { u, q })
    }

    /// Capped gap `min(U, bar_f)`.
    pub fn sharp(&self, bar_f: f64) -> f64 {
        self.u.min(bar_f)
    }
}

/// Smoothness and ball radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub l: f64,
    pub r: f64,
}

impl Geometry {
    pub fn new(l: f64, r: f64) -> Result<Self> {
        if !(l > 0.0 && r > 0.0) || !l.is_finite() || !r.is_finite() {
            return Err(domain(format!("L and R must be finite and positive, got ({l}, {r})")));
        }
        Ok(Self { l, r })
    }

    pub fn bar_f(&self) -> f64 {
        0.5 * self.l * self.r * self.r
    }
}

/// Per-node schedule data used by the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeSchedule {
    pub h: usize,
    pub b: usize,
    pub v2: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl NodeSchedule {
    pub fn new(h: usize, b: usize, v2: f64, theta_lo: f64, theta_hi: f64) -> Result<Self> {
        let s = Self { h, b, v2, theta_lo, theta_hi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.b == 0 {
            return Err(domain("local horizon and batch size must be positive"));
        }
        if !(self.v2 >= 0.0) || !self.v2.is_finite() {
            return Err(domain(format!("variance proxy must be finite and nonnegative, got {}", self.v2)));
        }
        if !(self.theta_lo > 0.0 && self.theta_lo <= self.theta_hi) {
            return Err(domain(format!("amplitude box [{}, {}] is invalid", self.theta_lo, self.theta_hi)));
        }
        if self.theta_hi > 1.0 {
            return Err(domain(format!(
                "certificate evaluation requires amplitudes at most 1, got upper bound {}",
                self.theta_hi
            )));
        }
        Ok(())
    }

    /// `v^2 / (H b)`
    pub fn noise(&self) -> f64 {
        self.v2 / (self.h * self.b) as f64
    }
}

/// One row of certificate quantities for a node at a given amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertRow {
    pub a: f64,
    pub s: f64,
    pub rho: f64,
    pub kappa: f64,
    pub mu: f64,
}

/// Certificate row at amplitude `theta`.
pub fn node_coeffs(theta: f64, state: &UpperState, sched: &NodeSchedule, geom: &Geometry) -> Result<CertRow> {
    sched.validate()?;
    if !(theta >= sched.theta_lo && theta <= sched.theta_hi) {
        return Err(domain(format!(
            "amplitude {theta} outside [{}, {}]",
            sched.theta_lo, sched.theta_hi
        )));
    }
    Ok(cert_row(theta, state, sched, geom))
}

pub(crate) fn cert_row(theta: f64, state: &UpperState, sched: &NodeSchedule, geom: &Geometry) -> CertRow {
    let l = geom.l;
    let u = state.u;
    let q = state.q;
    let us = state.sharp(geom.bar_f());
    let e = (2.0 * theta).exp();
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let t4 = t3 * theta;
    let noise = sched.noise();
    let a = theta / (2.0 * l * geom.r * geom.r);
    // U# - T_A(U#) in cancellation-free form.
    let s = a * us * us / (1.0 + a * us);
    let rho = 32.0 * e * t3 * u + (16.0 * theta + 64.0 * e * t3) / l * q + 8.0 * e * t3 * noise / l;
    let kappa = 16.0 * e * t4 / l * u + 32.0 * e * t4 / (l * l) * q + (2.0 * t2 + 4.0 * e * t4) * noise / (l * l);
    CertRow { a, s, rho, kappa, mu: s - rho }
}

/// Rows for every node at the given amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertCoeffs {
    pub rows: Vec<CertRow>,
}

impl CertCoeffs {
    pub fn evaluate(thetas: &[f64], state: &UpperState, schedules: &[NodeSchedule], geom: &Geometry) -> Result<Self> {
        if thetas.len() != schedules.len() {
            return Err(domain("one amplitude per node is required"));
        }
        let rows = thetas
            .iter()
            .zip(schedules)
            .map(|(&t, s)| node_coeffs(t, state, s, geom))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn mu(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mu).collect()
    }

    pub fn kappa(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.kappa).collect()
    }
}

pub(crate) fn check_simplex(w: &[f64], tol: f64) -> Result<()> {
    let sum: f64 = w.iter().sum();
    if w.iter().any(|&x| x < -tol || !x.is_finite()) || (sum - 1.0).abs() > tol {
        return Err(crate::error::HewError::Input(format!("weights are off the simplex (sum {sum})")));
    }
    Ok(())
}

/// `U# - sum w_i mu_i + (L/2) sum w_i^2 kappa_i`.
pub fn objective_j(coeffs: &CertCoeffs, w: &[f64], state: &UpperState, geom: &Geometry) -> Result<f64> {
    if w.len() != coeffs.rows.len() {
        return Err(crate::error::HewError::Input("weight vector length mismatch".into()));
    }
    check_simplex(w, 1e-9)?;
    Ok(objective_value(coeffs, w, state.sharp(geom.bar_f()), geom.l))
}

pub(crate) fn objective_value(coeffs: &CertCoeffs, w: &[f64], u_sharp: f64, l: f64) -> f64 {
    let mut lin = 0.0;
    let mut quad = 0.0;
    for (row, &wi) in coeffs.rows.iter().zip(w) {
        lin += wi * row.mu;
        quad += wi * wi * row.kappa;
    }
    u_sharp - lin + 0.5 * l * quad
}

/// Objective at a full control pair.
pub fn objective_at(state: &UpperState, schedules: &[NodeSchedule], geom: &Geometry, w: &[f64], thetas: &[f64]) -> Result<f64> {
    let coeffs = CertCoeffs::evaluate(thetas, state, schedules, geom)?;
    objective_j(&coeffs, w, state, geom)
}

/// Benchmark gap `J(benchmark) - J(optimised)`.
pub fn benchmark_gap(j_benchmark: f64, j_opt: f64) -> f64 {
    j_benchmark - j_opt
}

/// Tracking coefficients of the deterministic surrogate system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSystem {
    pub a_chi: f64,
    pub b_chi: f64,
    pub c_chi: f64,
    pub bar_f: f64,
}

impl SurrogateSystem {
    /// `A = 6 max v^2/(H b)`, `B = 144 L theta_bar^2`, `C = 288 theta_bar^2`.
    pub fn new(schedules: &[NodeSchedule], geom: &Geometry, theta_bar: f64) -> Result<Self> {
        let max_noise = schedules.iter().map(|s| s.noise()).fold(0.0, f64::max);
        tracking(max_noise, geom, theta_bar)
    }

    /// Cap `max{Q0, (A + B bar_f)/(1 - C)}` for the tracking sequence; infinite when `C >= 1`.
    pub fn q_bar(&self, q0: f64) -> f64 {
        if self.c_chi >= 1.0 {
            return f64::INFINITY;
        }
        q0.max((self.a_chi + self.b_chi * self.bar_f) / (1.0 - self.c_chi))
    }

    /// `(min(bar_f, J_opt), A + B u + C chi)`.
    pub fn step(&self, state: &UpperState, j_opt: f64) -> UpperState {
        UpperState {
            u: self.bar_f.min(j_opt).max(0.0),
            q: self.a_chi + self.b_chi * state.u + self.c_chi * state.q,
        }
    }
}

fn tracking(max_noise: f64, geom: &Geometry, theta_bar: f64) -> Result<SurrogateSystem> {
    if !(theta_bar > 0.0 && theta_bar <= 1.0) {
        return Err(domain(format!("amplitude bound must lie in (0, 1], got {theta_bar}")));
    }
    let c_chi = 288.0 * theta_bar * theta_bar;
    Ok(SurrogateSystem { a_chi: 6.0 * max_noise, b_chi: 144.0 * geom.l * theta_bar * theta_bar, c_chi, bar_f: geom.bar_f() })
}

/// Uniform-controller specialisation inputs: common `H`, `b`, amplitude and weights `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformParams {
    pub vartheta: f64,
    pub n: usize,
    pub h: usize,
    pub b: usize,
    /// `max_i v_i^2`
    pub v2: f64,
    pub l: f64,
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformCoeffs {
    pub a_dir: f64,
    pub beta_dir: f64,
    pub gamma_dir: f64,
    pub delta_dir: f64,
    pub a_q: f64,
    pub b_q: f64,
    pub c_q: f64,
}

impl UniformCoeffs {
    pub fn new(p: &UniformParams) -> Result<Self> {
        if !(p.vartheta > 0.0) || p.n == 0 || p.h == 0 || p.b == 0 || !(p.v2 >= 0.0) {
            return Err(domain("uniform-controller parameters must be positive (v2 nonnegative)"));
        }
        Geometry::new(p.l, p.r)?;
        let t = p.vartheta;
        let n = p.n as f64;
        let l = p.l;
        let noise = p.v2 / (p.h * p.b) as f64;
        Ok(Self {
            a_dir: t / (2.0 * l * p.r * p.r),
            beta_dir: 48.0 * t.powi(3) + 32.0 * t.powi(4) / n,
            gamma_dir: 96.0 * t.powi(3) / l + 64.0 * t.powi(4) / (l * n),
            delta_dir: (16.0 * t.powi(3) + 16.0 * t * t / n) * noise / l,
            a_q: 6.0 * noise,
            b_q: 144.0 * l * t * t,
            c_q: 288.0 * t * t,
        })
    }
}

/// Coefficients of the PL contraction for `s_t = g_t + lambda q_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PLCoeffs {
    pub a_pl: f64,
    pub rho_pl: f64,
    pub lambda_pl: f64,
    pub floor: f64,
}

/// Contraction rate and multiplier from the uniform coefficients and PL constant `mu`.
pub fn pl_coeffs(uc: &UniformCoeffs, mu: f64, p: &UniformParams) -> Result<PLCoeffs> {
    if !(mu > 0.0) {
        return Err(domain("PL constant must be positive"));
    }
    let a = mu * p.vartheta / p.l - uc.beta_dir;
    let nu = 1.0 - uc.c_q;
    let bg = uc.b_q * uc.gamma_dir;
    if !(a > 0.0) {
        return Err(precondition(format!("a_PL > 0 fails (a_PL = {a})")));
    }
    if !(a < nu) {
        return Err(precondition(format!("a_PL < 1 - C_q fails (a_PL = {a}, 1 - C_q = {nu})")));
    }
    if !(a * nu > bg) {
        return Err(precondition(format!("a_PL (1 - C_q) > B_q gamma_dir fails ({} <= {bg})", a * nu)));
    }
    let disc = ((nu - a) * (nu - a) + 4.0 * bg).sqrt();
    // Smaller root of (a - r)(nu - r) = B gamma via the product of roots.
    let rho = 2.0 * (a * nu - bg) / (a + nu + disc);
    let lambda = 2.0 * uc.gamma_dir / (nu - a + disc);
    Ok(PLCoeffs { a_pl: a, rho_pl: rho, lambda_pl: lambda, floor: (uc.delta_dir + lambda * uc.a_q) / rho })
}

/// `(1 - rho)^t (g0 + lambda q0) + floor`.
pub fn pl_rate(pl: &PLCoeffs, g0: f64, q0: f64, t: u64) -> f64 {
    (1.0 - pl.rho_pl).powf(t as f64) * (g0 + pl.lambda_pl * q0) + pl.floor
}

/// Inputs of the higher-order benchmark bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoParams {
    pub uniform: UniformParams,
    /// Hessian-dissimilarity constant.
    pub h_sim: f64,
    /// Hessian Lipschitz constant.
    pub m_lip: f64,
    pub q0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HOCoeffs {
    pub k_ho: f64,
    pub a_ho: f64,
    pub a_ho_lower: f64,
    pub beta_ho: f64,
    pub delta_ho: f64,
    pub q_bar: f64,
}

impl HOCoeffs {
    pub fn new(p: &HoParams) -> Result<Self> {
        if !(p.h_sim >= 0.0 && p.m_lip >= 0.0 && p.q0 >= 0.0) {
            return Err(domain("higher-order constants must be nonnegative"));
        }
        let u = &p.uniform;
        let uc = UniformCoeffs::new(u)?;
        if !(uc.c_q < 1.0) {
            return Err(config(format!("288*vartheta^2 = {} must be < 1", uc.c_q)));
        }
        let t = u.vartheta;
        let l = u.l;
        let bar_f = 0.5 * l * u.r * u.r;
        let noise = u.v2 / (u.h * u.b) as f64;
        let k = (p.h_sim + p.m_lip * u.r).powi(2);
        let q_bar = p.q0.max((uc.a_q + uc.b_q * bar_f) / (1.0 - uc.c_q));
        let pre = 2.0 * t / l * k;
        Ok(Self {
            k_ho: k,
            a_ho: t / (2.0 * l * u.r * u.r),
            a_ho_lower: t / (2.0 * l * u.r * u.r * (1.0 + t / 4.0)),
            beta_ho: pre * 96.0 * t * t / l,
            delta_ho: pre * (32.0 * t * t * noise / (l * l) + 192.0 * t * t * q_bar / (l * l))
                + t * t * noise / (2.0 * l * u.n as f64),
            q_bar,
        })
    }
}

/// `beta/a + sqrt(delta/a) + sqrt(g0/(a T))` bounding the best of the first `T` iterates.
pub fn ho_best_iterate_bound(ho: &HOCoeffs, g0: f64, t: u64) -> Result<f64> {
    if t == 0 {
        return Err(domain("T must be at least 1"));
    }
    let a = ho.a_ho_lower;
    Ok(ho.beta_ho / a + (ho.delta_ho / a).sqrt() + (g0 / (a * t as f64)).sqrt())
}

/// `(V_1(a), V_2(a)) = (sum a_i v_i^2/(H_i b_i), sum a_i^2 v_i^2/(H_i b_i))`.
pub fn comparator_moments(a: &[f64], horizons: &[usize], batches: &[usize], v2: &[f64]) -> (f64, f64) {
    let mut v1 = 0.0;
    let mut v2s = 0.0;
    for i in 0..a.len() {
        let nz = v2[i] / (horizons[i] * batches[i]) as f64;
        v1 += a[i] * nz;
        v2s += a[i] * a[i] * nz;
    }
    (v1, v2s)
}

/// Noise-optimal comparator `a_i ~ H_i b_i / v_i^2`.
pub fn variance_optimal_comparator(horizons: &[usize], batches: &[usize], v2: &[f64]) -> Result<Vec<f64>> {
    if v2.iter().any(|&v| !(v > 0.0)) {
        return Err(domain("noise-optimal comparator needs every v_i^2 > 0"));
    }
    let raw: Vec<f64> = (0..v2.len()).map(|i| (horizons[i] * batches[i]) as f64 / v2[i]).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

fn check_window(vartheta: f64, lambda: f64, l: f64) -> Result<()> {
    if !(vartheta > 0.0) {
        return Err(domain("amplitude must be positive"));
    }
    if !(lambda > l && lambda <= 2.0 * l) {
        return Err(precondition(format!("L < Lambda <= 2L fails (Lambda = {lambda}, L = {l})")));
    }
    if !(lambda * vartheta <= 0.5 * l) {
        return Err(precondition(format!("Lambda*vartheta <= L/2 fails ({} > {})", lambda * vartheta, 0.5 * l)));
    }
    Ok(())
}

/// Inputs for the heterogeneous post-local system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetParams {
    pub vartheta: f64,
    pub lambda: f64,
    pub l: f64,
    pub r: f64,
    pub horizons: Vec<usize>,
    pub batches: Vec<usize>,
    pub v2: Vec<f64>,
    /// Deterministic comparator on the simplex.
    pub comparator: Vec<f64>,
    pub q0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostLocalHetCoeffs {
    pub a_het: f64,
    pub a_het_lower: f64,
    pub beta_het: f64,
    pub gamma_het: f64,
    pub delta_het: f64,
    pub v1: f64,
    pub v2: f64,
    pub a_chi: f64,
    pub b_chi: f64,
    pub c_chi: f64,
    pub q_bar: f64,
    pub d_het: f64,
    pub m_het: f64,
    pub bar_f: f64,
}

impl PostLocalHetCoeffs {
    pub fn new(p: &HetParams) -> Result<Self> {
        let geom = Geometry::new(p.l, p.r)?;
        check_window(p.vartheta, p.lambda, p.l)?;
        let n = p.horizons.len();
        if n == 0 || p.batches.len() != n || p.v2.len() != n || p.comparator.len() != n {
            return Err(domain("per-node vectors must be nonempty and of equal length"));
        }
        check_simplex(&p.comparator, 1e-9)?;
        let t = p.vartheta;
        let l = p.l;
        let lam = p.lambda;
        let (v1, v2) = comparator_moments(&p.comparator, &p.horizons, &p.batches, &p.v2);
        let max_noise = (0..n).map(|i| p.v2[i] / (p.horizons[i] * p.batches[i]) as f64).fold(0.0, f64::max);
        let sys = tracking(max_noise, &geom, t)?;
        if !(sys.c_chi < 1.0) {
            return Err(config(format!("288*vartheta^2 = {} must be < 1", sys.c_chi)));
        }
        let q_bar = sys.q_bar(p.q0);
        let a_het = t / (2.0 * l * p.r * p.r);
        let a_het_lower = t / (2.0 * l * p.r * p.r * (1.0 + t / 4.0));
        let beta_het = 192.0 * t.powi(3) + 32.0 * lam / l * t.powi(4);
        let gamma_het = 1.0 / (2.0 * (lam - l)) + 39.0 * t / l + 64.0 * lam / (l * l) * t.powi(4);
        let delta_het = 64.0 * t.powi(3) / l * v1 + 16.0 * lam * t * t / (l * l) * v2;
        let d_het = gamma_het * q_bar + delta_het;
        let m_het = QuadLinParams::with_root(a_het_lower, beta_het, d_het)?.m;
        Ok(Self {
            a_het,
            a_het_lower,
            beta_het,
            gamma_het,
            delta_het,
            v1,
            v2,
            a_chi: sys.a_chi,
            b_chi: sys.b_chi,
            c_chi: sys.c_chi,
            q_bar,
            d_het,
            m_het,
            bar_f: geom.bar_f(),
        })
    }

    /// One step of the capped `(U, Q)` recursion.
    pub fn step(&self, state: &UpperState) -> UpperState {
        UpperState {
            u: self.bar_f.min(t_a(self.a_het, state.u) + self.beta_het * state.u + self.gamma_het * state.q + self.delta_het),
            q: self.a_chi + self.b_chi * state.u + self.c_chi * state.q,
        }
    }

    pub fn quadlin(&self) -> QuadLinParams {
        QuadLinParams { a: self.a_het_lower, beta: self.beta_het, delta: self.d_het, m: self.m_het }
    }
}

/// Closed convex rate of the heterogeneous post-local controller after `T` rounds.
pub fn het_rate(c: &PostLocalHetCoeffs, u0: f64, t: u64) -> Result<f64> {
    if u0 > c.bar_f {
        return Err(precondition(format!("U0 <= bar_f fails ({u0} > {})", c.bar_f)));
    }
    quadlin_envelope(&c.quadlin(), u0, t)
}

/// Inputs for the homogeneous post-local system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomParams {
    pub vartheta: f64,
    pub lambda: f64,
    pub l: f64,
    pub r: f64,
    pub horizons: Vec<usize>,
    pub batches: Vec<usize>,
    pub v2: Vec<f64>,
    /// PL constant, when the PL branch is wanted.
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostLocalHomCoeffs {
    pub a_hom: f64,
    pub a_hom_lower: f64,
    pub beta_hom: f64,
    pub delta_hom: f64,
    pub v1_bar: f64,
    pub v_u: f64,
    pub rho_hom: Option<f64>,
    pub m_hom: f64,
}

impl PostLocalHomCoeffs {
    pub fn new(p: &HomParams) -> Result<Self> {
        Geometry::new(p.l, p.r)?;
        check_window(p.vartheta, p.lambda, p.l)?;
        let n = p.horizons.len();
        if n == 0 || p.batches.len() != n || p.v2.len() != n {
            return Err(domain("per-node vectors must be nonempty and of equal length"));
        }
        let t = p.vartheta;
        let l = p.l;
        let gap = p.lambda - l;
        let sum_noise: f64 = (0..n).map(|i| p.v2[i] / (p.horizons[i] * p.batches[i]) as f64).sum();
        let v1_bar = sum_noise / n as f64;
        let v_u = sum_noise / (n * n) as f64;
        let a_hom = t / (4.0 * l * p.r * p.r);
        let a_hom_lower = t / (4.0 * l * p.r * p.r * (1.0 + t / 8.0));
        let beta_hom = 16.0 * t.powi(3) + 16.0 * l * t * t / gap;
        let delta_hom = (4.0 * t.powi(3) / l + 4.0 * t * t / gap) * v1_bar + (t / l + 1.0 / gap) * v_u;
        let m_hom = QuadLinParams::with_root(a_hom_lower, beta_hom, delta_hom)?.m;
        let rho_hom = p.mu.map(|mu| mu * t / (2.0 * l) - beta_hom);
        Ok(Self { a_hom, a_hom_lower, beta_hom, delta_hom, v1_bar, v_u, rho_hom, m_hom })
    }

    pub fn quadlin(&self) -> QuadLinParams {
        QuadLinParams { a: self.a_hom_lower, beta: self.beta_hom, delta: self.delta_hom, m: self.m_hom }
    }
}

/// Closed convex rate of the homogeneous post-local controller after `T` rounds.
pub fn hom_rate(c: &PostLocalHomCoeffs, g0: f64, t: u64) -> Result<f64> {
    quadlin_envelope(&c.quadlin(), g0, t)
}

/// PL rate `(1 - rho)^T g0 + delta/rho` in its tight linear-envelope form.
pub fn hom_pl_rate(c: &PostLocalHomCoeffs, g0: f64, t: u64) -> Result<f64> {
    let rho = c.rho_hom.ok_or_else(|| precondition("PL rate needs a PL constant"))?;
    if !(rho > 0.0) {
        return Err(precondition(format!("rho_hom = mu*vartheta/(2L) - beta_hom > 0 fails (rho_hom = {rho})")));
    }
    if rho > 1.0 {
        return Err(precondition(format!("rho_hom = {rho} exceeds 1")));
    }
    linear_envelope(rho, c.delta_hom, c.delta_hom / rho, g0, t)
}

/// Per-round certificate record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateTraceRecord {
    pub round: usize,
    #[serde(rename = "U")]
    pub u: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "J_opt")]
    pub j_opt: f64,
    pub weights: Vec<f64>,
    pub thetas: Vec<f64>,
}
