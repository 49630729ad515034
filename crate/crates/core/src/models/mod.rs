//! Convex finite-sum federated objectives `F = (1/n) sum_i F_i`, `F_i = (1/m_i) sum_j phi_ij`.

mod quadratic;
mod softmax;

pub use quadratic::{QuadraticComponent, SyntheticConfig, SyntheticQuadratic};
pub use softmax::SoftmaxLinearModel;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, HewError, Result};
use crate::linalg::{axpy, dist, norm, scale};
use crate::rng::{keyed_rng, stream_rng, Stream};

/// A sum-of-sums objective with component, client and global oracles.
///
/// Implementors provide the component-level primitives; the aggregate oracles
/// have default implementations that sum in index order.
pub trait FiniteSumModel: Send + Sync {
    fn n_clients(&self) -> usize;
    fn dim(&self) -> usize;
    fn component_count(&self, client: usize) -> usize;
    fn component_value(&self, client: usize, j: usize, x: &[f64]) -> f64;
    /// `out += weight * grad phi_ij(x)`.
    fn add_component_gradient(&self, client: usize, j: usize, x: &[f64], weight: f64, out: &mut [f64]);

    /// Smoothness constant used to normalise step sizes.
    fn smoothness(&self) -> f64;

    /// A constant that bounds the smoothness of every individual component.
    fn component_smoothness_bound(&self) -> f64 {
        self.smoothness()
    }

    /// Exact `sup_{x in ball} (1/m_i) sum_j |grad phi_ij(x) - grad F_i(x)|^2` when available.
    fn exact_variance(&self, _client: usize, _ball: &BallSpec) -> Option<f64> {
        None
    }

    fn component_gradient(&self, client: usize, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_component_gradient(client, j, x, 1.0, &mut out);
        out
    }

    fn client_value(&self, client: usize, x: &[f64]) -> f64 {
        let m = self.component_count(client);
        (0..m).map(|j| self.component_value(client, j, x)).sum::<f64>() / m as f64
    }

    fn client_gradient(&self, client: usize, x: &[f64]) -> Vec<f64> {
        let m = self.component_count(client);
        let mut out = vec![0.0; self.dim()];
        for j in 0..m {
            self.add_component_gradient(client, j, x, 1.0, &mut out);
        }
        scale(1.0 / m as f64, &mut out);
        out
    }

    /// Average gradient over the listed components of one client.
    fn batch_gradient(&self, client: usize, batch: &[usize], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &j in batch {
            self.add_component_gradient(client, j, x, 1.0, &mut out);
        }
        scale(1.0 / batch.len() as f64, &mut out);
        out
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.n_clients();
        let vals: Vec<f64> = (0..n).into_par_iter().map(|i| self.client_value(i, x)).collect();
        vals.iter().sum::<f64>() / n as f64
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n_clients();
        let grads: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| self.client_gradient(i, x)).collect();
        let mut out = vec![0.0; self.dim()];
        for g in &grads {
            axpy(1.0, g, &mut out);
        }
        scale(1.0 / n as f64, &mut out);
        out
    }
}

/// Reference optimum and the invariant ball `B(x_star, R)` used by the certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub x_star_ref: Vec<f64>,
    pub r: f64,
    pub l_hat: f64,
    pub f_star_ref: f64,
    /// False when the reference solve hit its iteration cap.
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl BallSpec {
    /// Deterministic gap cap `L R^2 / 2`.
    pub fn bar_f(&self) -> f64 {
        0.5 * self.l_hat * self.r * self.r
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        dist(x, &self.x_star_ref) <= self.r
    }
}

/// Minibatch gradient source for one client: uniform sampling without
/// replacement, keyed by `(seed, client, round, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MinibatchOracle {
    pub client: usize,
    pub batch: usize,
    pub seed: u64,
}

impl MinibatchOracle {
    pub fn new(model: &dyn FiniteSumModel, client: usize, batch: usize, seed: u64) -> Result<Self> {
        let m = model.component_count(client);
        if batch == 0 || batch > m {
            return Err(config(format!("batch size {batch} for client {client} must lie in [1, {m}]")));
        }
        Ok(Self { client, batch, seed })
    }

    /// Whether every draw is the full client gradient.
    pub fn is_full(&self, model: &dyn FiniteSumModel) -> bool {
        self.batch == model.component_count(self.client)
    }

    pub fn gradient(&self, model: &dyn FiniteSumModel, round: u64, step: u64, x: &[f64]) -> Vec<f64> {
        let m = model.component_count(self.client);
        if self.batch == m {
            return model.client_gradient(self.client, x);
        }
        let mut rng = keyed_rng(self.seed, self.client as u64, round, step);
        let mut idx = index::sample(&mut rng, m, self.batch).into_vec();
        idx.sort_unstable();
        model.batch_gradient(self.client, &idx, x)
    }
}

/// Minibatch gradient for an ad-hoc key, used by tests and diagnostics.
pub fn minibatch_gradient(oracle: &MinibatchOracle, model: &dyn FiniteSumModel, x: &[f64], round: u64, step: u64) -> Vec<f64> {
    oracle.gradient(model, round, step, x)
}

pub fn estimate_smoothness(model: &dyn FiniteSumModel) -> f64 {
    model.smoothness()
}

/// How per-client variance proxies are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// Empirical per-component gradient variance at a probe point, inflated by 1.5.
    Estimate { samples: usize, seed: u64 },
    /// Exact ball supremum; falls back to estimation when the model has no closed form.
    Exact { samples: usize, seed: u64 },
}

pub const VARIANCE_INFLATION: f64 = 1.5;

/// Empirical variance `(1/(k-1)) sum |g_j - mean|^2` of `k` uniformly drawn
/// component gradients at `x_probe`, before inflation.
pub fn empirical_component_variance(
    model: &dyn FiniteSumModel,
    client: usize,
    x_probe: &[f64],
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k < 2 {
        return Err(config(format!("variance proxy needs at least 2 samples, got {k}")));
    }
    let m = model.component_count(client);
    let mut rng = keyed_rng(seed, client as u64, u64::MAX, Stream::Variance as u64);
    let grads: Vec<Vec<f64>> = (0..k)
        .map(|_| model.component_gradient(client, rng.random_range(0..m), x_probe))
        .collect();
    let mut mean = vec![0.0; model.dim()];
    for g in &grads {
        axpy(1.0 / k as f64, g, &mut mean);
    }
    let ss: f64 = grads.iter().map(|g| dist(g, &mean).powi(2)).sum();
    Ok(ss / (k - 1) as f64)
}

/// Per-client variance proxy `v_i^2`.
pub fn estimate_variance_proxy(
    model: &dyn FiniteSumModel,
    client: usize,
    x_probe: &[f64],
    mode: VarianceMode,
    ball: Option<&BallSpec>,
) -> Result<f64> {
    match mode {
        VarianceMode::Exact { samples, seed } => {
            if let Some(v) = ball.and_then(|b| model.exact_variance(client, b)) {
                return Ok(v);
            }
            Ok(VARIANCE_INFLATION * empirical_component_variance(model, client, x_probe, samples, seed)?)
        }
        VarianceMode::Estimate { samples, seed } => {
            Ok(VARIANCE_INFLATION * empirical_component_variance(model, client, x_probe, samples, seed)?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceMethod {
    /// Plain gradient descent with step `1/L`; the objective decreases monotonically.
    GradientDescent,
    /// Nesterov acceleration with gradient-based restarts.
    Accelerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub method: ReferenceMethod,
    /// `R = radius_factor * |x0 - x_star_ref|`.
    pub radius_factor: f64,
}

impl ReferenceOptions {
    pub fn synthetic() -> Self {
        Self { tol: 1e-8, max_iter: 1_000_000, method: ReferenceMethod::GradientDescent, radius_factor: 2.0 }
    }

    pub fn data() -> Self {
        Self { tol: 1e-6, max_iter: 1_000_000, method: ReferenceMethod::Accelerated, radius_factor: 2.0 }
    }
}

/// Result of a reference solve including the objective trace.
#[derive(Debug, Clone)]
pub struct ReferenceSolve {
    pub ball: BallSpec,
    pub trace: Vec<f64>,
}

/// Centralised full-gradient solve from `x0` for a reference optimum.
pub fn compute_reference_optimum(model: &dyn FiniteSumModel, x0: &[f64], opts: &ReferenceOptions) -> Result<ReferenceSolve> {
    let l = model.smoothness();
    if !(l > 0.0) || !l.is_finite() {
        return Err(HewError::Numerical(format!("smoothness estimate {l} is not positive")));
    }
    let step = 1.0 / l;
    let mut x = x0.to_vec();
    let mut fx = model.value(&x);
    let mut g = model.gradient(&x);
    let mut gnorm = norm(&g);
    let mut trace = vec![fx];
    let mut iterations = 0;
    // Accelerated state: extrapolated point and momentum counter.
    let mut y = x.clone();
    let mut t_k = 1.0f64;
    while gnorm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        match opts.method {
            ReferenceMethod::GradientDescent => {
                axpy(-step, &g, &mut x);
                fx = model.value(&x);
                g = model.gradient(&x);
            }
            ReferenceMethod::Accelerated => {
                let gy = model.gradient(&y);
                let mut x_new = y.clone();
                axpy(-step, &gy, &mut x_new);
                // Gradient restart: drop the momentum when it points uphill.
                let uphill: f64 = gy.iter().zip(x_new.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
                let beta = if uphill > 0.0 {
                    t_k = 1.0;
                    0.0
                } else {
                    let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
                    let beta = (t_k - 1.0) / t_next;
                    t_k = t_next;
                    beta
                };
                y = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
                x = x_new;
                fx = model.value(&x);
                g = model.gradient(&x);
            }
        }
        gnorm = norm(&g);
        trace.push(fx);
        if !fx.is_finite() {
            return Err(HewError::Numerical(format!("reference solve diverged at iteration {iterations}")));
        }
    }
    let converged = gnorm <= opts.tol;
    if !converged {
        log::warn!("reference solve stopped at the iteration cap with |grad| = {gnorm:.3e}");
    }
    let r = opts.radius_factor * dist(x0, &x);
    let ball = BallSpec {
        x_star_ref: x,
        r: if r > 0.0 { r } else { opts.radius_factor.max(1.0) * f64::EPSILON.sqrt() },
        l_hat: l,
        f_star_ref: fx,
        converged,
        iterations,
        grad_norm: gnorm,
    };
    Ok(ReferenceSolve { ball, trace })
}

/// Uniform random probe points in `B(center, radius)`.
pub fn ball_probes(center: &[f64], radius: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, Stream::Probe);
    let d = center.len();
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| crate::rng::gauss(&mut rng)).collect();
            let nd = norm(&dir).max(f64::MIN_POSITIVE);
            let rad = radius * rng.random::<f64>().powf(1.0 / d as f64);
            center.iter().zip(&dir).map(|(c, u)| c + rad * u / nd).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_quadratic() -> SyntheticQuadratic {
        SyntheticQuadratic::random(&SyntheticConfig {
            n_clients: 3,
            components_per_client: vec![6, 4, 5],
            dim: 4,
            eig_range: (0.2, 2.0),
            offset_scale: 1.0,
            client_shift: 0.5,
            shared_client_hessian: false,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn full_batch_is_client_gradient() {
        let m = small_quadratic();
        let x = vec![0.3, -0.2, 0.5, 1.0];
        let o = MinibatchOracle::new(&m, 1, 4, 9).unwrap();
        assert_eq!(o.gradient(&m, 3, 2, &x), m.client_gradient(1, &x));
        assert!(MinibatchOracle::new(&m, 1, 5, 9).is_err());
    }

    #[test]
    fn minibatch_is_reproducible_and_unbiased() {
        let m = small_quadratic();
        let x = vec![0.3, -0.2, 0.5, 1.0];
        let o = MinibatchOracle::new(&m, 0, 2, 17).unwrap();
        assert_eq!(o.gradient(&m, 5, 1, &x), o.gradient(&m, 5, 1, &x));
        let k = 100_000u64;
        let d = m.dim();
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for s in 0..k {
            let g = o.gradient(&m, 0, s, &x);
            for q in 0..d {
                mean[q] += g[q] / k as f64;
                sq[q] += g[q] * g[q] / k as f64;
            }
        }
        let exact = m.client_gradient(0, &x);
        for q in 0..d {
            let sd = (sq[q] - mean[q] * mean[q]).max(0.0).sqrt();
            assert!((mean[q] - exact[q]).abs() <= 3.0 * sd / (k as f64).sqrt() + 1e-12, "coord {q}");
        }
    }

    #[test]
    fn variance_proxy_zero_for_identical_components() {
        let comp = QuadraticComponent::new(vec![1.0, 0.0, 0.0, 1.0], vec![1.0, 2.0], 2).unwrap();
        let m = SyntheticQuadratic::new(vec![vec![comp.clone(), comp.clone(), comp]], 2).unwrap();
        let v = empirical_component_variance(&m, 0, &[0.5, 0.5], 8, 1).unwrap();
        assert_eq!(v, 0.0);
        assert!(empirical_component_variance(&m, 0, &[0.5, 0.5], 1, 1).is_err());
    }

    #[test]
    fn reference_matches_closed_form() {
        let m = small_quadratic();
        let x0 = vec![0.0; 4];
        let sol = compute_reference_optimum(&m, &x0, &ReferenceOptions::synthetic()).unwrap();
        assert!(sol.ball.converged);
        let xs = m.x_star();
        assert!(dist(&sol.ball.x_star_ref, &xs) <= 1e-6);
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let acc = compute_reference_optimum(
            &m,
            &x0,
            &ReferenceOptions { method: ReferenceMethod::Accelerated, ..ReferenceOptions::synthetic() },
        )
        .unwrap();
        assert!(dist(&acc.ball.x_star_ref, &xs) <= 1e-6);
        assert!(acc.ball.iterations <= sol.ball.iterations);
    }

    #[test]
    fn gap_cap_holds_on_probes() {
        let m = small_quadratic();
        let ball = m.ball(&[1.0, -1.0, 0.5, 0.0], 1.0);
        for p in ball_probes(&ball.x_star_ref, ball.r, 200, 4) {
            assert!(m.value(&p) - ball.f_star_ref <= ball.bar_f() + 1e-10);
        }
    }
}
