//! Federated round procedures: the corrected controller with exact local control, the two
//! post-local controllers, and the conventional baselines, with communication accounting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::certificate::{
    benchmark_gap, objective_at, CertificateTraceRecord, Geometry, NodeSchedule, SurrogateSystem, UpperState,
};
use crate::error::{config, domain, HewError, Result};
use crate::linalg::{all_finite, axpy, dot, mean_of, norm, norm_sq, rel_dev, sub};
use crate::models::{FiniteSumModel, MinibatchOracle};
use crate::solver::{alternating_solve, simplex_quadratic_minimize, ControlPair, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "hew")]
    Hew,
    #[serde(rename = "hew-fixed")]
    HewFixed,
    #[serde(rename = "post-het")]
    PostHet,
    #[serde(rename = "post-hom")]
    PostHom,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "uniform-local-sgd")]
    UniformLocalSgd,
    #[serde(rename = "fednova")]
    FedNova,
    #[serde(rename = "scaffold")]
    Scaffold,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "mbsgd")]
    Mbsgd,
}

impl MethodKind {
    pub const ALL: [MethodKind; 10] = [
        MethodKind::Hew,
        MethodKind::HewFixed,
        MethodKind::PostHet,
        MethodKind::PostHom,
        MethodKind::FedAvg,
        MethodKind::UniformLocalSgd,
        MethodKind::FedNova,
        MethodKind::Scaffold,
        MethodKind::FedProx,
        MethodKind::Mbsgd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Hew => "hew",
            MethodKind::HewFixed => "hew-fixed",
            MethodKind::PostHet => "post-het",
            MethodKind::PostHom => "post-hom",
            MethodKind::FedAvg => "fedavg",
            MethodKind::UniformLocalSgd => "uniform-local-sgd",
            MethodKind::FedNova => "fednova",
            MethodKind::Scaffold => "scaffold",
            MethodKind::FedProx => "fedprox",
            MethodKind::Mbsgd => "mbsgd",
        }
    }

    /// Methods tuned over the amplitude and curvature grids instead of a step-size scale.
    pub fn uses_amplitude(self) -> bool {
        matches!(self, MethodKind::Hew | MethodKind::HewFixed | MethodKind::PostHet | MethodKind::PostHom)
    }

    /// Methods that maintain client control variates.
    pub fn is_corrected(self) -> bool {
        matches!(self, MethodKind::Hew | MethodKind::HewFixed | MethodKind::PostHet | MethodKind::Scaffold)
    }

    pub fn comm_profile(self) -> CommProfile {
        match self {
            MethodKind::Hew | MethodKind::HewFixed | MethodKind::PostHet => CommProfile { broadcast: 2, upload: 2, per_node: 1 },
            MethodKind::PostHom => CommProfile { broadcast: 1, upload: 1, per_node: 1 },
            MethodKind::Scaffold => CommProfile { broadcast: 2, upload: 2, per_node: 0 },
            _ => CommProfile { broadcast: 1, upload: 1, per_node: 0 },
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = HewError;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| config(format!("unknown method '{s}'")))
    }
}

/// Scalars per round: `broadcast*d + upload*d*S + per_node*S + nu`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommProfile {
    pub broadcast: u64,
    pub upload: u64,
    pub per_node: u64,
}

impl CommProfile {
    pub fn cost(&self, s: u64, d: u64, nu: u64) -> u64 {
        self.broadcast * d + self.upload * d * s + self.per_node * s + nu
    }
}

/// `2d + 2dS + S + nu` scalars for one corrected round.
pub fn comm_round_cost(s: u64, d: u64, nu: u64) -> u64 {
    2 * d + 2 * d * s + s + nu
}

/// Server iterate, server control and every client's control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub c_i: Vec<Vec<f64>>,
    pub round: usize,
}

impl ServerState {
    /// Zero controls.
    pub fn new(x0: Vec<f64>, n: usize) -> Self {
        let d = x0.len();
        Self { x: x0, c: vec![0.0; d], c_i: vec![vec![0.0; d]; n], round: 0 }
    }

    /// Controls initialised at the exact client gradients, server control at their mean.
    pub fn with_exact_controls(model: &dyn FiniteSumModel, x0: Vec<f64>) -> Self {
        let n = model.n_clients();
        let c_i: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| model.client_gradient(i, &x0)).collect();
        let c = mean_of(&c_i, x0.len());
        Self { x: x0, c, c_i, round: 0 }
    }

    /// `||c - mean(c_i)|| / (1 + ||c||)`.
    pub fn server_average_residual(&self) -> f64 {
        let mean = mean_of(&self.c_i, self.c.len());
        norm(&sub(&self.c, &mean)) / (1.0 + norm(&self.c))
    }

    /// `max_i ||c_i - grad F_i(x)||^2`.
    pub fn tracking_error(&self, model: &dyn FiniteSumModel) -> f64 {
        (0..self.c_i.len())
            .into_par_iter()
            .map(|i| norm_sq(&sub(&self.c_i[i], &model.client_gradient(i, &self.x))))
            .reduce(|| 0.0, f64::max)
    }
}

/// Model, per-client schedules and the smoothness used to normalise steps.
pub struct Federation<'a> {
    pub model: &'a dyn FiniteSumModel,
    pub horizons: Vec<usize>,
    pub batches: Vec<usize>,
    pub l: f64,
    pub seed: u64,
    oracles: Vec<MinibatchOracle>,
}

impl<'a> Federation<'a> {
    pub fn new(model: &'a dyn FiniteSumModel, horizons: Vec<usize>, batches: Vec<usize>, l: f64, seed: u64) -> Result<Self> {
        let n = model.n_clients();
        if horizons.len() != n || batches.len() != n {
            return Err(config(format!("expected {n} horizons and batch sizes")));
        }
        if horizons.contains(&0) {
            return Err(config("local horizons must be at least 1"));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(domain("step normaliser L must be positive"));
        }
        let oracles = (0..n)
            .map(|i| MinibatchOracle::new(model, i, batches[i], seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { model, horizons, batches, l, seed, oracles })
    }

    pub fn n(&self) -> usize {
        self.horizons.len()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        (0..self.n()).map(|i| self.model.component_count(i)).collect()
    }

    fn local_path(&self, i: usize, x: &[f64], eta: f64, shift: Option<&[f64]>, prox: f64, round: usize) -> LocalPath {
        let mut y = x.to_vec();
        let mut gsum = vec![0.0; x.len()];
        for step in 0..self.horizons[i] {
            let mut g = self.oracles[i].gradient(self.model, round as u64, step as u64, &y);
            axpy(1.0, &g, &mut gsum);
            if let Some(s) = shift {
                axpy(1.0, s, &mut g);
            }
            if prox > 0.0 {
                for k in 0..y.len() {
                    g[k] += prox * (y[k] - x[k]);
                }
            }
            axpy(-eta, &g, &mut y);
        }
        let h = self.horizons[i] as f64;
        gsum.iter_mut().for_each(|v| *v /= h);
        LocalPath { delta: sub(&y, x), grad_mean: gsum }
    }
}

struct LocalPath {
    delta: Vec<f64>,
    grad_mean: Vec<f64>,
}

/// Per-round diagnostics shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// Index of the round just completed (first round is 0).
    pub round: usize,
    pub active: Vec<usize>,
    /// Aggregation weights over all clients (zero off the active set).
    pub weights: Vec<f64>,
    pub thetas: Option<Vec<f64>>,
    pub comm: u64,
    /// `max_i ||c_i^+ - mean of local gradients|| / (1 + ||mean||)` on active nodes.
    pub control_identity: Option<f64>,
    pub server_identity: Option<f64>,
    /// Relative deviation between `d(uniform)` and `-(vartheta/L) g_bar`.
    pub hom_identity: Option<f64>,
    pub qp_gap: Option<f64>,
}

fn check_active(active: &[usize], n: usize) -> Result<()> {
    if active.is_empty() || active.iter().any(|&i| i >= n) || active.windows(2).any(|w| w[0] >= w[1]) {
        return Err(domain("active set must be a nonempty strictly increasing list of client indices"));
    }
    Ok(())
}

fn finish(state: &mut ServerState, what: &str) -> Result<()> {
    if !all_finite(&state.x) || !all_finite(&state.c) {
        return Err(HewError::Numerical(format!(
            "{what} produced a nonfinite iterate at round {} (|x| = {})",
            state.round,
            norm(&state.x)
        )));
    }
    state.round += 1;
    Ok(())
}

/// Corrected local paths with per-node steps; applies the control update to active clients
/// and returns displacements plus the control-identity residual.
fn corrected_paths(state: &mut ServerState, fed: &Federation, active: &[usize], thetas: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let round = state.round;
    let x = &state.x;
    let c = &state.c;
    let c_i = &state.c_i;
    let results: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = active
        .par_iter()
        .zip(thetas)
        .map(|(&i, &theta)| {
            let h = fed.horizons[i];
            let eta = theta / (fed.l * h as f64);
            let shift = sub(c, &c_i[i]);
            let path = fed.local_path(i, x, eta, Some(&shift), 0.0, round);
            // c_i+ = c_i - c + (x - y_H)/(H eta)
            let mut new_ci = c_i[i].clone();
            axpy(-1.0, c, &mut new_ci);
            axpy(-1.0 / (h as f64 * eta), &path.delta, &mut new_ci);
            (path.delta, new_ci, path.grad_mean)
        })
        .collect();
    let mut deltas = Vec::with_capacity(active.len());
    let mut dc_sum = vec![0.0; x.len()];
    let mut resid: f64 = 0.0;
    let n = state.c_i.len() as f64;
    for (k, (delta, new_ci, gmean)) in results.into_iter().enumerate() {
        let i = active[k];
        resid = resid.max(norm(&sub(&new_ci, &gmean)) / (1.0 + norm(&gmean)));
        let dc = sub(&new_ci, &state.c_i[i]);
        axpy(1.0, &dc, &mut dc_sum);
        state.c_i[i] = new_ci;
        deltas.push(delta);
    }
    axpy(1.0 / n, &dc_sum, &mut state.c);
    (deltas, resid)
}

fn apply_weights(x: &mut [f64], deltas: &[Vec<f64>], w: &[f64]) {
    for (d, &wi) in deltas.iter().zip(w) {
        if wi != 0.0 {
            axpy(wi, d, x);
        }
    }
}

fn full_weights(n: usize, active: &[usize], w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, &i) in active.iter().enumerate() {
        out[i] = w[k];
    }
    out
}

/// One round of the corrected controller with weights and amplitudes given on `active`.
pub fn hew_round(state: &mut ServerState, fed: &Federation, active: &[usize], pair: &ControlPair, nu: u64) -> Result<RoundMetrics> {
    check_active(active, fed.n())?;
    if pair.w.len() != active.len() || pair.theta.len() != active.len() {
        return Err(domain("control pair must have one entry per active node"));
    }
    crate::certificate::check_simplex(&pair.w, 1e-9)?;
    if pair.theta.iter().any(|&t| !(t > 0.0)) {
        return Err(domain("amplitudes must be positive"));
    }
    let round = state.round;
    let (deltas, resid) = corrected_paths(state, fed, active, &pair.theta);
    apply_weights(&mut state.x, &deltas, &pair.w);
    finish(state, "corrected round")?;
    let s = active.len() as u64;
    Ok(RoundMetrics {
        round,
        active: active.to_vec(),
        weights: full_weights(fed.n(), active, &pair.w),
        thetas: Some(pair.theta.clone()),
        comm: MethodKind::Hew.comm_profile().cost(s, fed.dim() as u64, nu),
        control_identity: Some(resid),
        server_identity: Some(state.server_average_residual()),
        hom_identity: None,
        qp_gap: None,
    })
}

/// One round of the heterogeneous post-local controller with common amplitude.
pub fn post_het_round(
    state: &mut ServerState,
    fed: &Federation,
    active: &[usize],
    vartheta: f64,
    lambda: f64,
    solver: &SolverConfig,
) -> Result<RoundMetrics> {
    check_active(active, fed.n())?;
    if !(vartheta > 0.0) || !(lambda > fed.l) {
        return Err(domain(format!("need vartheta > 0 and Lambda > L (got {vartheta}, {lambda})")));
    }
    let round = state.round;
    let c_pre = state.c.clone();
    let thetas = vec![vartheta; active.len()];
    let (deltas, resid) = corrected_paths(state, fed, active, &thetas);
    let mut cols = vec![vec![0.0; fed.dim()]; fed.n()];
    for (k, &i) in active.iter().enumerate() {
        cols[i] = deltas[k].clone();
    }
    let sol = simplex_quadratic_minimize(&c_pre, &cols, lambda, active, solver)?;
    apply_weights(&mut state.x, &cols, &sol.w);
    finish(state, "post-local corrected round")?;
    Ok(RoundMetrics {
        round,
        active: active.to_vec(),
        weights: sol.w,
        thetas: Some(thetas),
        comm: MethodKind::PostHet.comm_profile().cost(active.len() as u64, fed.dim() as u64, 0),
        control_identity: Some(resid),
        server_identity: Some(state.server_average_residual()),
        hom_identity: None,
        qp_gap: Some(sol.gap),
    })
}

/// `Psi(w) = <g, D w> + (Lambda/2) ||D w||^2`.
pub fn post_local_objective(linear: &[f64], cols: &[Vec<f64>], lambda: f64, w: &[f64]) -> f64 {
    let mut dw = vec![0.0; linear.len()];
    apply_weights(&mut dw, cols, w);
    dot(linear, &dw) + 0.5 * lambda * norm_sq(&dw)
}

/// One round of the homogeneous post-local controller (plain paths, full participation).
pub fn post_hom_round(state: &mut ServerState, fed: &Federation, vartheta: f64, lambda: f64, solver: &SolverConfig) -> Result<RoundMetrics> {
    if !(vartheta > 0.0) || !(lambda > fed.l) {
        return Err(domain(format!("need vartheta > 0 and Lambda > L (got {vartheta}, {lambda})")));
    }
    let n = fed.n();
    let round = state.round;
    let x = state.x.clone();
    let paths: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let eta = vartheta / (fed.l * fed.horizons[i] as f64);
            (fed.local_path(i, &x, eta, None, 0.0, round).delta, eta * fed.horizons[i] as f64)
        })
        .collect();
    let mut g_bar = vec![0.0; x.len()];
    let mut d_uniform = vec![0.0; x.len()];
    for (delta, eh) in &paths {
        axpy(-1.0 / (eh * n as f64), delta, &mut g_bar);
        axpy(1.0 / n as f64, delta, &mut d_uniform);
    }
    let predicted: Vec<f64> = g_bar.iter().map(|g| -vartheta / fed.l * g).collect();
    let hom_identity = rel_dev(&d_uniform, &predicted);
    let cols: Vec<Vec<f64>> = paths.into_iter().map(|p| p.0).collect();
    let active: Vec<usize> = (0..n).collect();
    let sol = simplex_quadratic_minimize(&g_bar, &cols, lambda, &active, solver)?;
    apply_weights(&mut state.x, &cols, &sol.w);
    finish(state, "post-local plain round")?;
    Ok(RoundMetrics {
        round,
        active,
        weights: sol.w,
        thetas: Some(vec![vartheta; n]),
        comm: MethodKind::PostHom.comm_profile().cost(n as u64, fed.dim() as u64, 0),
        control_identity: None,
        server_identity: None,
        hom_identity: Some(hom_identity),
        qp_gap: Some(sol.gap),
    })
}

/// Hyperparameters of the step-size-normalised baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    /// Local step is `lr_scale / L`.
    pub lr_scale: f64,
    /// Proximal coefficient for the proximal variant.
    pub prox_mu: f64,
}

/// One round of a conventional baseline.
pub fn baseline_round(
    state: &mut ServerState,
    fed: &Federation,
    kind: MethodKind,
    hp: &BaselineParams,
    active: &[usize],
) -> Result<RoundMetrics> {
    check_active(active, fed.n())?;
    if !(hp.lr_scale > 0.0) || hp.prox_mu < 0.0 {
        return Err(config("baseline step scale must be positive and proximal coefficient nonnegative"));
    }
    let round = state.round;
    let eta = hp.lr_scale / fed.l;
    let n = fed.n();
    let sizes = fed.client_sizes();
    let data_weights = |active: &[usize]| -> Vec<f64> {
        let tot: f64 = active.iter().map(|&i| sizes[i] as f64).sum();
        active.iter().map(|&i| sizes[i] as f64 / tot).collect()
    };
    let uniform = vec![1.0 / active.len() as f64; active.len()];
    let x = state.x.clone();
    let mut control_identity = None;
    let mut server_identity = None;
    let w = match kind {
        MethodKind::FedAvg | MethodKind::UniformLocalSgd | MethodKind::FedProx | MethodKind::FedNova => {
            let prox = if kind == MethodKind::FedProx { hp.prox_mu } else { 0.0 };
            let deltas: Vec<Vec<f64>> =
                active.par_iter().map(|&i| fed.local_path(i, &x, eta, None, prox, round).delta).collect();
            let w = if kind == MethodKind::UniformLocalSgd { uniform } else { data_weights(active) };
            if kind == MethodKind::FedNova {
                // Normalise by local step counts, rescale by the effective count.
                let tau_eff: f64 = active.iter().zip(&w).map(|(&i, wi)| wi * fed.horizons[i] as f64).sum();
                let eff: Vec<f64> = active.iter().zip(&w).map(|(&i, wi)| tau_eff * wi / fed.horizons[i] as f64).collect();
                apply_weights(&mut state.x, &deltas, &eff);
            } else {
                apply_weights(&mut state.x, &deltas, &w);
            }
            w
        }
        MethodKind::Scaffold => {
            let thetas: Vec<f64> = active.iter().map(|&i| hp.lr_scale * fed.horizons[i] as f64).collect();
            let (deltas, resid) = corrected_paths(state, fed, active, &thetas);
            apply_weights(&mut state.x, &deltas, &uniform);
            control_identity = Some(resid);
            server_identity = Some(state.server_average_residual());
            uniform
        }
        MethodKind::Mbsgd => {
            let grads: Vec<Vec<f64>> =
                active.par_iter().map(|&i| fed.oracles[i].gradient(fed.model, round as u64, 0, &x)).collect();
            let g = mean_of(&grads, x.len());
            axpy(-eta, &g, &mut state.x);
            uniform
        }
        other => return Err(config(format!("'{other}' is not a baseline"))),
    };
    finish(state, kind.name())?;
    Ok(RoundMetrics {
        round,
        active: active.to_vec(),
        weights: full_weights(n, active, &w),
        thetas: None,
        comm: kind.comm_profile().cost(active.len() as u64, fed.dim() as u64, 0),
        control_identity,
        server_identity,
        hom_identity: None,
        qp_gap: None,
    })
}

/// Geometry and proxies for certificate evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSetup {
    pub geometry: Geometry,
    /// Per-client variance proxies (exact or executable).
    pub v2: Vec<f64>,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Initial upper gap; `bar_f` when absent.
    pub u0: Option<f64>,
    pub q0: f64,
    /// Count one uploaded proxy scalar per node per round.
    pub upload_proxies: bool,
}

/// Everything needed to run one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub vartheta: f64,
    /// `Lambda / L`.
    pub lambda_ratio: f64,
    pub lr_scale: f64,
    pub prox_mu: f64,
    /// Run the corrected controller with per-round exact local control (amplitudes at most 1).
    pub certificate_mode: bool,
    pub certificate: Option<CertificateSetup>,
    pub solver: SolverConfig,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            vartheta: 1.0,
            lambda_ratio: 1.5,
            lr_scale: 0.4,
            prox_mu: 0.01,
            certificate_mode: false,
            certificate: None,
            solver: SolverConfig::default(),
        }
    }
}

/// Output of one runner step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub metrics: RoundMetrics,
    pub certificate: Option<CertificateTraceRecord>,
    /// `J(uniform weights, midpoint amplitudes) - J(optimised)` at the pre-round state.
    pub benchmark_gap: Option<f64>,
    /// Surrogate upper state after the round.
    pub upper: Option<UpperState>,
}

/// Drives one method round by round under full participation.
pub struct MethodRunner<'f, 'm> {
    fed: &'f Federation<'m>,
    spec: MethodSpec,
    state: ServerState,
    upper: Option<UpperState>,
    surrogate: Option<SurrogateSystem>,
    schedules: Vec<NodeSchedule>,
    fixed: Option<ControlPair>,
}

impl<'f, 'm> MethodRunner<'f, 'm> {
    pub fn new(fed: &'f Federation<'m>, spec: MethodSpec, x0: Vec<f64>) -> Result<Self> {
        if x0.len() != fed.dim() {
            return Err(domain("starting point has the wrong dimension"));
        }
        spec.solver.validate()?;
        let kind = spec.kind;
        if kind.uses_amplitude() && !(spec.vartheta > 0.0) {
            return Err(config("amplitude must be positive"));
        }
        if (matches!(kind, MethodKind::HewFixed | MethodKind::PostHet | MethodKind::PostHom)
            || (kind == MethodKind::Hew && !spec.certificate_mode))
            && !(spec.lambda_ratio > 1.0) {
                return Err(config("Lambda/L must exceed 1"));
            }
        let state = match kind {
            MethodKind::Hew | MethodKind::HewFixed | MethodKind::PostHet => ServerState::with_exact_controls(fed.model, x0),
            _ => ServerState::new(x0, fed.n()),
        };
        let mut runner = Self { fed, spec, state, upper: None, surrogate: None, schedules: vec![], fixed: None };
        let needs_cert = kind == MethodKind::HewFixed || (kind == MethodKind::Hew && runner.spec.certificate_mode);
        if needs_cert {
            let setup = runner
                .spec
                .certificate
                .clone()
                .ok_or_else(|| config(format!("{kind} needs certificate geometry and variance proxies")))?;
            if setup.v2.len() != fed.n() {
                return Err(config("one variance proxy per client is required"));
            }
            let (lo, hi) = if kind == MethodKind::HewFixed {
                let t = runner.spec.vartheta.min(1.0);
                (t, t)
            } else {
                if runner.spec.vartheta > 1.0 || setup.theta_hi > 1.0 {
                    return Err(config("certificate mode needs amplitudes at most 1"));
                }
                (setup.theta_lo, setup.theta_hi)
            };
            runner.schedules = (0..fed.n())
                .map(|i| NodeSchedule::new(fed.horizons[i], fed.batches[i], setup.v2[i], lo, hi))
                .collect::<Result<Vec<_>>>()?;
            let bar_f = setup.geometry.bar_f();
            let upper = UpperState::new(setup.u0.unwrap_or(bar_f).min(bar_f), setup.q0)?;
            if kind == MethodKind::HewFixed {
                let out = alternating_solve(&upper, &runner.schedules, &setup.geometry, &runner.spec.solver, None)?;
                runner.fixed = Some(ControlPair { w: out.pair.w, theta: vec![runner.spec.vartheta; fed.n()] });
            } else {
                runner.surrogate = Some(SurrogateSystem::new(&runner.schedules, &setup.geometry, hi)?);
                runner.upper = Some(upper);
            }
        }
        Ok(runner)
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn spec(&self) -> &MethodSpec {
        &self.spec
    }

    pub fn upper(&self) -> Option<UpperState> {
        self.upper
    }

    pub fn step(&mut self) -> Result<RoundRecord> {
        let fed = self.fed;
        let n = fed.n();
        let active: Vec<usize> = (0..n).collect();
        let spec = &self.spec;
        let lambda = spec.lambda_ratio * fed.l;
        match spec.kind {
            MethodKind::Hew if spec.certificate_mode => {
                let setup = spec.certificate.as_ref().expect("checked at construction");
                let upper = self.upper.expect("checked at construction");
                let out = alternating_solve(&upper, &self.schedules, &setup.geometry, &spec.solver, None)?;
                let mid: Vec<f64> = self.schedules.iter().map(|s| 0.5 * (s.theta_lo + s.theta_hi)).collect();
                let j_bench = objective_at(&upper, &self.schedules, &setup.geometry, &vec![1.0 / n as f64; n], &mid)?;
                let nu = if setup.upload_proxies { n as u64 } else { 0 };
                let metrics = hew_round(&mut self.state, fed, &active, &out.pair, nu)?;
                let next = self.surrogate.expect("checked at construction").step(&upper, out.objective);
                self.upper = Some(next);
                Ok(RoundRecord {
                    certificate: Some(CertificateTraceRecord {
                        round: metrics.round,
                        u: upper.u,
                        q: upper.q,
                        j_opt: out.objective,
                        weights: out.pair.w.clone(),
                        thetas: out.pair.theta.clone(),
                    }),
                    benchmark_gap: Some(benchmark_gap(j_bench, out.objective)),
                    upper: Some(next),
                    metrics,
                })
            }
            MethodKind::Hew | MethodKind::PostHet => {
                let m = post_het_round(&mut self.state, fed, &active, spec.vartheta, lambda, &spec.solver)?;
                Ok(plain_record(m))
            }
            MethodKind::HewFixed => {
                let pair = self.fixed.clone().expect("checked at construction");
                let m = hew_round(&mut self.state, fed, &active, &pair, 0)?;
                Ok(plain_record(m))
            }
            MethodKind::PostHom => {
                let m = post_hom_round(&mut self.state, fed, spec.vartheta, lambda, &spec.solver)?;
                Ok(plain_record(m))
            }
            kind => {
                let hp = BaselineParams { lr_scale: spec.lr_scale, prox_mu: spec.prox_mu };
                let m = baseline_round(&mut self.state, fed, kind, &hp, &active)?;
                Ok(plain_record(m))
            }
        }
    }
}

fn plain_record(metrics: RoundMetrics) -> RoundRecord {
    RoundRecord { metrics, certificate: None, benchmark_gap: None, upper: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{QuadraticComponent, SyntheticConfig, SyntheticQuadratic};
    use crate::models::FiniteSumModel;

    fn symmetric_model(n: usize) -> SyntheticQuadratic {
        let a = vec![2.0, 0.5, 0.5, 1.0];
        let comps = vec![
            QuadraticComponent::new(a.clone(), vec![1.0, -1.0], 2).unwrap(),
            QuadraticComponent::new(a, vec![-0.5, 2.0], 2).unwrap(),
        ];
        SyntheticQuadratic::replicate(comps, n, 2).unwrap()
    }

    fn hetero_model() -> SyntheticQuadratic {
        SyntheticQuadratic::random(&SyntheticConfig {
            n_clients: 4,
            components_per_client: vec![6, 5, 7, 4],
            dim: 3,
            eig_range: (0.2, 2.0),
            offset_scale: 1.0,
            client_shift: 1.0,
            shared_client_hessian: false,
            seed: 9,
        })
        .unwrap()
    }

    fn full_batches(m: &dyn FiniteSumModel) -> Vec<usize> {
        (0..m.n_clients()).map(|i| m.component_count(i)).collect()
    }

    #[test]
    fn comm_examples() {
        assert_eq!(comm_round_cost(20, 10, 0), 440);
        assert_eq!(comm_round_cost(0, 10, 0), 20);
        assert_eq!(comm_round_cost(20, 10, 20), 460);
        assert_eq!(MethodKind::Hew.comm_profile().cost(20, 10, 3), comm_round_cost(20, 10, 3));
    }

    #[test]
    fn method_names_round_trip() {
        for k in MethodKind::ALL {
            assert_eq!(k.name().parse::<MethodKind>().unwrap(), k);
            let js = serde_json::to_string(&k).unwrap();
            assert_eq!(js, format!("\"{}\"", k.name()));
        }
        assert!("sgd".parse::<MethodKind>().is_err());
    }

    #[test]
    fn h1_step_is_gradient_step_with_effective_amplitude() {
        let m = symmetric_model(3);
        let l = m.exact_smoothness();
        let fed = Federation::new(&m, vec![1; 3], full_batches(&m), l, 1).unwrap();
        let x0 = vec![3.0, -2.0];
        let mut st = ServerState::with_exact_controls(&m, x0.clone());
        let pair = ControlPair { w: vec![0.2, 0.5, 0.3], theta: vec![0.1, 0.4, 0.7] };
        hew_round(&mut st, &fed, &[0, 1, 2], &pair, 0).unwrap();
        let eff: f64 = pair.w.iter().zip(&pair.theta).map(|(w, t)| w * t).sum();
        let mut expect = x0.clone();
        axpy(-eff / l, &m.gradient(&x0), &mut expect);
        assert!(rel_dev(&st.x, &expect) <= 1e-12);
    }

    #[test]
    fn inactive_controls_are_untouched() {
        let m = hetero_model();
        let fed = Federation::new(&m, vec![2, 3, 1, 4], vec![2; 4], m.exact_smoothness(), 5).unwrap();
        let mut st = ServerState::with_exact_controls(&m, vec![1.0, 0.0, -1.0]);
        let before = st.c_i.clone();
        let pair = ControlPair { w: vec![0.6, 0.4], theta: vec![0.3, 0.3] };
        let met = hew_round(&mut st, &fed, &[1, 3], &pair, 0).unwrap();
        assert_eq!(st.c_i[0], before[0]);
        assert_eq!(st.c_i[2], before[2]);
        assert_ne!(st.c_i[1], before[1]);
        assert!(met.control_identity.unwrap() <= 1e-10);
        assert!(met.server_identity.unwrap() <= 1e-10);
        assert_eq!(met.weights, vec![0.0, 0.6, 0.0, 0.4]);
    }

    #[test]
    fn post_local_minimiser_beats_comparators() {
        let m = hetero_model();
        let l = m.exact_smoothness();
        let fed = Federation::new(&m, vec![1, 2, 4, 8], vec![2; 4], l, 3).unwrap();
        let cfg = SolverConfig::default();
        let mut st = ServerState::with_exact_controls(&m, vec![2.0, -1.0, 0.5]);
        for _ in 0..3 {
            let c_pre = st.c.clone();
            let mut probe = st.clone();
            let thetas = vec![0.5; 4];
            let (deltas, _) = corrected_paths(&mut probe, &fed, &[0, 1, 2, 3], &thetas);
            let met = post_het_round(&mut st, &fed, &[0, 1, 2, 3], 0.5, 1.5 * l, &cfg).unwrap();
            let psi = |w: &[f64]| post_local_objective(&c_pre, &deltas, 1.5 * l, w);
            let opt = psi(&met.weights);
            assert!(opt <= psi(&[0.25; 4]) + 1e-12);
            let v2: Vec<f64> = (0..4).map(|i| 1.0 + i as f64).collect();
            let a = crate::certificate::variance_optimal_comparator(&fed.horizons, &fed.batches, &v2).unwrap();
            assert!(opt <= psi(&a) + 1e-12);
        }
    }

    #[test]
    fn single_active_node_takes_its_endpoint() {
        let m = hetero_model();
        let l = m.exact_smoothness();
        let fed = Federation::new(&m, vec![1, 2, 4, 8], vec![3; 4], l, 3).unwrap();
        let mut st = ServerState::with_exact_controls(&m, vec![0.0; 3]);
        let met = post_het_round(&mut st, &fed, &[2], 0.5, 1.5 * l, &SolverConfig::default()).unwrap();
        assert_eq!(met.weights, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn hom_identity_and_gd_reduction() {
        let m = symmetric_model(4);
        let l = m.exact_smoothness();
        let fed = Federation::new(&m, vec![1; 4], full_batches(&m), l, 2).unwrap();
        let x0 = vec![1.0, 1.0];
        let mut st = ServerState::new(x0.clone(), 4);
        let met = post_hom_round(&mut st, &fed, 0.4, 1.5 * l, &SolverConfig::default()).unwrap();
        assert!(met.hom_identity.unwrap() <= 1e-12);
        let mut expect = x0.clone();
        axpy(-0.4 / l, &m.gradient(&x0), &mut expect);
        assert!(rel_dev(&st.x, &expect) <= 1e-12);

        let h = hetero_model();
        let fed = Federation::new(&h, vec![1, 3, 2, 5], vec![2; 4], h.exact_smoothness(), 2).unwrap();
        let mut st = ServerState::new(vec![0.5; 3], 4);
        for _ in 0..5 {
            let met = post_hom_round(&mut st, &fed, 0.7, 1.2 * fed.l, &SolverConfig::default()).unwrap();
            assert!(met.hom_identity.unwrap() <= 1e-10);
        }
    }

    #[test]
    fn baseline_coincidences() {
        let m = symmetric_model(3);
        let l = m.exact_smoothness();
        let fed = Federation::new(&m, vec![3; 3], vec![1; 3], l, 4).unwrap();
        let hp = BaselineParams { lr_scale: 0.3, prox_mu: 0.0 };
        let x0 = vec![1.0, -1.0];
        let run = |kind| {
            let mut st = ServerState::new(x0.clone(), 3);
            for _ in 0..3 {
                baseline_round(&mut st, &fed, kind, &hp, &[0, 1, 2]).unwrap();
            }
            st.x
        };
        let avg = run(MethodKind::FedAvg);
        assert!(rel_dev(&run(MethodKind::UniformLocalSgd), &avg) <= 1e-14);
        assert!(rel_dev(&run(MethodKind::FedNova), &avg) <= 1e-14);

        // Unequal horizons: FedNova differs from FedAvg.
        let fed2 = Federation::new(&m, vec![1, 2, 4], vec![1; 3], l, 4).unwrap();
        let mut a = ServerState::new(x0.clone(), 3);
        let mut b = ServerState::new(x0.clone(), 3);
        baseline_round(&mut a, &fed2, MethodKind::FedAvg, &hp, &[0, 1, 2]).unwrap();
        baseline_round(&mut b, &fed2, MethodKind::FedNova, &hp, &[0, 1, 2]).unwrap();
        assert!(rel_dev(&a.x, &b.x) > 1e-6);

        // Scaffold at H = 1 with full batches is a gradient step.
        let fed1 = Federation::new(&m, vec![1; 3], full_batches(&m), l, 4).unwrap();
        let mut st = ServerState::new(x0.clone(), 3);
        let met = baseline_round(&mut st, &fed1, MethodKind::Scaffold, &hp, &[0, 1, 2]).unwrap();
        let mut expect = x0.clone();
        axpy(-0.3 / l, &m.gradient(&x0), &mut expect);
        assert!(rel_dev(&st.x, &expect) <= 1e-14);
        assert!(met.server_identity.unwrap() <= 1e-10);
        assert!(baseline_round(&mut st, &fed1, MethodKind::PostHom, &hp, &[0, 1, 2]).is_err());
    }

    #[test]
    fn runner_is_deterministic() {
        let m = hetero_model();
        let fed = Federation::new(&m, vec![1, 2, 4, 8], vec![2; 4], m.exact_smoothness(), 11).unwrap();
        for kind in MethodKind::ALL {
            if kind == MethodKind::HewFixed {
                continue;
            }
            let mut spec = MethodSpec::new(kind);
            spec.vartheta = 0.5;
            let run = || {
                let mut r = MethodRunner::new(&fed, spec.clone(), vec![0.0; 3]).unwrap();
                (0..4).map(|_| r.step().unwrap()).collect::<Vec<_>>()
            };
            assert_eq!(run(), run(), "{kind}");
        }
    }
}
