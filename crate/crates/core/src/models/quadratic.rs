//! Synthetic quadratic finite sums with exact smoothness, optimum and variance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, Uniform};

use super::{BallSpec, FiniteSumModel};
use crate::error::{domain, HewError, Result};
use crate::linalg::{dist, dot};
use crate::rng::{gauss, keyed_rng, Stream};

/// `phi(x) = 0.5 x^T A x - b^T x` with `A` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticComponent {
    /// Row-major `d x d`.
    a: Vec<f64>,
    b: Vec<f64>,
}

impl QuadraticComponent {
    pub fn new(a: Vec<f64>, b: Vec<f64>, dim: usize) -> Result<Self> {
        if a.len() != dim * dim || b.len() != dim {
            return Err(domain(format!("component shapes {}x? / {} do not match dimension {dim}", a.len(), b.len())));
        }
        let m = DMatrix::from_row_slice(dim, dim, &a);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * (1.0 + m.amax()) {
            return Err(domain(format!("component matrix is not symmetric (max asymmetry {asym:.3e})")));
        }
        let eig = SymmetricEigen::new(m.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-12 * (1.0 + m.amax()) {
            return Err(domain(format!("component matrix is not PSD (min eigenvalue {min:.3e})")));
        }
        Ok(Self { a, b })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn offset(&self) -> &[f64] {
        &self.b
    }

    fn apply(&self, x: &[f64], out_weight: f64, out: &mut [f64]) {
        let d = x.len();
        for r in 0..d {
            let row = &self.a[r * d..(r + 1) * d];
            out[r] += out_weight * (dot(row, x) - self.b[r]);
        }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut quad = 0.0;
        for r in 0..d {
            quad += x[r] * dot(&self.a[r * d..(r + 1) * d], x);
        }
        0.5 * quad - dot(&self.b, x)
    }
}

/// Generator settings for [`SyntheticQuadratic::random`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_clients: usize,
    pub components_per_client: Vec<usize>,
    pub dim: usize,
    /// Eigenvalues of every component Hessian are drawn uniformly from this range.
    pub eig_range: (f64, f64),
    /// Scale of the within-client offset noise (drives `v_i^2`).
    pub offset_scale: f64,
    /// Scale of the per-client optimum shift (drives client heterogeneity).
    pub client_shift: f64,
    /// One Hessian per client shared by all of its components, which makes `v_i^2` constant in `x`.
    pub shared_client_hessian: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticQuadratic {
    dim: usize,
    clients: Vec<Vec<QuadraticComponent>>,
    l: f64,
    x_star: Vec<f64>,
    f_star: f64,
}

fn random_psd<R: rand::Rng>(dim: usize, range: (f64, f64), rng: &mut R) -> Vec<f64> {
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| gauss(rng));
    let q = g.qr().q();
    let eig = Uniform::new_inclusive(range.0, range.1).expect("valid eigenvalue range");
    let lam = DVector::<f64>::from_fn(dim, |_, _| eig.sample(rng));
    let m = &q * DMatrix::from_diagonal(&lam) * q.transpose();
    let m = 0.5 * (&m + m.transpose());
    let mut out = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            out[r * dim + c] = m[(r, c)];
        }
    }
    out
}

impl SyntheticQuadratic {
    pub fn new(clients: Vec<Vec<QuadraticComponent>>, dim: usize) -> Result<Self> {
        if clients.is_empty() || clients.iter().any(|c| c.is_empty()) {
            return Err(domain("every client needs at least one component"));
        }
        let n = clients.len();
        let mut l: f64 = 0.0;
        let mut a_bar = DMatrix::<f64>::zeros(dim, dim);
        let mut b_bar = DVector::<f64>::zeros(dim);
        for comps in &clients {
            let w = 1.0 / (n * comps.len()) as f64;
            for c in comps {
                if c.b.len() != dim {
                    return Err(domain("component dimension mismatch"));
                }
                let m = DMatrix::from_row_slice(dim, dim, &c.a);
                l = l.max(SymmetricEigen::new(m.clone()).eigenvalues.max());
                a_bar += w * m;
                b_bar += w * DVector::from_column_slice(&c.b);
            }
        }
        let x = a_bar
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&b_bar))
            .or_else(|| a_bar.clone().lu().solve(&b_bar))
            .ok_or_else(|| HewError::Numerical("average Hessian is singular; optimum is not unique".into()))?;
        let mut model = Self { dim, clients, l, x_star: x.iter().copied().collect(), f_star: 0.0 };
        model.f_star = model.value(&model.x_star.clone());
        Ok(model)
    }

    pub fn random(cfg: &SyntheticConfig) -> Result<Self> {
        if cfg.components_per_client.len() != cfg.n_clients {
            return Err(domain("components_per_client must have one entry per client"));
        }
        let d = cfg.dim;
        let mut clients = Vec::with_capacity(cfg.n_clients);
        for i in 0..cfg.n_clients {
            let mut rng = keyed_rng(cfg.seed, i as u64, 0, Stream::Synthetic as u64);
            let center: Vec<f64> = (0..d).map(|_| cfg.client_shift * gauss(&mut rng)).collect();
            let shared = random_psd(d, cfg.eig_range, &mut rng);
            let comps = (0..cfg.components_per_client[i])
                .map(|_| {
                    let a = if cfg.shared_client_hessian { shared.clone() } else { random_psd(d, cfg.eig_range, &mut rng) };
                    let mut b = vec![0.0; d];
                    for r in 0..d {
                        b[r] = dot(&a[r * d..(r + 1) * d], &center)
                            + cfg.offset_scale * gauss(&mut rng);
                    }
                    QuadraticComponent { a, b }
                })
                .collect();
            clients.push(comps);
        }
        Self::new(clients, d)
    }

    /// `n` identical copies of one client.
    pub fn replicate(client: Vec<QuadraticComponent>, n: usize, dim: usize) -> Result<Self> {
        Self::new(vec![client; n], dim)
    }

    pub fn x_star(&self) -> Vec<f64> {
        self.x_star.clone()
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn exact_smoothness(&self) -> f64 {
        self.l
    }

    /// Exact ball `B(x_star, factor * |x0 - x_star|)`.
    pub fn ball(&self, x0: &[f64], factor: f64) -> BallSpec {
        BallSpec {
            x_star_ref: self.x_star.clone(),
            r: factor * dist(x0, &self.x_star),
            l_hat: self.l,
            f_star_ref: self.f_star,
            converged: true,
            iterations: 0,
            grad_norm: 0.0,
        }
    }

    pub fn client_components(&self, client: usize) -> &[QuadraticComponent] {
        &self.clients[client]
    }

    /// Coefficients of `x -> (1/m) sum_j |grad phi_j(x) - grad F_i(x)|^2 = x^T M x - 2 p^T x + r`.
    fn variance_quadratic(&self, client: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
        let d = self.dim;
        let comps = &self.clients[client];
        let m = comps.len() as f64;
        let mut a_bar = DMatrix::<f64>::zeros(d, d);
        let mut b_bar = DVector::<f64>::zeros(d);
        for c in comps {
            a_bar += DMatrix::from_row_slice(d, d, &c.a) / m;
            b_bar += DVector::from_column_slice(&c.b) / m;
        }
        let mut mm = DMatrix::<f64>::zeros(d, d);
        let mut p = DVector::<f64>::zeros(d);
        let mut r = 0.0;
        for c in comps {
            let dj = DMatrix::from_row_slice(d, d, &c.a) - &a_bar;
            let ej = DVector::from_column_slice(&c.b) - &b_bar;
            mm += &dj * &dj / m;
            p += &dj * &ej / m;
            r += ej.norm_squared() / m;
        }
        (0.5 * (&mm + mm.transpose()), p, r)
    }

    /// Exact `v_i^2` on `B(center, radius)`.
    pub fn variance_sup(&self, client: usize, center: &[f64], radius: f64) -> f64 {
        let (mm, p, r) = self.variance_quadratic(client);
        let c = DVector::from_column_slice(center);
        let base = (c.transpose() * &mm * &c)[(0, 0)] - 2.0 * p.dot(&c) + r;
        if radius == 0.0 {
            return base.max(0.0);
        }
        let g_mat = radius * radius * &mm;
        let g_vec = radius * (&mm * &c - &p);
        (base + sphere_quadratic_max(&g_mat, &g_vec)).max(0.0)
    }
}

/// `max_{|u| = 1} u^T G u + 2 g^T u` for symmetric `G`.
pub(crate) fn sphere_quadratic_max(g_mat: &DMatrix<f64>, g_vec: &DVector<f64>) -> f64 {
    let eig = SymmetricEigen::new(g_mat.clone());
    let gam = &eig.eigenvalues;
    let h = eig.eigenvectors.transpose() * g_vec;
    let d = gam.len();
    let gmax = gam.max();
    let scale = gam.amax().max(1.0);
    let top: Vec<bool> = (0..d).map(|k| gmax - gam[k] <= 1e-12 * scale).collect();
    let hnorm = h.norm();
    let top_mass: f64 = (0..d).filter(|&k| top[k]).map(|k| h[k] * h[k]).sum();
    let secular = |lam: f64| -> f64 { (0..d).map(|k| (h[k] / (lam - gam[k])).powi(2)).sum() };
    let value_at = |z: &[f64]| -> f64 { (0..d).map(|k| gam[k] * z[k] * z[k] + 2.0 * h[k] * z[k]).sum() };

    let hard = top_mass <= (1e-14 * hnorm.max(1e-300)).powi(2) || hnorm == 0.0;
    if hard {
        // Multiplier pinned at the top eigenvalue; fill the remaining norm along a top eigenvector.
        let mut z = vec![0.0; d];
        let mut used = 0.0;
        for k in 0..d {
            if !top[k] {
                z[k] = h[k] / (gmax - gam[k]);
                used += z[k] * z[k];
            }
        }
        if used <= 1.0 {
            if let Some(k) = (0..d).find(|&k| top[k]) {
                z[k] = (1.0 - used).sqrt();
            }
            return value_at(&z);
        }
    }
    // Secular equation sum h_k^2 / (lam - gam_k)^2 = 1 on (gmax, gmax + |h|].
    let mut lo = gmax;
    let mut hi = gmax + hnorm;
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if secular(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = hi;
    let mut z: Vec<f64> = (0..d).map(|k| h[k] / (lam - gam[k])).collect();
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if zn > 0.0 {
        for v in z.iter_mut() {
            *v /= zn;
        }
    }
    value_at(&z)
}

impl FiniteSumModel for SyntheticQuadratic {
    fn n_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn component_count(&self, client: usize) -> usize {
        self.clients[client].len()
    }

    fn component_value(&self, client: usize, j: usize, x: &[f64]) -> f64 {
        self.clients[client][j].value(x)
    }

    fn add_component_gradient(&self, client: usize, j: usize, x: &[f64], weight: f64, out: &mut [f64]) {
        self.clients[client][j].apply(x, weight, out);
    }

    fn smoothness(&self) -> f64 {
        self.l
    }

    fn exact_variance(&self, client: usize, ball: &BallSpec) -> Option<f64> {
        Some(self.variance_sup(client, &ball.x_star_ref, ball.r))
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.clients.len();
        (0..n).map(|i| self.client_value(i, x)).sum::<f64>() / n as f64
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.clients.len();
        let mut out = vec![0.0; self.dim];
        for i in 0..n {
            let m = self.clients[i].len();
            for c in &self.clients[i] {
                c.apply(x, 1.0 / (n * m) as f64, &mut out);
            }
        }
        out
    }
}
