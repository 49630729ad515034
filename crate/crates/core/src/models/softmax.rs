//! Multinomial logistic regression on a shared design matrix split across clients.

use std::sync::Arc;


use super::FiniteSumModel;
use crate::error::{domain, Result};
use crate::rng::{gauss, stream_rng, Stream};

/// `phi_ij(W) = CE(softmax(W^T a_ij), y_ij) + (l2_reg / 2) |W|^2`, with `W` a
/// `p x C` matrix stored row-major (feature-major) as the parameter vector.
#[derive(Debug, Clone)]
pub struct SoftmaxLinearModel {
    features: Arc<Vec<f64>>,
    labels: Arc<Vec<u32>>,
    n_features: usize,
    classes: usize,
    clients: Vec<Vec<usize>>,
    l2_reg: f64,
    l_hat: f64,
    component_bound: f64,
}

/// Power iteration for `lambda_max(X^T X / N)` over the selected rows.
pub fn gram_top_eigenvalue(features: &[f64], n_features: usize, rows: &[usize], seed: u64, tol: f64, max_iter: usize) -> (f64, bool) {
    if rows.is_empty() {
        return (0.0, true);
    }
    let mut rng = stream_rng(seed, Stream::Probe);
    let mut v: Vec<f64> = (0..n_features).map(|_| gauss(&mut rng)).collect();
    let nrm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.iter_mut().for_each(|a| *a /= nrm);
    let mut lam = 0.0;
    let inv_n = 1.0 / rows.len() as f64;
    for _ in 0..max_iter {
        let mut w = vec![0.0; n_features];
        for &r in rows {
            let row = &features[r * n_features..(r + 1) * n_features];
            let s: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wk, ak) in w.iter_mut().zip(row) {
                *wk += s * ak;
            }
        }
        w.iter_mut().for_each(|a| *a *= inv_n);
        let new_lam: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if wn == 0.0 {
            return (0.0, true);
        }
        v = w.into_iter().map(|a| a / wn).collect();
        if (new_lam - lam).abs() <= tol * new_lam.abs() {
            return (new_lam, true);
        }
        lam = new_lam;
    }
    (lam, false)
}

impl SoftmaxLinearModel {
    /// `features` is row-major `N x n_features` (bias column included); `clients`
    /// lists row indices owned by each client.
    pub fn new(
        features: Arc<Vec<f64>>,
        labels: Arc<Vec<u32>>,
        n_features: usize,
        classes: usize,
        clients: Vec<Vec<usize>>,
        l2_reg: f64,
    ) -> Result<Self> {
        let n_rows = labels.len();
        if features.len() != n_rows * n_features {
            return Err(domain(format!("feature matrix has {} entries, expected {}x{}", features.len(), n_rows, n_features)));
        }
        if classes < 2 {
            return Err(domain("softmax needs at least two classes"));
        }
        if let Some((r, &y)) = labels.iter().enumerate().find(|(_, &y)| y as usize >= classes) {
            return Err(domain(format!("label {y} at row {r} outside [0, {classes})")));
        }
        if !(l2_reg >= 0.0) {
            return Err(domain("l2_reg must be nonnegative"));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.is_empty() {
                return Err(domain(format!("client {i} has no examples")));
            }
            if let Some(&r) = c.iter().find(|&&r| r >= n_rows) {
                return Err(domain(format!("client {i} references row {r} beyond {n_rows}")));
            }
        }
        let all_rows: Vec<usize> = clients.iter().flatten().copied().collect();
        let (lam, ok) = gram_top_eigenvalue(&features, n_features, &all_rows, 0, 1e-6, 500);
        if !ok {
            log::warn!("power iteration did not reach tolerance; using best estimate {lam:.6e}");
        }
        let max_row_sq = all_rows
            .iter()
            .map(|&r| features[r * n_features..(r + 1) * n_features].iter().map(|a| a * a).sum::<f64>())
            .fold(0.0, f64::max);
        Ok(Self {
            features,
            labels,
            n_features,
            classes,
            clients,
            l2_reg,
            l_hat: 0.5 * lam + l2_reg,
            component_bound: 0.5 * max_row_sq + l2_reg,
        })
    }

    /// Single-client model over every row, useful for centralised evaluation.
    pub fn pooled(features: Arc<Vec<f64>>, labels: Arc<Vec<u32>>, n_features: usize, classes: usize, l2_reg: f64) -> Result<Self> {
        let n = labels.len();
        Self::new(features, labels, n_features, classes, vec![(0..n).collect()], l2_reg)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn l2_reg(&self) -> f64 {
        self.l2_reg
    }

    pub fn client_rows(&self, client: usize) -> &[usize] {
        &self.clients[client]
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.features[r * self.n_features..(r + 1) * self.n_features]
    }

    fn logits(&self, row: &[f64], x: &[f64], z: &mut [f64]) {
        let c = self.classes;
        z.iter_mut().for_each(|v| *v = 0.0);
        for (f, &a) in row.iter().enumerate() {
            if a != 0.0 {
                let wrow = &x[f * c..(f + 1) * c];
                for k in 0..c {
                    z[k] += a * wrow[k];
                }
            }
        }
    }

    /// Cross-entropy of one row; leaves softmax probabilities in `z`.
    fn ce_and_probs(&self, r: usize, x: &[f64], z: &mut [f64]) -> f64 {
        self.logits(self.row(r), x, z);
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in z.iter_mut() {
            *v = (*v - zmax).exp();
            s += *v;
        }
        let y = self.labels[r] as usize;
        let ce = s.ln() - (z[y].ln());
        z.iter_mut().for_each(|v| *v /= s);
        ce
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        0.5 * self.l2_reg * x.iter().map(|a| a * a).sum::<f64>()
    }

    /// Mean data gradient over rows plus the regulariser, without per-row allocation.
    fn rows_gradient(&self, rows: impl Iterator<Item = usize>, count: usize, x: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let mut out = vec![0.0; x.len()];
        let mut z = vec![0.0; c];
        for r in rows {
            self.ce_and_probs(r, x, &mut z);
            z[self.labels[r] as usize] -= 1.0;
            for (f, &a) in self.row(r).iter().enumerate() {
                if a != 0.0 {
                    let orow = &mut out[f * c..(f + 1) * c];
                    for k in 0..c {
                        orow[k] += a * z[k];
                    }
                }
            }
        }
        let inv = 1.0 / count as f64;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = *o * inv + self.l2_reg * xi;
        }
        out
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(features: &[f64], labels: &[u32], n_features: usize, classes: usize, x: &[f64]) -> f64 {
        use rayon::prelude::*;
        let n = labels.len();
        if n == 0 {
            return 0.0;
        }
        let correct: usize = (0..n)
            .into_par_iter()
            .filter(|&r| {
                let row = &features[r * n_features..(r + 1) * n_features];
                let mut best = (f64::NEG_INFINITY, 0usize);
                for k in 0..classes {
                    let z: f64 = row.iter().enumerate().map(|(f, a)| a * x[f * classes + k]).sum();
                    if z > best.0 {
                        best = (z, k);
                    }
                }
                best.1 == labels[r] as usize
            })
            .count();
        correct as f64 / n as f64
    }
}

impl FiniteSumModel for SoftmaxLinearModel {
    fn n_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        self.n_features * self.classes
    }

    fn component_count(&self, client: usize) -> usize {
        self.clients[client].len()
    }

    fn component_value(&self, client: usize, j: usize, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.classes];
        self.ce_and_probs(self.clients[client][j], x, &mut z) + self.reg_value(x)
    }

    fn add_component_gradient(&self, client: usize, j: usize, x: &[f64], weight: f64, out: &mut [f64]) {
        let r = self.clients[client][j];
        let c = self.classes;
        let mut z = vec![0.0; c];
        self.ce_and_probs(r, x, &mut z);
        z[self.labels[r] as usize] -= 1.0;
        for (f, &a) in self.row(r).iter().enumerate() {
            for k in 0..c {
                out[f * c + k] += weight * a * z[k];
            }
        }
        for (o, xi) in out.iter_mut().zip(x) {
            *o += weight * self.l2_reg * xi;
        }
    }

    fn smoothness(&self) -> f64 {
        self.l_hat
    }

    fn component_smoothness_bound(&self) -> f64 {
        self.component_bound
    }

    fn client_value(&self, client: usize, x: &[f64]) -> f64 {
        let rows = &self.clients[client];
        let mut z = vec![0.0; self.classes];
        let ce: f64 = rows.iter().map(|&r| self.ce_and_probs(r, x, &mut z)).sum();
        ce / rows.len() as f64 + self.reg_value(x)
    }

    fn client_gradient(&self, client: usize, x: &[f64]) -> Vec<f64> {
        let rows = &self.clients[client];
        self.rows_gradient(rows.iter().copied(), rows.len(), x)
    }

    fn batch_gradient(&self, client: usize, batch: &[usize], x: &[f64]) -> Vec<f64> {
        let rows = &self.clients[client];
        self.rows_gradient(batch.iter().map(|&j| rows[j]), batch.len(), x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dist, dot, rel_dev};
    use crate::models::{ball_probes, compute_reference_optimum, ReferenceOptions};
    use rand::Rng;

    fn toy(seed: u64) -> SoftmaxLinearModel {
        let mut rng = crate::rng::keyed_rng(seed, 0, 0, 0);
        let n = 60;
        let p = 4;
        let mut feats = Vec::with_capacity(n * p);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..p - 1 {
                feats.push(rng.random::<f64>() * 2.0 - 1.0);
            }
            feats.push(1.0);
            labels.push(rng.random_range(0..3u32));
        }
        let clients = vec![(0..20).collect(), (20..45).collect(), (45..60).collect()];
        SoftmaxLinearModel::new(Arc::new(feats), Arc::new(labels), p, 3, clients, 0.05).unwrap()
    }

    #[test]
    fn single_row_smoothness() {
        let m = SoftmaxLinearModel::pooled(Arc::new(vec![1.0, 0.0]), Arc::new(vec![0]), 2, 2, 0.0).unwrap();
        assert!((m.smoothness() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_labels() {
        let r = SoftmaxLinearModel::pooled(Arc::new(vec![1.0, 0.0]), Arc::new(vec![2]), 2, 2, 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = toy(1);
        let d = m.dim();
        let mut rng = crate::rng::keyed_rng(2, 0, 0, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() - 0.5).collect();
            let h = 1e-5;
            let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + h * b).collect();
            let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - h * b).collect();
            let fd = (m.value(&xp) - m.value(&xm)) / (2.0 * h);
            let an = dot(&m.gradient(&x), &v);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "fd {fd} vs {an}");
            let fd = (m.component_value(1, 3, &xp) - m.component_value(1, 3, &xm)) / (2.0 * h);
            let an = dot(&m.component_gradient(1, 3, &x), &v);
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3));
        }
    }

    #[test]
    fn fast_paths_match_component_sums() {
        let m = toy(3);
        let x: Vec<f64> = (0..m.dim()).map(|k| (k as f64 * 0.37).sin()).collect();
        for i in 0..3 {
            let mut acc = vec![0.0; m.dim()];
            let cnt = m.component_count(i);
            for j in 0..cnt {
                m.add_component_gradient(i, j, &x, 1.0 / cnt as f64, &mut acc);
            }
            assert!(rel_dev(&m.client_gradient(i, &x), &acc) <= 1e-10);
            let val: f64 = (0..cnt).map(|j| m.component_value(i, j, &x)).sum::<f64>() / cnt as f64;
            assert!((m.client_value(i, &x) - val).abs() <= 1e-10 * val.abs());
            let batch = [0usize, 2, 5];
            let mut acc = vec![0.0; m.dim()];
            for &j in &batch {
                m.add_component_gradient(i, j, &x, 1.0 / 3.0, &mut acc);
            }
            assert!(rel_dev(&m.batch_gradient(i, &batch, &x), &acc) <= 1e-10);
        }
    }

    #[test]
    fn component_smoothness_and_convexity() {
        let m = toy(4);
        let l = m.component_smoothness_bound();
        let pts = ball_probes(&vec![0.0; m.dim()], 3.0, 400, 8);
        for pair in pts.chunks(2) {
            let (x, y) = (&pair[0], &pair[1]);
            for (i, j) in [(0, 0), (1, 7), (2, 14)] {
                let gx = m.component_gradient(i, j, x);
                let gy = m.component_gradient(i, j, y);
                assert!(dist(&gx, &gy) <= l * dist(x, y) * (1.0 + 1e-6));
                let mid: Vec<f64> = x.iter().zip(y).map(|(a, b)| 0.5 * (a + b)).collect();
                let lhs = m.component_value(i, j, &mid);
                assert!(lhs <= 0.5 * m.component_value(i, j, x) + 0.5 * m.component_value(i, j, y) + 1e-10);
            }
        }
    }

    #[test]
    fn pure_regulariser_optimum_is_zero() {
        // Every class equally likely at W = 0 only when features vanish: zero rows leave the regulariser.
        let m = SoftmaxLinearModel::pooled(Arc::new(vec![0.0; 6]), Arc::new(vec![0, 1, 2]), 2, 3, 0.3).unwrap();
        let x0: Vec<f64> = (0..6).map(|k| k as f64 - 2.0).collect();
        let sol = compute_reference_optimum(&m, &x0, &ReferenceOptions::data()).unwrap();
        assert!(sol.ball.x_star_ref.iter().all(|v| v.abs() <= 1e-5));
    }

    #[test]
    fn second_start_agrees() {
        let m = toy(5);
        let d = m.dim();
        let opts = ReferenceOptions { tol: 1e-9, ..ReferenceOptions::data() };
        let a = compute_reference_optimum(&m, &vec![0.0; d], &opts).unwrap();
        let b = compute_reference_optimum(&m, &vec![0.5; d], &opts).unwrap();
        assert!(a.ball.converged && b.ball.converged);
        assert!((a.ball.f_star_ref - b.ball.f_star_ref).abs() <= 1e-5);
        let gd = compute_reference_optimum(&m, &vec![0.0; d], &ReferenceOptions { tol: 1e-7, ..ReferenceOptions::synthetic() }).unwrap();
        assert!(gd.trace.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    }

    #[test]
    fn power_iteration_restarts_agree() {
        let m = toy(6);
        let rows: Vec<usize> = (0..60).collect();
        let (a, _) = gram_top_eigenvalue(&m.features, 4, &rows, 1, 1e-10, 5000);
        let (b, _) = gram_top_eigenvalue(&m.features, 4, &rows, 2, 1e-10, 5000);
        assert!((a - b).abs() <= 1e-4 * a);
        // Dense eigensolver oracle.
        let x = nalgebra::DMatrix::from_row_slice(60, 4, &m.features);
        let g = x.transpose() * &x / 60.0;
        let top = nalgebra::SymmetricEigen::new(g).eigenvalues.max();
        assert!((a - top).abs() <= 1e-6 * top);
    }
}
