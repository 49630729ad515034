//! Loading, splitting, partitioning and the reference solve for one configuration.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{Context, Result};
use hew_core::algorithms::{CertificateSetup, MethodKind, MethodSpec};
use hew_core::certificate::Geometry;
use hew_core::data::{
    assign_horizons, load_covertype, load_mnist, partition_clients, preprocess, read_cache, synthetic_classification,
    write_cache, CachedSplits, Dataset, PartitionMode, PartitionSpec,
};
use hew_core::models::{
    compute_reference_optimum, estimate_variance_proxy, BallSpec, FiniteSumModel, ReferenceMethod, ReferenceOptions,
    SoftmaxLinearModel, VarianceMode,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, DatasetSpec, ExperimentConfig, MethodEntry};

/// Everything a run needs besides the method and seed.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub model: SoftmaxLinearModel,
    pub horizons: Vec<usize>,
    pub batches: Vec<usize>,
    pub ball: BallSpec,
    /// Per-client variance proxies at the reference optimum (certificate methods only).
    pub v2: Option<Vec<f64>>,
}

impl Prepared {
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// Training objective and its gap to the reference optimum.
    pub fn train_objective(&self, x: &[f64]) -> (f64, f64) {
        let f = self.model.value(x);
        (f, f - self.ball.f_star_ref)
    }

    pub fn test_accuracy(&self, x: &[f64]) -> f64 {
        SoftmaxLinearModel::accuracy(&self.test.features, &self.test.labels, self.test.n_features, self.test.classes, x)
    }

    /// Core method settings for one configured entry.
    pub fn method_spec(&self, cfg: &ExperimentConfig, entry: &MethodEntry) -> Result<MethodSpec> {
        let mut spec = MethodSpec::new(entry.kind);
        spec.vartheta = entry.vartheta;
        spec.lambda_ratio = entry.lambda_ratio;
        spec.lr_scale = entry.lr_scale;
        spec.prox_mu = entry.prox_mu;
        spec.certificate_mode = cfg.certificate_mode && entry.kind == MethodKind::Hew;
        if needs_certificate(cfg, entry.kind) {
            let v2 = self.v2.clone().context("variance proxies were not prepared")?;
            spec.certificate = Some(CertificateSetup {
                geometry: Geometry::new(self.ball.l_hat, self.ball.r)?,
                v2,
                theta_lo: cfg.certificate.theta_lo,
                theta_hi: cfg.certificate.theta_hi,
                u0: None,
                // Controls start exact, so the tracking error is zero.
                q0: 0.0,
                upload_proxies: cfg.certificate.upload_proxies,
            });
        }
        Ok(spec)
    }
}

pub fn needs_certificate(cfg: &ExperimentConfig, kind: MethodKind) -> bool {
    kind == MethodKind::HewFixed || (kind == MethodKind::Hew && cfg.certificate_mode)
}

fn load(spec: &DatasetSpec) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Covertype { path } => load_covertype(path).with_context(|| format!("loading {}", path.display()))?,
        DatasetSpec::Mnist { images, labels } => load_mnist(images, labels)
            .with_context(|| format!("loading {} / {}", images.display(), labels.display()))?,
        DatasetSpec::Synthetic { examples, features, classes, separation, seed } => {
            synthetic_classification(*examples, *features, *classes, *separation, *seed)?
        }
    })
}

#[derive(Serialize)]
struct SplitKey<'a> {
    version: u32,
    dataset: &'a DatasetSpec,
    data_seed: u64,
    partition: PartitionMode,
    n_clients: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedReference {
    key: String,
    ball: BallSpec,
}

fn split_key(cfg: &ExperimentConfig) -> Result<[u8; 32]> {
    let key = SplitKey {
        version: 1,
        dataset: &cfg.dataset,
        data_seed: cfg.data_seed,
        partition: cfg.partition,
        n_clients: cfg.n_clients,
    };
    Ok(Sha256::digest(serde_json::to_vec(&key)?).into())
}

fn splits(cfg: &ExperimentConfig, key: &[u8; 32]) -> Result<CachedSplits> {
    let path = cfg.cache_dir.as_ref().map(|d| d.join(format!("{}.splits", &hex(key)[..16])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        if let Some(s) = read_cache(p, key)? {
            log::info!("using cached splits {}", p.display());
            return Ok(s);
        }
    }
    let raw = load(&cfg.dataset)?;
    let (train, test, _) = preprocess(&raw, cfg.data_seed)?;
    let clients = partition_clients(
        &train,
        &PartitionSpec { mode: cfg.partition, n_clients: cfg.n_clients, seed: cfg.data_seed },
    )?;
    let s = CachedSplits { train, test, clients };
    if let Some(p) = path {
        std::fs::create_dir_all(p.parent().unwrap())?;
        write_cache(&p, key, &s)?;
    }
    Ok(s)
}

fn reference(cfg: &ExperimentConfig, model: &SoftmaxLinearModel, split_key: &[u8; 32]) -> Result<BallSpec> {
    let opts = ReferenceOptions {
        tol: cfg.reference_tol,
        max_iter: cfg.reference_max_iter,
        method: ReferenceMethod::Accelerated,
        radius_factor: 2.0,
    };
    let key = format!("{}-{:e}-{:e}-{}", hex(split_key), cfg.l2_reg, opts.tol, opts.max_iter);
    let path: Option<PathBuf> =
        cfg.cache_dir.as_ref().map(|d| d.join(format!("{}.ref.json", &hex(&Sha256::digest(key.as_bytes()))[..16])));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let cached: CachedReference = serde_json::from_slice(&std::fs::read(p)?)?;
        if cached.key == key {
            return Ok(cached.ball);
        }
    }
    let x0 = vec![0.0; model.dim()];
    let ball = compute_reference_optimum(model, &x0, &opts)?.ball;
    if let Some(p) = path {
        std::fs::write(&p, serde_json::to_vec(&CachedReference { key, ball: ball.clone() })?)?;
    }
    Ok(ball)
}

/// Build the model, horizons, batch sizes, reference ball and (when needed) variance proxies.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let key = split_key(cfg)?;
    let CachedSplits { train, test, clients } = splits(cfg, &key)?;
    let batches: Vec<usize> = clients.iter().map(|c| c.len().min(cfg.batch)).collect();
    let model = SoftmaxLinearModel::new(
        Arc::new(train.features.clone()),
        Arc::new(train.labels.clone()),
        train.n_features,
        train.classes,
        clients,
        cfg.l2_reg,
    )?;
    let horizons = assign_horizons(cfg.n_clients, &cfg.horizons)?;
    let ball = reference(cfg, &model, &key)?;
    let v2 = if cfg.methods.iter().any(|m| needs_certificate(cfg, m.kind)) {
        let mode = VarianceMode::Estimate { samples: cfg.certificate.variance_samples, seed: cfg.data_seed };
        Some(
            (0..cfg.n_clients)
                .map(|i| estimate_variance_proxy(&model, i, &ball.x_star_ref, mode, Some(&ball)))
                .collect::<hew_core::Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    Ok(Prepared { train, test, model, horizons, batches, ball, v2 })
}
