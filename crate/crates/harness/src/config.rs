//! Experiment configuration, its canonical TOML form and the three client regimes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hew_core::algorithms::MethodKind;
use hew_core::data::{HorizonMode, PartitionMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const ENV_OUTPUT_DIR: &str = "HEW_OUTPUT_DIR";
pub const ENV_THREADS: &str = "HEW_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// `covtype.data` or `covtype.data.gz`.
    Covertype { path: PathBuf },
    /// IDX image and label files (optionally gzipped).
    Mnist { images: PathBuf, labels: PathBuf },
    /// Gaussian class clusters.
    Synthetic { examples: usize, features: usize, classes: usize, separation: f64, seed: u64 },
}

impl DatasetSpec {
    pub fn short_name(&self) -> &'static str {
        match self {
            DatasetSpec::Covertype { .. } => "covertype",
            DatasetSpec::Mnist { .. } => "mnist",
            DatasetSpec::Synthetic { .. } => "synthetic",
        }
    }

    /// Canonical file locations inside a data directory filled by `fetch-data`.
    pub fn from_data_dir(name: &str, dir: &Path) -> Result<Self> {
        match name {
            "covertype" => Ok(DatasetSpec::Covertype { path: dir.join("covtype.data.gz") }),
            "mnist" => Ok(DatasetSpec::Mnist {
                images: dir.join("train-images-idx3-ubyte.gz"),
                labels: dir.join("train-labels-idx1-ubyte.gz"),
            }),
            other => bail!("unknown dataset '{other}' (expected covertype or mnist)"),
        }
    }
}

fn default_vartheta() -> f64 {
    1.0
}
fn default_lambda_ratio() -> f64 {
    1.5
}
fn default_lr_scale() -> f64 {
    0.4
}
fn default_prox_mu() -> f64 {
    0.01
}

/// One method with its hyperparameters. Fields a method does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub kind: MethodKind,
    #[serde(default = "default_vartheta")]
    pub vartheta: f64,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
    #[serde(default = "default_prox_mu")]
    pub prox_mu: f64,
}

impl MethodEntry {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            vartheta: default_vartheta(),
            lambda_ratio: default_lambda_ratio(),
            lr_scale: default_lr_scale(),
            prox_mu: default_prox_mu(),
        }
    }
}

/// Amplitude box and proxy handling for certificate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateOptions {
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Component gradients drawn per client for the variance proxy.
    pub variance_samples: usize,
    pub upload_proxies: bool,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { theta_lo: 0.01, theta_hi: 1.0, variance_samples: 64, upload_proxies: false }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

/// Full description of a run. Scalars come before tables so the TOML form is flat at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub n_clients: usize,
    pub rounds: usize,
    pub batch: usize,
    pub seeds: Vec<u64>,
    /// Seeds the split, partition and horizon draw; run seeds only drive minibatches.
    pub data_seed: u64,
    pub l2_reg: f64,
    pub certificate_mode: bool,
    pub reference_tol: f64,
    pub reference_max_iter: usize,
    pub dataset: DatasetSpec,
    pub partition: PartitionMode,
    pub horizons: HorizonMode,
    #[serde(default)]
    pub certificate: CertificateOptions,
    pub methods: Vec<MethodEntry>,
}

/// The three client regimes of the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Even split, `H = 4` everywhere.
    HomEqual,
    /// Even split, `H` drawn from `{1, 2, 4, 8}`.
    HomRandom,
    /// Class-wise Dirichlet(0.2) split, `H` drawn from `{1, 2, 4, 8}`.
    HetRandom,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::HomEqual, Regime::HomRandom, Regime::HetRandom];

    pub fn name(self) -> &'static str {
        match self {
            Regime::HomEqual => "hom-equal",
            Regime::HomRandom => "hom-random",
            Regime::HetRandom => "het-random",
        }
    }

    pub fn partition(self) -> PartitionMode {
        match self {
            Regime::HetRandom => PartitionMode::Dirichlet { alpha: 0.2 },
            _ => PartitionMode::Even,
        }
    }

    pub fn horizons(self, seed: u64) -> HorizonMode {
        match self {
            Regime::HomEqual => HorizonMode::Equal { h: 4 },
            _ => HorizonMode::Random { values: vec![1, 2, 4, 8], seed },
        }
    }

    /// Compared methods; the equal-horizon regime adds the remaining baselines.
    pub fn methods(self) -> Vec<MethodKind> {
        let mut m = vec![
            MethodKind::Hew,
            MethodKind::HewFixed,
            MethodKind::UniformLocalSgd,
            MethodKind::FedAvg,
            MethodKind::FedNova,
        ];
        if self == Regime::HomEqual {
            m.extend([MethodKind::Scaffold, MethodKind::FedProx, MethodKind::Mbsgd]);
        }
        m
    }
}

impl std::str::FromStr for Regime {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL.into_iter().find(|r| r.name() == s).with_context(|| format!("unknown regime '{s}'"))
    }
}

impl ExperimentConfig {
    /// Protocol defaults: 20 clients, 90 rounds, batch 32, seeds 42..=48.
    pub fn protocol(dataset: DatasetSpec, regime: Regime, output_dir: impl Into<PathBuf>) -> Self {
        let data_seed = 42;
        Self {
            schema_version: SCHEMA_VERSION,
            name: format!("{}-{}", dataset.short_name(), regime.name()),
            output_dir: output_dir.into(),
            cache_dir: None,
            n_clients: 20,
            rounds: 90,
            batch: 32,
            seeds: (42..49).collect(),
            data_seed,
            l2_reg: 1e-3,
            certificate_mode: false,
            reference_tol: 1e-6,
            reference_max_iter: 5000,
            dataset,
            partition: regime.partition(),
            horizons: regime.horizons(data_seed),
            certificate: CertificateOptions::default(),
            methods: regime.methods().into_iter().map(MethodEntry::new).collect(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serialising experiment config")
    }

    /// Hex SHA-256 of the canonical text with the output and cache locations blanked,
    /// so relocating a run does not change its identity.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(hex(&digest))
    }

    pub fn apply_env_overrides(&mut self) {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version);
        }
        if self.n_clients == 0 || self.rounds == 0 || self.batch == 0 {
            bail!("n_clients, rounds and batch must all be positive");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        for (k, m) in self.methods.iter().enumerate() {
            if self.methods[..k].iter().any(|o| o.kind == m.kind) {
                bail!("method '{}' is listed twice", m.kind);
            }
        }
        if !(self.l2_reg >= 0.0) || !(self.reference_tol > 0.0) || self.reference_max_iter == 0 {
            bail!("l2_reg must be nonnegative and the reference solve settings positive");
        }
        let c = &self.certificate;
        if !(c.theta_lo > 0.0 && c.theta_lo <= c.theta_hi) || c.variance_samples < 2 {
            bail!("certificate options need 0 < theta_lo <= theta_hi and at least 2 variance samples");
        }
        if self.certificate_mode && c.theta_hi > 1.0 {
            bail!("certificate mode needs theta_hi <= 1");
        }
        Ok(())
    }

    /// Directory for this run: `<output_dir>/<name>-<first 12 hash digits>`.
    pub fn run_dir(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(format!("{}-{}", self.name, &self.hash()?[..12])))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread count requested through the environment, if any.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(ENV_THREADS).ok()?.parse().ok().filter(|&n| n > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ExperimentConfig {
        let ds = DatasetSpec::Synthetic { examples: 100, features: 4, classes: 3, separation: 2.0, seed: 1 };
        ExperimentConfig::protocol(ds, Regime::HomRandom, "runs")
    }

    #[test]
    fn toml_round_trip() {
        let cfg = sample();
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn hash_ignores_location_only() {
        let a = sample();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("/elsewhere");
        b.cache_dir = Some(PathBuf::from("/cache"));
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.rounds += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn rejects_bad_schema_and_duplicates() {
        let mut cfg = sample();
        cfg.schema_version = 7;
        assert!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).is_err());
        let mut cfg = sample();
        cfg.methods.push(MethodEntry::new(MethodKind::Hew));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn protocol_shapes() {
        let cfg = sample();
        assert_eq!(cfg.seeds, vec![42, 43, 44, 45, 46, 47, 48]);
        assert_eq!((cfg.n_clients, cfg.rounds, cfg.batch), (20, 90, 32));
        assert_eq!(Regime::HomEqual.methods().len(), 8);
        assert_eq!(Regime::HetRandom.methods().len(), 5);
        assert_eq!("het-random".parse::<Regime>().unwrap(), Regime::HetRandom);
    }
}
