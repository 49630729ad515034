//! Dataset ingestion, preprocessing, client partitioning, horizon assignment and a binary
//! cache for preprocessed splits.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, LittleEndian, ReadBytesExt, WriteBytesExt};
use flate2::read::GzDecoder;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::error::{config, HewError, Result};
use crate::rng::{gauss, stream_rng, Stream};

/// Row-major labelled feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
    pub n_features: usize,
    pub classes: usize,
    /// Set once a scaler has been applied.
    pub standardized: bool,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<f64>, labels: Vec<u32>, n_features: usize, classes: usize) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(HewError::Input(format!(
                "feature buffer of length {} does not match {} rows x {n_features} columns",
                features.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(HewError::Input(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self { name: name.into(), features, labels, n_features, classes, standardized: false })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.n_features);
        for &i in idx {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            name: self.name.clone(),
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            classes: self.classes,
            standardized: self.standardized,
        }
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 2];
    let got = f.read(&mut magic)?;
    drop(f);
    let f = BufReader::new(File::open(path)?);
    if got == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(f)))
    } else {
        Ok(Box::new(f))
    }
}

/// UCI Covertype: 54 integer features and a class label in 1..=7 per line, optionally gzipped.
pub fn load_covertype(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(open_maybe_gz(path)?);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if lineno == 0 && fields[0].trim().parse::<f64>().is_err() {
            continue; // header
        }
        if fields.len() != 55 {
            return Err(HewError::Parse(format!("line {}: expected 55 fields, found {}", lineno + 1, fields.len())));
        }
        for f in &fields[..54] {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| HewError::Parse(format!("line {}: bad number '{f}'", lineno + 1)))?;
            features.push(v);
        }
        let y: u32 = fields[54]
            .trim()
            .parse()
            .map_err(|_| HewError::Parse(format!("line {}: bad label '{}'", lineno + 1, fields[54])))?;
        if !(1..=7).contains(&y) {
            return Err(HewError::Parse(format!("line {}: label {y} outside 1..=7", lineno + 1)));
        }
        labels.push(y - 1);
    }
    Dataset::new("covertype", features, labels, 54, 7)
}

fn read_exact_counted(r: &mut dyn Read, buf: &mut [u8], what: &str, offset: usize) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let k = r.read(&mut buf[filled..])?;
        if k == 0 {
            return Err(HewError::Parse(format!(
                "{what}: truncated at byte offset {}, expected {} more bytes but found {filled}",
                offset,
                buf.len()
            )));
        }
        filled += k;
    }
    Ok(())
}

/// IDX image and label files; pixels are mapped to `[0, 1]`.
pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let mut ir = open_maybe_gz(images)?;
    let mut head = [0u8; 16];
    read_exact_counted(&mut *ir, &mut head, "image header", 0)?;
    let mut h = &head[..];
    let magic = h.read_u32::<BigEndian>()?;
    if magic != 0x0000_0803 {
        return Err(HewError::Parse(format!("image file magic 0x{magic:08x} at offset 0, expected 0x00000803")));
    }
    let n = h.read_u32::<BigEndian>()? as usize;
    let rows = h.read_u32::<BigEndian>()? as usize;
    let cols = h.read_u32::<BigEndian>()? as usize;
    let d = rows * cols;
    let mut pixels = vec![0u8; n * d];
    read_exact_counted(&mut *ir, &mut pixels, "image data", 16)?;

    let mut lr = open_maybe_gz(labels)?;
    let mut lhead = [0u8; 8];
    read_exact_counted(&mut *lr, &mut lhead, "label header", 0)?;
    let mut h = &lhead[..];
    let magic = h.read_u32::<BigEndian>()?;
    if magic != 0x0000_0801 {
        return Err(HewError::Parse(format!("label file magic 0x{magic:08x} at offset 0, expected 0x00000801")));
    }
    let nl = h.read_u32::<BigEndian>()? as usize;
    if nl != n {
        return Err(HewError::Parse(format!("label count {nl} at offset 4 differs from image count {n}")));
    }
    let mut raw = vec![0u8; n];
    read_exact_counted(&mut *lr, &mut raw, "label data", 8)?;
    let features = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels = raw.into_iter().map(u32::from).collect();
    Dataset::new("mnist", features, labels, d, 10)
}

/// Isotropic Gaussian class blobs, used for smoke runs without downloaded data.
pub fn synthetic_classification(n: usize, n_features: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || n_features == 0 {
        return Err(config("synthetic data needs at least two classes and one feature"));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..n_features).map(|_| separation * gauss(&mut rng)).collect())
        .collect();
    let mut features = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..classes);
        for c in &centers[y] {
            features.push(c + gauss(&mut rng));
        }
        labels.push(y as u32);
    }
    Dataset::new("synthetic", features, labels, n_features, classes)
}

/// Per-feature affine standardisation fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(ds: &Dataset) -> Self {
        let d = ds.n_features;
        let n = ds.len() as f64;
        let mut mean = vec![0.0; d];
        for i in 0..ds.len() {
            for (m, v) in mean.iter_mut().zip(ds.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..ds.len() {
            for (k, v) in ds.row(i).iter().enumerate() {
                let c = v - mean[k];
                var[k] += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 1e-12 { s } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    /// Standardise in place. A dataset can be standardised only once.
    pub fn apply(&self, ds: &mut Dataset) -> Result<()> {
        if ds.standardized {
            return Err(HewError::Input(format!("dataset '{}' is already standardized", ds.name)));
        }
        if ds.n_features != self.mean.len() {
            return Err(HewError::Input("scaler and dataset widths differ".into()));
        }
        let d = ds.n_features;
        for row in ds.features.chunks_mut(d) {
            for k in 0..d {
                row[k] = (row[k] - self.mean[k]) / self.std[k];
            }
        }
        if !ds.features.iter().all(|v| v.is_finite()) {
            return Err(HewError::Numerical("nonfinite feature after standardization".into()));
        }
        ds.standardized = true;
        Ok(())
    }
}

fn append_bias(ds: &mut Dataset) {
    let d = ds.n_features;
    let mut out = Vec::with_capacity(ds.len() * (d + 1));
    for row in ds.features.chunks(d) {
        out.extend_from_slice(row);
        out.push(1.0);
    }
    ds.features = out;
    ds.n_features = d + 1;
}

/// Seeded shuffle, 80/20 split, train-fitted standardisation and a trailing bias column.
pub fn preprocess(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Scaler)> {
    let n = ds.len();
    if n < 10 {
        return Err(HewError::Input(format!("need at least 10 examples, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, Stream::Split));
    let n_train = 4 * n / 5;
    let mut train = ds.subset(&idx[..n_train]);
    let mut test = ds.subset(&idx[n_train..]);
    let scaler = Scaler::fit(&train);
    scaler.apply(&mut train)?;
    scaler.apply(&mut test)?;
    append_bias(&mut train);
    append_bias(&mut test);
    Ok((train, test, scaler))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PartitionMode {
    Even,
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub mode: PartitionMode,
    pub n_clients: usize,
    pub seed: u64,
}

/// Disjoint cover of `0..train.len()` by `n_clients` nonempty sorted index sets.
pub fn partition_clients(train: &Dataset, spec: &PartitionSpec) -> Result<Vec<Vec<usize>>> {
    let n = train.len();
    let k = spec.n_clients;
    if k == 0 || k > n {
        return Err(config(format!("cannot split {n} examples across {k} clients")));
    }
    let mut rng = stream_rng(spec.seed, Stream::Partition);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); k];
    match spec.mode {
        PartitionMode::Even => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            for (c, part) in parts.iter_mut().enumerate() {
                let len = base + usize::from(c < extra);
                part.extend_from_slice(&idx[start..start + len]);
                start += len;
            }
        }
        PartitionMode::Dirichlet { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(config(format!("Dirichlet concentration must be positive, got {alpha}")));
            }
            let gamma = Gamma::new(alpha, 1.0).map_err(|e| config(e.to_string()))?;
            for class in 0..train.classes as u32 {
                let mut members: Vec<usize> = (0..n).filter(|&i| train.labels[i] == class).collect();
                if members.is_empty() {
                    continue;
                }
                members.shuffle(&mut rng);
                let mut p: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
                if p.iter().sum::<f64>() <= 0.0 {
                    // Every draw underflowed; all mass goes to one client.
                    p.iter_mut().for_each(|x| *x = 0.0);
                    p[rng.random_range(0..k)] = 1.0;
                }
                let pick = WeightedIndex::new(&p).map_err(|e| HewError::Numerical(e.to_string()))?;
                for i in members {
                    parts[pick.sample(&mut rng)].push(i);
                }
            }
            // Move one example from the currently largest client into each empty one.
            while let Some(empty) = parts.iter().position(|p| p.is_empty()) {
                let largest = (0..k).max_by_key(|&c| (parts[c].len(), std::cmp::Reverse(c))).unwrap();
                let moved = parts[largest].pop().unwrap();
                parts[empty].push(moved);
            }
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum HorizonMode {
    Equal { h: usize },
    Random { values: Vec<usize>, seed: u64 },
}

/// Per-client local horizons, fixed for the run.
pub fn assign_horizons(n_clients: usize, mode: &HorizonMode) -> Result<Vec<usize>> {
    match mode {
        HorizonMode::Equal { h } => {
            if *h == 0 {
                return Err(config("horizon must be at least 1"));
            }
            Ok(vec![*h; n_clients])
        }
        HorizonMode::Random { values, seed } => {
            if values.is_empty() || values.contains(&0) {
                return Err(config("horizon values must be nonempty and positive"));
            }
            let mut rng = stream_rng(*seed, Stream::Horizons);
            Ok((0..n_clients).map(|_| values[rng.random_range(0..values.len())]).collect())
        }
    }
}

const CACHE_MAGIC: &[u8; 4] = b"HEWC";
const CACHE_VERSION: u32 = 1;

/// Preprocessed splits plus client partition, as stored in the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub clients: Vec<Vec<usize>>,
}

fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    let name = ds.name.as_bytes();
    w.write_u32::<LittleEndian>(name.len() as u32)?;
    w.write_all(name)?;
    w.write_u64::<LittleEndian>(ds.len() as u64)?;
    w.write_u32::<LittleEndian>(ds.n_features as u32)?;
    w.write_u32::<LittleEndian>(ds.classes as u32)?;
    w.write_u8(u8::from(ds.standardized))?;
    for &v in &ds.features {
        w.write_f64::<LittleEndian>(v)?;
    }
    for &y in &ds.labels {
        w.write_u32::<LittleEndian>(y)?;
    }
    Ok(())
}

fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let classes = r.read_u32::<LittleEndian>()? as usize;
    let standardized = r.read_u8()? != 0;
    let mut features = vec![0.0; n * d];
    r.read_f64_into::<LittleEndian>(&mut features)?;
    let mut labels = vec![0u32; n];
    r.read_u32_into::<LittleEndian>(&mut labels)?;
    let name = String::from_utf8(name).map_err(|e| HewError::Parse(e.to_string()))?;
    let mut ds = Dataset::new(name, features, labels, d, classes)?;
    ds.standardized = standardized;
    Ok(ds)
}

/// Write the versioned cache with the given configuration hash embedded.
pub fn write_cache(path: &Path, hash: &[u8; 32], splits: &CachedSplits) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_all(hash)?;
    write_dataset(&mut w, &splits.train)?;
    write_dataset(&mut w, &splits.test)?;
    w.write_u32::<LittleEndian>(splits.clients.len() as u32)?;
    for c in &splits.clients {
        w.write_u64::<LittleEndian>(c.len() as u64)?;
        for &i in c {
            w.write_u64::<LittleEndian>(i as u64)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a cache; `Ok(None)` when its version or hash does not match.
pub fn read_cache(path: &Path, hash: &[u8; 32]) -> Result<Option<CachedSplits>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(HewError::Parse(format!("{} is not a cache file", path.display())));
    }
    if r.read_u32::<LittleEndian>()? != CACHE_VERSION {
        return Ok(None);
    }
    let mut stored = [0u8; 32];
    r.read_exact(&mut stored)?;
    if &stored != hash {
        return Ok(None);
    }
    let train = read_dataset(&mut r)?;
    let test = read_dataset(&mut r)?;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let mut clients = Vec::with_capacity(k);
    for _ in 0..k {
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut c = Vec::with_capacity(len);
        for _ in 0..len {
            c.push(r.read_u64::<LittleEndian>()? as usize);
        }
        clients.push(c);
    }
    Ok(Some(CachedSplits { train, test, clients }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        synthetic_classification(n, 4, 3, 2.0, 1).unwrap()
    }

    fn assert_cover(parts: &[Vec<usize>], n: usize) {
        let mut seen = vec![false; n];
        for p in parts {
            assert!(!p.is_empty());
            for &i in p {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn preprocess_contract() {
        let ds = toy(10_000);
        let (train, test, scaler) = preprocess(&ds, 3).unwrap();
        assert_eq!((train.len(), test.len()), (8000, 2000));
        assert_eq!(train.n_features, 5);
        for k in 0..4 {
            let m: f64 = (0..train.len()).map(|i| train.row(i)[k]).sum::<f64>() / train.len() as f64;
            assert!(m.abs() <= 1e-10);
        }
        assert!((0..train.len()).all(|i| train.row(i)[4] == 1.0));
        assert!((0..test.len()).all(|i| test.row(i)[4] == 1.0));
        let mut again = train.clone();
        assert!(scaler.apply(&mut again).is_err());
    }

    #[test]
    fn split_independent_of_partition_seed() {
        let ds = toy(200);
        let (a, _, _) = preprocess(&ds, 5).unwrap();
        let p1 = partition_clients(&a, &PartitionSpec { mode: PartitionMode::Even, n_clients: 4, seed: 1 }).unwrap();
        let (b, _, _) = preprocess(&ds, 5).unwrap();
        let p2 = partition_clients(&b, &PartitionSpec { mode: PartitionMode::Even, n_clients: 4, seed: 2 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(p1, p2);
    }

    #[test]
    fn constant_feature_gets_unit_scale() {
        let ds = Dataset::new("c", (0..20).flat_map(|i| [3.0, i as f64]).collect(), vec![0; 20], 2, 1).unwrap();
        let s = Scaler::fit(&ds);
        assert_eq!(s.std[0], 1.0);
    }

    #[test]
    fn partitions() {
        let ds = toy(100);
        let even = partition_clients(&ds, &PartitionSpec { mode: PartitionMode::Even, n_clients: 20, seed: 4 }).unwrap();
        assert!(even.iter().all(|p| p.len() == 5));
        assert_cover(&even, 100);
        for seed in 0..20 {
            let small = toy(60);
            let d = partition_clients(&small, &PartitionSpec { mode: PartitionMode::Dirichlet { alpha: 0.2 }, n_clients: 20, seed }).unwrap();
            assert_cover(&d, 60);
        }
        assert!(partition_clients(&ds, &PartitionSpec { mode: PartitionMode::Even, n_clients: 101, seed: 0 }).is_err());
    }

    fn imbalance(ds: &Dataset, parts: &[Vec<usize>]) -> f64 {
        // Mean squared deviation of client class shares from the global shares.
        let c = ds.classes;
        let global: Vec<f64> = (0..c).map(|k| ds.labels.iter().filter(|&&y| y as usize == k).count() as f64 / ds.len() as f64).collect();
        let mut s = 0.0;
        for p in parts {
            for k in 0..c {
                let share = p.iter().filter(|&&i| ds.labels[i] as usize == k).count() as f64 / p.len() as f64;
                s += (share - global[k]).powi(2);
            }
        }
        s / parts.len() as f64
    }

    #[test]
    fn dirichlet_limits() {
        let ds = toy(4000);
        let mut even = 0.0;
        let mut flat = 0.0;
        let mut skew = 0.0;
        for seed in 0..5 {
            let e = partition_clients(&ds, &PartitionSpec { mode: PartitionMode::Even, n_clients: 10, seed }).unwrap();
            let f = partition_clients(&ds, &PartitionSpec { mode: PartitionMode::Dirichlet { alpha: 1e4 }, n_clients: 10, seed }).unwrap();
            let s = partition_clients(&ds, &PartitionSpec { mode: PartitionMode::Dirichlet { alpha: 0.2 }, n_clients: 10, seed }).unwrap();
            even += imbalance(&ds, &e);
            flat += imbalance(&ds, &f);
            skew += imbalance(&ds, &s);
        }
        assert!(flat < 3.0 * even + 1e-3, "{flat} vs {even}");
        assert!(skew > 10.0 * flat);
    }

    #[test]
    fn horizons() {
        assert_eq!(assign_horizons(5, &HorizonMode::Equal { h: 4 }).unwrap(), vec![4; 5]);
        let mode = HorizonMode::Random { values: vec![1, 2, 4, 8], seed: 42 };
        assert_eq!(assign_horizons(20, &mode).unwrap(), assign_horizons(20, &mode).unwrap());
        let big = assign_horizons(10_000, &mode).unwrap();
        for v in [1, 2, 4, 8] {
            let f = big.iter().filter(|&&h| h == v).count() as f64 / 1e4;
            assert!((f - 0.25).abs() <= 0.02);
        }
    }

    fn write_idx(dir: &Path, n: u32, truncate: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        let mut img = Vec::new();
        img.write_u32::<BigEndian>(0x803).unwrap();
        img.write_u32::<BigEndian>(n).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.write_u32::<BigEndian>(2).unwrap();
        img.extend((0..n * 4).map(|i| (i * 17 % 256) as u8));
        img.truncate(img.len() - truncate);
        File::create(&ip).unwrap().write_all(&img).unwrap();
        let mut lab = Vec::new();
        lab.write_u32::<BigEndian>(0x801).unwrap();
        lab.write_u32::<BigEndian>(n).unwrap();
        lab.extend((0..n).map(|i| (i % 10) as u8));
        File::create(&lp).unwrap().write_all(&lab).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 12, 0);
        let ds = load_mnist(&ip, &lp).unwrap();
        assert_eq!((ds.len(), ds.n_features, ds.classes), (12, 4, 10));
        assert!(ds.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let (ip, lp) = write_idx(dir.path(), 12, 5);
        let err = load_mnist(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("expected 48") && err.contains("found 43"), "{err}");
        assert!(load_mnist(&lp, &lp).unwrap_err().to_string().contains("0x00000803"));
    }

    #[test]
    fn covertype_parsing_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        for r in 0..14 {
            let row: Vec<String> = (0..54).map(|k| ((r * 7 + k) % 13).to_string()).collect();
            text.push_str(&format!("{},{}\n", row.join(","), r % 7 + 1));
        }
        let p = dir.path().join("covtype.data");
        std::fs::write(&p, &text).unwrap();
        let ds = load_covertype(&p).unwrap();
        assert_eq!((ds.len(), ds.n_features, ds.classes), (14, 54, 7));
        assert_eq!(ds.labels[0], 0);
        let gz = dir.path().join("covtype.data.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::fast());
        enc.write_all(text.as_bytes()).unwrap();
        enc.finish().unwrap();
        assert_eq!(load_covertype(&gz).unwrap(), ds);
        std::fs::write(&p, "1,2,3\n").unwrap();
        assert!(load_covertype(&p).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(50);
        let (train, test, _) = preprocess(&ds, 1).unwrap();
        let clients = partition_clients(&train, &PartitionSpec { mode: PartitionMode::Even, n_clients: 4, seed: 1 }).unwrap();
        let splits = CachedSplits { train, test, clients };
        let p = dir.path().join("cache.bin");
        write_cache(&p, &[7; 32], &splits).unwrap();
        assert_eq!(read_cache(&p, &[7; 32]).unwrap().unwrap(), splits);
        assert!(read_cache(&p, &[8; 32]).unwrap().is_none());
    }
}
