//! Dataset download or import with checksum verification.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use md5::Md5;
use sha2::{Digest, Sha256};

use crate::config::hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Checksum {
    Sha256(&'static str),
    Md5(&'static str),
}

impl Checksum {
    pub fn verify(&self, bytes: &[u8]) -> Result<()> {
        let (want, got) = match self {
            Checksum::Sha256(w) => (*w, hex(&Sha256::digest(bytes))),
            Checksum::Md5(w) => (*w, hex(&Md5::digest(bytes))),
        };
        if want != got {
            bail!("checksum mismatch: expected {want}, found {got}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RemoteFile {
    pub name: &'static str,
    /// Tried in order.
    pub urls: &'static [&'static str],
    pub checksum: Checksum,
}

const COVERTYPE: &[RemoteFile] = &[RemoteFile {
    name: "covtype.data.gz",
    urls: &[
        "https://ndownloader.figshare.com/files/5976039",
        "https://archive.ics.uci.edu/ml/machine-learning-databases/covtype/covtype.data.gz",
    ],
    checksum: Checksum::Sha256("614360d0257557dd1792834a85a1cdebfadc3c4f30b011d56afee7ffb5b15771"),
}];

const MNIST: &[RemoteFile] = &[
    RemoteFile {
        name: "train-images-idx3-ubyte.gz",
        urls: &[
            "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
            "http://yann.lecun.com/exdb/mnist/train-images-idx3-ubyte.gz",
        ],
        checksum: Checksum::Md5("f68b3c2dcbeaaa9fbdd348bbdeb94873"),
    },
    RemoteFile {
        name: "train-labels-idx1-ubyte.gz",
        urls: &[
            "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
            "http://yann.lecun.com/exdb/mnist/train-labels-idx1-ubyte.gz",
        ],
        checksum: Checksum::Md5("d53e105ee54ea40749a09fcbcd1e9432"),
    },
    RemoteFile {
        name: "t10k-images-idx3-ubyte.gz",
        urls: &[
            "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-images-idx3-ubyte.gz",
            "http://yann.lecun.com/exdb/mnist/t10k-images-idx3-ubyte.gz",
        ],
        checksum: Checksum::Md5("9fb629c4189551a2d022fa330f9573f3"),
    },
    RemoteFile {
        name: "t10k-labels-idx1-ubyte.gz",
        urls: &[
            "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-labels-idx1-ubyte.gz",
            "http://yann.lecun.com/exdb/mnist/t10k-labels-idx1-ubyte.gz",
        ],
        checksum: Checksum::Md5("ec29112dd5afa0611ce80d1b7f02629c"),
    },
];

pub fn files_for(dataset: &str) -> Result<&'static [RemoteFile]> {
    match dataset {
        "covertype" => Ok(COVERTYPE),
        "mnist" => Ok(MNIST),
        other => bail!("unknown dataset '{other}' (expected covertype or mnist)"),
    }
}

fn download(url: &str, dest: &Path) -> Result<()> {
    let resp = ureq::get(url).call().with_context(|| format!("GET {url}"))?;
    let mut reader = resp.into_body().into_reader();
    let tmp = dest.with_extension("part");
    let mut w = BufWriter::new(File::create(&tmp)?);
    std::io::copy(&mut reader, &mut w).with_context(|| format!("reading {url}"))?;
    w.flush()?;
    drop(w);
    std::fs::rename(&tmp, dest)?;
    Ok(())
}

/// Place every file of `dataset` in `out`, copying from `local` (a directory holding
/// the files under their canonical names) or downloading. Files already present with
/// a matching checksum are kept.
pub fn fetch_dataset(dataset: &str, out: &Path, local: Option<&Path>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for f in files_for(dataset)? {
        let dest = out.join(f.name);
        if dest.exists() && f.checksum.verify(&std::fs::read(&dest)?).is_ok() {
            log::info!("{} already present", dest.display());
            written.push(dest);
            continue;
        }
        if let Some(dir) = local {
            let src = dir.join(f.name);
            if !src.exists() {
                bail!("{} not found", src.display());
            }
            if src != dest {
                std::fs::copy(&src, &dest).with_context(|| format!("copying {}", src.display()))?;
            }
        } else {
            let mut last = None;
            for url in f.urls {
                log::info!("downloading {url}");
                match download(url, &dest) {
                    Ok(()) => {
                        last = None;
                        break;
                    }
                    Err(e) => {
                        log::warn!("{e:#}");
                        last = Some(e);
                    }
                }
            }
            if let Some(e) = last {
                return Err(e.context(format!("no mirror served {}", f.name)));
            }
        }
        f.checksum.verify(&std::fs::read(&dest)?).with_context(|| format!("verifying {}", dest.display()))?;
        written.push(dest);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digests() {
        Checksum::Sha256("ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad").verify(b"abc").unwrap();
        Checksum::Md5("900150983cd24fb0d6963f7d28e17f72").verify(b"abc").unwrap();
        assert!(Checksum::Md5("900150983cd24fb0d6963f7d28e17f72").verify(b"abd").is_err());
    }

    #[test]
    fn local_import_rejects_corrupt_file() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        std::fs::write(src.path().join("covtype.data.gz"), b"not the archive").unwrap();
        let err = fetch_dataset("covertype", out.path(), Some(src.path())).unwrap_err();
        assert!(format!("{err:#}").contains("checksum mismatch"));
        assert!(files_for("cifar").is_err());
    }
}
