//! Content-addressed spectrum cache. Each entry is `<key>.csv` plus a
//! `<key>.json` sidecar holding the dataset metadata and the SHA-256 of the
//! CSV bytes, checked on every read.

use crate::config::hex;
use serde::{Deserialize, Serialize};
use sgweyl::spectral::{compute_spectrum, ModelOperator, SpectrumDataset, SpectrumMeta, RESOLUTION_TOL};
use sgweyl::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    key: String,
    csv_sha256: String,
    meta: SpectrumMeta,
}

pub struct SpectrumCache {
    dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Hit,
    Miss,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl SpectrumCache {
    pub fn new(dir: &Path) -> SpectrumCache {
        SpectrumCache { dir: dir.to_path_buf() }
    }

    /// Hash of (model, route, N, resolution tolerance).
    pub fn key(model: &ModelOperator, n: usize) -> String {
        let text = format!("{}|{:?}|{}|{:e}", model.id, model.route, n, RESOLUTION_TOL);
        sha256_hex(text.as_bytes())[..24].to_string()
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.csv")), self.dir.join(format!("{key}.json")))
    }

    pub fn contains(&self, model: &ModelOperator, n: usize) -> bool {
        let (c, j) = self.paths(&Self::key(model, n));
        c.exists() && j.exists()
    }

    pub fn read(&self, model: &ModelOperator, n: usize) -> Result<SpectrumDataset> {
        let key = Self::key(model, n);
        let (cp, jp) = self.paths(&key);
        if !(cp.exists() && jp.exists()) {
            return Err(Error::StageDependencyMissing(format!(
                "no cached spectrum for {} at basis dim {n}; run `spectrum --model {}` first",
                model.id, model.id
            )));
        }
        let csv = fs::read(&cp)?;
        let side: Sidecar = serde_json::from_slice(&fs::read(&jp)?)
            .map_err(|e| Error::CacheCorrupt(format!("{}: {e}", jp.display())))?;
        if side.key != key {
            return Err(Error::CacheCorrupt(format!("{}: key {} does not match {key}", jp.display(), side.key)));
        }
        let h = sha256_hex(&csv);
        if h != side.csv_sha256 {
            return Err(Error::CacheCorrupt(format!("{}: hash {h} does not match sidecar {}", cp.display(), side.csv_sha256)));
        }
        let text = String::from_utf8(csv).map_err(|_| Error::CacheCorrupt(format!("{} is not UTF-8", cp.display())))?;
        let ds = SpectrumDataset::from_parts(&text, side.meta)?;
        if ds.model != model.id || ds.basis_dim != n {
            return Err(Error::CacheCorrupt(format!("{} holds {} at N = {}", cp.display(), ds.model, ds.basis_dim)));
        }
        Ok(ds)
    }

    pub fn write(&self, ds: &SpectrumDataset, model: &ModelOperator) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let key = Self::key(model, ds.basis_dim);
        let (cp, jp) = self.paths(&key);
        let csv = ds.csv();
        let side = Sidecar { key, csv_sha256: sha256_hex(csv.as_bytes()), meta: ds.meta() };
        fs::write(&cp, csv)?;
        fs::write(&jp, serde_json::to_string_pretty(&side).expect("sidecar serializes") + "\n")?;
        Ok(())
    }

    /// Cached dataset, computing and storing it on a miss.
    pub fn get_or_compute(&self, model: &ModelOperator, n: usize) -> Result<(SpectrumDataset, Lookup)> {
        if self.contains(model, n) {
            return Ok((self.read(model, n)?, Lookup::Hit));
        }
        let ds = compute_spectrum(model, n)?;
        self.write(&ds, model)?;
        Ok((ds, Lookup::Miss))
    }
}
