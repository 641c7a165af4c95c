use crate::cache::sha256_hex;
use serde::{Deserialize, Serialize};
use sgweyl::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// One compared quantity. `tolerance` is the allowed |measured - predicted|
/// for two-sided checks and 0 for one-sided bounds, where `predicted` is the
/// bound itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub name: String,
    pub predicted: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn abs(name: &str, predicted: f64, measured: f64, tol: f64) -> Check {
        Check { name: name.into(), predicted, measured, tolerance: tol, pass: (measured - predicted).abs() <= tol }
    }

    pub fn rel(name: &str, predicted: f64, measured: f64, tol: f64) -> Check {
        Check { name: name.into(), predicted, measured, tolerance: tol, pass: (measured - predicted).abs() <= tol * predicted.abs() }
    }

    pub fn at_most(name: &str, bound: f64, measured: f64) -> Check {
        Check { name: name.into(), predicted: bound, measured, tolerance: 0.0, pass: measured <= bound }
    }

    pub fn at_least(name: &str, bound: f64, measured: f64) -> Check {
        Check { name: name.into(), predicted: bound, measured, tolerance: 0.0, pass: measured >= bound }
    }

    pub fn holds(name: &str, ok: bool) -> Check {
        Check { name: name.into(), predicted: 1.0, measured: if ok { 1.0 } else { 0.0 }, tolerance: 0.0, pass: ok }
    }
}

/// The share of one criterion a single stage run can decide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionPart {
    pub criterion: u8,
    pub part: String,
    pub checks: Vec<Check>,
}

impl CriterionPart {
    pub fn new(criterion: u8, part: &str, checks: Vec<Check>) -> CriterionPart {
        CriterionPart { criterion, part: part.into(), checks }
    }

    pub fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn file_name(&self) -> String {
        format!("c{:02}-{}.json", self.criterion, self.part)
    }
}

/// Criterion names and the parts each one needs before it counts as
/// exercised.
pub const CRITERIA: [(u8, &str, &[&str]); 10] = [
    (1, "eigensolver oracle", &["oracle-h"]),
    (2, "closed-form constants", &["constants"]),
    (3, "Weyl leading term", &["model-a", "model-b"]),
    (4, "remainder order", &["model-a", "model-b"]),
    (5, "eikonal certification", &["phase"]),
    (6, "stationary phase vs direct quadrature", &["direct", "oracle"]),
    (7, "nonstationary decay", &["decay"]),
    (8, "fixed-point suite", &["fixed-point"]),
    (9, "Tauberian suite", &["synthetic", "model-b"]),
    (10, "determinism", &["rerun"]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionRecord {
    pub id: u8,
    pub name: String,
    pub parts: Vec<CriterionPart>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_hash: String,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub stage: String,
    pub criteria: Vec<CriterionRecord>,
    pub provenance: Provenance,
    pub manifest: Vec<ManifestEntry>,
    pub pass: bool,
}

/// Files that are not part of the reproducible artifact set.
pub fn excluded(rel: &str) -> bool {
    rel == "report.json" || rel == "timing.json" || rel.starts_with(".rerun")
}

/// Sorted SHA-256 manifest of every artifact under `dir`.
pub fn manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<()> {
    if !dir.exists() {
        return Ok(());
    }
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        let rel = p.strip_prefix(root).expect("under root").to_string_lossy().replace('\\', "/");
        if excluded(&rel) {
            continue;
        }
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let bytes = fs::read(&p)?;
            out.push(ManifestEntry { path: rel, bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) });
        }
    }
    Ok(())
}

pub fn read_parts(dir: &Path) -> Result<Vec<CriterionPart>> {
    let pdir = dir.join("parts");
    let mut names: Vec<_> = match fs::read_dir(&pdir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    let mut parts = Vec::new();
    for p in names {
        let part: CriterionPart = serde_json::from_slice(&fs::read(&p)?)
            .map_err(|e| Error::CacheCorrupt(format!("{}: {e}", p.display())))?;
        parts.push(part);
    }
    Ok(parts)
}

/// Groups parts by criterion. Fails listing every criterion part that no
/// stage has produced.
pub fn assemble(parts: &[CriterionPart]) -> Result<Vec<CriterionRecord>> {
    let mut by: BTreeMap<(u8, &str), &CriterionPart> = BTreeMap::new();
    for p in parts {
        by.insert((p.criterion, p.part.as_str()), p);
    }
    let mut missing = Vec::new();
    let mut records = Vec::new();
    for (id, name, needed) in CRITERIA {
        let mut got = Vec::new();
        for n in needed {
            match by.get(&(id, *n)) {
                Some(p) => got.push((*p).clone()),
                None => missing.push(format!("{id}/{n}")),
            }
        }
        let pass = got.len() == needed.len() && got.iter().all(|p| p.pass());
        records.push(CriterionRecord { id, name: name.into(), parts: got, pass });
    }
    if !missing.is_empty() {
        return Err(Error::StageDependencyMissing(format!("criteria never exercised: {}", missing.join(", "))));
    }
    Ok(records)
}
