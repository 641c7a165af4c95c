//! Experiment harness: stages that compute spectra, constants, fits, phase
//! certificates, oscillatory-integral comparisons and Tauberian checks, each
//! writing CSV/JSON artifacts and per-criterion records into the output
//! directory, and a `report` stage that consolidates them.

pub mod cache;
pub mod config;
pub mod report;
pub mod stages;

use config::ExperimentConfig;
use report::{assemble, manifest, read_parts, Check, CriterionPart, CriterionRecord, Provenance, RunReport, CRITERIA};
use sgweyl::{Error, Result};
use stages::Ctx;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Spectrum,
    Constants,
    WeylFit,
    Phase,
    Oscillatory,
    Tauber,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectrum => "spectrum",
            Stage::Constants => "constants",
            Stage::WeylFit => "weyl-fit",
            Stage::Phase => "phase",
            Stage::Oscillatory => "oscillatory",
            Stage::Tauber => "tauber",
            Stage::Report => "report",
        }
    }

    fn per_model(self) -> bool {
        matches!(self, Stage::Spectrum | Stage::WeylFit | Stage::Tauber)
    }
}

/// Stage invocations that make up the full suite, in dependency order.
pub fn full_suite(cfg: &ExperimentConfig) -> Vec<(Stage, String)> {
    let mut v: Vec<(Stage, String)> = cfg.basis_dims.keys().map(|m| (Stage::Spectrum, m.clone())).collect();
    v.push((Stage::Constants, String::new()));
    v.push((Stage::WeylFit, "model-a".into()));
    v.push((Stage::WeylFit, "model-b".into()));
    v.push((Stage::Phase, String::new()));
    v.push((Stage::Oscillatory, String::new()));
    v.push((Stage::Tauber, "model-b".into()));
    v
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance { config_hash: cfg.hash(), code_version: format!("sgweyl {}", env!("CARGO_PKG_VERSION")) }
}

/// Wall-clock seconds per stage invocation, kept beside the artifacts but
/// outside the reproducible set.
fn record_time(out: &Path, key: &str, secs: f64) -> Result<()> {
    let p = out.join("timing.json");
    let mut t: BTreeMap<String, f64> = fs::read(&p).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default();
    t.insert(key.to_string(), secs);
    fs::write(p, stages::to_json(&t))?;
    Ok(())
}

pub fn read_timing(out: &Path) -> BTreeMap<String, f64> {
    fs::read(out.join("timing.json")).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default()
}

fn records_of(parts: Vec<CriterionPart>) -> Vec<CriterionRecord> {
    let mut out: Vec<CriterionRecord> = Vec::new();
    for p in parts {
        match out.iter_mut().find(|r| r.id == p.criterion) {
            Some(r) => {
                r.pass &= p.pass();
                r.parts.push(p);
            }
            None => {
                let name = CRITERIA.iter().find(|c| c.0 == p.criterion).map(|c| c.1).unwrap_or("");
                out.push(CriterionRecord { id: p.criterion, name: name.into(), pass: p.pass(), parts: vec![p] });
            }
        }
    }
    out
}

fn run_stage(cfg: &ExperimentConfig, stage: Stage, model: &str) -> Result<Vec<CriterionPart>> {
    let ctx = Ctx::new(cfg)?;
    let t0 = Instant::now();
    let parts = match stage {
        Stage::Spectrum => stages::spectrum(&ctx, model)?.0,
        Stage::Constants => stages::constants(&ctx)?,
        Stage::WeylFit => stages::weyl_fit(&ctx, model)?,
        Stage::Phase => stages::phase(&ctx)?,
        Stage::Oscillatory => stages::oscillatory(&ctx)?,
        Stage::Tauber => stages::tauber(&ctx)?,
        Stage::Report => unreachable!("report is not a pipeline stage"),
    };
    let key = if stage.per_model() { format!("{}:{model}", stage.name()) } else { stage.name().to_string() };
    record_time(&cfg.output, &key, t0.elapsed().as_secs_f64())?;
    Ok(parts)
}

/// Reruns the full suite into `<output>/.rerun` with the same config and
/// cache and compares every artifact byte for byte.
fn determinism(cfg: &ExperimentConfig) -> Result<CriterionPart> {
    let scratch = cfg.output.join(".rerun");
    stages::remove_rerun(&cfg.output)?;
    let mut c2 = cfg.clone();
    c2.output = scratch.clone();
    for (stage, model) in full_suite(cfg) {
        run_stage(&c2, stage, &model)?;
    }
    let first: BTreeMap<String, String> = manifest(&cfg.output)?
        .into_iter()
        .filter(|e| !e.path.starts_with("parts/c10-"))
        .map(|e| (e.path, e.sha256))
        .collect();
    let second: BTreeMap<String, String> = manifest(&scratch)?.into_iter().map(|e| (e.path, e.sha256)).collect();
    let differing = first.iter().filter(|(p, h)| second.get(*p).is_some_and(|h2| h2 != *h)).count();
    let same_set = first.keys().eq(second.keys());
    stages::remove_rerun(&cfg.output)?;
    Ok(CriterionPart::new(
        10,
        "rerun",
        vec![
            Check::at_least("artifacts compared", 1.0, first.len() as f64),
            Check::holds("both runs produce the same artifact set", same_set),
            Check::abs("artifacts differing between runs", 0.0, differing as f64, 0.0),
        ],
    ))
}

fn report(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ctx = Ctx::new(cfg)?;
    // fail before the rerun if anything upstream is missing
    let parts: Vec<CriterionPart> = read_parts(&ctx.out)?.into_iter().filter(|p| p.criterion != 10).collect();
    let mut probe = parts.clone();
    probe.push(CriterionPart::new(10, "rerun", vec![]));
    assemble(&probe)?;
    let t0 = Instant::now();
    let det = determinism(cfg)?;
    ctx.write_json(&format!("parts/{}", det.file_name()), &det)?;
    record_time(&cfg.output, "report", t0.elapsed().as_secs_f64())?;
    let criteria = assemble(&read_parts(&ctx.out)?)?;
    let pass = criteria.iter().all(|c| c.pass);
    let rep = RunReport { stage: "report".into(), criteria, provenance: provenance(cfg), manifest: manifest(&ctx.out)?, pass };
    ctx.write_json("report.json", &rep)?;
    Ok(rep)
}

/// Runs one stage (model-specific stages use `model`, defaulting to the
/// configured model) inside a pool of `cfg.threads` workers.
pub fn run(cfg: &ExperimentConfig, stage: Stage, model: Option<&str>) -> Result<RunReport> {
    cfg.validate()?;
    let model = match model {
        Some(m) => sgweyl::spectral::canonical_model(m)?,
        None => cfg.model_id(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        if stage == Stage::Report {
            return report(cfg);
        }
        let parts = run_stage(cfg, stage, model)?;
        let criteria = records_of(parts);
        let pass = criteria.iter().all(|c| c.pass);
        Ok(RunReport { stage: stage.name().into(), criteria, provenance: provenance(cfg), manifest: manifest(&cfg.output)?, pass })
    })
}
