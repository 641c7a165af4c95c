//! Full acceptance run: every stage of the suite on a fresh cache, then the
//! consolidated report (which reruns the suite for the determinism check).
//! Prints one pass/fail line per criterion.

use sgweyl_cli::config::ExperimentConfig;
use sgweyl_cli::report::{assemble, read_parts, CriterionRecord, CRITERIA};
use sgweyl_cli::{full_suite, read_timing, run, Stage};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

/// Wall-clock limits in seconds for criteria that carry one.
const RUNTIME_ORACLE: f64 = 30.0;
const RUNTIME_CONSTANTS: f64 = 10.0;
const RUNTIME_WEYL: f64 = 20.0 * 60.0;

fn runtime_line(timing: &BTreeMap<String, f64>, id: u8) -> Option<(f64, f64)> {
    let get = |k: &str| timing.get(k).copied().unwrap_or(f64::INFINITY);
    match id {
        1 => Some((get("spectrum:oracle-h"), RUNTIME_ORACLE)),
        2 => Some((get("constants"), RUNTIME_CONSTANTS)),
        3 => Some((
            get("spectrum:model-a") + get("spectrum:model-b") + get("weyl-fit:model-a") + get("weyl-fit:model-b"),
            RUNTIME_WEYL,
        )),
        _ => None,
    }
}

fn summary(r: &CriterionRecord) -> String {
    let mut s = Vec::new();
    for p in &r.parts {
        for c in &p.checks {
            if !c.pass || r.parts.len() * p.checks.len() <= 6 {
                s.push(format!("{}/{} = {:.4e}{}", p.part, c.name, c.measured, if c.pass { "" } else { " FAILED" }));
            }
        }
    }
    s.join("; ")
}

#[test]
fn acceptance() {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&root);
    let cfg = ExperimentConfig { output: root.join("out"), cache_dir: root.join("cache"), ..ExperimentConfig::default() };

    let mut errors = Vec::new();
    for (stage, model) in full_suite(&cfg) {
        let m = if model.is_empty() { None } else { Some(model.as_str()) };
        if let Err(e) = run(&cfg, stage, m) {
            errors.push(format!("{} {model}: {e}", stage.name()));
        }
    }
    let report = run(&cfg, Stage::Report, None);
    let records = match &report {
        Ok(r) => r.criteria.clone(),
        Err(e) => {
            errors.push(format!("report: {e}"));
            // whatever was exercised, with the missing ones marked failed
            let parts = read_parts(&cfg.output).unwrap_or_default();
            assemble(&parts).unwrap_or_else(|_| {
                CRITERIA
                    .iter()
                    .map(|(id, name, _)| CriterionRecord {
                        id: *id,
                        name: name.to_string(),
                        parts: parts.iter().filter(|p| p.criterion == *id).cloned().collect(),
                        pass: false,
                    })
                    .collect()
            })
        }
    };
    let timing = read_timing(&cfg.output);

    // straight to stdout so the lines survive libtest's output capture
    let mut out = std::io::stdout().lock();
    let mut all = true;
    for r in &records {
        let mut pass = r.pass;
        let mut extra = String::new();
        if let Some((t, limit)) = runtime_line(&timing, r.id) {
            pass &= t < limit;
            extra = format!("; runtime {t:.1} s (limit {limit:.0} s)");
        }
        all &= pass;
        let _ = writeln!(out, "criterion {:>2} [{}] {}: {}{}", r.id, if pass { "PASS" } else { "FAIL" }, r.name, summary(r), extra);
    }
    for e in &errors {
        let _ = writeln!(out, "stage error: {e}");
    }
    assert!(errors.is_empty() && all && records.len() == 10, "acceptance failed");
}
