//! Config parsing, cache integrity, stage dependencies and report
//! completeness on cheap stages.

use proptest::prelude::*;
use sgweyl::Error;
use sgweyl_cli::cache::SpectrumCache;
use sgweyl_cli::config::ExperimentConfig;
use sgweyl_cli::report::{manifest, CriterionPart};
use sgweyl_cli::{run, Stage};
use sgweyl::spectral::ModelOperator;
use std::fs;
use std::path::PathBuf;

fn scratch(name: &str) -> ExperimentConfig {
    let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("harness").join(name);
    let _ = fs::remove_dir_all(&root);
    ExperimentConfig { output: root.join("out"), cache_dir: root.join("cache"), ..ExperimentConfig::default() }
}

#[test]
fn config_rejects_unknown_keys_and_bad_cutoffs() {
    assert!(ExperimentConfig::from_json("{}").is_ok());
    assert!(matches!(ExperimentConfig::from_json(r#"{"modle": "A"}"#), Err(Error::ConfigInvalid(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"cutoff": {"k3": 1.0}}"#), Err(Error::ConfigInvalid(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"model": "Z"}"#), Err(Error::ConfigInvalid(_))));
    // k₁ must exceed 4AC
    assert!(matches!(ExperimentConfig::from_json(r#"{"cutoff": {"k1": 2.0}}"#), Err(Error::ConfigInvariantViolated(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"cutoff": {"eps": 0.7}}"#), Err(Error::ConfigInvariantViolated(_))));
    let c = ExperimentConfig::from_json(r#"{"model": "A", "threads": 3, "output": "elsewhere"}"#).unwrap();
    assert_eq!(c.model_id(), "model-a");
    // output location and threads do not change the experiment hash
    let d = ExperimentConfig { model: "A".into(), ..ExperimentConfig::default() };
    assert_eq!(c.hash(), d.hash());
    assert_ne!(c.hash(), ExperimentConfig::default().hash());
}

#[test]
fn oracle_spectrum_cache_hit_is_byte_identical() {
    let mut cfg = scratch("oracle");
    cfg.model = "oracle-h".into();
    let r1 = run(&cfg, Stage::Spectrum, None).unwrap();
    assert!(r1.pass);
    let csv = cfg.output.join("spectrum-oracle-h-400.csv");
    let first = fs::read(&csv).unwrap();
    let op = ModelOperator::shipped("oracle-h").unwrap();
    let cache = SpectrumCache::new(&cfg.cache_dir);
    assert!(cache.contains(&op, 400));
    let r2 = run(&cfg, Stage::Spectrum, None).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), first);
    assert_eq!(r1.manifest, r2.manifest);

    // flip one digit in the cached CSV
    let key = SpectrumCache::key(&op, 400);
    let cp = cfg.cache_dir.join(format!("{key}.csv"));
    let mut bytes = fs::read(&cp).unwrap();
    let i = bytes.iter().rposition(|b| b.is_ascii_digit() && *b != b'9').unwrap();
    bytes[i] += 1;
    fs::write(&cp, bytes).unwrap();
    assert!(matches!(run(&cfg, Stage::Spectrum, None), Err(Error::CacheCorrupt(_))));
}

#[test]
fn stages_report_missing_dependencies() {
    let cfg = scratch("deps");
    for (stage, model) in [(Stage::WeylFit, Some("A")), (Stage::Tauber, None), (Stage::Oscillatory, None)] {
        let r = run(&cfg, stage, model);
        assert!(matches!(r, Err(Error::StageDependencyMissing(_))), "{}: {r:?}", stage.name());
    }
    // report lists what was never exercised
    match run(&cfg, Stage::Report, None) {
        Err(Error::StageDependencyMissing(m)) => assert!(m.contains("1/oracle-h") && m.contains("9/model-b"), "{m}"),
        r => panic!("{r:?}"),
    }
}

#[test]
fn constants_stage_is_deterministic() {
    let cfg = scratch("constants");
    let r = run(&cfg, Stage::Constants, None).unwrap();
    assert!(r.pass, "{:?}", r.criteria);
    let again = run(&cfg, Stage::Constants, None).unwrap();
    assert_eq!(r, again);
    assert!(manifest(&cfg.output).unwrap().iter().any(|e| e.path == "constants.json"));
}

#[test]
fn tauber_rejects_other_models() {
    let mut cfg = scratch("mismatch");
    cfg.basis_dims.insert("model-a".into(), vec![60, 80]);
    run(&cfg, Stage::Constants, None).unwrap();
    run(&cfg, Stage::Spectrum, Some("A")).unwrap();
    cfg.model = "model-a".into();
    assert!(matches!(run(&cfg, Stage::Tauber, None), Err(Error::ModelMismatch(..))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn config_json_round_trip(k2 in 2.1f64..10.0, t in 0.05f64..1.0, threads in 1usize..8, n in 10usize..500) {
        let mut c = ExperimentConfig::default();
        c.cutoff.k2 = Some(k2);
        c.cutoff.t = t;
        c.threads = threads;
        c.basis_dims.insert("model-b".into(), vec![n, 2 * n]);
        let text = serde_json::to_string(&c).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn part_pass_is_conjunction(flags in prop::collection::vec(any::<bool>(), 1..8)) {
        let checks = flags.iter().map(|&f| sgweyl_cli::report::Check::holds("x", f)).collect();
        let p = CriterionPart::new(3, "model-a", checks);
        prop_assert_eq!(p.pass(), flags.iter().all(|&f| f));
    }
}
