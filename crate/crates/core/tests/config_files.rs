use netmax_core::config::ExperimentConfig;
use std::path::PathBuf;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn canonical_files_match_presets() {
    let het = ExperimentConfig::load(&configs_dir().join("canonical_heterogeneous.json")).unwrap();
    assert_eq!(het, ExperimentConfig::canonical_heterogeneous());
    let hom = ExperimentConfig::load(&configs_dir().join("canonical_homogeneous.json")).unwrap();
    assert_eq!(hom, ExperimentConfig::canonical_homogeneous());
}

#[test]
fn every_shipped_config_validates_and_round_trips() {
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let again = ExperimentConfig::from_json_str(&cfg.to_json_pretty()).unwrap();
            assert_eq!(cfg, again, "{}", path.display());
            cfg.environment(cfg.seed).unwrap();
        }
    }
}
