//! The TOML files shipped with the repository mirror the compiled-in defaults.

use std::path::PathBuf;

use wheelleg::config::{read_config, read_scenario};
use wheelleg::sim::{Scenario, SimConfig, SCENARIO_NAMES};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn default_config_matches_defaults() {
    assert_eq!(read_config(&repo().join("config/default.toml")).unwrap(), SimConfig::default());
}

#[test]
fn scenario_files_match_builtins() {
    for name in SCENARIO_NAMES {
        let path = repo().join("scenarios").join(format!("{name}.toml"));
        assert_eq!(read_scenario(&path).unwrap(), Scenario::builtin(name).unwrap(), "{name}");
    }
}
