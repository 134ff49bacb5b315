//! TOML front end for controller settings and scenarios.
//!
//! A settings file holds any subset of the [`SimConfig`] tables
//! (`controller`, `gait`, `cost`, `swing`, `solver`, `fall`); missing keys
//! keep their defaults and unknown keys are rejected. A scenario file holds
//! one [`Scenario`].

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::error::ConfigError;
use crate::sim::{Scenario, SimConfig, SCENARIO_NAMES};

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })
}

fn parse<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
}

/// Parses and validates settings.
pub fn parse_config(text: &str, origin: &str) -> Result<SimConfig, ConfigError> {
    let config: SimConfig = parse(text, origin)?;
    config.validate().map_err(|e| ConfigError::Invalid(format!("{origin}: {e}")))?;
    Ok(config)
}

pub fn read_config(path: &Path) -> Result<SimConfig, ConfigError> {
    parse_config(&read(path)?, &path.display().to_string())
}

/// Parses a scenario; it is validated against a horizon by [`load_experiment`].
pub fn parse_scenario(text: &str, origin: &str) -> Result<Scenario, ConfigError> {
    parse(text, origin)
}

pub fn read_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    parse_scenario(&read(path)?, &path.display().to_string())
}

/// A built-in scenario by name, or a scenario file if `spec` is not one of
/// the built-in names.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, ConfigError> {
    if SCENARIO_NAMES.contains(&spec) {
        return Scenario::builtin(spec);
    }
    let path = Path::new(spec);
    if path.exists() {
        read_scenario(path)
    } else {
        Err(ConfigError::UnknownScenario(spec.to_string()))
    }
}

/// Settings and scenario for one run, checked against each other. `seed`
/// overrides the scenario seed.
pub fn load_experiment(
    config: Option<&Path>,
    scenario: &str,
    seed: Option<u64>,
) -> Result<(SimConfig, Scenario), ConfigError> {
    let config = match config {
        Some(path) => read_config(path)?,
        None => SimConfig::default(),
    };
    let mut scenario = resolve_scenario(scenario)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    scenario
        .validate(config.controller.horizon)
        .map_err(|e| ConfigError::Invalid(format!("scenario `{}`: {e}", scenario.name)))?;
    Ok((config, scenario))
}
