//! Experiment files.
//!
//! An experiment file is TOML with two tables:
//!
//! ```toml
//! [run]
//! name = "doors"                  # required; names the output subdirectory
//! output_dir = "runs"             # default "runs"
//! preset = "desk"                 # didactic | desk | continuous | memory, default didactic
//! seeds = [0, 1, 2]               # default [0]; must be nonempty
//! algorithms = ["gpo_naive", "ppo_bc"]  # default: train.algorithm
//!
//! [train]                         # any trainer field, overriding the preset
//! env = { name = "tigerdoor_alt" }
//! total_timesteps = 200000
//! eval_mode = "stochastic"
//! net = { hidden = [64] }
//! ```
//!
//! Unknown keys in either table are errors. `net` is merged key by key into
//! the preset's network; every other `[train]` key replaces the preset value.

use std::fmt;
use std::path::PathBuf;

use gpo_core::envs::EnvConfig;
use gpo_core::objectives::Algorithm;
use gpo_core::trainer::GpoConfig;
use serde::Deserialize;

/// Overrides the configured output directory when set.
pub const OUTPUT_DIR_VAR: &str = "GPO_OUTPUT_DIR";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Didactic,
    Desk,
    Continuous,
    Memory,
}

impl Preset {
    pub fn base(self, algorithm: Algorithm) -> GpoConfig {
        match self {
            Preset::Didactic => GpoConfig::didactic(algorithm, EnvConfig::TigerDoorAlt),
            Preset::Desk => GpoConfig::didactic(algorithm, EnvConfig::TigerDoorAlt).desk(),
            Preset::Continuous => GpoConfig::continuous(algorithm, 0.2),
            Preset::Memory => GpoConfig::memory(algorithm, 2, 1),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    name: String,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    preset: Preset,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    algorithms: Option<Vec<Algorithm>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Strict schema, used to report unknown keys and type errors with positions.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Schema {
    run: RunSection,
    #[serde(default)]
    #[allow(dead_code)]
    train: Option<GpoConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// One fully resolved trainer config per algorithm; seeds are applied at run time.
    pub runs: Vec<GpoConfig>,
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn plain(message: impl Into<String>) -> Self {
        Self { line: None, column: None, message: message.into() }
    }

    fn from_toml(text: &str, err: &toml::de::Error) -> Self {
        let (line, column) = match err.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        Self { line, column, message: err.message().to_string() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let schema: Schema = toml::from_str(text).map_err(|e| ConfigError::from_toml(text, &e))?;
        let doc: toml::Table = toml::from_str(text).map_err(|e| ConfigError::from_toml(text, &e))?;
        let overrides = match doc.get("train") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => toml::Table::new(),
        };
        let run = schema.run;
        if run.seeds.is_empty() {
            return Err(ConfigError::plain("run.seeds must not be empty"));
        }
        let algorithms = match run.algorithms {
            Some(a) if a.is_empty() => return Err(ConfigError::plain("run.algorithms must not be empty")),
            Some(a) => a,
            None => match overrides.get("algorithm") {
                Some(v) => vec![v.clone().try_into().map_err(|e: toml::de::Error| ConfigError::plain(e.message().to_string()))?],
                None => vec![Algorithm::GpoPenalty],
            },
        };
        if run.name.is_empty() || run.name.contains(['/', '\\']) {
            return Err(ConfigError::plain("run.name must be a nonempty single path component"));
        }
        let mut runs = Vec::with_capacity(algorithms.len());
        for algo in algorithms {
            let mut cfg = resolve(run.preset, algo, &overrides)?;
            cfg.algorithm = algo;
            cfg.validate().map_err(|e| ConfigError::plain(e.to_string()))?;
            runs.push(cfg);
        }
        Ok(Self { name: run.name, output_dir: run.output_dir, seeds: run.seeds, runs })
    }

    /// The configured directory, unless the override variable is set.
    pub fn effective_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_VAR) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}

fn resolve(preset: Preset, algo: Algorithm, overrides: &toml::Table) -> Result<GpoConfig, ConfigError> {
    let base = toml::Value::try_from(preset.base(algo)).map_err(|e| ConfigError::plain(e.to_string()))?;
    let toml::Value::Table(mut merged) = base else {
        unreachable!("a struct serializes to a table")
    };
    for (key, value) in overrides {
        match (key.as_str(), merged.get_mut(key), value) {
            ("net", Some(toml::Value::Table(net)), toml::Value::Table(patch)) => {
                for (k, v) in patch {
                    net.insert(k.clone(), v.clone());
                }
            }
            _ => {
                merged.insert(key.clone(), value.clone());
            }
        }
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| ConfigError::plain(e.message().to_string()))
}
