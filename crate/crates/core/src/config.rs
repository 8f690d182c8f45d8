//! Configuration schema.
//!
//! Configs are TOML. Every key carries its unit in the name and unknown keys
//! are rejected. Relative paths are resolved against the directory of the
//! file that names them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::RunSettings;
use crate::error::{Error, Result};
use crate::metrics::{GlucoseSource, SelectionTolerances};
use crate::patient::{synthetic_cohort, PatientParams};
use crate::rng::RngStreams;
use crate::scenario::{
    gen_tuning_scenario, load_validation_scenario, validation_scenario, Scenario, TuningScenarioConfig,
};
use crate::strategy::{Mode, StrategyConfig};
use crate::tuning::S1Grid;

/// Where the meals come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// The shipped validation table.
    Validation {},
    /// Randomized scenario drawn from the master seed.
    Tuning {
        days: u32,
        #[serde(default)]
        distribution: TuningScenarioConfig,
    },
    /// A meal table on disk.
    File { path: PathBuf },
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec::Validation {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum CohortSpec {
    /// The built-in ten synthetic patients.
    Synthetic {},
    /// A TOML file with `[[patient]]` tables.
    File { path: PathBuf },
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec::Synthetic {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortFile {
    pub patient: Vec<PatientParams>,
}

/// One paired comparison to report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSpec {
    pub comparator: Mode,
    pub strategy: Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub glucose_source: GlucoseSource,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub comparisons: Vec<ComparisonSpec>,
    #[serde(default)]
    pub selection_tolerances: SelectionTolerances,
}

fn default_resamples() -> usize {
    10_000
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            glucose_source: GlucoseSource::Cgm,
            bootstrap_resamples: default_resamples(),
            comparisons: Vec::new(),
            selection_tolerances: SelectionTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    /// Scenario used for tuning; defaults to 14 random days.
    #[serde(default = "default_tuning_scenario")]
    pub scenario: ScenarioSpec,
    /// Strategy 1 bolus while its thresholds are searched.
    #[serde(rename = "s1_lambda_ug", default, skip_serializing_if = "Option::is_none")]
    pub s1_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_grid: Option<S1Grid>,
}

fn default_tuning_scenario() -> ScenarioSpec {
    ScenarioSpec::Tuning {
        days: 14,
        distribution: TuningScenarioConfig::DEFAULT,
    }
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            scenario: default_tuning_scenario(),
            s1_lambda: None,
            s1_grid: None,
        }
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSettings,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub cohort: CohortSpec,
    /// Strategies of a batch, given as `[[strategy]]` tables.
    #[serde(rename = "strategy", default)]
    pub strategies: Vec<StrategyConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        let mut modes: Vec<Mode> = self.strategies.iter().map(|s| s.mode).collect();
        modes.sort();
        let n = modes.len();
        modes.dedup();
        if modes.len() != n {
            return Err(Error::config("each mode may appear in at most one [[strategy]] table"));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        if self.analysis.bootstrap_resamples == 0 {
            return Err(Error::config("analysis.bootstrap_resamples must be >= 1"));
        }
        for c in &self.analysis.comparisons {
            for m in [c.comparator, c.strategy] {
                if !self.strategies.iter().any(|s| s.mode == m) {
                    return Err(Error::config(format!("comparison mode {m} has no [[strategy]] table")));
                }
            }
        }
        if let ScenarioSpec::Tuning { days: 0, .. } = self.scenario {
            return Err(Error::config("scenario.days must be >= 1"));
        }
        Ok(())
    }

    /// The configured strategy for `mode`, falling back to the reference
    /// parameters for modes that have them.
    pub fn strategy(&self, mode: Mode) -> Result<StrategyConfig> {
        if let Some(s) = self.strategies.iter().find(|s| s.mode == mode) {
            return Ok(*s);
        }
        let s = reference_strategy(mode);
        s.validate()?;
        Ok(s)
    }
}

/// Reference doses and ratios for each mode. Strategy 1 has no reference
/// thresholds and must be configured explicitly.
pub fn reference_strategy(mode: Mode) -> StrategyConfig {
    match mode {
        Mode::S1 => StrategyConfig {
            lambda: Some(30.0),
            ..StrategyConfig::bare(Mode::S1)
        },
        Mode::S2 => StrategyConfig::s2(10.0),
        Mode::S3 => StrategyConfig::s3(15.0),
        Mode::S4 => StrategyConfig::s4(10.0),
        m => StrategyConfig::bare(m),
    }
}

/// Parses and validates a config from text. `base` resolves relative paths.
pub fn parse_config_str(text: &str, base: &Path) -> Result<Config> {
    let mut cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    cfg.validate()?;
    resolve_paths(&mut cfg, base);
    Ok(cfg)
}

fn resolve_paths(cfg: &mut Config, base: &Path) {
    let fix = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let ScenarioSpec::File { path } = &mut cfg.scenario {
        fix(path);
    }
    if let ScenarioSpec::File { path } = &mut cfg.tuning.scenario {
        fix(path);
    }
    if let CohortSpec::File { path } = &mut cfg.cohort {
        fix(path);
    }
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base).map_err(|e| match e {
        Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn serialize_config(cfg: &Config) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn load_cohort(spec: &CohortSpec, h: f64) -> Result<Vec<PatientParams>> {
    let cohort = match spec {
        CohortSpec::Synthetic {} => synthetic_cohort(h)?,
        CohortSpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let f: CohortFile = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            f.patient
        }
    };
    if cohort.is_empty() {
        return Err(Error::config("cohort has no patients"));
    }
    for p in &cohort {
        p.validate(h)?;
    }
    Ok(cohort)
}

pub fn serialize_cohort(cohort: &[PatientParams]) -> Result<String> {
    toml::to_string(&CohortFile {
        patient: cohort.to_vec(),
    })
    .map_err(|e| Error::Serialize(e.to_string()))
}

pub fn load_scenario(spec: &ScenarioSpec, master_seed: u64) -> Result<Scenario> {
    match spec {
        ScenarioSpec::Validation {} => validation_scenario(),
        ScenarioSpec::Tuning { days, distribution } => {
            gen_tuning_scenario(&RngStreams::new(master_seed), *days, distribution)
        }
        ScenarioSpec::File { path } => load_validation_scenario(path),
    }
}

/// Hex SHA-256 over the given byte blobs, each length-prefixed.
pub fn content_hash<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
