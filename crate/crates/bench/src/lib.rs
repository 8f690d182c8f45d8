//! Benchmark fixtures.

use pramloop_core::patient::synthetic_cohort;
use pramloop_core::scenario::validation_scenario;
use pramloop_core::{PatientParams, Result, Scenario, StrategyConfig};

/// Sampling period of every fixture (min).
pub const H: f64 = 5.0;

pub fn cohort() -> Result<Vec<PatientParams>> {
    synthetic_cohort(H)
}

pub fn validation() -> Result<Scenario> {
    validation_scenario()
}

/// The seven strategies at the reference settings.
pub fn reference_strategies() -> Vec<StrategyConfig> {
    use pramloop_core::Mode;
    vec![
        StrategyConfig::s1(30.0, 2.0, 0.0, 48),
        StrategyConfig::s2(10.0),
        StrategyConfig::s3(15.0),
        StrategyConfig::s4(10.0),
        StrategyConfig::bare(Mode::InsMa),
        StrategyConfig::bare(Mode::InsSma),
        StrategyConfig::bare(Mode::InsNma),
    ]
}
