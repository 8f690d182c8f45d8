//! Closed-loop insulin and pramlintide simulation.
//!
//! The crate is organised bottom-up: `pkpd` holds the pramlintide and meal
//! models, `patient` the glucose plant and sensor, `controller` the insulin
//! controller, `strategy` the pramlintide dosing rules, `scenario` the meal
//! inputs, `engine` the closed loop, `metrics` the outcome analysis and
//! `tuning` the parameter search. `config`, `io` and `app` provide the file
//! formats and whole-command workflows used by the command-line tool.

// Range checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod controller;
pub mod engine;
pub mod error;
pub mod integrate;
pub mod io;
pub mod lti;
pub mod metrics;
pub mod patient;
pub mod pkpd;
pub mod rng;
pub mod scenario;
pub mod strategy;
pub mod tuning;

pub use config::Config;
pub use controller::{ControllerParams, DobController, InsulinCommand};
pub use engine::{batch_run, run_closed_loop, RunResult, RunSettings, SimConfig, TraceRow};
pub use error::{Error, Result};
pub use metrics::{GlycemicMetrics, Metric, PairedComparison};
pub use patient::PatientParams;
pub use scenario::{MealEvent, MealType, Scenario};
pub use strategy::{Mode, PramCommand, StrategyConfig};
