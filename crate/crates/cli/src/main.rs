use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pramloop_core::app::{self, Loaded};
use pramloop_core::io::{parse_trace, result_from_trace, MetricsExport, MetricsRecord};
use pramloop_core::metrics::{compute_metrics, GlucoseSource};
use pramloop_core::Mode;

/// Closed-loop insulin plus pramlintide simulator.
///
/// Units: glucose mg/dL, insulin U (per 5 min step in traces), pramlintide
/// ug (per step for infusions), time min, carbohydrates g.
#[derive(Parser, Debug)]
#[command(name = "pramloop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving all outputs (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one strategy over the cohort; writes per-patient traces, metrics.json and manifest.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Mode: S1, S2, S3, S4, INS_MA, INS_SMA or INS_NMA.
        #[arg(long, default_value = "INS_NMA")]
        strategy: Mode,
    },
    /// Run several strategies over the cohort with paired streams; writes metrics.json with the configured comparisons.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Modes to run (repeatable); defaults to the [[strategy]] tables of the config, or all seven modes.
        #[arg(long)]
        strategy: Vec<Mode>,
        /// Also write one trace CSV per run.
        #[arg(long)]
        traces: bool,
    },
    /// Grid-search a strategy on the tuning scenario; writes tuning_report.json and tuning_boxplot.csv
    /// (bolus grid 15-300 ug for S1/S3, ratio grid 3-15 ug/U for S2/S4).
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: Mode,
    },
    /// Compute metrics for existing trace CSV files.
    Metrics {
        /// Trace files written by simulate or batch (named <patient>_<mode>.csv).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Compute on true plasma glucose instead of CGM.
        #[arg(long)]
        true_glucose: bool,
        /// Write metrics.json here instead of standard output.
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
    },
    /// Paired comparison of a strategy against a comparator (difference = strategy - comparator,
    /// bootstrap 95% CI over patients); writes comparison.json.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        comparator: Mode,
        #[arg(long)]
        strategy: Mode,
    },
    /// Write the configured meal scenario as a meal table (day,meal_type,time,grams).
    ExportScenario {
        #[command(flatten)]
        common: Common,
        /// File name inside the output directory.
        #[arg(long, default_value = "scenario.csv")]
        name: String,
    },
    /// Re-run the command recorded in a manifest.json.
    Rerun {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

fn load(common: &Common) -> Result<Loaded> {
    let mut loaded = Loaded::from_path(&common.config)?;
    if let Some(seed) = common.seed {
        loaded.config.run.master_seed = seed;
    }
    Ok(loaded)
}

fn split_trace_name(path: &Path) -> Result<(String, Mode)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .context("trace file name is not UTF-8")?;
    for mode in Mode::ALL {
        if let Some(patient) = stem.strip_suffix(&format!("_{mode}")) {
            return Ok((patient.to_string(), mode));
        }
    }
    anyhow::bail!("cannot infer the mode from trace file name '{stem}'")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { common, strategy } => {
            let m = app::simulate(&load(&common)?, strategy, &common.out_dir)?;
            eprintln!("wrote {} files to {}", m.outputs.len() + 1, common.out_dir.display());
        }
        Command::Batch {
            common,
            strategy,
            traces,
        } => {
            let modes = (!strategy.is_empty()).then_some(strategy.as_slice());
            let m = app::batch(&load(&common)?, modes, traces, &common.out_dir)?;
            eprintln!("wrote {} files to {}", m.outputs.len() + 1, common.out_dir.display());
        }
        Command::Tune { common, strategy } => {
            app::tune(&load(&common)?, strategy, &common.out_dir)?;
            let report = std::fs::read_to_string(common.out_dir.join("tuning_report.json"))?;
            let v: serde_json::Value = serde_json::from_str(&report)?;
            println!("chosen {}: {}", v["parameters"], v["chosen"]);
        }
        Command::Metrics {
            traces,
            true_glucose,
            out_dir,
        } => {
            let source = if true_glucose {
                GlucoseSource::True
            } else {
                GlucoseSource::Cgm
            };
            let mut records = Vec::new();
            for path in &traces {
                let (patient, mode) = split_trace_name(path)?;
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let rows = parse_trace(&text, &path.display().to_string())?;
                let metrics = compute_metrics(&result_from_trace(&patient, mode, rows), source)?;
                records.push(MetricsRecord { patient, mode, metrics });
            }
            let json = MetricsExport::new(source, records, vec![]).to_json()?;
            match out_dir {
                Some(dir) => pramloop_core::io::write_file(&dir.join("metrics.json"), json.as_bytes())?,
                None => print!("{json}"),
            }
        }
        Command::Compare {
            common,
            comparator,
            strategy,
        } => {
            let (_, comparisons) = app::compare(&load(&common)?, comparator, strategy, &common.out_dir)?;
            println!("metric,comparator,strategy,mean_difference,ci_lo,ci_hi");
            for c in comparisons {
                println!(
                    "{},{},{},{:.4},{:.4},{:.4}",
                    c.metric, c.comparator, c.strategy, c.mean_difference, c.ci_lo, c.ci_hi
                );
            }
        }
        Command::ExportScenario { common, name } => {
            let path = common.out_dir.join(name);
            app::export_scenario(&load(&common)?, &path)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Rerun { manifest, out_dir } => {
            let m = pramloop_core::io::RunManifest::load(&manifest)?;
            app::rerun(&m, &out_dir)?;
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PRAMLOOP_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("PRAMLOOP_THREADS must be a positive integer, got '{v}'"))?;
        anyhow::ensure!(n > 0, "PRAMLOOP_THREADS must be a positive integer");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
