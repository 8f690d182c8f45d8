//! Whole-command workflows shared by the CLI and the acceptance suite. Each
//! writes its outputs under an output directory and returns a manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::{content_hash, load_cohort, load_scenario, parse_config, CohortSpec, Config, ScenarioSpec};
use crate::engine::{batch_run, RunResult};
use crate::error::{Error, Result};
use crate::io::{export_metrics, export_trace, unix_now, write_file, MetricsExport, MetricsRecord, RunManifest};
use crate::metrics::{compute_metrics, paired_differences, Metric, MetricTable, PairedComparison, Resampling};
use crate::patient::PatientParams;
use crate::rng::{derive_stream, purpose};
use crate::scenario::write_meal_table;
use crate::strategy::{Mode, StrategyConfig};
use crate::tuning::{run_grid, tune_s1_thresholds, write_s1_defaults, Provenance, SimEvaluator, TuningGrid};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: Config,
    pub path: PathBuf,
    pub input_hash: String,
}

impl Loaded {
    pub fn from_path(path: &Path) -> Result<Self> {
        let config = parse_config(path)?;
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut blobs = vec![text];
        for extra in referenced_files(&config) {
            blobs.push(std::fs::read(&extra).map_err(|e| Error::io(&extra, e))?);
        }
        let input_hash = content_hash(blobs.iter().map(Vec::as_slice));
        Ok(Self {
            config,
            path: path.to_path_buf(),
            input_hash,
        })
    }

    fn manifest(&self, command: &str, modes: Vec<Mode>, outputs: Vec<String>, started: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            config_path: self.path.clone(),
            master_seed: self.config.run.master_seed,
            modes,
            tool_version: TOOL_VERSION.into(),
            input_hash: self.input_hash.clone(),
            outputs,
            started_unix_s: started,
            finished_unix_s: unix_now(),
        }
    }
}

fn referenced_files(cfg: &Config) -> Vec<PathBuf> {
    let mut v = Vec::new();
    if let CohortSpec::File { path } = &cfg.cohort {
        v.push(path.clone());
    }
    for s in [&cfg.scenario, &cfg.tuning.scenario] {
        if let ScenarioSpec::File { path } = s {
            v.push(path.clone());
        }
    }
    v
}

fn cohort_and_ids(cfg: &Config) -> Result<(Vec<PatientParams>, Vec<String>)> {
    let cohort = load_cohort(&cfg.cohort, cfg.run.h)?;
    let ids = cohort.iter().map(|p| p.id.clone()).collect();
    Ok((cohort, ids))
}

fn trace_name(patient: &str, mode: Mode) -> String {
    format!("traces/{patient}_{mode}.csv")
}

/// Batch results keyed by patient index and mode.
pub type RunMap = BTreeMap<(usize, Mode), Result<RunResult>>;

/// Runs the cohort under `modes`; aborted runs are returned as errors in the map.
pub fn simulate_modes(cfg: &Config, modes: &[Mode]) -> Result<(Vec<String>, RunMap)> {
    let (cohort, ids) = cohort_and_ids(cfg)?;
    let scenario = load_scenario(&cfg.scenario, cfg.run.master_seed)?;
    let strategies: Vec<StrategyConfig> = modes.iter().map(|&m| cfg.strategy(m)).collect::<Result<_>>()?;
    Ok((ids, batch_run(&cohort, &strategies, &scenario, &cfg.run)?))
}

fn metric_table(
    cfg: &Config,
    ids: &[String],
    runs: &BTreeMap<(usize, Mode), Result<RunResult>>,
) -> Result<(MetricTable, Vec<MetricsRecord>)> {
    let mut table = MetricTable::new();
    let mut records = Vec::new();
    for (key, run) in runs {
        let run = run
            .as_ref()
            .map_err(|e| Error::domain(format!("patient {} under {}: {e}", ids[key.0], key.1)))?;
        let m = compute_metrics(run, cfg.analysis.glucose_source)?;
        table.insert(*key, m);
        records.push(MetricsRecord {
            patient: ids[key.0].clone(),
            mode: key.1,
            metrics: m,
        });
    }
    Ok((table, records))
}

/// Paired comparisons of every metric between two modes.
pub fn compare_all_metrics(
    cfg: &Config,
    table: &MetricTable,
    ids: &[String],
    comparator: Mode,
    strategy: Mode,
) -> Result<Vec<PairedComparison>> {
    Metric::ALL
        .into_iter()
        .map(|metric| {
            let mut rng = derive_stream(cfg.run.master_seed, purpose::BOOTSTRAP, 0, 0, 0);
            paired_differences(
                table,
                ids,
                comparator,
                strategy,
                metric,
                Resampling::Random(cfg.analysis.bootstrap_resamples),
                &mut rng,
            )
        })
        .collect()
}

fn write_traces(
    out_dir: &Path,
    ids: &[String],
    runs: &BTreeMap<(usize, Mode), Result<RunResult>>,
    outputs: &mut Vec<String>,
) -> Result<()> {
    for ((i, mode), run) in runs {
        if let Ok(r) = run {
            let name = trace_name(&ids[*i], *mode);
            export_trace(r, &out_dir.join(&name))?;
            outputs.push(name);
        }
    }
    Ok(())
}

fn finish(
    out_dir: &Path,
    loaded: &Loaded,
    command: &str,
    modes: Vec<Mode>,
    outputs: Vec<String>,
    started: u64,
) -> Result<RunManifest> {
    let m = loaded.manifest(command, modes, outputs, started);
    write_file(&out_dir.join("manifest.json"), m.to_json()?.as_bytes())?;
    Ok(m)
}

/// One strategy over the cohort: traces, metrics and a manifest.
pub fn simulate(loaded: &Loaded, mode: Mode, out_dir: &Path) -> Result<RunManifest> {
    let started = unix_now();
    let cfg = &loaded.config;
    let (ids, runs) = simulate_modes(cfg, &[mode])?;
    let mut outputs = Vec::new();
    write_traces(out_dir, &ids, &runs, &mut outputs)?;
    let (_, records) = metric_table(cfg, &ids, &runs)?;
    export_metrics(
        &MetricsExport::new(cfg.analysis.glucose_source, records, vec![]),
        &out_dir.join("metrics.json"),
    )?;
    outputs.push("metrics.json".into());
    finish(out_dir, loaded, "simulate", vec![mode], outputs, started)
}

/// Every configured strategy (or `modes` when given) over the cohort, with
/// the configured comparisons.
pub fn batch(loaded: &Loaded, modes: Option<&[Mode]>, traces: bool, out_dir: &Path) -> Result<RunManifest> {
    let started = unix_now();
    let cfg = &loaded.config;
    let modes: Vec<Mode> = match modes {
        Some(m) => m.to_vec(),
        None if cfg.strategies.is_empty() => Mode::ALL.to_vec(),
        None => cfg.strategies.iter().map(|s| s.mode).collect(),
    };
    let (ids, runs) = simulate_modes(cfg, &modes)?;
    let mut outputs = Vec::new();
    if traces {
        write_traces(out_dir, &ids, &runs, &mut outputs)?;
    }
    let failures: Vec<String> = runs
        .iter()
        .filter_map(|((i, m), r)| r.as_ref().err().map(|e| format!("{} {m}: {e}", ids[*i])))
        .collect();
    if !failures.is_empty() {
        write_file(&out_dir.join("failures.txt"), (failures.join("\n") + "\n").as_bytes())?;
        outputs.push("failures.txt".into());
        return Err(Error::domain(format!(
            "{} run(s) aborted; see failures.txt",
            failures.len()
        )));
    }
    let (table, records) = metric_table(cfg, &ids, &runs)?;
    let mut comparisons = Vec::new();
    for c in &cfg.analysis.comparisons {
        if modes.contains(&c.comparator) && modes.contains(&c.strategy) {
            comparisons.extend(compare_all_metrics(cfg, &table, &ids, c.comparator, c.strategy)?);
        }
    }
    export_metrics(
        &MetricsExport::new(cfg.analysis.glucose_source, records, comparisons),
        &out_dir.join("metrics.json"),
    )?;
    outputs.push("metrics.json".into());
    finish(out_dir, loaded, "batch", modes, outputs, started)
}

/// Paired comparison of `strategy` against `comparator`.
pub fn compare(
    loaded: &Loaded,
    comparator: Mode,
    strategy: Mode,
    out_dir: &Path,
) -> Result<(RunManifest, Vec<PairedComparison>)> {
    let started = unix_now();
    let cfg = &loaded.config;
    if comparator == strategy {
        return Err(Error::config("comparator and strategy must differ"));
    }
    let (ids, runs) = simulate_modes(cfg, &[comparator, strategy])?;
    let (table, records) = metric_table(cfg, &ids, &runs)?;
    let comparisons = compare_all_metrics(cfg, &table, &ids, comparator, strategy)?;
    export_metrics(
        &MetricsExport::new(cfg.analysis.glucose_source, records, comparisons.clone()),
        &out_dir.join("comparison.json"),
    )?;
    let m = finish(
        out_dir,
        loaded,
        "compare",
        vec![comparator, strategy],
        vec!["comparison.json".into()],
        started,
    )?;
    Ok((m, comparisons))
}

/// Grid search for one strategy. For Strategy 1 with a threshold grid in the
/// config, the thresholds are searched and a defaults file is written.
pub fn tune(loaded: &Loaded, mode: Mode, out_dir: &Path) -> Result<RunManifest> {
    let started = unix_now();
    let cfg = &loaded.config;
    let cohort = load_cohort(&cfg.cohort, cfg.run.h)?;
    let scenario = load_scenario(&cfg.tuning.scenario, cfg.run.master_seed)?;
    let evaluator = SimEvaluator {
        cohort: &cohort,
        scenario: &scenario,
        settings: cfg.run,
        source: cfg.analysis.glucose_source,
    };
    let provenance = Provenance {
        master_seed: cfg.run.master_seed,
        scenario: scenario.label,
    };
    let tol = &cfg.analysis.selection_tolerances;
    let mut outputs = Vec::new();
    let report = match (mode, &cfg.tuning.s1_grid) {
        (Mode::S1, Some(grid)) => {
            let lambda = cfg
                .tuning
                .s1_lambda
                .ok_or_else(|| Error::config("tuning.s1_lambda_ug (ug) required"))?;
            let (params, report) = tune_s1_thresholds(grid, lambda, &evaluator, tol, provenance)?;
            write_s1_defaults(&out_dir.join("s1_defaults.toml"), &params)?;
            outputs.push("s1_defaults.toml".into());
            report
        }
        (Mode::S1, None) => {
            let s = cfg.strategy(Mode::S1)?.s1_params()?;
            run_grid(
                &TuningGrid::for_strategy(Mode::S1, Some((s.z1, s.z2, s.z3)))?,
                &evaluator,
                tol,
                provenance,
            )?
        }
        _ => run_grid(&TuningGrid::for_strategy(mode, None)?, &evaluator, tol, provenance)?,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Serialize(e.to_string()))? + "\n";
    write_file(&out_dir.join("tuning_report.json"), json.as_bytes())?;
    write_file(&out_dir.join("tuning_boxplot.csv"), report.boxplot_csv().as_bytes())?;
    outputs.extend(["tuning_report.json".into(), "tuning_boxplot.csv".into()]);
    finish(out_dir, loaded, "tune", vec![mode], outputs, started)
}

/// Writes the configured scenario as a meal table.
pub fn export_scenario(loaded: &Loaded, out_path: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let s = load_scenario(&cfg.scenario, cfg.run.master_seed)?;
    write_file(out_path, write_meal_table(&s).as_bytes())
}

/// Re-executes the command recorded in a manifest into `out_dir`.
pub fn rerun(manifest: &RunManifest, out_dir: &Path) -> Result<RunManifest> {
    let mut loaded = Loaded::from_path(&manifest.config_path)?;
    if loaded.input_hash != manifest.input_hash {
        return Err(Error::config("inputs changed since the manifest was written"));
    }
    loaded.config.run.master_seed = manifest.master_seed;
    match (manifest.command.as_str(), manifest.modes.as_slice()) {
        ("simulate", [m]) => simulate(&loaded, *m, out_dir),
        ("batch", modes) => batch(
            &loaded,
            Some(modes),
            manifest.outputs.iter().any(|o| o.starts_with("traces/")),
            out_dir,
        ),
        ("compare", [c, s]) => compare(&loaded, *c, *s, out_dir).map(|x| x.0),
        ("tune", [m]) => tune(&loaded, *m, out_dir),
        (cmd, _) => Err(Error::config(format!("manifest command '{cmd}' cannot be re-run"))),
    }
}
