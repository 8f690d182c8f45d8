//! Output file formats: traces, metrics, manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{daily_totals, RunResult, TraceRow};
use crate::error::{Error, Result};
use crate::metrics::{cohort_summary, CohortSummary, GlucoseSource, GlycemicMetrics, Metric, PairedComparison};
use crate::strategy::Mode;

pub const TRACE_HEADER: &str = "t_min,G_true,G_cgm,u_basal,u_infusion,u_bolus,p_infusion,p_bolus,Ra,eta,d_hat";
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Renders a trace with six decimals per value.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::with_capacity(120 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.t_min,
            r.g_true,
            r.g_cgm,
            r.u_basal,
            r.u_infusion,
            r.u_bolus,
            r.p_infusion,
            r.p_bolus,
            r.ra,
            r.eta,
            r.d_hat
        );
    }
    out
}

pub fn export_trace(result: &RunResult, path: &Path) -> Result<()> {
    write_file(path, trace_csv(&result.trace).as_bytes())
}

/// Reads a trace written by [`export_trace`].
pub fn parse_trace(text: &str, source: &str) -> Result<Vec<TraceRow>> {
    let err = |line: usize, msg: String| Error::Load {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(err(1, format!("expected header '{TRACE_HEADER}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(i + 2, e.to_string()))?;
        if v.len() != 11 {
            return Err(err(i + 2, format!("expected 11 columns, found {}", v.len())));
        }
        rows.push(TraceRow {
            t_min: v[0],
            g_true: v[1],
            g_cgm: v[2],
            u_basal: v[3],
            u_infusion: v[4],
            u_bolus: v[5],
            p_infusion: v[6],
            p_bolus: v[7],
            ra: v[8],
            eta: v[9],
            d_hat: v[10],
        });
    }
    if rows.is_empty() {
        return Err(err(2, "trace has no rows".into()));
    }
    Ok(rows)
}

/// Rebuilds a result from a trace file's rows for metric computation.
pub fn result_from_trace(patient_id: &str, mode: Mode, trace: Vec<TraceRow>) -> RunResult {
    let last = trace.last().map(|r| r.t_min).unwrap_or(0.0);
    let days = ((last / 1440.0).round() as u32).max(1);
    let (daily_insulin, daily_pramlintide) = daily_totals(&trace, days);
    RunResult {
        patient_id: patient_id.into(),
        mode,
        trace,
        daily_insulin,
        daily_pramlintide,
        events: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub patient: String,
    pub mode: Mode,
    pub metrics: GlycemicMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    pub mode: Mode,
    pub patients: usize,
    pub metrics: BTreeMap<Metric, CohortSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsExport {
    pub schema_version: u32,
    pub glucose_source: GlucoseSource,
    pub records: Vec<MetricsRecord>,
    pub cohort: Vec<CohortRecord>,
    pub comparisons: Vec<PairedComparison>,
}

impl MetricsExport {
    pub fn new(glucose_source: GlucoseSource, records: Vec<MetricsRecord>, comparisons: Vec<PairedComparison>) -> Self {
        let mut modes: Vec<Mode> = records.iter().map(|r| r.mode).collect();
        modes.sort();
        modes.dedup();
        let cohort = modes
            .into_iter()
            .map(|mode| {
                let rows: Vec<&GlycemicMetrics> =
                    records.iter().filter(|r| r.mode == mode).map(|r| &r.metrics).collect();
                let metrics = Metric::ALL
                    .into_iter()
                    .map(|m| (m, cohort_summary(&rows.iter().map(|r| m.of(r)).collect::<Vec<_>>())))
                    .collect();
                CohortRecord {
                    mode,
                    patients: rows.len(),
                    metrics,
                }
            })
            .collect();
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            glucose_source,
            records,
            cohort,
            comparisons,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Serialize(e.to_string()))
    }
}

pub fn export_metrics(export: &MetricsExport, path: &Path) -> Result<()> {
    write_file(path, export.to_json()?.as_bytes())
}

/// Provenance of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: PathBuf,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub modes: Vec<Mode>,
    pub tool_version: String,
    /// SHA-256 over the config text and every input file it references.
    pub input_hash: String,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

impl RunManifest {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
