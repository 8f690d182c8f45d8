//! Exhaustive grid search over strategy parameters.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{batch_run, RunSettings};
use crate::error::{Error, Result};
use crate::metrics::{
    compute_metrics, median, quartiles, tuning_select, CandidateScore, GlucoseSource, GlycemicMetrics, Metric,
    SelectionTolerances,
};
use crate::patient::PatientParams;
use crate::scenario::{Scenario, ScenarioLabel};
use crate::strategy::{Mode, S1Params, StrategyConfig};

/// Candidate bolus sizes (ug).
pub const BOLUS_CANDIDATES: [f64; 7] = [15.0, 30.0, 45.0, 60.0, 90.0, 100.0, 300.0];
/// Candidate pramlintide-to-insulin ratios (ug/U).
pub const RATIO_CANDIDATES: [f64; 5] = [3.0, 6.0, 10.0, 12.0, 15.0];

/// Threshold grids for Strategy 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S1Grid {
    #[serde(rename = "z1_basal_multiple")]
    pub z1: Vec<f64>,
    #[serde(rename = "z2_mgdl_per_min")]
    pub z2: Vec<f64>,
    #[serde(rename = "z3_steps")]
    pub z3: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Parameter values in the order of [`TuningGrid::parameters`].
    pub values: Vec<f64>,
    pub strategy: StrategyConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub mode: Mode,
    pub parameters: Vec<String>,
    pub candidates: Vec<Candidate>,
}

impl TuningGrid {
    /// The dose or ratio grid of a pramlintide strategy. Strategy 1 varies
    /// its bolus with the thresholds held fixed.
    pub fn for_strategy(mode: Mode, s1_thresholds: Option<(f64, f64, u32)>) -> Result<Self> {
        let (param, values): (&str, &[f64]) = match mode {
            Mode::S1 => ("lambda_ug", &BOLUS_CANDIDATES),
            Mode::S3 => ("phi_ug", &BOLUS_CANDIDATES),
            Mode::S2 => ("rho_ug_per_u", &RATIO_CANDIDATES),
            Mode::S4 => ("delta_ug_per_u", &RATIO_CANDIDATES),
            other => {
                return Err(Error::config(format!(
                    "mode {other} has no pramlintide parameter to tune"
                )))
            }
        };
        let candidates = values
            .iter()
            .map(|&v| {
                let strategy = match mode {
                    Mode::S1 => {
                        let (z1, z2, z3) =
                            s1_thresholds.ok_or_else(|| Error::config("tuning S1 doses requires z1, z2 and z3"))?;
                        StrategyConfig::s1(v, z1, z2, z3)
                    }
                    Mode::S2 => StrategyConfig::s2(v),
                    Mode::S3 => StrategyConfig::s3(v),
                    _ => StrategyConfig::s4(v),
                };
                Ok(Candidate {
                    values: vec![v],
                    strategy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mode,
            parameters: vec![param.into()],
            candidates,
        })
    }

    /// Full factorial over the Strategy 1 thresholds at a fixed bolus.
    pub fn s1_factorial(lambda: f64, grid: &S1Grid) -> Result<Self> {
        if grid.z1.is_empty() || grid.z2.is_empty() || grid.z3.is_empty() {
            return Err(Error::domain("every S1 threshold grid needs at least one value"));
        }
        let mut candidates = Vec::with_capacity(grid.z1.len() * grid.z2.len() * grid.z3.len());
        for &z1 in &grid.z1 {
            for &z2 in &grid.z2 {
                for &z3 in &grid.z3 {
                    candidates.push(Candidate {
                        values: vec![z1, z2, f64::from(z3)],
                        strategy: StrategyConfig::s1(lambda, z1, z2, z3),
                    });
                }
            }
        }
        Ok(Self {
            mode: Mode::S1,
            parameters: vec!["z1_basal_multiple".into(), "z2_mgdl_per_min".into(), "z3_steps".into()],
            candidates,
        })
    }
}

/// Produces per-patient metrics for a candidate; `None` marks an aborted run.
pub trait Evaluator: Sync {
    fn patient_ids(&self) -> Vec<String>;
    fn evaluate(&self, strategy: &StrategyConfig) -> Result<Vec<Option<GlycemicMetrics>>>;
}

/// Evaluates candidates by simulating the cohort.
pub struct SimEvaluator<'a> {
    pub cohort: &'a [PatientParams],
    pub scenario: &'a Scenario,
    pub settings: RunSettings,
    pub source: GlucoseSource,
}

impl Evaluator for SimEvaluator<'_> {
    fn patient_ids(&self) -> Vec<String> {
        self.cohort.iter().map(|p| p.id.clone()).collect()
    }

    fn evaluate(&self, strategy: &StrategyConfig) -> Result<Vec<Option<GlycemicMetrics>>> {
        let runs = batch_run(
            self.cohort,
            std::slice::from_ref(strategy),
            self.scenario,
            &self.settings,
        )?;
        Ok((0..self.cohort.len())
            .map(|i| match &runs[&(i, strategy.mode)] {
                Ok(r) => compute_metrics(r, self.source).ok(),
                Err(_) => None,
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub values: Vec<f64>,
    /// One entry per patient, `None` where the run aborted.
    pub per_patient: Vec<Option<GlycemicMetrics>>,
    /// `[q1, median, q3]` per metric over the valid patients.
    pub quartiles: BTreeMap<Metric, [f64; 3]>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub scenario: ScenarioLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub mode: Mode,
    pub parameters: Vec<String>,
    pub patients: Vec<String>,
    pub candidates: Vec<CandidateReport>,
    pub chosen: Vec<f64>,
    pub provenance: Provenance,
}

impl TuningReport {
    /// Boxplot-ready rows: `candidate,patient,metric,value`.
    pub fn boxplot_csv(&self) -> String {
        let mut out = String::from("candidate,patient,metric,value\n");
        for c in &self.candidates {
            let label = c.values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("/");
            for (pid, m) in self.patients.iter().zip(&c.per_patient) {
                let Some(m) = m else { continue };
                for metric in Metric::ALL {
                    let _ = writeln!(out, "{label},{pid},{metric},{:.6}", metric.of(m));
                }
            }
        }
        out
    }
}

/// Evaluates every candidate and applies the selection rule.
pub fn run_grid(
    grid: &TuningGrid,
    evaluator: &dyn Evaluator,
    tol: &SelectionTolerances,
    provenance: Provenance,
) -> Result<TuningReport> {
    if grid.candidates.is_empty() {
        return Err(Error::domain("tuning grid is empty"));
    }
    let patients = evaluator.patient_ids();
    let mut reports = Vec::with_capacity(grid.candidates.len());
    for cand in &grid.candidates {
        let per_patient = evaluator.evaluate(&cand.strategy)?;
        if per_patient.len() != patients.len() {
            return Err(Error::domain("evaluator returned the wrong number of patients"));
        }
        let valid_rows: Vec<&GlycemicMetrics> = per_patient.iter().flatten().collect();
        let valid = valid_rows.len() == per_patient.len();
        let note = (!valid).then(|| {
            let failed: Vec<&str> = patients
                .iter()
                .zip(&per_patient)
                .filter(|(_, m)| m.is_none())
                .map(|(p, _)| p.as_str())
                .collect();
            format!("excluded: aborted runs for {}", failed.join(", "))
        });
        let quartiles = Metric::ALL
            .into_iter()
            .map(|m| (m, quartiles(&valid_rows.iter().map(|r| m.of(r)).collect::<Vec<_>>())))
            .collect();
        reports.push(CandidateReport {
            values: cand.values.clone(),
            per_patient,
            quartiles,
            valid,
            note,
        });
    }
    let scores: Vec<CandidateScore> = reports
        .iter()
        .filter(|r| r.valid)
        .map(|r| {
            let col = |m: Metric| r.per_patient.iter().flatten().map(|x| m.of(x)).collect::<Vec<_>>();
            CandidateScore {
                values: r.values.clone(),
                median_tir: median(&col(Metric::PctIn70180)),
                median_hypo: median(&col(Metric::PctBelow70)),
                median_pramlintide: median(&col(Metric::DailyPramlintide)),
            }
        })
        .collect();
    let chosen = tuning_select(&scores, tol)
        .map_err(|_| Error::domain("every tuning candidate had aborted runs"))?
        .values
        .clone();
    Ok(TuningReport {
        mode: grid.mode,
        parameters: grid.parameters.clone(),
        patients,
        candidates: reports,
        chosen,
        provenance,
    })
}

/// Selects Strategy 1 thresholds by full factorial search.
pub fn tune_s1_thresholds(
    grid: &S1Grid,
    lambda: f64,
    evaluator: &dyn Evaluator,
    tol: &SelectionTolerances,
    provenance: Provenance,
) -> Result<(S1Params, TuningReport)> {
    let g = TuningGrid::s1_factorial(lambda, grid)?;
    let report = run_grid(&g, evaluator, tol, provenance)?;
    let v = &report.chosen;
    let params = S1Params {
        lambda,
        z1: v[0],
        z2: v[1],
        z3: v[2] as u32,
    };
    Ok((params, report))
}

/// Contents of the Strategy 1 defaults file.
pub fn s1_defaults_toml(p: &S1Params) -> Result<String> {
    #[derive(Serialize)]
    struct File {
        strategy: StrategyConfig,
    }
    let cfg = StrategyConfig::s1(p.lambda, p.z1, p.z2, p.z3);
    toml::to_string(&File { strategy: cfg }).map_err(|e| Error::Serialize(e.to_string()))
}

pub fn write_s1_defaults(path: &Path, p: &S1Params) -> Result<()> {
    crate::io::write_file(path, s1_defaults_toml(p)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Returns planted metrics keyed by the candidate's first parameter.
    struct TableEvaluator {
        rows: Vec<(StrategyConfig, Vec<Option<GlycemicMetrics>>)>,
        calls: AtomicUsize,
    }

    impl Evaluator for TableEvaluator {
        fn patient_ids(&self) -> Vec<String> {
            vec!["a".into(), "b".into(), "c".into()]
        }
        fn evaluate(&self, s: &StrategyConfig) -> Result<Vec<Option<GlycemicMetrics>>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(self
                .rows
                .iter()
                .find(|r| r.0 == *s)
                .map(|r| r.1.clone())
                .unwrap_or_else(|| vec![Some(m(50.0, 5.0, 0.0)); 3]))
        }
    }

    fn m(tir: f64, hypo: f64, pram: f64) -> GlycemicMetrics {
        GlycemicMetrics {
            pct_below_54: hypo / 2.0,
            pct_below_70: hypo,
            pct_in_70_180: tir,
            pct_above_180: 100.0 - tir - hypo,
            pct_above_250: 0.0,
            lbgi: 0.0,
            hbgi: 0.0,
            daily_insulin: 40.0,
            daily_pramlintide: pram,
        }
    }

    fn prov() -> Provenance {
        Provenance {
            master_seed: 1,
            scenario: ScenarioLabel::Tuning,
        }
    }

    #[test]
    fn grids_match_candidate_sets() {
        let g = TuningGrid::for_strategy(Mode::S2, None).unwrap();
        let v: Vec<f64> = g.candidates.iter().map(|c| c.values[0]).collect();
        assert_eq!(v, RATIO_CANDIDATES);
        assert_eq!(TuningGrid::for_strategy(Mode::S3, None).unwrap().candidates.len(), 7);
        assert!(TuningGrid::for_strategy(Mode::S1, None).is_err());
        assert!(TuningGrid::for_strategy(Mode::InsMa, None).is_err());
    }

    #[test]
    fn planted_dominant_candidate_is_chosen() {
        let grid = TuningGrid::for_strategy(Mode::S2, None).unwrap();
        let ev = TableEvaluator {
            rows: vec![(StrategyConfig::s2(12.0), vec![Some(m(90.0, 0.1, 300.0)); 3])],
            calls: 0.into(),
        };
        let r = run_grid(&grid, &ev, &SelectionTolerances::default(), prov()).unwrap();
        assert_eq!(r.chosen, vec![12.0]);
    }

    #[test]
    fn aborted_candidates_are_excluded() {
        let grid = TuningGrid::for_strategy(Mode::S2, None).unwrap();
        let ev = TableEvaluator {
            rows: vec![(
                StrategyConfig::s2(3.0),
                vec![Some(m(99.0, 0.0, 1.0)), None, Some(m(99.0, 0.0, 1.0))],
            )],
            calls: 0.into(),
        };
        let r = run_grid(&grid, &ev, &SelectionTolerances::default(), prov()).unwrap();
        assert_ne!(r.chosen, vec![3.0]);
        assert!(!r.candidates[0].valid);
        assert!(r.candidates[0].note.as_deref().unwrap().contains('b'));
    }

    #[test]
    fn s1_factorial_counts_and_optimum() {
        let grid = S1Grid {
            z1: vec![1.0, 1.5, 2.0],
            z2: vec![0.0, 0.5, 1.0],
            z3: vec![12, 24, 36],
        };
        let planted = StrategyConfig::s1(30.0, 1.5, 1.0, 12);
        let ev = TableEvaluator {
            rows: vec![(planted, vec![Some(m(80.0, 1.0, 60.0)); 3])],
            calls: 0.into(),
        };
        let (p, report) = tune_s1_thresholds(&grid, 30.0, &ev, &SelectionTolerances::default(), prov()).unwrap();
        assert_eq!(ev.calls.load(Ordering::Relaxed), 27);
        assert_eq!(report.candidates.len(), 27);
        assert_eq!((p.z1, p.z2, p.z3), (1.5, 1.0, 12));

        let single = S1Grid {
            z1: vec![2.0],
            z2: vec![0.3],
            z3: vec![6],
        };
        let (p, _) = tune_s1_thresholds(&single, 30.0, &ev, &SelectionTolerances::default(), prov()).unwrap();
        assert_eq!((p.z1, p.z2, p.z3), (2.0, 0.3, 6));
        let empty = S1Grid {
            z1: vec![],
            z2: vec![0.3],
            z3: vec![6],
        };
        assert!(tune_s1_thresholds(&empty, 30.0, &ev, &SelectionTolerances::default(), prov()).is_err());
    }

    #[test]
    fn defaults_file_parses_back() {
        let p = S1Params {
            lambda: 30.0,
            z1: 1.5,
            z2: 0.5,
            z3: 24,
        };
        let text = s1_defaults_toml(&p).unwrap();
        #[derive(Deserialize)]
        struct File {
            strategy: StrategyConfig,
        }
        let f: File = toml::from_str(&text).unwrap();
        assert_eq!(f.strategy.s1_params().unwrap(), p);
    }

    #[test]
    fn boxplot_rows() {
        let grid = TuningGrid::for_strategy(Mode::S4, None).unwrap();
        let ev = TableEvaluator {
            rows: vec![],
            calls: 0.into(),
        };
        let r = run_grid(&grid, &ev, &SelectionTolerances::default(), prov()).unwrap();
        let csv = r.boxplot_csv();
        assert_eq!(csv.lines().count(), 1 + 5 * 3 * Metric::ALL.len());
        assert!(csv.starts_with("candidate,patient,metric,value\n3,a,pct_below_54,"));
    }
}
