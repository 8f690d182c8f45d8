//! Glycemic outcome metrics, risk indices, paired comparisons and the tuning
//! selection rule.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::RunResult;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::strategy::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicMetrics {
    pub pct_below_54: f64,
    pub pct_below_70: f64,
    pub pct_in_70_180: f64,
    pub pct_above_180: f64,
    pub pct_above_250: f64,
    pub lbgi: f64,
    pub hbgi: f64,
    /// Mean daily insulin (U).
    pub daily_insulin: f64,
    /// Mean daily pramlintide (ug).
    pub daily_pramlintide: f64,
}

/// Which glucose signal the metrics are computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlucoseSource {
    #[default]
    Cgm,
    True,
}

/// Named scalar metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "pct_below_54")]
    PctBelow54,
    #[serde(rename = "pct_below_70")]
    PctBelow70,
    #[serde(rename = "pct_in_70_180")]
    PctIn70180,
    #[serde(rename = "pct_above_180")]
    PctAbove180,
    #[serde(rename = "pct_above_250")]
    PctAbove250,
    #[serde(rename = "lbgi")]
    Lbgi,
    #[serde(rename = "hbgi")]
    Hbgi,
    #[serde(rename = "daily_insulin")]
    DailyInsulin,
    #[serde(rename = "daily_pramlintide")]
    DailyPramlintide,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::PctBelow54,
        Metric::PctBelow70,
        Metric::PctIn70180,
        Metric::PctAbove180,
        Metric::PctAbove250,
        Metric::Lbgi,
        Metric::Hbgi,
        Metric::DailyInsulin,
        Metric::DailyPramlintide,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::PctBelow54 => "pct_below_54",
            Metric::PctBelow70 => "pct_below_70",
            Metric::PctIn70180 => "pct_in_70_180",
            Metric::PctAbove180 => "pct_above_180",
            Metric::PctAbove250 => "pct_above_250",
            Metric::Lbgi => "lbgi",
            Metric::Hbgi => "hbgi",
            Metric::DailyInsulin => "daily_insulin",
            Metric::DailyPramlintide => "daily_pramlintide",
        }
    }

    pub fn of(self, m: &GlycemicMetrics) -> f64 {
        match self {
            Metric::PctBelow54 => m.pct_below_54,
            Metric::PctBelow70 => m.pct_below_70,
            Metric::PctIn70180 => m.pct_in_70_180,
            Metric::PctAbove180 => m.pct_above_180,
            Metric::PctAbove250 => m.pct_above_250,
            Metric::Lbgi => m.lbgi,
            Metric::Hbgi => m.hbgi,
            Metric::DailyInsulin => m.daily_insulin,
            Metric::DailyPramlintide => m.daily_pramlintide,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "tir" && *m == Metric::PctIn70180))
            .ok_or_else(|| Error::config(format!("unknown metric '{s}'")))
    }
}

/// Time percentages `(below 54, below 70, in [70, 180], above 180, above 250)`.
pub fn glucose_percentages(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::domain("empty glucose trace"));
    }
    let mut counts = [0usize; 5];
    for &g in values {
        if !g.is_finite() {
            return Err(Error::domain("non-finite glucose value"));
        }
        counts[0] += usize::from(g < 54.0);
        counts[1] += usize::from(g < 70.0);
        counts[2] += usize::from((70.0..=180.0).contains(&g));
        counts[3] += usize::from(g > 180.0);
        counts[4] += usize::from(g > 250.0);
    }
    let n = values.len() as f64;
    Ok(counts.map(|c| 100.0 * c as f64 / n))
}

/// Symmetrized glucose scale; zero at about 112.5 mg/dL.
pub fn risk_f(g: f64) -> f64 {
    1.509 * (g.ln().powf(1.084) - 5.381)
}

/// Low and high blood-glucose risk indices.
pub fn lbgi_hbgi(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("empty glucose trace"));
    }
    let (mut lo, mut hi) = (0.0, 0.0);
    for &g in values {
        if !(g > 0.0) {
            return Err(Error::domain(format!("glucose must be > 0 mg/dL, got {g}")));
        }
        let f = risk_f(g);
        let r = 10.0 * f * f;
        if f < 0.0 {
            lo += r;
        } else if f > 0.0 {
            hi += r;
        }
    }
    let n = values.len() as f64;
    Ok((lo / n, hi / n))
}

/// Metrics of one run.
pub fn compute_metrics(result: &RunResult, source: GlucoseSource) -> Result<GlycemicMetrics> {
    let g: Vec<f64> = result
        .trace
        .iter()
        .map(|r| match source {
            GlucoseSource::Cgm => r.g_cgm,
            GlucoseSource::True => r.g_true,
        })
        .collect();
    let pct = glucose_percentages(&g)?;
    let (lbgi, hbgi) = lbgi_hbgi(&g)?;
    Ok(GlycemicMetrics {
        pct_below_54: pct[0],
        pct_below_70: pct[1],
        pct_in_70_180: pct[2],
        pct_above_180: pct[3],
        pct_above_250: pct[4],
        lbgi,
        hbgi,
        daily_insulin: mean(&result.daily_insulin),
        daily_pramlintide: mean(&result.daily_pramlintide),
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1); zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// `(q1, median, q3)`.
pub fn quartiles(xs: &[f64]) -> [f64; 3] {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    [
        quantile_sorted(&v, 0.25),
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.75),
    ]
}

/// Mean and SD of one metric across a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub mean: f64,
    pub sd: f64,
}

pub fn cohort_summary(values: &[f64]) -> CohortSummary {
    CohortSummary {
        mean: mean(values),
        sd: sample_sd(values),
    }
}

/// How bootstrap resamples are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    /// `n` random resamples.
    Random(usize),
    /// Every one of the `k^k` ordered resamples (small `k` only).
    Exhaustive,
}

/// Percentile CI of the mean of `diffs` at `level` (e.g. 0.95).
pub fn bootstrap_mean_ci(diffs: &[f64], resampling: Resampling, level: f64, rng: &mut Stream) -> Result<(f64, f64)> {
    let k = diffs.len();
    if k == 0 {
        return Err(Error::domain("bootstrap needs at least one value"));
    }
    let mut means = match resampling {
        Resampling::Random(n) => {
            if n == 0 {
                return Err(Error::domain("bootstrap needs at least one resample"));
            }
            (0..n)
                .map(|_| (0..k).map(|_| diffs[rng.random_range(0..k)]).sum::<f64>() / k as f64)
                .collect::<Vec<_>>()
        }
        Resampling::Exhaustive => {
            if k > 8 {
                return Err(Error::domain(format!(
                    "exhaustive bootstrap over {k} values is too large"
                )));
            }
            let total = k.pow(k as u32);
            (0..total)
                .map(|mut code| {
                    let mut s = 0.0;
                    for _ in 0..k {
                        s += diffs[code % k];
                        code /= k;
                    }
                    s / k as f64
                })
                .collect()
        }
    };
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&means, alpha), quantile_sorted(&means, 1.0 - alpha)))
}

/// Paired comparison of one metric between two modes.
///
/// Differences are `strategy - comparator`, so a positive TIR difference
/// favours the strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub comparator: Mode,
    pub strategy: Mode,
    pub metric: Metric,
    pub mean_difference: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `(patient id, difference)` in cohort order.
    pub differences: Vec<(String, f64)>,
}

/// Per-patient metric table: patient index and mode to metrics.
pub type MetricTable = BTreeMap<(usize, Mode), GlycemicMetrics>;

pub fn paired_differences(
    table: &MetricTable,
    patient_ids: &[String],
    comparator: Mode,
    strategy: Mode,
    metric: Metric,
    resampling: Resampling,
    rng: &mut Stream,
) -> Result<PairedComparison> {
    let mut differences = Vec::with_capacity(patient_ids.len());
    for (i, id) in patient_ids.iter().enumerate() {
        let missing = |m: Mode| Error::domain(format!("patient {id} has no result under {m}"));
        let c = table.get(&(i, comparator)).ok_or_else(|| missing(comparator))?;
        let s = table.get(&(i, strategy)).ok_or_else(|| missing(strategy))?;
        differences.push((id.clone(), metric.of(s) - metric.of(c)));
    }
    let d: Vec<f64> = differences.iter().map(|x| x.1).collect();
    let (ci_lo, ci_hi) = bootstrap_mean_ci(&d, resampling, 0.95, rng)?;
    Ok(PairedComparison {
        comparator,
        strategy,
        metric,
        mean_difference: mean(&d),
        ci_lo,
        ci_hi,
        differences,
    })
}

/// Cohort-level summary of one tuning candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub values: Vec<f64>,
    pub median_tir: f64,
    pub median_hypo: f64,
    pub median_pramlintide: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionTolerances {
    #[serde(rename = "tir_points")]
    pub tir: f64,
    #[serde(rename = "hypo_points")]
    pub hypo: f64,
}

impl Default for SelectionTolerances {
    fn default() -> Self {
        Self { tir: 0.5, hypo: 0.1 }
    }
}

/// Longest TIR, then least time below 70, then least pramlintide.
///
/// Ties are resolved against the best value of the preceding key over the
/// whole table, so the outcome does not depend on candidate order. Any
/// remaining tie goes to the lexicographically smallest value vector.
pub fn tuning_select<'a>(table: &'a [CandidateScore], tol: &SelectionTolerances) -> Result<&'a CandidateScore> {
    if table.is_empty() {
        return Err(Error::domain("no tuning candidates to select from"));
    }
    let best_tir = table.iter().map(|c| c.median_tir).fold(f64::NEG_INFINITY, f64::max);
    let tier1: Vec<&CandidateScore> = table.iter().filter(|c| c.median_tir >= best_tir - tol.tir).collect();
    let best_hypo = tier1.iter().map(|c| c.median_hypo).fold(f64::INFINITY, f64::min);
    let tier2 = tier1.into_iter().filter(|c| c.median_hypo <= best_hypo + tol.hypo);
    tier2
        .min_by(|a, b| {
            a.median_pramlintide
                .total_cmp(&b.median_pramlintide)
                .then_with(|| cmp_values(&a.values, &b.values))
        })
        .ok_or_else(|| Error::domain("selection produced no candidate"))
}

fn cmp_values(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.total_cmp(y);
        if o.is_ne() {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    fn rng() -> Stream {
        derive_stream(1, crate::rng::purpose::BOOTSTRAP, 0, 0, 0)
    }

    #[test]
    fn percentages_simple_partitions() {
        let p = glucose_percentages(&[100.0; 10]).unwrap();
        assert_eq!(p, [0.0, 0.0, 100.0, 0.0, 0.0]);
        let mut half = vec![60.0; 5];
        half.extend([200.0; 5]);
        let p = glucose_percentages(&half).unwrap();
        assert_eq!((p[1], p[2], p[3]), (50.0, 0.0, 50.0));
        let p = glucose_percentages(&[70.0, 180.0]).unwrap();
        assert_eq!(p[2], 100.0);
        assert!(glucose_percentages(&[]).is_err());
    }

    #[test]
    fn risk_index_oracles() {
        // root of f by bisection, independent of the formula's use above
        let (mut a, mut b) = (100.0_f64, 130.0_f64);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if 1.509 * (m.ln().powf(1.084) - 5.381) < 0.0 {
                a = m;
            } else {
                b = m;
            }
        }
        assert!((a - 112.517).abs() < 1e-3);
        let (l, h) = lbgi_hbgi(&[112.517; 20]).unwrap();
        assert!(l < 1e-6 && h < 1e-6);
        let (l, h) = lbgi_hbgi(&[50.0; 20]).unwrap();
        assert!((l - 22.5).abs() < 0.5, "{l}");
        assert_eq!(h, 0.0);
        assert!(lbgi_hbgi(&[0.0]).is_err());
    }

    #[test]
    fn bootstrap_degenerate_and_exhaustive() {
        let (lo, hi) = bootstrap_mean_ci(&[1.0; 10], Resampling::Random(1000), 0.95, &mut rng()).unwrap();
        assert_eq!((lo, hi), (1.0, 1.0));
        // resample means of {0, 2}: 0, 1, 1, 2
        let (lo, hi) = bootstrap_mean_ci(&[0.0, 2.0], Resampling::Exhaustive, 0.95, &mut rng()).unwrap();
        assert!((lo - 0.075).abs() < 1e-12);
        assert!((hi - 1.925).abs() < 1e-12);
    }

    #[test]
    fn metric_names_match_serde() {
        for m in Metric::ALL {
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
    }

    #[test]
    fn quantiles_type7() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    fn cand(v: f64, tir: f64, hypo: f64, pram: f64) -> CandidateScore {
        CandidateScore {
            values: vec![v],
            median_tir: tir,
            median_hypo: hypo,
            median_pramlintide: pram,
        }
    }

    #[test]
    fn selection_rule() {
        let tol = SelectionTolerances::default();
        let one = [cand(1.0, 50.0, 3.0, 1.0)];
        assert_eq!(tuning_select(&one, &tol).unwrap().values, vec![1.0]);
        let two = [cand(1.0, 90.0, 1.0, 100.0), cand(2.0, 85.0, 0.0, 0.0)];
        assert_eq!(tuning_select(&two, &tol).unwrap().values, vec![1.0]);
        let tie = [cand(1.0, 95.0, 0.5, 10.0), cand(2.0, 95.0, 0.1, 20.0)];
        assert_eq!(tuning_select(&tie, &tol).unwrap().values, vec![2.0]);
        assert!(tuning_select(&[], &tol).is_err());
    }
}
