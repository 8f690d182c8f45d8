//! Meal scenarios: the randomized tuning scenario, the fixed validation
//! scenario, the meal-table text format and carbohydrate misestimation.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{purpose, RngStreams, Stream};

pub const MINUTES_PER_DAY: f64 = 1440.0;

/// The validation meal table shipped with the repository.
pub const VALIDATION_TABLE: &str = include_str!("../../../data/validation_scenario.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MealType {
    Breakfast,
    Lunch,
    Dinner,
    Snack,
}

impl MealType {
    pub fn is_main(self) -> bool {
        !matches!(self, MealType::Snack)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MealType::Breakfast => "breakfast",
            MealType::Lunch => "lunch",
            MealType::Dinner => "dinner",
            MealType::Snack => "snack",
        }
    }
}

impl fmt::Display for MealType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MealType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "breakfast" => Ok(MealType::Breakfast),
            "lunch" => Ok(MealType::Lunch),
            "dinner" => Ok(MealType::Dinner),
            "snack" => Ok(MealType::Snack),
            other => Err(format!("unknown meal type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MealEvent {
    /// 1-based day index.
    pub day: u32,
    /// Minutes since the start of the day.
    pub time_min: f64,
    pub grams: f64,
    pub meal_type: MealType,
}

impl MealEvent {
    /// Minutes since the start of the scenario.
    pub fn absolute_time(&self) -> f64 {
        f64::from(self.day - 1) * MINUTES_PER_DAY + self.time_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioLabel {
    Tuning,
    Validation,
    Custom,
}

/// An ordered list of meals over a whole number of days.
///
/// Announcement errors are not stored here: they are drawn per patient from
/// the `cho-estimate` stream when a run needs them, so the scenario stays
/// shareable across a cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: ScenarioLabel,
    pub duration_days: u32,
    pub meals: Vec<MealEvent>,
}

impl Scenario {
    pub fn new(label: ScenarioLabel, duration_days: u32, mut meals: Vec<MealEvent>) -> Result<Self> {
        meals.sort_by(|a, b| a.absolute_time().total_cmp(&b.absolute_time()));
        for m in &meals {
            if !(m.grams > 0.0) || !m.grams.is_finite() {
                return Err(Error::domain(format!("meal grams must be > 0, got {}", m.grams)));
            }
            if !(0.0..MINUTES_PER_DAY).contains(&m.time_min) {
                return Err(Error::domain(format!(
                    "meal time must lie in [0, 1440) min, got {}",
                    m.time_min
                )));
            }
            if m.day == 0 || m.day > duration_days {
                return Err(Error::domain(format!("meal day {} outside 1..={duration_days}", m.day)));
            }
        }
        Ok(Self {
            label,
            duration_days,
            meals,
        })
    }

    pub fn duration_min(&self) -> f64 {
        f64::from(self.duration_days) * MINUTES_PER_DAY
    }

    /// Carbohydrate total per day.
    pub fn daily_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.duration_days as usize];
        for m in &self.meals {
            totals[(m.day - 1) as usize] += m.grams;
        }
        totals
    }
}

/// Distribution of the randomized tuning scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningScenarioConfig {
    #[serde(rename = "meal_time_means_min")]
    pub time_means: [f64; 3],
    #[serde(rename = "meal_time_sd_min")]
    pub time_sd: f64,
    #[serde(rename = "meal_grams")]
    pub grams: [f64; 3],
    #[serde(rename = "grams_cv_fraction")]
    pub cv: f64,
    #[serde(rename = "min_grams")]
    pub min_grams: f64,
}

impl TuningScenarioConfig {
    pub const DEFAULT: Self = Self {
        time_means: [480.0, 780.0, 1200.0],
        time_sd: 20.0,
        grams: [35.0, 50.0, 85.0],
        cv: 0.3,
        min_grams: 5.0,
    };
}

impl Default for TuningScenarioConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Three random meals per day. Times are rounded to the minute and grams to
/// 0.01 g so that the scenario survives a meal-table round trip.
pub fn gen_tuning_scenario(streams: &RngStreams, days: u32, cfg: &TuningScenarioConfig) -> Result<Scenario> {
    if !(cfg.time_sd >= 0.0 && cfg.cv >= 0.0 && cfg.min_grams > 0.0) {
        return Err(Error::config("tuning scenario SD, CV must be >= 0 and min grams > 0"));
    }
    let types = [MealType::Breakfast, MealType::Lunch, MealType::Dinner];
    let mut meals = Vec::with_capacity(3 * days as usize);
    for day in 1..=days {
        for (i, meal_type) in types.into_iter().enumerate() {
            let mut rng = streams.stream(purpose::TUNING_SCENARIO, 0, day, i as u32);
            let z_t: f64 = rng.sample(rand_distr::StandardNormal);
            let z_g: f64 = rng.sample(rand_distr::StandardNormal);
            let time = (cfg.time_means[i] + cfg.time_sd * z_t)
                .round()
                .clamp(0.0, MINUTES_PER_DAY - 1.0);
            let grams = (cfg.grams[i] * (1.0 + cfg.cv * z_g)).max(cfg.min_grams);
            let grams = (grams * 100.0).round() / 100.0;
            meals.push(MealEvent {
                day,
                time_min: time,
                grams,
                meal_type,
            });
        }
    }
    Scenario::new(ScenarioLabel::Tuning, days, meals)
}

/// Parses the meal-table format: a header line, then
/// `day,meal_type,HH:MM,grams` per meal.
pub fn parse_meal_table(text: &str, source: &str, label: ScenarioLabel) -> Result<Scenario> {
    let err = |line: usize, msg: String| Error::Load {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h))
            if h.trim()
                .trim_start_matches('\u{feff}')
                .eq_ignore_ascii_case("day,meal_type,time,grams") => {}
        _ => return Err(err(1, "expected header 'day,meal_type,time,grams'".into())),
    }
    let mut meals = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(line_no, format!("expected 4 fields, found {}", fields.len())));
        }
        let day: u32 = fields[0]
            .parse()
            .ok()
            .filter(|d| *d >= 1)
            .ok_or_else(|| err(line_no, format!("invalid day '{}'", fields[0])))?;
        let meal_type: MealType = fields[1].parse().map_err(|m| err(line_no, m))?;
        let time_min = parse_clock(fields[2]).ok_or_else(|| err(line_no, format!("invalid time '{}'", fields[2])))?;
        let grams: f64 = fields[3]
            .parse()
            .map_err(|_| err(line_no, format!("invalid grams '{}'", fields[3])))?;
        if !(grams > 0.0) || !grams.is_finite() {
            return Err(err(line_no, format!("grams must be > 0, got {grams}")));
        }
        if !seen.insert((day, time_min as u32)) {
            return Err(err(line_no, format!("duplicate meal at day {day} {}", fields[2])));
        }
        meals.push(MealEvent {
            day,
            time_min,
            grams,
            meal_type,
        });
    }
    if meals.is_empty() {
        return Err(err(1, "no meals listed".into()));
    }
    let days = meals.iter().map(|m| m.day).max().unwrap_or(1);
    Scenario::new(label, days, meals)
}

fn parse_clock(s: &str) -> Option<f64> {
    let (h, m) = s.split_once(':')?;
    let h: u32 = h.parse().ok()?;
    let m: u32 = m.parse().ok()?;
    (h < 24 && m < 60 && m.to_string().len() <= 2).then(|| f64::from(h * 60 + m))
}

/// Loads a meal table from disk.
pub fn load_validation_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_meal_table(&text, &path.display().to_string(), ScenarioLabel::Validation)
}

/// The shipped validation scenario.
pub fn validation_scenario() -> Result<Scenario> {
    parse_meal_table(VALIDATION_TABLE, "validation_scenario.csv", ScenarioLabel::Validation)
}

/// Renders a scenario in the meal-table format.
pub fn write_meal_table(s: &Scenario) -> String {
    let mut out = String::from("day,meal_type,time,grams\n");
    for m in &s.meals {
        let t = m.time_min.round() as u32;
        let _ = writeln!(
            out,
            "{},{},{:02}:{:02},{:.2}",
            m.day,
            m.meal_type,
            t / 60,
            t % 60,
            m.grams
        );
    }
    out
}

/// Bounds of the multiplicative announcement error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MisestimationConfig {
    #[serde(rename = "under_fraction")]
    pub e_lo: f64,
    #[serde(rename = "over_fraction")]
    pub e_hi: f64,
}

impl MisestimationConfig {
    pub const DEFAULT: Self = Self { e_lo: 0.3, e_hi: 0.3 };
    pub const EXACT: Self = Self { e_lo: 0.0, e_hi: 0.0 };
}

impl Default for MisestimationConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// `true_grams * (1 + eps)` with `eps ~ U[-e_lo, e_hi]`, floored at zero.
/// One draw is consumed even when both bounds are zero.
pub fn misestimate_cho(true_grams: f64, rng: &mut Stream, cfg: &MisestimationConfig) -> Result<f64> {
    if !(true_grams > 0.0) {
        return Err(Error::domain(format!("true grams must be > 0, got {true_grams}")));
    }
    if !(cfg.e_lo >= 0.0 && cfg.e_hi >= 0.0) {
        return Err(Error::config("misestimation bounds must be >= 0"));
    }
    let u: f64 = rng.random();
    let eps = -cfg.e_lo + (cfg.e_lo + cfg.e_hi) * u;
    Ok((true_grams * (1.0 + eps)).max(0.0))
}

#[cfg(test)]
fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use sha2::{Digest, Sha256};

    #[test]
    fn degenerate_tuning_scenario_is_nominal() {
        let cfg = TuningScenarioConfig {
            time_sd: 0.0,
            cv: 0.0,
            ..TuningScenarioConfig::DEFAULT
        };
        let s = gen_tuning_scenario(&RngStreams::new(1), 14, &cfg).unwrap();
        assert_eq!(s.meals.len(), 42);
        for (i, m) in s.meals.iter().enumerate() {
            let j = i % 3;
            assert_eq!(m.time_min, [480.0, 780.0, 1200.0][j]);
            assert_eq!(m.grams, [35.0, 50.0, 85.0][j]);
        }
    }

    #[test]
    fn tuning_scenario_is_deterministic() {
        let a = gen_tuning_scenario(&RngStreams::new(9), 14, &TuningScenarioConfig::DEFAULT).unwrap();
        let b = gen_tuning_scenario(&RngStreams::new(9), 14, &TuningScenarioConfig::DEFAULT).unwrap();
        let c = gen_tuning_scenario(&RngStreams::new(10), 14, &TuningScenarioConfig::DEFAULT).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn lunch_distribution_monte_carlo() {
        let s = gen_tuning_scenario(&RngStreams::new(3), 1000, &TuningScenarioConfig::DEFAULT).unwrap();
        let lunch: Vec<f64> = s
            .meals
            .iter()
            .filter(|m| m.meal_type == MealType::Lunch)
            .map(|m| m.grams)
            .collect();
        assert_eq!(lunch.len(), 1000);
        let mean = lunch.iter().sum::<f64>() / 1000.0;
        let sd = sample_sd(&lunch);
        assert!((mean - 50.0).abs() < 2.0, "{mean}");
        assert!((12.0..=18.0).contains(&sd), "{sd}");
        assert!(s.meals.iter().all(|m| m.grams >= 5.0));
    }

    #[test]
    fn validation_table_contents() {
        let s = validation_scenario().unwrap();
        assert_eq!(s.meals.len(), 60);
        assert_eq!(s.duration_days, 14);
        let first = s.meals[0];
        assert_eq!(
            (first.day, first.meal_type, first.time_min, first.grams),
            (1, MealType::Breakfast, 605.0, 64.88)
        );
        let totals = s.daily_totals();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        assert!((mean - 168.58).abs() < 0.01, "{mean}");
        assert!((sample_sd(&totals) - 57.14).abs() < 0.01);
    }

    #[test]
    fn validation_table_checksum() {
        let digest = Sha256::digest(VALIDATION_TABLE.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, VALIDATION_CHECKSUM);
    }

    const VALIDATION_CHECKSUM: &str = "5b5fb1ca299ebbd93b43be0398b00bd312711f0c5b6ef5c646a39f5012ab6d02";

    #[test]
    fn loader_errors_name_the_row() {
        let bad = "day,meal_type,time,grams\n1,breakfast,08:00,40.00\n1,lunch,13:00,-2\n";
        match parse_meal_table(bad, "x.csv", ScenarioLabel::Custom) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "day,meal_type,time,grams\n1,breakfast,08:00,40.00\n1,snack,08:00,10.00\n";
        assert!(matches!(
            parse_meal_table(dup, "x", ScenarioLabel::Custom),
            Err(Error::Load { line: 3, .. })
        ));
        let malformed = "day,meal_type,time,grams\n1,brunch,08:00,40.00\n";
        assert!(matches!(
            parse_meal_table(malformed, "x", ScenarioLabel::Custom),
            Err(Error::Load { line: 2, .. })
        ));
        assert!(parse_meal_table("1,lunch,08:00,3\n", "x", ScenarioLabel::Custom).is_err());
        assert!(parse_meal_table(
            "day,meal_type,time,grams\n1,lunch,25:00,3\n",
            "x",
            ScenarioLabel::Custom
        )
        .is_err());
    }

    #[test]
    fn meal_table_round_trip() {
        let v = validation_scenario().unwrap();
        let again = parse_meal_table(&write_meal_table(&v), "rt", ScenarioLabel::Validation).unwrap();
        assert_eq!(v, again);
        assert_eq!(write_meal_table(&v), VALIDATION_TABLE);
        let t = gen_tuning_scenario(&RngStreams::new(5), 14, &TuningScenarioConfig::DEFAULT).unwrap();
        let again = parse_meal_table(&write_meal_table(&t), "rt", ScenarioLabel::Tuning).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn misestimation_bounds() {
        let mut rng = derive_stream(1, purpose::CHO_ESTIMATE, 0, 0, 0);
        assert_eq!(
            misestimate_cho(42.0, &mut rng, &MisestimationConfig::EXACT).unwrap(),
            42.0
        );
        for _ in 0..10_000 {
            let r = misestimate_cho(50.0, &mut rng, &MisestimationConfig::DEFAULT).unwrap() / 50.0;
            assert!((0.7..=1.3).contains(&r));
        }
        let seq = |seed| {
            let mut rng = derive_stream(seed, purpose::CHO_ESTIMATE, 0, 0, 0);
            (0..10)
                .map(|_| misestimate_cho(50.0, &mut rng, &MisestimationConfig::DEFAULT).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(4), seq(4));
        assert!(misestimate_cho(0.0, &mut rng, &MisestimationConfig::DEFAULT).is_err());
    }
}
