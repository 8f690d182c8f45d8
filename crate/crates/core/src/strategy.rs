//! Pramlintide dosing strategies and insulin-alone announcement modes.
//!
//! All decision functions are pure; the only state carried between steps is
//! the small [`DosingState`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::MealType;

/// Run mode: one of the four pramlintide strategies or an insulin-alone
/// comparator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    S1,
    S2,
    S3,
    S4,
    #[serde(rename = "INS_MA")]
    InsMa,
    #[serde(rename = "INS_SMA")]
    InsSma,
    #[serde(rename = "INS_NMA")]
    InsNma,
}

impl Mode {
    pub const ALL: [Mode; 7] = [
        Mode::S1,
        Mode::S2,
        Mode::S3,
        Mode::S4,
        Mode::InsMa,
        Mode::InsSma,
        Mode::InsNma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::S1 => "S1",
            Mode::S2 => "S2",
            Mode::S3 => "S3",
            Mode::S4 => "S4",
            Mode::InsMa => "INS_MA",
            Mode::InsSma => "INS_SMA",
            Mode::InsNma => "INS_NMA",
        }
    }

    pub fn announcement(self) -> Announcement {
        match self {
            Mode::S3 | Mode::InsMa => Announcement::Full,
            Mode::S4 | Mode::InsSma => Announcement::Simplified,
            Mode::S1 | Mode::S2 | Mode::InsNma => Announcement::None,
        }
    }

    pub fn uses_pramlintide(self) -> bool {
        matches!(self, Mode::S1 | Mode::S2 | Mode::S3 | Mode::S4)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown mode '{s}' (expected one of S1, S2, S3, S4, INS_MA, INS_SMA, INS_NMA)"
                ))
            })
    }
}

/// How meals are announced to the insulin controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Announcement {
    /// Misestimated true carbohydrates.
    Full,
    /// A fixed amount for main meals, nothing for snacks.
    Simplified,
    None,
}

pub const DEFAULT_SMA_CHO_G: f64 = 25.0;

fn default_sma_cho() -> f64 {
    DEFAULT_SMA_CHO_G
}

/// Strategy parameters. Only the fields used by `mode` are consulted and
/// required.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub mode: Mode,
    #[serde(rename = "lambda_ug", default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(rename = "rho_ug_per_u", default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(rename = "phi_ug", default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(rename = "delta_ug_per_u", default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Multiple of the basal rate the insulin signal must exceed.
    #[serde(rename = "z1_basal_multiple", default, skip_serializing_if = "Option::is_none")]
    pub z1: Option<f64>,
    #[serde(rename = "z2_mgdl_per_min", default, skip_serializing_if = "Option::is_none")]
    pub z2: Option<f64>,
    /// Minimum steps since the previous bolus (strict).
    #[serde(rename = "z3_steps", default, skip_serializing_if = "Option::is_none")]
    pub z3: Option<u32>,
    #[serde(rename = "sma_assumed_cho_g", default = "default_sma_cho")]
    pub sma_assumed_cho: f64,
}

/// Resolved Strategy 1 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S1Params {
    pub lambda: f64,
    pub z1: f64,
    pub z2: f64,
    pub z3: u32,
}

impl StrategyConfig {
    /// A mode with no parameters set (valid as-is for insulin-alone modes).
    pub fn bare(mode: Mode) -> Self {
        Self {
            mode,
            lambda: None,
            rho: None,
            phi: None,
            delta: None,
            z1: None,
            z2: None,
            z3: None,
            sma_assumed_cho: DEFAULT_SMA_CHO_G,
        }
    }

    pub fn s1(lambda: f64, z1: f64, z2: f64, z3: u32) -> Self {
        Self {
            lambda: Some(lambda),
            z1: Some(z1),
            z2: Some(z2),
            z3: Some(z3),
            ..Self::bare(Mode::S1)
        }
    }

    pub fn s2(rho: f64) -> Self {
        Self {
            rho: Some(rho),
            ..Self::bare(Mode::S2)
        }
    }

    pub fn s3(phi: f64) -> Self {
        Self {
            phi: Some(phi),
            ..Self::bare(Mode::S3)
        }
    }

    pub fn s4(delta: f64) -> Self {
        Self {
            delta: Some(delta),
            ..Self::bare(Mode::S4)
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn need(v: Option<f64>, key: &str, unit: &str) -> Result<f64> {
            let v = v.ok_or_else(|| Error::config(format!("strategy.{key} ({unit}) required")))?;
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("strategy.{key} ({unit}) must be >= 0, got {v}")));
            }
            Ok(v)
        }
        if !(self.sma_assumed_cho >= 0.0 && self.sma_assumed_cho.is_finite()) {
            return Err(Error::config("strategy.sma_assumed_cho_g must be >= 0"));
        }
        match self.mode {
            Mode::S1 => {
                need(self.lambda, "lambda", "ug")?;
                let z1 = need(self.z1, "z1", "basal multiple")?;
                let z2 = self
                    .z2
                    .ok_or_else(|| Error::config("strategy.z2 (mg/dL per min) required"))?;
                let z3 = self.z3.ok_or_else(|| Error::config("strategy.z3 (steps) required"))?;
                if z1 < 1.0 {
                    return Err(Error::config(format!("strategy.z1 must be >= 1, got {z1}")));
                }
                if !z2.is_finite() {
                    return Err(Error::config("strategy.z2 (mg/dL per min) must be finite"));
                }
                if z3 < 1 {
                    return Err(Error::config("strategy.z3 (steps) must be >= 1"));
                }
            }
            Mode::S2 => {
                need(self.rho, "rho", "ug/U")?;
            }
            Mode::S3 => {
                need(self.phi, "phi", "ug")?;
            }
            Mode::S4 => {
                need(self.delta, "delta", "ug/U")?;
            }
            Mode::InsMa | Mode::InsSma | Mode::InsNma => {}
        }
        Ok(())
    }

    pub fn s1_params(&self) -> Result<S1Params> {
        let missing = |k: &str, u: &str| Error::config(format!("strategy.{k} ({u}) required"));
        Ok(S1Params {
            lambda: self.lambda.ok_or_else(|| missing("lambda", "ug"))?,
            z1: self.z1.ok_or_else(|| missing("z1", "basal multiple"))?,
            z2: self.z2.ok_or_else(|| missing("z2", "mg/dL per min"))?,
            z3: self.z3.ok_or_else(|| missing("z3", "steps"))?,
        })
    }
}

/// Pramlintide command for one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PramCommand {
    /// Bolus (ug).
    pub p_b: f64,
    /// Infusion (ug per step).
    pub p_i: f64,
}

/// `(m_u, m_G)`: insulin and glucose slopes per minute.
pub fn slopes(u_k: f64, u_km1: f64, g_k: f64, g_km1: f64, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("slope interval must be > 0, got {dt}")));
    }
    Ok(((u_k - u_km1) / dt, (g_k - g_km1) / dt))
}

/// Per-loop memory of the strategies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DosingState {
    pub u_prev: Option<f64>,
    pub g_prev: Option<f64>,
    pub m_u_prev: f64,
    /// Steps since the last pramlintide bolus; saturates at `u64::MAX`
    /// before the first bolus.
    pub steps_since_bolus: u64,
}

impl Default for DosingState {
    fn default() -> Self {
        Self {
            u_prev: None,
            g_prev: None,
            m_u_prev: 0.0,
            steps_since_bolus: u64::MAX,
        }
    }
}

/// Strategy 1: bolus `lambda` at a detected insulin peak, subject to the
/// safety conditions.
pub fn strategy1_step(
    state: &mut DosingState,
    u_k: f64,
    u_b: f64,
    m_u_k: f64,
    m_u_km1: f64,
    m_g_k: f64,
    p: &S1Params,
) -> PramCommand {
    let b1 = m_u_km1 > 0.0 && m_u_k < 0.0;
    let b2 = u_k > p.z1 * u_b && m_g_k > p.z2 && state.steps_since_bolus > u64::from(p.z3);
    let fire = b1 && b2;
    if fire {
        state.steps_since_bolus = 0;
    }
    state.steps_since_bolus = state.steps_since_bolus.saturating_add(1);
    PramCommand {
        p_b: if fire { p.lambda } else { 0.0 },
        p_i: 0.0,
    }
}

/// Strategy 2: infusion proportional to the total insulin.
pub fn strategy2_step(u_k: f64, rho: f64) -> PramCommand {
    PramCommand {
        p_b: 0.0,
        p_i: rho * u_k,
    }
}

/// Strategy 3: fixed bolus with each announcement.
pub fn strategy3_step(cho_hat: f64, phi: f64) -> PramCommand {
    PramCommand {
        p_b: if cho_hat > 0.0 { phi } else { 0.0 },
        p_i: 0.0,
    }
}

/// Strategy 4: both insulin channels scaled by `delta`.
pub fn strategy4_step(u_i: f64, u_b: f64, u_bolus: f64, delta: f64) -> PramCommand {
    PramCommand {
        p_b: delta * u_bolus,
        p_i: delta * (u_i + u_b),
    }
}

/// Carbohydrates announced to the controller for one meal.
pub fn announcement_policy(mode: Mode, meal_type: MealType, misestimated_g: f64, sma_cho_g: f64) -> f64 {
    match mode.announcement() {
        Announcement::Full => misestimated_g,
        Announcement::Simplified if meal_type.is_main() => sma_cho_g,
        Announcement::Simplified | Announcement::None => 0.0,
    }
}

/// Signals available to the strategy at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSignals {
    pub u_basal: f64,
    pub u_infusion: f64,
    pub u_bolus: f64,
    pub cgm: f64,
    pub cho_hat: f64,
    pub h: f64,
}

impl StepSignals {
    pub fn u_total(&self) -> f64 {
        self.u_basal + self.u_infusion + self.u_bolus
    }
}

/// Dispatches to the configured strategy and updates the slope memory.
pub fn strategy_step(state: &mut DosingState, cfg: &StrategyConfig, s: &StepSignals) -> Result<PramCommand> {
    let u_k = s.u_total();
    let (m_u, m_g) = slopes(
        u_k,
        state.u_prev.unwrap_or(u_k),
        s.cgm,
        state.g_prev.unwrap_or(s.cgm),
        s.h,
    )?;
    let cmd = match cfg.mode {
        Mode::S1 => strategy1_step(state, u_k, s.u_basal, m_u, state.m_u_prev, m_g, &cfg.s1_params()?),
        Mode::S2 => strategy2_step(u_k, cfg.rho.unwrap_or(0.0)),
        Mode::S3 => strategy3_step(s.cho_hat, cfg.phi.unwrap_or(0.0)),
        Mode::S4 => strategy4_step(s.u_infusion, s.u_basal, s.u_bolus, cfg.delta.unwrap_or(0.0)),
        Mode::InsMa | Mode::InsSma | Mode::InsNma => PramCommand::default(),
    };
    state.u_prev = Some(u_k);
    state.g_prev = Some(s.cgm);
    state.m_u_prev = m_u;
    Ok(cmd)
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: S1Params = S1Params {
        lambda: 30.0,
        z1: 1.5,
        z2: 1.0,
        z3: 24,
    };

    #[test]
    fn slope_arithmetic() {
        assert_eq!(slopes(1.0, 1.0, 120.0, 120.0, 5.0).unwrap(), (0.0, 0.0));
        let (mu, mg) = slopes(1.5, 1.0, 150.0, 120.0, 5.0).unwrap();
        assert!((mu - 0.1).abs() < 1e-15);
        assert!((mg - 6.0).abs() < 1e-15);
        assert!(slopes(1.0, 1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn s1_truth_table() {
        let u_b = 0.1;
        for bits in 0u32..32 {
            let c = |i: u32| bits & (1 << i) != 0;
            let m_u_km1 = if c(0) { 0.1 } else { -0.1 };
            let m_u_k = if c(1) { -0.05 } else { 0.05 };
            let u_k = if c(2) { 2.0 * P.z1 * u_b } else { P.z1 * u_b };
            let m_g = if c(3) { 2.0 * P.z2 } else { P.z2 };
            let dk = if c(4) { u64::from(P.z3) + 1 } else { u64::from(P.z3) };
            let mut state = DosingState {
                steps_since_bolus: dk,
                ..Default::default()
            };
            let cmd = strategy1_step(&mut state, u_k, u_b, m_u_k, m_u_km1, m_g, &P);
            let expect = bits == 31;
            assert_eq!(cmd.p_b, if expect { P.lambda } else { 0.0 }, "case {bits:05b}");
            assert_eq!(cmd.p_i, 0.0);
            assert_eq!(state.steps_since_bolus, if expect { 1 } else { dk + 1 });
        }
    }

    #[test]
    fn s1_spacing_is_strict() {
        let mut state = DosingState::default();
        let mut last: Option<u64> = None;
        for k in 0..1000u64 {
            let cmd = strategy1_step(&mut state, 1.0, 0.1, -0.1, 0.1, 5.0, &P);
            if cmd.p_b > 0.0 {
                if let Some(prev) = last {
                    assert!(k - prev > u64::from(P.z3));
                }
                last = Some(k);
            }
        }
        assert!(last.is_some());
    }

    #[test]
    fn s2_s3_s4_arithmetic() {
        assert_eq!(strategy2_step(0.0, 10.0).p_i, 0.0);
        assert!((strategy2_step(1.2, 10.0).p_i - 12.0).abs() < 1e-12);
        assert_eq!(strategy2_step(3.0, 0.0), PramCommand::default());
        assert_eq!(strategy3_step(50.0, 15.0), PramCommand { p_b: 15.0, p_i: 0.0 });
        assert_eq!(strategy3_step(0.0, 15.0), PramCommand::default());
        let cmd = strategy4_step(0.9, 0.1, 0.8 * 25.0 / 12.5, 10.0);
        assert!((cmd.p_i - 10.0).abs() < 1e-12);
        assert!((cmd.p_b - 16.0).abs() < 1e-12);
        assert_eq!(strategy4_step(0.9, 0.1, 1.6, 0.0), PramCommand::default());
    }

    #[test]
    fn announcement_modes() {
        assert_eq!(announcement_policy(Mode::InsNma, MealType::Dinner, 80.0, 25.0), 0.0);
        assert_eq!(announcement_policy(Mode::InsSma, MealType::Dinner, 80.0, 25.0), 25.0);
        assert_eq!(announcement_policy(Mode::S4, MealType::Snack, 20.0, 25.0), 0.0);
        assert_eq!(announcement_policy(Mode::S3, MealType::Snack, 21.5, 25.0), 21.5);
        assert_eq!(announcement_policy(Mode::S1, MealType::Lunch, 50.0, 25.0), 0.0);
        assert_eq!(announcement_policy(Mode::S2, MealType::Lunch, 50.0, 25.0), 0.0);
    }

    #[test]
    fn validation_names_missing_keys() {
        let mut cfg = StrategyConfig::s1(30.0, 1.5, 1.0, 24);
        assert!(cfg.validate().is_ok());
        cfg.z2 = None;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("strategy.z2 (mg/dL per min) required"), "{msg}");
        assert!(StrategyConfig::bare(Mode::S2).validate().is_err());
        assert!(StrategyConfig::bare(Mode::InsNma).validate().is_ok());
        assert!(StrategyConfig {
            z1: Some(0.5),
            ..StrategyConfig::s1(30.0, 1.5, 1.0, 24)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("ins_nma".parse::<Mode>().unwrap(), Mode::InsNma);
        assert!("S5".parse::<Mode>().is_err());
    }

    #[test]
    fn dispatcher_tracks_slopes() {
        let cfg = StrategyConfig::s2(10.0);
        let mut st = DosingState::default();
        let sig = StepSignals {
            u_basal: 0.1,
            u_infusion: 0.2,
            u_bolus: 0.0,
            cgm: 150.0,
            cho_hat: 0.0,
            h: 5.0,
        };
        let cmd = strategy_step(&mut st, &cfg, &sig).unwrap();
        assert!((cmd.p_i - 3.0).abs() < 1e-12);
        let sig2 = StepSignals {
            u_infusion: 0.7,
            cgm: 160.0,
            ..sig
        };
        strategy_step(&mut st, &cfg, &sig2).unwrap();
        assert!((st.m_u_prev - 0.1).abs() < 1e-12);
        assert_eq!(st.g_prev, Some(160.0));
    }
}
