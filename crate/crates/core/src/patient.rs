//! Virtual patient: an incremental linear glucose plant with a delayed
//! insulin channel and a delayed meal-appearance channel, plus intra-patient
//! variability and a CGM sensor model.
//!
//! ```text
//! G(t) = G_b + K_ra * L_ra[Ra(t - delay)] - c(t) * K_u * L_u[u(t - delay) - u_b]
//! ```
//!
//! where each `L` is `1 / ((tau1 s + 1)^2 (tau2 s + 1))` discretized exactly
//! under a zero-order hold and `c(t)` is the circadian sensitivity factor.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::integrate::rk4_step;
use crate::lti::LagCascade;
use crate::pkpd::{meal_derivatives, ra_of_appearance, MealModelParams, MealState, PramlintideParams};
use crate::rng::Stream;

pub const SENSOR_MIN: f64 = 40.0;
pub const SENSOR_MAX: f64 = 400.0;

/// One virtual patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientParams {
    pub id: String,
    #[serde(rename = "basal_glucose_mgdl")]
    pub g_b: f64,
    /// Basal insulin per sampling step.
    #[serde(rename = "basal_insulin_u_per_step")]
    pub u_b: f64,
    #[serde(rename = "cir_g_per_u")]
    pub cir: f64,
    /// Glucose drop per sustained U/step above basal.
    #[serde(rename = "insulin_gain_mgdl_per_u")]
    pub k_u: f64,
    #[serde(rename = "insulin_tau1_min")]
    pub tau1_u: f64,
    #[serde(rename = "insulin_tau2_min")]
    pub tau2_u: f64,
    /// Glucose rise per sustained mg/kg/min of meal appearance.
    #[serde(rename = "ra_gain_mgdl_per_mgkgmin")]
    pub k_ra: f64,
    #[serde(rename = "ra_tau1_min")]
    pub tau1_ra: f64,
    #[serde(rename = "ra_tau2_min")]
    pub tau2_ra: f64,
    #[serde(rename = "input_delay_min")]
    pub input_delay: f64,
    pub meal: MealModelParams,
    pub pramlintide: PramlintideParams,
    pub controller: ControllerParams,
}

impl PatientParams {
    pub fn bw(&self) -> f64 {
        self.meal.bw
    }

    pub fn validate(&self, h: f64) -> Result<()> {
        let ctx = |e: Error| Error::config(format!("patient {}: {e}", self.id));
        if !(70.0..=180.0).contains(&self.g_b) {
            return Err(ctx(Error::config(format!(
                "basal glucose {} outside [70, 180] mg/dL",
                self.g_b
            ))));
        }
        for (name, v) in [
            ("basal insulin", self.u_b),
            ("CIR", self.cir),
            ("insulin gain", self.k_u),
            ("insulin tau1", self.tau1_u),
            ("insulin tau2", self.tau2_u),
            ("Ra gain", self.k_ra),
            ("Ra tau1", self.tau1_ra),
            ("Ra tau2", self.tau2_ra),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ctx(Error::config(format!("{name} must be > 0, got {v}"))));
            }
        }
        delay_steps(self.input_delay, h).map_err(ctx)?;
        self.meal.validate().map_err(ctx)?;
        self.pramlintide.validate().map_err(ctx)?;
        self.controller.validate(h).map_err(ctx)
    }
}

/// Converts a delay in minutes to a whole number of samples.
pub fn delay_steps(delay_min: f64, h: f64) -> Result<usize> {
    let n = delay_min / h;
    if !(delay_min >= 0.0) || (n - n.round()).abs() > 1e-9 {
        return Err(Error::config(format!(
            "delay {delay_min} min is not a nonnegative multiple of the {h} min sampling period"
        )));
    }
    Ok(n.round() as usize)
}

/// Fixed-length delay line; `push` returns the sample that entered `len` pushes ago.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    buf: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        Self {
            buf: std::iter::repeat_n(0.0, len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.buf.is_empty() {
            return x;
        }
        self.buf.push_back(x);
        self.buf.pop_front().unwrap_or(0.0)
    }

    /// Adds `x` to the newest queued sample (used for same-step additions).
    pub fn add_to_newest(&mut self, x: f64) {
        if let Some(v) = self.buf.back_mut() {
            *v += x;
        }
    }
}

/// Incremental glucose plant state.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    g_b: f64,
    u_b: f64,
    insulin: LagCascade,
    ra: LagCascade,
    insulin_delay: DelayLine,
    ra_delay: DelayLine,
    h: f64,
    glucose: f64,
}

impl PlantState {
    /// Plant at rest for the given patient and sampling period.
    pub fn new(p: &PatientParams, h: f64) -> Result<Self> {
        let n = delay_steps(p.input_delay, h)?;
        Ok(Self {
            g_b: p.g_b,
            u_b: p.u_b,
            insulin: LagCascade::new(p.k_u, p.tau1_u, p.tau2_u, h)?,
            ra: LagCascade::new(p.k_ra, p.tau1_ra, p.tau2_ra, h)?,
            insulin_delay: DelayLine::new(n),
            ra_delay: DelayLine::new(n),
            h,
            glucose: p.g_b,
        })
    }

    pub fn glucose(&self) -> f64 {
        self.glucose
    }

    pub fn delay_samples(&self) -> usize {
        self.insulin_delay.len()
    }

    pub fn insulin_time_constants(&self) -> (f64, f64) {
        self.insulin.time_constants()
    }

    /// Applies new insulin-action time constants from the next step on.
    pub fn set_insulin_time_constants(&mut self, tau1: f64, tau2: f64) -> Result<()> {
        self.insulin.set_time_constants(tau1, tau2)
    }

    /// Advances one sampling period. `u_total` (U/step) and `ra` (mg/kg/min)
    /// are held over the period; returns glucose at the end of it.
    pub fn plant_step(&mut self, u_total: f64, ra: f64, circadian_factor: f64, h: f64) -> Result<f64> {
        if (h - self.h).abs() > 1e-12 {
            return Err(Error::Plant(format!(
                "step {h} min differs from the {} min discretization",
                self.h
            )));
        }
        if !(u_total.is_finite() && ra.is_finite() && circadian_factor.is_finite()) {
            return Err(Error::Plant("non-finite plant input".into()));
        }
        let du = self.insulin_delay.push(u_total - self.u_b);
        let ra_in = self.ra_delay.push(ra);
        let insulin_effect = self.insulin.step(du);
        let meal_effect = self.ra.step(ra_in);
        let g = self.g_b + meal_effect - circadian_factor * insulin_effect;
        if !g.is_finite() {
            return Err(Error::Plant("glucose became non-finite".into()));
        }
        // the linear plant can undershoot zero in absurd overdoses
        self.glucose = g.max(0.0);
        Ok(self.glucose)
    }
}

/// Bounds of the per-meal and per-run variability draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariabilityConfig {
    /// Relative half-width of the uniform k_abs multiplier.
    #[serde(rename = "k_abs_fraction")]
    pub k_abs: f64,
    #[serde(rename = "f_fraction")]
    pub f: f64,
    /// Relative half-width for each insulin-action time constant.
    #[serde(rename = "insulin_pk_fraction")]
    pub insulin_pk: f64,
    /// Upper bound of the circadian amplitude (uniform on [0, max]).
    #[serde(rename = "circadian_amplitude_max")]
    pub circadian_max: f64,
}

impl VariabilityConfig {
    pub const DEFAULT: VariabilityConfig = VariabilityConfig {
        k_abs: 0.30,
        f: 0.10,
        insulin_pk: 0.30,
        circadian_max: 0.30,
    };

    pub const NONE: VariabilityConfig = VariabilityConfig {
        k_abs: 0.0,
        f: 0.0,
        insulin_pk: 0.0,
        circadian_max: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k_abs", self.k_abs), ("f", self.f), ("insulin_pk", self.insulin_pk)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(format!(
                    "variability.{name}_fraction must lie in [0, 1), got {v}"
                )));
            }
        }
        if !(0.0..=0.3).contains(&self.circadian_max) {
            return Err(Error::config(format!(
                "variability.circadian_amplitude_max must lie in [0, 0.3], got {}",
                self.circadian_max
            )));
        }
        Ok(())
    }
}

impl Default for VariabilityConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariabilitySample {
    pub k_abs_mult: f64,
    pub f_mult: f64,
    pub tau1_u_mult: f64,
    pub tau2_u_mult: f64,
    pub circadian_amplitude: f64,
    /// Phase in radians.
    pub circadian_phase: f64,
    pub noise_seed: u64,
}

fn symmetric_multiplier(rng: &mut Stream, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    if half_width == 0.0 {
        1.0
    } else {
        1.0 + half_width * (2.0 * u - 1.0)
    }
}

/// Draws one variability sample. Draw order is fixed so a stream always maps
/// to the same sample regardless of which bounds are zero.
pub fn sample_variability(rng: &mut Stream, cfg: &VariabilityConfig) -> VariabilitySample {
    let k_abs_mult = symmetric_multiplier(rng, cfg.k_abs);
    let f_mult = symmetric_multiplier(rng, cfg.f);
    let tau1_u_mult = symmetric_multiplier(rng, cfg.insulin_pk);
    let tau2_u_mult = symmetric_multiplier(rng, cfg.insulin_pk);
    let a: f64 = rng.random();
    let phase: f64 = rng.random();
    VariabilitySample {
        k_abs_mult,
        f_mult,
        tau1_u_mult,
        tau2_u_mult,
        circadian_amplitude: cfg.circadian_max * a,
        circadian_phase: 2.0 * PI * phase,
        noise_seed: rng.random(),
    }
}

/// Insulin sensitivity multiplier with a 24 h period.
pub fn circadian_factor(t_min: f64, amplitude: f64, phase: f64) -> f64 {
    1.0 + amplitude * (2.0 * PI * t_min / 1440.0 + phase).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgmSample {
    pub t: f64,
    pub value: f64,
}

/// AR(1) sensor error with stationary standard deviation `sd`.
#[derive(Debug, Clone)]
pub struct CgmSensor {
    rng: Stream,
    sd: f64,
    coefficient: f64,
    error: Option<f64>,
}

impl CgmSensor {
    pub fn new(rng: Stream, sd: f64, coefficient: f64) -> Result<Self> {
        if !(sd >= 0.0) {
            return Err(Error::config(format!("sensor noise SD must be >= 0, got {sd}")));
        }
        if !(coefficient.abs() < 1.0) {
            return Err(Error::config(format!(
                "AR coefficient must lie in (-1, 1), got {coefficient}"
            )));
        }
        Ok(Self {
            rng,
            sd,
            coefficient,
            error: None,
        })
    }

    pub fn sample(&mut self, t: f64, glucose: f64) -> CgmSample {
        let value = glucose + self.next_error();
        CgmSample {
            t,
            value: value.clamp(SENSOR_MIN, SENSOR_MAX),
        }
    }

    fn next_error(&mut self) -> f64 {
        if self.sd == 0.0 {
            return 0.0;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        let e = match self.error {
            None => self.sd * z,
            Some(prev) => {
                let innovation = self.sd * (1.0 - self.coefficient * self.coefficient).sqrt();
                self.coefficient * prev + innovation * z
            }
        };
        self.error = Some(e);
        e
    }
}

/// Single CGM reading through a caller-owned sensor stream.
pub fn cgm_sample(t: f64, glucose: f64, sensor: &mut CgmSensor) -> CgmSample {
    sensor.sample(t, glucose)
}

/// Peak glucose rise of the unit-gain meal channel after a single meal with
/// no insulin response. Used to calibrate `K_ra` to a target excursion.
pub fn unit_meal_peak(
    meal: &MealModelParams,
    tau1_ra: f64,
    tau2_ra: f64,
    h: f64,
    meal_g: f64,
    horizon_min: f64,
) -> Result<f64> {
    let mut state = MealState::default();
    state.ingest(meal_g)?;
    let mut channel = LagCascade::new(1.0, tau1_ra, tau2_ra, h)?;
    let mut peak = 0.0_f64;
    let steps = (horizon_min / h).ceil() as usize;
    let d_active = state.d_active;
    let mut x = [state.qsto1, state.qsto2, state.qgut, 0.0];
    for _ in 0..steps {
        let next = rk4_step(&x, h, 5, |_, v| {
            let s = MealState {
                qsto1: v[0],
                qsto2: v[1],
                qgut: v[2],
                d_active,
            };
            let d = meal_derivatives(&s, 0.0, 1.0, meal)?;
            Ok([d.qsto1, d.qsto2, d.qgut, ra_of_appearance(&s, meal)])
        })?;
        let ra_avg = (next[3] - x[3]) / h;
        x = next;
        peak = peak.max(channel.step(ra_avg));
    }
    Ok(peak)
}

/// Ten synthetic patients. These are invented for desk-scale experiments and
/// do not correspond to any published virtual subject.
pub fn synthetic_cohort(h: f64) -> Result<Vec<PatientParams>> {
    // (G_b, basal U/h, CIR, BW, insulin tau1, insulin tau2, Ra tau2, excursion, theta)
    type Row = (f64, f64, f64, f64, f64, f64, f64, f64, f64);
    const ROWS: [Row; 10] = [
        (120.0, 0.90, 10.0, 72.0, 35.0, 140.0, 150.0, 120.0, 20.0),
        (110.0, 1.10, 8.0, 85.0, 40.0, 160.0, 170.0, 110.0, 20.0),
        (130.0, 0.75, 12.0, 64.0, 30.0, 120.0, 140.0, 130.0, 20.0),
        (115.0, 1.25, 9.0, 92.0, 45.0, 170.0, 160.0, 105.0, 20.0),
        (125.0, 0.80, 14.0, 60.0, 33.0, 130.0, 130.0, 135.0, 20.0),
        (105.0, 1.00, 11.0, 78.0, 38.0, 150.0, 180.0, 115.0, 20.0),
        (135.0, 0.70, 15.0, 58.0, 28.0, 110.0, 120.0, 140.0, 20.0),
        (118.0, 1.15, 9.5, 88.0, 42.0, 165.0, 165.0, 112.0, 20.0),
        (122.0, 0.95, 10.5, 70.0, 36.0, 145.0, 150.0, 125.0, 20.0),
        (112.0, 1.05, 12.5, 80.0, 40.0, 155.0, 175.0, 118.0, 20.0),
    ];
    let tau1_ra = 15.0;
    let delay = 15.0;
    ROWS.iter()
        .enumerate()
        .map(
            |(i, &(g_b, basal_u_per_h, cir, bw, tau1_u, tau2_u, tau2_ra, excursion, theta))| {
                let meal = MealModelParams {
                    bw,
                    ..MealModelParams::NOMINAL
                };
                let k_ra = excursion / unit_meal_peak(&meal, tau1_ra, tau2_ra, h, 50.0, 1440.0)?;
                // one gram of carbohydrate per step, seen through the Ra channel
                let k_d = k_ra * meal.f * 1000.0 / (bw * h);
                let k_u = k_d * cir;
                let controller = ControllerParams {
                    gamma: 0.85 / cir,
                    theta,
                    tau1_d: 25.0,
                    tau2_d: tau2_ra,
                    k_d,
                    tau1_u,
                    tau2_u,
                    k_u,
                    delay,
                    nu: 0.8,
                    allow_suspension: true,
                };
                Ok(PatientParams {
                    id: format!("synthetic-{:02}", i + 1),
                    g_b,
                    u_b: basal_u_per_h * h / 60.0,
                    cir,
                    k_u,
                    tau1_u,
                    tau2_u,
                    k_ra,
                    tau1_ra,
                    tau2_ra,
                    input_delay: delay,
                    meal,
                    pramlintide: PramlintideParams::SYNTHETIC,
                    controller,
                })
            },
        )
        .collect()
}
