//! Closed-loop simulation over a scenario.
//!
//! Each sampling step runs in a fixed order: sense (CGM), announce meals,
//! insulin controller, pramlintide strategy, inject meals and boluses,
//! integrate the pramlintide and meal models over the step, then advance the
//! glucose plant with the step-averaged rate of appearance.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::DobController;
use crate::error::{Error, Result};
use crate::integrate::{clamp_nonnegative, rk4_step};
use crate::patient::{circadian_factor, sample_variability, CgmSensor, PatientParams, PlantState, VariabilityConfig};
use crate::pkpd::{
    convert_pram_dose, eta_factor, meal_derivatives, pram_derivatives, ra_of_appearance, MealModelParams, MealState,
    PramlintideState,
};
use crate::rng::{purpose, RngStreams};
use crate::scenario::{misestimate_cho, MisestimationConfig, Scenario, MINUTES_PER_DAY};
use crate::strategy::{announcement_policy, strategy_step, DosingState, Mode, StepSignals, StrategyConfig};

/// CGM error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(rename = "noise_sd_mgdl")]
    pub noise_sd: f64,
    #[serde(rename = "ar_coefficient")]
    pub ar_coefficient: f64,
}

impl SensorConfig {
    pub const DEFAULT: Self = Self {
        noise_sd: 5.0,
        ar_coefficient: 0.7,
    };
    pub const NOISELESS: Self = Self {
        noise_sd: 0.0,
        ar_coefficient: 0.0,
    };
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Settings shared by every run of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub master_seed: u64,
    #[serde(rename = "sampling_period_min", default = "default_h")]
    pub h: f64,
    #[serde(rename = "integrator_substeps", default = "default_substeps")]
    pub substeps: usize,
    /// Overrides the scenario length when set.
    #[serde(rename = "duration_days", default, skip_serializing_if = "Option::is_none")]
    pub duration_days: Option<u32>,
    #[serde(default)]
    pub variability: VariabilityConfig,
    #[serde(default)]
    pub misestimation: MisestimationConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
}

fn default_h() -> f64 {
    5.0
}

fn default_substeps() -> usize {
    20
}

impl RunSettings {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            h: default_h(),
            substeps: default_substeps(),
            duration_days: None,
            variability: VariabilityConfig::DEFAULT,
            misestimation: MisestimationConfig::DEFAULT,
            sensor: SensorConfig::DEFAULT,
        }
    }

    /// No variability, exact announcements and a noiseless sensor.
    pub fn deterministic(master_seed: u64) -> Self {
        Self {
            variability: VariabilityConfig::NONE,
            misestimation: MisestimationConfig::EXACT,
            sensor: SensorConfig::NOISELESS,
            ..Self::new(master_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::config(format!(
                "sampling period must be > 0 min, got {}",
                self.h
            )));
        }
        if self.substeps == 0 {
            return Err(Error::config("integrator substeps must be >= 1"));
        }
        if self.duration_days == Some(0) {
            return Err(Error::config("duration must be at least one day"));
        }
        self.variability.validate()?;
        if !(self.misestimation.e_lo >= 0.0 && self.misestimation.e_hi >= 0.0 && self.misestimation.e_lo <= 1.0) {
            return Err(Error::config(
                "misestimation fractions must be >= 0 with under_fraction <= 1",
            ));
        }
        if !(self.sensor.noise_sd >= 0.0 && self.sensor.ar_coefficient.abs() < 1.0) {
            return Err(Error::config("sensor noise SD must be >= 0 and |AR coefficient| < 1"));
        }
        Ok(())
    }
}

/// Everything one closed-loop run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<'a> {
    pub patient: &'a PatientParams,
    /// Stream key of the patient (its position in the cohort).
    pub subject: u32,
    pub strategy: StrategyConfig,
    pub scenario: &'a Scenario,
    pub settings: RunSettings,
}

impl SimConfig<'_> {
    pub fn duration_days(&self) -> u32 {
        self.settings.duration_days.unwrap_or(self.scenario.duration_days)
    }

    pub fn steps(&self) -> usize {
        (f64::from(self.duration_days()) * MINUTES_PER_DAY / self.settings.h).round() as usize
    }
}

/// One row of the per-step trace. Insulin in U per step, pramlintide in ug
/// (per step for the infusion), Ra in mg/kg/min averaged over the step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t_min: f64,
    pub g_true: f64,
    pub g_cgm: f64,
    pub u_basal: f64,
    pub u_infusion: f64,
    pub u_bolus: f64,
    pub p_infusion: f64,
    pub p_bolus: f64,
    pub ra: f64,
    pub eta: f64,
    pub d_hat: f64,
}

impl TraceRow {
    pub fn insulin(&self) -> f64 {
        self.u_basal + self.u_infusion + self.u_bolus
    }

    pub fn pramlintide(&self) -> f64 {
        self.p_infusion + self.p_bolus
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Meal {
        step: usize,
        grams: f64,
        announced_g: f64,
    },
    InsulinBolus {
        step: usize,
        units: f64,
    },
    PramlintideBolus {
        step: usize,
        ug: f64,
    },
    /// The incremental command entered its lower limit.
    SaturationStart {
        step: usize,
    },
    ControllerFault {
        step: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub patient_id: String,
    pub mode: Mode,
    pub trace: Vec<TraceRow>,
    /// Total insulin per day (U).
    pub daily_insulin: Vec<f64>,
    /// Total pramlintide per day (ug).
    pub daily_pramlintide: Vec<f64>,
    pub events: Vec<Event>,
}

/// Sums the insulin and pramlintide columns per day.
pub fn daily_totals(trace: &[TraceRow], days: u32) -> (Vec<f64>, Vec<f64>) {
    let mut ins = vec![0.0; days as usize];
    let mut pram = vec![0.0; days as usize];
    for row in trace {
        let d = ((row.t_min / MINUTES_PER_DAY).floor() as usize).min(days as usize - 1);
        ins[d] += row.insulin();
        pram[d] += row.pramlintide();
    }
    (ins, pram)
}

/// Runs one patient through the scenario under one strategy.
pub fn run_closed_loop(cfg: &SimConfig<'_>) -> Result<RunResult> {
    let s = &cfg.settings;
    s.validate()?;
    cfg.strategy.validate()?;
    let p = cfg.patient;
    p.validate(s.h)?;
    let h = s.h;
    let n_steps = cfg.steps();
    let days = cfg.duration_days();
    let streams = RngStreams::new(s.master_seed);
    let subject = cfg.subject;

    let run_draw = sample_variability(&mut streams.stream(purpose::CIRCADIAN, subject, 0, 0), &s.variability);
    let mut sensor = CgmSensor::new(
        streams.stream(purpose::SENSOR_NOISE, subject, 0, 0),
        s.sensor.noise_sd,
        s.sensor.ar_coefficient,
    )?;
    let mut controller = DobController::new(p.controller, p.g_b, p.u_b, p.cir, h)?;
    let mut plant = PlantState::new(p, h)?;
    let mut dosing = DosingState::default();
    let mut pram = PramlintideState::default();
    let mut meal = MealState::default();
    let mut meal_params: MealModelParams = p.meal;
    let pram_params = p.pramlintide;

    // meal schedule: (step, event, index within its day)
    let mut schedule = Vec::with_capacity(cfg.scenario.meals.len());
    let mut per_day = BTreeMap::<u32, u32>::new();
    for m in &cfg.scenario.meals {
        let idx = per_day.entry(m.day).or_insert(0);
        let step = (m.absolute_time() / h + 1e-9).floor() as usize;
        if step < n_steps {
            schedule.push((step, *m, *idx));
        }
        *idx += 1;
    }
    let mut next_meal = 0;

    let mut trace = Vec::with_capacity(n_steps + 1);
    let mut events = Vec::new();
    let mut was_saturated = false;
    let abort = |step: usize, e: Error| Error::Aborted {
        step,
        cause: Box::new(e),
    };

    for k in 0..=n_steps {
        let t = k as f64 * h;
        let g_true = plant.glucose();
        let cgm = sensor.sample(t, g_true).value;
        let eta = eta_factor(pram.peff.max(0.0), &pram_params).map_err(|e| abort(k, e))?;

        if k == n_steps {
            trace.push(TraceRow {
                t_min: t,
                g_true,
                g_cgm: cgm,
                u_basal: 0.0,
                u_infusion: 0.0,
                u_bolus: 0.0,
                p_infusion: 0.0,
                p_bolus: 0.0,
                ra: ra_of_appearance(&meal, &meal_params),
                eta,
                d_hat: controller.observer().d_hat(),
            });
            break;
        }

        // announcements
        let mut cho_hat = 0.0;
        let mut arriving = Vec::new();
        while next_meal < schedule.len() && schedule[next_meal].0 == k {
            let (_, m, idx) = schedule[next_meal];
            let mut est_rng = streams.stream(purpose::CHO_ESTIMATE, subject, m.day, idx);
            let estimate = misestimate_cho(m.grams, &mut est_rng, &s.misestimation).map_err(|e| abort(k, e))?;
            let announced = announcement_policy(cfg.strategy.mode, m.meal_type, estimate, cfg.strategy.sma_assumed_cho);
            cho_hat += announced;
            arriving.push((m, idx, announced));
            next_meal += 1;
        }

        let cmd = controller.controller_step(cgm, cho_hat).map_err(|e| abort(k, e))?;
        if cmd.fault {
            events.push(Event::ControllerFault { step: k });
        }
        if cmd.saturated && !was_saturated {
            events.push(Event::SaturationStart { step: k });
        }
        was_saturated = cmd.saturated;

        let signals = StepSignals {
            u_basal: cmd.u_basal,
            u_infusion: cmd.u_i,
            u_bolus: cmd.u_bolus,
            cgm,
            cho_hat,
            h,
        };
        let pc = strategy_step(&mut dosing, &cfg.strategy, &signals).map_err(|e| abort(k, e))?;

        // inject
        for (m, idx, announced) in arriving {
            let draw = sample_variability(
                &mut streams.stream(purpose::MEAL_VARIABILITY, subject, m.day, idx),
                &s.variability,
            );
            meal_params.k_abs = p.meal.k_abs * draw.k_abs_mult;
            meal_params.f = (p.meal.f * draw.f_mult).min(1.0);
            plant
                .set_insulin_time_constants(p.tau1_u * draw.tau1_u_mult, p.tau2_u * draw.tau2_u_mult)
                .map_err(|e| abort(k, e))?;
            meal.ingest(m.grams).map_err(|e| abort(k, e))?;
            events.push(Event::Meal {
                step: k,
                grams: m.grams,
                announced_g: announced,
            });
        }
        if cmd.u_bolus > 0.0 {
            events.push(Event::InsulinBolus {
                step: k,
                units: cmd.u_bolus,
            });
        }
        if pc.p_b > 0.0 {
            pram.add_bolus(
                convert_pram_dose(pc.p_b, &pram_params).map_err(|e| abort(k, e))?,
                &pram_params,
            );
            events.push(Event::PramlintideBolus { step: k, ug: pc.p_b });
        }

        // integrate pramlintide + meal over the step
        let p_rate = convert_pram_dose(pc.p_i, &pram_params).map_err(|e| abort(k, e))? / h;
        let d_active = meal.d_active;
        let mp = meal_params;
        let x0 = [
            pram.q1, pram.q2, pram.p1, pram.peff, meal.qsto1, meal.qsto2, meal.qgut, 0.0,
        ];
        let mut x = rk4_step(&x0, h, s.substeps, |_, v| {
            let ps = PramlintideState {
                q1: v[0],
                q2: v[1],
                p1: v[2],
                peff: v[3],
            };
            let dp = pram_derivatives(&ps, p_rate, &pram_params)?;
            let eta = eta_factor(v[3].max(0.0), &pram_params)?;
            let ms = MealState {
                qsto1: v[4],
                qsto2: v[5],
                qgut: v[6],
                d_active,
            };
            let dm = meal_derivatives(&ms, 0.0, eta, &mp)?;
            Ok([
                dp.q1,
                dp.q2,
                dp.p1,
                dp.peff,
                dm.qsto1,
                dm.qsto2,
                dm.qgut,
                ra_of_appearance(&ms, &mp),
            ])
        })
        .map_err(|e| abort(k, e))?;
        let ra_avg = x[7] / h;
        let undershoot = clamp_nonnegative(&mut x[..7]);
        if undershoot > 1e-6 {
            return Err(abort(
                k,
                Error::Integration(format!("state undershoot of {undershoot}")),
            ));
        }
        pram = PramlintideState {
            q1: x[0],
            q2: x[1],
            p1: x[2],
            peff: x[3],
        };
        meal = MealState {
            qsto1: x[4],
            qsto2: x[5],
            qgut: x[6],
            d_active,
        };

        trace.push(TraceRow {
            t_min: t,
            g_true,
            g_cgm: cgm,
            u_basal: cmd.u_basal,
            u_infusion: cmd.u_i,
            u_bolus: cmd.u_bolus,
            p_infusion: pc.p_i,
            p_bolus: pc.p_b,
            ra: ra_avg,
            eta,
            d_hat: cmd.d_hat,
        });

        let c = circadian_factor(t, run_draw.circadian_amplitude, run_draw.circadian_phase);
        plant
            .plant_step(cmd.u_total, ra_avg.max(0.0), c, h)
            .map_err(|e| abort(k, e))?;
    }

    let (daily_insulin, daily_pramlintide) = daily_totals(&trace, days);
    Ok(RunResult {
        patient_id: p.id.clone(),
        mode: cfg.strategy.mode,
        trace,
        daily_insulin,
        daily_pramlintide,
        events,
    })
}

/// Key of a batch result: (patient index, mode).
pub type RunKey = (usize, Mode);

/// Runs every (patient, strategy) pair, in parallel. Each patient keeps the
/// same stream keys under every strategy. A failed run is reported under its
/// key without affecting the others.
pub fn batch_run(
    cohort: &[PatientParams],
    strategies: &[StrategyConfig],
    scenario: &Scenario,
    settings: &RunSettings,
) -> Result<BTreeMap<RunKey, Result<RunResult>>> {
    if cohort.is_empty() || strategies.is_empty() {
        return Err(Error::domain("batch needs at least one patient and one strategy"));
    }
    let mut modes: Vec<Mode> = strategies.iter().map(|s| s.mode).collect();
    modes.sort();
    modes.dedup();
    if modes.len() != strategies.len() {
        return Err(Error::config("each mode may appear only once in a batch"));
    }
    let jobs: Vec<(usize, &StrategyConfig)> = (0..cohort.len())
        .flat_map(|i| strategies.iter().map(move |s| (i, s)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(i, strategy)| {
            let cfg = SimConfig {
                patient: &cohort[i],
                subject: i as u32,
                strategy: *strategy,
                scenario,
                settings: *settings,
            };
            ((i, strategy.mode), run_closed_loop(&cfg))
        })
        .collect())
}
