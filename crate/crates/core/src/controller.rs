//! Disturbance-observer insulin controller.
//!
//! The meal disturbance is estimated from the glucose deviation and the
//! insulin already delivered,
//!
//! ```text
//! d_hat = F Gd^-1 [ y + Gu u ],   u_I = gamma * d_hat,   y = G - G_b
//! ```
//!
//! with `F = 1/(theta s + 1)^3` and nominal channels
//! `G_i = K_i / ((tau1 s + 1)^2 (tau2 s + 1)) e^(-delay s)`. Only the rational
//! part of `Gd` is inverted, so the estimate lags the true disturbance by
//! the input delay. Both observer filters are discretized with the bilinear
//! transform; the insulin delay is an integer sample shift.
//!
//! Announced meals are handled without interaction: the bolus is fed to the
//! observer's insulin channel together with the disturbance it is meant to
//! cover (`bolus / gamma` grams), so the feedback path only reacts to the part
//! of the meal the bolus does not account for.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{ContinuousTf, DiscreteTf};
use crate::patient::delay_steps;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    /// Controller gain (U per g of estimated disturbance).
    #[serde(rename = "gamma_u_per_g")]
    pub gamma: f64,
    /// Observer filter time constant.
    #[serde(rename = "theta_min")]
    pub theta: f64,
    #[serde(rename = "meal_tau1_min")]
    pub tau1_d: f64,
    #[serde(rename = "meal_tau2_min")]
    pub tau2_d: f64,
    /// Nominal glucose rise per sustained g/step of disturbance.
    #[serde(rename = "meal_gain_mgdl_per_g")]
    pub k_d: f64,
    #[serde(rename = "insulin_tau1_min")]
    pub tau1_u: f64,
    #[serde(rename = "insulin_tau2_min")]
    pub tau2_u: f64,
    #[serde(rename = "insulin_gain_mgdl_per_u")]
    pub k_u: f64,
    #[serde(rename = "delay_min")]
    pub delay: f64,
    /// Prandial bolus safety factor.
    #[serde(rename = "bolus_safety_factor")]
    pub nu: f64,
    /// Allow the incremental command to go down to `-u_b` (pump suspension);
    /// otherwise it is clamped at zero.
    #[serde(rename = "allow_suspension", default = "default_true")]
    pub allow_suspension: bool,
}

fn default_true() -> bool {
    true
}

impl ControllerParams {
    pub fn validate(&self, h: f64) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("theta", self.theta),
            ("meal tau1", self.tau1_d),
            ("meal tau2", self.tau2_d),
            ("meal gain", self.k_d),
            ("insulin tau1", self.tau1_u),
            ("insulin tau2", self.tau2_u),
            ("insulin gain", self.k_u),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("controller {name} must be > 0, got {v}")));
            }
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::config(format!(
                "bolus safety factor must lie in (0, 1], got {}",
                self.nu
            )));
        }
        if delay_steps(self.delay, h)? == 0 {
            return Err(Error::config("controller delay must be at least one sampling period"));
        }
        Ok(())
    }

    /// `F(s) = 1 / (theta s + 1)^3`
    pub fn filter(&self) -> ContinuousTf {
        ContinuousTf::new(vec![1.0], crate::lti::lag_poly(self.theta, 3))
    }

    /// Nominal meal channel without its delay.
    pub fn meal_model(&self) -> ContinuousTf {
        ContinuousTf::third_order_lag(self.k_d, self.tau1_d, self.tau2_d)
    }

    /// Nominal insulin channel without its delay.
    pub fn insulin_model(&self) -> ContinuousTf {
        ContinuousTf::third_order_lag(self.k_u, self.tau1_u, self.tau2_u)
    }
}

/// Discretized observer filters and their state.
#[derive(Debug, Clone)]
pub struct ObserverState {
    /// `F Gd^-1` acting on the glucose deviation.
    filter_y: DiscreteTf,
    /// `F Gd^-1 Gu` acting on the delayed applied insulin.
    filter_u: DiscreteTf,
    /// `F` acting on the delayed announced disturbance.
    filter_ann: DiscreteTf,
    insulin_history: VecDeque<f64>,
    announced_history: VecDeque<f64>,
    d_hat: f64,
}

impl ObserverState {
    pub fn d_hat(&self) -> f64 {
        self.d_hat
    }

    pub fn filter_y(&self) -> &DiscreteTf {
        &self.filter_y
    }

    pub fn filter_u(&self) -> &DiscreteTf {
        &self.filter_u
    }

    fn reset(&mut self) {
        self.filter_y.reset();
        self.filter_u.reset();
        self.filter_ann.reset();
        self.insulin_history.iter_mut().for_each(|v| *v = 0.0);
        self.announced_history.iter_mut().for_each(|v| *v = 0.0);
        self.d_hat = 0.0;
    }
}

/// Builds the discrete observer for sampling period `h`.
pub fn build_discrete_observer(params: &ControllerParams, h: f64) -> Result<ObserverState> {
    params.validate(h)?;
    let f = params.filter();
    let inv_d = params.meal_model().inverse();
    let filter_y = f.series(&inv_d).bilinear(h)?;
    let filter_u = f.series(&inv_d).series(&params.insulin_model()).bilinear(h)?;
    let filter_ann = f.bilinear(h)?;
    let n = delay_steps(params.delay, h)?;
    Ok(ObserverState {
        filter_y,
        filter_u,
        filter_ann,
        insulin_history: std::iter::repeat_n(0.0, n).collect(),
        announced_history: std::iter::repeat_n(0.0, n).collect(),
        d_hat: 0.0,
    })
}

/// Output of one controller step (U per sampling step).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InsulinCommand {
    /// Incremental infusion after saturation.
    pub u_i: f64,
    /// Prandial bolus.
    pub u_bolus: f64,
    pub u_basal: f64,
    pub u_total: f64,
    pub d_hat: f64,
    pub saturated: bool,
    pub fault: bool,
}

/// Prandial bolus `nu * CHO / CIR` (U).
pub fn prandial_bolus(cho_hat: f64, cir: f64, nu: f64) -> Result<f64> {
    if !(cir > 0.0) {
        return Err(Error::config(format!("CIR must be > 0 g/U, got {cir}")));
    }
    if !(cho_hat >= 0.0) {
        return Err(Error::domain(format!(
            "announced carbohydrates must be >= 0 g, got {cho_hat}"
        )));
    }
    Ok(nu * cho_hat / cir)
}

/// Closed-loop insulin controller for one patient.
#[derive(Debug, Clone)]
pub struct DobController {
    params: ControllerParams,
    g_b: f64,
    u_b: f64,
    cir: f64,
    observer: ObserverState,
}

impl DobController {
    pub fn new(params: ControllerParams, g_b: f64, u_b: f64, cir: f64, h: f64) -> Result<Self> {
        if !(cir > 0.0) {
            return Err(Error::config(format!("CIR must be > 0 g/U, got {cir}")));
        }
        Ok(Self {
            observer: build_discrete_observer(&params, h)?,
            params,
            g_b,
            u_b,
            cir,
        })
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    pub fn observer(&self) -> &ObserverState {
        &self.observer
    }

    /// One control step from a CGM reading and the announced carbohydrates
    /// of a meal starting in this step (0 when nothing is announced).
    pub fn controller_step(&mut self, cgm: f64, cho_hat: f64) -> Result<InsulinCommand> {
        if !cgm.is_finite() {
            return Err(Error::Controller(format!("non-finite CGM value {cgm}")));
        }
        let bolus = if cho_hat > 0.0 {
            prandial_bolus(cho_hat, self.cir, self.params.nu)?
        } else {
            0.0
        };
        let obs = &mut self.observer;
        let y = cgm - self.g_b;
        let u_delayed = obs.insulin_history.front().copied().unwrap_or(0.0);
        let ann_delayed = obs.announced_history.front().copied().unwrap_or(0.0);
        let d_hat = obs.filter_y.step(y) + obs.filter_u.step(u_delayed) - obs.filter_ann.step(ann_delayed);

        if !d_hat.is_finite() {
            obs.reset();
            return Ok(InsulinCommand {
                u_i: 0.0,
                u_bolus: 0.0,
                u_basal: self.u_b,
                u_total: self.u_b,
                d_hat: 0.0,
                saturated: false,
                fault: true,
            });
        }

        let raw = self.params.gamma * d_hat;
        let floor = if self.params.allow_suspension { -self.u_b } else { 0.0 };
        let u_i = raw.max(floor);
        let covered = bolus / self.params.gamma;

        obs.insulin_history.pop_front();
        obs.insulin_history.push_back(u_i + bolus);
        obs.announced_history.pop_front();
        obs.announced_history.push_back(covered);
        obs.d_hat = d_hat;

        Ok(InsulinCommand {
            u_i,
            u_bolus: bolus,
            u_basal: self.u_b,
            u_total: (self.u_b + u_i + bolus).max(0.0),
            d_hat,
            saturated: u_i > raw,
            fault: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: f64 = 5.0;

    fn params() -> ControllerParams {
        ControllerParams {
            gamma: 0.08,
            theta: 15.0,
            tau1_d: 20.0,
            tau2_d: 40.0,
            k_d: 3.0,
            tau1_u: 40.0,
            tau2_u: 60.0,
            k_u: 30.0,
            delay: 15.0,
            nu: 0.8,
            allow_suspension: true,
        }
    }

    #[test]
    fn filter_orders_and_dc_gains() {
        let p = params();
        let obs = build_discrete_observer(&p, H).unwrap();
        assert_eq!(obs.filter_y().order(), 3);
        assert_eq!(obs.filter_u().order(), 6);
        assert!((obs.filter_y().dc_gain() - 1.0 / p.k_d).abs() < 1e-9);
        assert!((obs.filter_u().dc_gain() / (p.k_u / p.k_d) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn discrete_matches_continuous_at_low_frequency() {
        let p = params();
        let obs = build_discrete_observer(&p, H).unwrap();
        let w = 0.01;
        let inv_d = p.meal_model().inverse();
        let cy = p.filter().series(&inv_d).freq_response(w);
        let cu = p.filter().series(&inv_d).series(&p.insulin_model()).freq_response(w);
        let dy = obs.filter_y().freq_response(w, H);
        let du = obs.filter_u().freq_response(w, H);
        assert!((dy - cy).norm() / cy.norm() < 0.01);
        assert!((du - cu).norm() / cu.norm() < 0.01);
    }

    #[test]
    fn slow_filter_disables_estimator() {
        let p = ControllerParams { theta: 1e7, ..params() };
        let mut c = DobController::new(p, 120.0, 0.1, 10.0, H).unwrap();
        let mut last = 0.0;
        for _ in 0..200 {
            last = c.controller_step(220.0, 0.0).unwrap().d_hat;
        }
        assert!(last.abs() < 1e-6, "{last}");
    }

    #[test]
    fn rest_gives_basal_only() {
        let mut c = DobController::new(params(), 120.0, 0.1, 10.0, H).unwrap();
        for _ in 0..5000 {
            let cmd = c.controller_step(120.0, 0.0).unwrap();
            assert_eq!(cmd.d_hat, 0.0);
            assert_eq!(cmd.u_i, 0.0);
            assert_eq!(cmd.u_total, 0.1);
        }
    }

    #[test]
    fn saturation_clamps_to_suspension() {
        let p = params();
        let u_b = 0.1;
        let mut c = DobController::new(p, 120.0, u_b, 10.0, H).unwrap();
        // a deep glucose drop drives gamma * d_hat well below -u_b
        let mut cmd = c.controller_step(120.0, 0.0).unwrap();
        for _ in 0..20 {
            cmd = c.controller_step(40.0, 0.0).unwrap();
        }
        assert!(p.gamma * cmd.d_hat < -2.0 * u_b);
        assert_eq!(cmd.u_i, -u_b);
        assert_eq!(cmd.u_total, 0.0);
        assert!(cmd.saturated);

        let no_suspend = ControllerParams {
            allow_suspension: false,
            ..p
        };
        let mut c = DobController::new(no_suspend, 120.0, u_b, 10.0, H).unwrap();
        for _ in 0..20 {
            cmd = c.controller_step(40.0, 0.0).unwrap();
        }
        assert_eq!(cmd.u_i, 0.0);
        assert_eq!(cmd.u_total, u_b);
    }

    #[test]
    fn prandial_bolus_formula() {
        assert_eq!(prandial_bolus(0.0, 10.0, 0.8).unwrap(), 0.0);
        assert!((prandial_bolus(50.0, 10.0, 0.8).unwrap() - 4.0).abs() < 1e-15);
        assert!(prandial_bolus(50.0, 0.0, 0.8).is_err());
    }

    #[test]
    fn linear_below_saturation() {
        let run = |scale: f64| -> Vec<f64> {
            let mut c = DobController::new(params(), 120.0, 0.1, 10.0, H).unwrap();
            (0..120)
                .map(|k| {
                    let y = scale * 30.0 * (1.0 - (-(k as f64) / 10.0).exp());
                    c.controller_step(120.0 + y, 0.0).unwrap().d_hat
                })
                .collect()
        };
        let one = run(1.0);
        let two = run(2.0);
        for (a, b) in one.iter().zip(&two) {
            assert!((2.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn matched_plant_recovers_constant_disturbance() {
        // plant built from the nominal channels themselves
        let p = params();
        let mut gd = p.meal_model().bilinear(H).unwrap();
        let mut gu = p.insulin_model().bilinear(H).unwrap();
        let n = 3;
        let mut d_line = VecDeque::from(vec![0.0; n]);
        let mut u_line = VecDeque::from(vec![0.0; n]);
        let g_b = 120.0;
        let mut c = DobController::new(p, g_b, 0.1, 10.0, H).unwrap();
        let mut y = 0.0;
        let mut cmd = c.controller_step(g_b, 0.0).unwrap();
        for _ in 0..3000 {
            d_line.push_back(1.0);
            u_line.push_back(cmd.u_i);
            let d = d_line.pop_front().unwrap();
            let u = u_line.pop_front().unwrap();
            y = gd.step(d) - gu.step(u);
            cmd = c.controller_step(g_b + y, 0.0).unwrap();
        }
        assert!((cmd.d_hat - 1.0).abs() < 0.01, "{}", cmd.d_hat);
        assert!((cmd.u_i - p.gamma * cmd.d_hat).abs() <= 0.01 * cmd.u_i.abs());
        assert!(y.is_finite());
    }

    #[test]
    fn announced_meal_is_not_redosed() {
        // an announced disturbance exactly matching the bolus coverage leaves
        // the feedback silent once the observer has seen it
        let p = params();
        let mut gd = p.meal_model().bilinear(H).unwrap();
        let mut gu = p.insulin_model().bilinear(H).unwrap();
        let n = 3;
        let mut d_line = VecDeque::from(vec![0.0; n]);
        let mut u_line = VecDeque::from(vec![0.0; n]);
        let cir = 10.0;
        let g_b = 120.0;
        let mut c = DobController::new(p, g_b, 0.1, cir, H).unwrap();
        let cho = 50.0;
        let covered = prandial_bolus(cho, cir, p.nu).unwrap() / p.gamma;
        let mut total_feedback = 0.0;
        let mut cmd = c.controller_step(g_b, cho).unwrap();
        let mut meal = covered;
        for _ in 0..3000 {
            d_line.push_back(meal);
            meal = 0.0;
            u_line.push_back(cmd.u_i + cmd.u_bolus);
            let d = d_line.pop_front().unwrap();
            let u = u_line.pop_front().unwrap();
            let y = gd.step(d) - gu.step(u);
            cmd = c.controller_step(g_b + y, 0.0).unwrap();
            total_feedback += cmd.u_i;
        }
        assert!(total_feedback.abs() < 1e-6, "{total_feedback}");
    }

    #[test]
    fn non_finite_cgm_is_an_error() {
        let mut c = DobController::new(params(), 120.0, 0.1, 10.0, H).unwrap();
        assert!(c.controller_step(f64::NAN, 0.0).is_err());
    }
}
