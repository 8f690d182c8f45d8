//! Pramlintide pharmacokinetics/pharmacodynamics and the gastric-emptying
//! meal model it attenuates.
//!
//! Subcutaneous kinetics use two depot compartments feeding plasma, and a
//! first-order effect compartment drives a Hill nonlinearity. The resulting
//! factor `eta` in `(1/(1+n), 1]` multiplies the gastric emptying rate of the
//! three-compartment meal model.
//!
//! All parameter values shipped with this crate are synthetic placeholders;
//! supply identified values through configuration for real studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kinetic and Hill parameters of the pramlintide model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PramlintideParams {
    /// Subcutaneous bioavailability, in (0, 1].
    #[serde(rename = "bioavailability")]
    pub a_s: f64,
    /// Depot 1 to plasma (1/min).
    #[serde(rename = "k_q1_per_min")]
    pub k_q1: f64,
    /// Depot 1 to depot 2 (1/min).
    #[serde(rename = "k_q12_per_min")]
    pub k_q12: f64,
    /// Depot 2 to plasma (1/min).
    #[serde(rename = "k_q2_per_min")]
    pub k_q2: f64,
    /// Plasma elimination (1/min).
    #[serde(rename = "k_e_per_min")]
    pub k_e: f64,
    /// Effect-compartment equilibration (1/min).
    #[serde(rename = "k_a_per_min")]
    pub k_a: f64,
    /// Plasma distribution volume (L).
    #[serde(rename = "plasma_volume_l")]
    pub v_p: f64,
    #[serde(rename = "hill_n")]
    pub n: f64,
    /// Half-effect mass (pmol).
    #[serde(rename = "hill_d_pmol")]
    pub d: f64,
    #[serde(rename = "hill_e")]
    pub e: f64,
    #[serde(rename = "molar_mass_g_per_mol")]
    pub molar_mass: f64,
}

impl PramlintideParams {
    /// Synthetic default set. A 30 µg bolus at mealtime delays the peak of
    /// the meal rate of appearance by several tens of minutes.
    pub const SYNTHETIC: PramlintideParams = PramlintideParams {
        a_s: 0.4,
        k_q1: 0.2,
        k_q12: 0.012,
        k_q2: 0.006,
        k_e: 0.1,
        k_a: 0.2,
        v_p: 5.0,
        n: 8.0,
        d: 100.0,
        e: 2.0,
        molar_mass: 3949.4,
    };

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("k_q1", self.k_q1),
            ("k_q12", self.k_q12),
            ("k_q2", self.k_q2),
            ("k_e", self.k_e),
            ("k_a", self.k_a),
        ];
        for (name, v) in rates {
            positive(name, v)?;
        }
        if !(self.a_s > 0.0 && self.a_s <= 1.0) {
            return Err(Error::config(format!(
                "pramlintide bioavailability must lie in (0, 1], got {}",
                self.a_s
            )));
        }
        positive("plasma_volume", self.v_p)?;
        positive("hill_n", self.n)?;
        positive("hill_d", self.d)?;
        positive("hill_e", self.e)?;
        positive("molar_mass", self.molar_mass)
    }
}

impl Default for PramlintideParams {
    fn default() -> Self {
        Self::SYNTHETIC
    }
}

/// Compartment masses of the pramlintide model (pmol).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PramlintideState {
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub peff: f64,
}

impl PramlintideState {
    pub fn to_array(self) -> [f64; 4] {
        [self.q1, self.q2, self.p1, self.peff]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            q1: a[0],
            q2: a[1],
            p1: a[2],
            peff: a[3],
        }
    }

    /// Plasma concentration (pmol/L).
    pub fn plasma_concentration(&self, params: &PramlintideParams) -> f64 {
        self.p1 / params.v_p
    }

    /// Instantaneous subcutaneous bolus: the bioavailable part lands in depot 1.
    pub fn add_bolus(&mut self, dose_pmol: f64, params: &PramlintideParams) {
        self.q1 += params.a_s * dose_pmol;
    }
}

/// Converts a pramlintide dose from µg to pmol.
pub fn convert_pram_dose(dose_ug: f64, params: &PramlintideParams) -> Result<f64> {
    if !(dose_ug >= 0.0) {
        return Err(Error::domain(format!(
            "pramlintide dose must be >= 0 µg, got {dose_ug}"
        )));
    }
    Ok(dose_ug * 1e6 / params.molar_mass)
}

/// Hill response `n * Peff^e / (d^e + Peff^e)`.
pub fn hill_h(peff: f64, params: &PramlintideParams) -> Result<f64> {
    if !(peff >= 0.0) {
        return Err(Error::domain(format!("effect mass must be >= 0 pmol, got {peff}")));
    }
    if peff == 0.0 {
        return Ok(0.0);
    }
    Ok(params.n / (1.0 + (params.d / peff).powf(params.e)))
}

/// Gastric-emptying attenuation `1 / (1 + h(Peff))`.
pub fn eta_factor(peff: f64, params: &PramlintideParams) -> Result<f64> {
    Ok(1.0 / (1.0 + hill_h(peff, params)?))
}

/// Right-hand side of the pramlintide compartment model for a continuous
/// subcutaneous infusion `p_infusion` (pmol/min).
pub fn pram_derivatives(
    state: &PramlintideState,
    p_infusion: f64,
    params: &PramlintideParams,
) -> Result<PramlintideState> {
    if !(p_infusion >= 0.0) {
        return Err(Error::domain(format!(
            "pramlintide infusion must be >= 0 pmol/min, got {p_infusion}"
        )));
    }
    let p = params;
    Ok(PramlintideState {
        q1: p.a_s * p_infusion - (p.k_q1 + p.k_q12) * state.q1,
        q2: p.k_q12 * state.q1 - p.k_q2 * state.q2,
        p1: p.k_q1 * state.q1 + p.k_q2 * state.q2 - p.k_e * state.p1,
        peff: p.k_a * (state.p1 - state.peff),
    })
}

/// Gastric emptying and absorption parameters of the meal model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MealModelParams {
    #[serde(rename = "k_g21_per_min")]
    pub k_g21: f64,
    #[serde(rename = "k_abs_per_min")]
    pub k_abs: f64,
    #[serde(rename = "k_min_per_min")]
    pub k_min: f64,
    #[serde(rename = "k_max_per_min")]
    pub k_max: f64,
    /// Dose fraction where emptying has slowed halfway.
    #[serde(rename = "b_fraction")]
    pub b: f64,
    /// Dose fraction where emptying has recovered halfway.
    #[serde(rename = "c_fraction")]
    pub c: f64,
    /// Fraction of absorbed glucose appearing in plasma.
    #[serde(rename = "f_fraction")]
    pub f: f64,
    #[serde(rename = "body_weight_kg")]
    pub bw: f64,
}

impl MealModelParams {
    /// Nominal adult values of the classic gastro-intestinal glucose model.
    pub const NOMINAL: MealModelParams = MealModelParams {
        k_g21: 0.0558,
        k_abs: 0.057,
        k_min: 0.0080,
        k_max: 0.0558,
        b: 0.82,
        c: 0.010,
        f: 0.90,
        bw: 78.0,
    };

    pub fn validate(&self) -> Result<()> {
        positive("k_g21", self.k_g21)?;
        positive("k_abs", self.k_abs)?;
        positive("k_min", self.k_min)?;
        if self.k_max < self.k_min {
            return Err(Error::config(format!(
                "k_max ({}) must be >= k_min ({})",
                self.k_max, self.k_min
            )));
        }
        for (name, v) in [("b", self.b), ("c", self.c)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(format!("meal {name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.f > 0.0 && self.f <= 1.0) {
            return Err(Error::config(format!("meal f must lie in (0, 1], got {}", self.f)));
        }
        positive("body_weight", self.bw)
    }
}

impl Default for MealModelParams {
    fn default() -> Self {
        Self::NOMINAL
    }
}

/// Glucose masses of the meal model (mg) plus the dose that shapes emptying.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MealState {
    pub qsto1: f64,
    pub qsto2: f64,
    pub qgut: f64,
    /// Carbohydrate mass governing the emptying curve (mg).
    pub d_active: f64,
}

impl MealState {
    pub fn qsto(&self) -> f64 {
        self.qsto1 + self.qsto2
    }

    /// Loads an ingested meal into the stomach. Anything still in the stomach
    /// is pooled with the new meal to form the governing dose.
    pub fn ingest(&mut self, grams: f64) -> Result<()> {
        if !(grams > 0.0) {
            return Err(Error::domain(format!("meal must be > 0 g, got {grams}")));
        }
        let mg = grams * 1000.0;
        self.d_active = self.qsto() + mg;
        self.qsto1 += mg;
        Ok(())
    }
}

/// Emptying rate constant (1/min) for stomach content `qsto` out of a meal `d` (mg).
pub fn kempt_rate(qsto: f64, d: f64, params: &MealModelParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::domain(format!("governing meal mass must be > 0 mg, got {d}")));
    }
    if !(qsto >= 0.0) {
        return Err(Error::domain(format!("stomach content must be >= 0 mg, got {qsto}")));
    }
    let p = params;
    let alpha = 5.0 / (2.0 * d * (1.0 - p.b));
    let beta = 5.0 / (2.0 * d * p.c);
    let shape = (alpha * (qsto - p.b * d)).tanh() - (beta * (qsto - p.c * d)).tanh() + 2.0;
    Ok(p.k_min + (p.k_max - p.k_min) / 2.0 * shape)
}

/// Meal model right-hand side with emptying attenuated by `eta`.
/// `u_g` is the continuous ingestion rate (mg/min); meals given as impulses
/// go through [`MealState::ingest`] instead.
pub fn meal_derivatives(state: &MealState, u_g: f64, eta: f64, params: &MealModelParams) -> Result<MealState> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::domain(format!("eta must lie in (0, 1], got {eta}")));
    }
    // An empty stomach never evaluates kempt, so D may be unset there.
    let emptying = if state.qsto2 > 0.0 {
        eta * kempt_rate(state.qsto().max(0.0), state.d_active, params)? * state.qsto2
    } else {
        0.0
    };
    Ok(MealState {
        qsto1: u_g - params.k_g21 * state.qsto1,
        qsto2: params.k_g21 * state.qsto1 - emptying,
        qgut: emptying - params.k_abs * state.qgut,
        d_active: 0.0,
    })
}

/// Meal glucose rate of appearance (mg/kg/min).
pub fn ra_of_appearance(state: &MealState, params: &MealModelParams) -> f64 {
    params.f * params.k_abs * state.qgut / params.bw
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be > 0, got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::rk4_step;

    const P: PramlintideParams = PramlintideParams::SYNTHETIC;

    fn meal_test_params() -> MealModelParams {
        MealModelParams {
            k_g21: 0.0558,
            k_abs: 0.02,
            k_min: 0.008,
            k_max: 0.056,
            b: 0.82,
            c: 0.01,
            f: 0.9,
            bw: 70.0,
        }
    }

    #[test]
    fn dose_conversion() {
        let p = PramlintideParams {
            molar_mass: 3949.4,
            ..P
        };
        assert_eq!(convert_pram_dose(0.0, &p).unwrap(), 0.0);
        // 1e6 / 3949.4 and 30e6 / 3949.4
        assert!((convert_pram_dose(1.0, &p).unwrap() - 253.203_018_179_976_7).abs() < 1e-9);
        assert!((convert_pram_dose(30.0, &p).unwrap() - 7_596.090_545_399_301).abs() < 1e-8);
        assert!(convert_pram_dose(-1.0, &p).is_err());
    }

    #[test]
    fn hill_values() {
        assert_eq!(hill_h(0.0, &P).unwrap(), 0.0);
        assert!((hill_h(P.d, &P).unwrap() - P.n / 2.0).abs() < 1e-15);
        let p = PramlintideParams { n: 3.0, e: 2.0, ..P };
        let direct = 3.0 * 100.0 / 101.0;
        assert!((hill_h(10.0 * p.d, &p).unwrap() - direct).abs() < 1e-12);
        assert!((direct - 2.9703).abs() < 1e-4);
        assert!(hill_h(-1.0, &P).is_err());
    }

    #[test]
    fn eta_values_and_limit() {
        assert_eq!(eta_factor(0.0, &P).unwrap(), 1.0);
        assert!((eta_factor(P.d, &P).unwrap() - 2.0 / (2.0 + P.n)).abs() < 1e-12);
        let far = eta_factor(1e12 * P.d, &P).unwrap();
        assert!((far - 1.0 / (1.0 + P.n)).abs() < 1e-9);
        assert!(eta_factor(-0.5, &P).is_err());
    }

    #[test]
    fn pram_derivatives_at_rest_and_steady_state() {
        let zero = pram_derivatives(&PramlintideState::default(), 0.0, &P).unwrap();
        assert_eq!(zero, PramlintideState::default());

        let pbar = 40.0;
        let q1 = P.a_s * pbar / (P.k_q1 + P.k_q12);
        let q2 = P.k_q12 * q1 / P.k_q2;
        let p1 = P.a_s * pbar / P.k_e;
        let ss = PramlintideState { q1, q2, p1, peff: p1 };
        let d = pram_derivatives(&ss, pbar, &P).unwrap();
        for v in d.to_array() {
            assert!(v.abs() < 1e-12, "{d:?}");
        }
        assert!(pram_derivatives(&ss, -1.0, &P).is_err());
    }

    #[test]
    fn bolus_goes_through_bioavailability() {
        let mut s = PramlintideState::default();
        s.add_bolus(1000.0, &P);
        assert_eq!(s.q1, P.a_s * 1000.0);
    }

    #[test]
    fn kempt_limits() {
        let p = meal_test_params();
        let d = 50_000.0;
        let big = kempt_rate(1e9 * d, d, &p).unwrap();
        assert!((big - p.k_max).abs() < 1e-12);

        let flat = MealModelParams {
            k_min: 0.03,
            k_max: 0.03,
            ..p
        };
        for q in [0.0, 100.0, 25_000.0, 49_000.0] {
            assert_eq!(kempt_rate(q, d, &flat).unwrap(), 0.03);
        }
        assert!(kempt_rate(10.0, 0.0, &p).is_err());
    }

    #[test]
    fn kempt_midpoint_direct_formula() {
        let p = meal_test_params();
        let d: f64 = 50_000.0;
        let q = 0.5 * d;
        let alpha = 5.0 / (2.0 * d * (1.0 - 0.82));
        let beta = 5.0 / (2.0 * d * 0.01);
        let want =
            0.008 + (0.056 - 0.008) / 2.0 * ((alpha * (q - 0.82 * d)).tanh() - (beta * (q - 0.01 * d)).tanh() + 2.0);
        assert!((kempt_rate(q, d, &p).unwrap() - want).abs() < 1e-15);
        // the stomach is in the slow band around half emptying
        assert!(want < 0.02);
    }

    #[test]
    fn kempt_stays_in_band() {
        let p = meal_test_params();
        let d = 80_000.0;
        for i in 0..=200 {
            let q = d * i as f64 / 200.0;
            let k = kempt_rate(q, d, &p).unwrap();
            assert!(k > p.k_min && k < 2.0 * p.k_max - p.k_min);
        }
    }

    #[test]
    fn meal_derivatives_identities() {
        let p = meal_test_params();
        let s = MealState {
            qsto1: 2000.0,
            qsto2: 30_000.0,
            qgut: 1500.0,
            d_active: 50_000.0,
        };
        let d = meal_derivatives(&s, 0.0, 1.0, &p).unwrap();
        let k = kempt_rate(s.qsto(), s.d_active, &p).unwrap();
        assert_eq!(d.qsto1, -p.k_g21 * s.qsto1);
        assert_eq!(d.qsto2, p.k_g21 * s.qsto1 - k * s.qsto2);
        assert_eq!(d.qgut, k * s.qsto2 - p.k_abs * s.qgut);

        let zero = meal_derivatives(&MealState::default(), 0.0, 0.7, &p).unwrap();
        assert_eq!(zero, MealState::default());
        assert!(meal_derivatives(&s, 0.0, 0.0, &p).is_err());
        assert!(meal_derivatives(&s, 0.0, 1.2, &p).is_err());
    }

    #[test]
    fn ra_direct_arithmetic() {
        let p = meal_test_params();
        assert_eq!(ra_of_appearance(&MealState::default(), &p), 0.0);
        let s = MealState {
            qgut: 1000.0,
            ..Default::default()
        };
        // 0.9 * 0.02 * 1000 / 70
        assert!((ra_of_appearance(&s, &p) - 0.257_142_857_142_857_1).abs() < 1e-12);
    }

    #[test]
    fn overlapping_meal_pools_stomach() {
        let mut s = MealState::default();
        s.ingest(50.0).unwrap();
        s.qsto1 = 5000.0;
        s.qsto2 = 7000.0;
        s.ingest(20.0).unwrap();
        assert_eq!(s.d_active, 12_000.0 + 20_000.0);
        assert_eq!(s.qsto1, 25_000.0);
        assert!(s.ingest(0.0).is_err());
    }

    /// Integrates an isolated meal with fixed eta and returns the absorbed mass.
    fn absorbed_after(eta: f64, t_end: f64) -> (f64, f64) {
        let p = meal_test_params();
        let mut s = MealState::default();
        s.ingest(50.0).unwrap();
        let mut x = [s.qsto1, s.qsto2, s.qgut, 0.0];
        let mut t = 0.0;
        while t < t_end {
            x = rk4_step(&x, 5.0, 5, |_, v| {
                let st = MealState {
                    qsto1: v[0],
                    qsto2: v[1],
                    qgut: v[2],
                    d_active: s.d_active,
                };
                let d = meal_derivatives(&st, 0.0, eta, &p)?;
                Ok([d.qsto1, d.qsto2, d.qgut, p.k_abs * v[2]])
            })
            .unwrap();
            t += 5.0;
        }
        (x[3], s.d_active)
    }

    #[test]
    fn full_drainage_absorbs_the_meal() {
        for eta in [1.0, 0.8, 0.5] {
            let (absorbed, d) = absorbed_after(eta, 3000.0);
            assert!((absorbed - d).abs() / d < 0.005, "eta {eta}: {absorbed} vs {d}");
        }
    }
}
