//! Linear time-invariant building blocks: rational transfer functions in
//! `s`, their bilinear discretization, and exactly discretized lag cascades.
//!
//! Polynomials are stored in ascending powers (`p[0] + p[1] x + ...`).

use nalgebra::{Complex, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Product of two polynomials.
pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `(tau s + 1)^power` in ascending powers of `s`.
pub fn lag_poly(tau: f64, power: usize) -> Vec<f64> {
    (0..power).fold(vec![1.0], |acc, _| poly_mul(&acc, &[1.0, tau]))
}

type Complex64 = Complex<f64>;

fn poly_eval(p: &[f64], x: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * x + c)
}

/// Continuous-time rational transfer function `num(s) / den(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousTf {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

impl ContinuousTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Self {
        Self { num, den }
    }

    /// `gain / ((tau1 s + 1)^2 (tau2 s + 1))`
    pub fn third_order_lag(gain: f64, tau1: f64, tau2: f64) -> Self {
        Self::new(vec![gain], poly_mul(&lag_poly(tau1, 2), &lag_poly(tau2, 1)))
    }

    pub fn series(&self, other: &ContinuousTf) -> Self {
        Self::new(poly_mul(&self.num, &other.num), poly_mul(&self.den, &other.den))
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.den.clone(), self.num.clone())
    }

    pub fn order(&self) -> usize {
        self.num.len().max(self.den.len()).saturating_sub(1)
    }

    pub fn dc_gain(&self) -> f64 {
        self.num[0] / self.den[0]
    }

    pub fn freq_response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        poly_eval(&self.num, s) / poly_eval(&self.den, s)
    }

    /// Tustin discretization at sampling period `h`.
    pub fn bilinear(&self, h: f64) -> Result<DiscreteTf> {
        if !(h > 0.0) {
            return Err(Error::config(format!("sampling period must be > 0, got {h}")));
        }
        if trim(&self.num).len() > trim(&self.den).len() {
            return Err(Error::config("improper transfer function cannot be discretized"));
        }
        let n = self.order();
        let k = 2.0 / h;
        let map = |p: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n + 1];
            for (i, c) in p.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                // s^i -> k^i (1 - z^-1)^i (1 + z^-1)^(n - i)
                let mut term = vec![c * k.powi(i as i32)];
                for _ in 0..i {
                    term = poly_mul(&term, &[1.0, -1.0]);
                }
                for _ in i..n {
                    term = poly_mul(&term, &[1.0, 1.0]);
                }
                for (j, t) in term.iter().enumerate() {
                    out[j] += t;
                }
            }
            out
        };
        let mut b = map(&self.num);
        let mut a = map(&self.den);
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let at_nyquist: f64 = a
            .iter()
            .enumerate()
            .map(|(i, v)| if i % 2 == 0 { *v } else { -*v })
            .sum();
        if at_nyquist.abs() <= 1e-12 * scale {
            return Err(Error::config(
                "bilinear transform places a pole at the Nyquist frequency",
            ));
        }
        if a[0].abs() <= 1e-12 * scale {
            return Err(Error::config("continuous pole at s = 2/h has no discrete image"));
        }
        let a0 = a[0];
        b.iter_mut().for_each(|v| *v /= a0);
        a.iter_mut().for_each(|v| *v /= a0);
        Ok(DiscreteTf::new(b, a))
    }
}

fn trim(p: &[f64]) -> &[f64] {
    let end = p.iter().rposition(|c| *c != 0.0).map_or(0, |i| i + 1);
    &p[..end]
}

/// Discrete transfer function in `z^-1`, realized in transposed direct form II.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteTf {
    b: Vec<f64>,
    a: Vec<f64>,
    state: Vec<f64>,
}

impl DiscreteTf {
    /// `b`, `a` in ascending powers of `z^-1`; `a[0]` must be 1.
    pub fn new(mut b: Vec<f64>, mut a: Vec<f64>) -> Self {
        let n = b.len().max(a.len());
        b.resize(n, 0.0);
        a.resize(n, 0.0);
        Self {
            b,
            a,
            state: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn numerator(&self) -> &[f64] {
        &self.b
    }

    pub fn denominator(&self) -> &[f64] {
        &self.a
    }

    pub fn order(&self) -> usize {
        self.state.len()
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0.0);
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.state.first().copied().unwrap_or(0.0);
        let n = self.state.len();
        for i in 0..n {
            let next = if i + 1 < n { self.state[i + 1] } else { 0.0 };
            self.state[i] = self.b[i + 1] * x - self.a[i + 1] * y + next;
        }
        y
    }

    pub fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Response at angular frequency `omega` (rad per time unit) for period `h`.
    pub fn freq_response(&self, omega: f64, h: f64) -> Complex64 {
        let zinv = Complex64::from_polar(1.0, -omega * h);
        poly_eval(&self.b, zinv) / poly_eval(&self.a, zinv)
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

/// `gain / ((tau1 s + 1)^2 (tau2 s + 1))` realized as three first-order lags
/// in series and discretized exactly under a zero-order hold.
#[derive(Debug, Clone, PartialEq)]
pub struct LagCascade {
    gain: f64,
    tau1: f64,
    tau2: f64,
    h: f64,
    ad: nalgebra::Matrix3<f64>,
    bd: Vector3<f64>,
    x: Vector3<f64>,
}

impl LagCascade {
    pub fn new(gain: f64, tau1: f64, tau2: f64, h: f64) -> Result<Self> {
        let mut c = Self {
            gain,
            tau1,
            tau2,
            h,
            ad: nalgebra::Matrix3::identity(),
            bd: Vector3::zeros(),
            x: Vector3::zeros(),
        };
        c.set_time_constants(tau1, tau2)?;
        Ok(c)
    }

    /// Re-discretizes for new time constants, keeping the internal state.
    pub fn set_time_constants(&mut self, tau1: f64, tau2: f64) -> Result<()> {
        if !(tau1 > 0.0 && tau2 > 0.0 && tau1.is_finite() && tau2.is_finite()) {
            return Err(Error::config(format!(
                "lag time constants must be > 0, got {tau1}, {tau2}"
            )));
        }
        let mut m = Matrix4::zeros();
        m[(0, 0)] = -1.0 / tau1;
        m[(1, 0)] = 1.0 / tau1;
        m[(1, 1)] = -1.0 / tau1;
        m[(2, 1)] = 1.0 / tau2;
        m[(2, 2)] = -1.0 / tau2;
        m[(0, 3)] = 1.0 / tau1;
        let e = (m * self.h).exp();
        self.ad = e.fixed_view::<3, 3>(0, 0).into_owned();
        self.bd = e.fixed_view::<3, 1>(0, 3).into_owned();
        self.tau1 = tau1;
        self.tau2 = tau2;
        Ok(())
    }

    pub fn time_constants(&self) -> (f64, f64) {
        (self.tau1, self.tau2)
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Current output (before applying any external gain scaling).
    pub fn output(&self) -> f64 {
        self.gain * self.x[2]
    }

    /// Advances one period with `u` held constant; returns the new output.
    pub fn step(&mut self, u: f64) -> f64 {
        self.x = self.ad * self.x + self.bd * u;
        self.output()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lag_poly_expands_binomially() {
        assert_eq!(lag_poly(2.0, 2), vec![1.0, 4.0, 4.0]);
        assert_eq!(lag_poly(3.0, 0), vec![1.0]);
    }

    #[test]
    fn bilinear_first_order_matches_hand_derivation() {
        // 1/(tau s + 1), tau = 10, h = 5: k = 0.4
        // b = [1, 1] / (1 + 4), a = [1 + 4, 1 - 4] / 5
        let d = ContinuousTf::new(vec![1.0], vec![1.0, 10.0]).bilinear(5.0).unwrap();
        assert!((d.numerator()[0] - 0.2).abs() < 1e-15);
        assert!((d.numerator()[1] - 0.2).abs() < 1e-15);
        assert!((d.denominator()[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn bilinear_preserves_dc_gain() {
        let g = ContinuousTf::third_order_lag(3.5, 20.0, 45.0);
        let d = g.bilinear(5.0).unwrap();
        assert!((d.dc_gain() - 3.5).abs() < 1e-9);
    }

    #[test]
    fn improper_or_degenerate_is_rejected() {
        let improper = ContinuousTf::new(vec![1.0, 1.0, 1.0], vec![1.0, 1.0]);
        assert!(improper.bilinear(5.0).is_err());
        // a lag with zero time constant padded to order 1 lands on z = -1
        let nyquist = ContinuousTf::new(vec![1.0], vec![1.0, 0.0]);
        assert!(nyquist.bilinear(5.0).is_err());
    }

    #[test]
    fn discrete_step_converges_to_dc() {
        let mut d = ContinuousTf::third_order_lag(2.0, 10.0, 30.0).bilinear(5.0).unwrap();
        let mut y = 0.0;
        for _ in 0..2000 {
            y = d.step(1.0);
        }
        assert!((y - 2.0).abs() < 1e-9);
        d.reset();
        assert!(d.state().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn lag_cascade_first_samples_match_closed_form() {
        // distinct time constants: step response of 1/((t1 s+1)^2 (t2 s+1))
        let (t1, t2, h) = (20.0_f64, 50.0_f64, 5.0);
        let mut c = LagCascade::new(1.0, t1, t2, h).unwrap();
        for k in 1..=200 {
            let y = c.step(1.0);
            let t = k as f64 * h;
            let want = step_response(t1, t2, t);
            assert!((y - want).abs() < 1e-10, "k={k}: {y} vs {want}");
        }
    }

    /// Partial-fraction step response for distinct time constants.
    fn step_response(t1: f64, t2: f64, t: f64) -> f64 {
        // Y(s) = 1 / (s (t1 s + 1)^2 (t2 s + 1))
        let a = -1.0 / t1;
        let b = -1.0 / t2;
        let g = 1.0 / (t1 * t1 * t2);
        // residues at s = 0, s = b (simple), s = a (double)
        let r0 = 1.0;
        let rb = g / (b * (b - a) * (b - a));
        // d/ds [ g / (s (s - b)) ] at s = a
        let ra2 = g / (a * (a - b));
        let ra1 = -g * (2.0 * a - b) / (a * a * (a - b) * (a - b));
        r0 + rb * (b * t).exp() + (ra1 + ra2 * t) * (a * t).exp()
    }

    #[test]
    fn retuning_keeps_state() {
        let mut c = LagCascade::new(1.0, 20.0, 50.0, 5.0).unwrap();
        for _ in 0..10 {
            c.step(1.0);
        }
        let before = c.output();
        c.set_time_constants(30.0, 60.0).unwrap();
        assert_eq!(c.output(), before);
        assert!(c.set_time_constants(0.0, 1.0).is_err());
    }
}
