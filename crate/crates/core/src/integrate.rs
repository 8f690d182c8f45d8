//! Fixed-step classical Runge-Kutta integration.
//!
//! Model inputs are held constant over a sampling interval, so the
//! derivative closures capture them and only see `(t, state)`.

use crate::error::{Error, Result};

/// Advances `state` by `h` using `substeps` classical RK4 steps of size `h / substeps`.
///
/// `deriv` receives the time offset from the start of the interval and the
/// current state. A non-finite state after any substep is an integration fault.
pub fn rk4_step<const N: usize, F>(state: &[f64; N], h: f64, substeps: usize, mut deriv: F) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::domain(format!("step size must be positive, got {h}")));
    }
    if substeps == 0 {
        return Err(Error::domain("substeps must be at least 1"));
    }
    let dt = h / substeps as f64;
    let mut x = *state;
    for i in 0..substeps {
        let t = i as f64 * dt;
        let k1 = deriv(t, &x)?;
        let k2 = deriv(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k1))?;
        let k3 = deriv(t + 0.5 * dt, &axpy(&x, 0.5 * dt, &k2))?;
        let k4 = deriv(t + dt, &axpy(&x, dt, &k3))?;
        for j in 0..N {
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integration(format!(
                "state component {j} became non-finite in substep {i}"
            )));
        }
    }
    Ok(x)
}

#[inline]
fn axpy<const N: usize>(x: &[f64; N], a: f64, y: &[f64; N]) -> [f64; N] {
    let mut out = *x;
    for j in 0..N {
        out[j] += a * y[j];
    }
    out
}

/// Clamps negative components to zero and returns the largest clamped magnitude.
pub fn clamp_nonnegative(state: &mut [f64]) -> f64 {
    let mut worst = 0.0_f64;
    for v in state.iter_mut() {
        if *v < 0.0 {
            worst = worst.max(-*v);
            *v = 0.0;
        }
    }
    worst
}
