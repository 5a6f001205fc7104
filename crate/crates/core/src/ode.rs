//! Dormand–Prince 5(4) for scalar problems, with step endpoints forced onto
//! a list of requested output points.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    /// Per-step error tolerance, mixed absolute/relative: `tol * max(1, |y|)`.
    pub tol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(tol: f64) -> Self {
        Self { tol, h_max: f64::INFINITY, max_steps: 1_000_000 }
    }

    pub fn h_max(mut self, h: f64) -> Self {
        self.h_max = h;
        self
    }

    /// Integrates `y' = f(t, y)` from `(t0, y0)` through every point of `targets`
    /// (monotone, all on the same side of `t0`). Returns every accepted step
    /// `(t, y)` including the initial point; each target appears exactly.
    pub fn integrate<F>(&self, f: F, t0: f64, y0: f64, targets: &[f64]) -> Result<Vec<(f64, f64)>>
    where
        F: Fn(f64, f64) -> Result<f64>,
    {
        const C2: f64 = 1.0 / 5.0;
        const C3: f64 = 3.0 / 10.0;
        const C4: f64 = 4.0 / 5.0;
        const C5: f64 = 8.0 / 9.0;
        const A21: f64 = 1.0 / 5.0;
        const A31: f64 = 3.0 / 40.0;
        const A32: f64 = 9.0 / 40.0;
        const A41: f64 = 44.0 / 45.0;
        const A42: f64 = -56.0 / 15.0;
        const A43: f64 = 32.0 / 9.0;
        const A51: f64 = 19372.0 / 6561.0;
        const A52: f64 = -25360.0 / 2187.0;
        const A53: f64 = 64448.0 / 6561.0;
        const A54: f64 = -212.0 / 729.0;
        const A61: f64 = 9017.0 / 3168.0;
        const A62: f64 = -355.0 / 33.0;
        const A63: f64 = 46732.0 / 5247.0;
        const A64: f64 = 49.0 / 176.0;
        const A65: f64 = -5103.0 / 18656.0;
        const B1: f64 = 35.0 / 384.0;
        const B3: f64 = 500.0 / 1113.0;
        const B4: f64 = 125.0 / 192.0;
        const B5: f64 = -2187.0 / 6784.0;
        const B6: f64 = 11.0 / 84.0;
        // b - b*, the embedded error weights.
        const E1: f64 = 71.0 / 57600.0;
        const E3: f64 = -71.0 / 16695.0;
        const E4: f64 = 71.0 / 1920.0;
        const E5: f64 = -17253.0 / 339200.0;
        const E6: f64 = 22.0 / 525.0;
        const E7: f64 = -1.0 / 40.0;

        let mut out = vec![(t0, y0)];
        let Some(&last) = targets.last() else {
            return Ok(out);
        };
        let dir = if last >= t0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let mut y = y0;
        let mut k1 = f(t, y)?;
        let mut h = (self.tol.powf(0.2) * 0.1).min(self.h_max).max(1e-12);
        let mut steps = 0usize;

        for &target in targets {
            while (target - t) * dir > 0.0 {
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::IntegrationFailure(format!("step budget exhausted at t = {t}")));
                }
                let h_trial = h;
                let remaining = (target - t).abs();
                let hit = h >= remaining;
                let hs = if hit { remaining } else { h } * dir;

                let k2 = f(t + C2 * hs, y + hs * A21 * k1)?;
                let k3 = f(t + C3 * hs, y + hs * (A31 * k1 + A32 * k2))?;
                let k4 = f(t + C4 * hs, y + hs * (A41 * k1 + A42 * k2 + A43 * k3))?;
                let k5 = f(t + C5 * hs, y + hs * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))?;
                let k6 = f(t + hs, y + hs * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))?;
                let y_new = y + hs * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
                let t_new = if hit { target } else { t + hs };
                let k7 = f(t_new, y_new)?;
                let err = (hs * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)).abs();
                let scale = self.tol * y.abs().max(y_new.abs()).max(1.0);
                let ratio = err / scale;

                if ratio <= 1.0 {
                    t = t_new;
                    y = y_new;
                    k1 = k7;
                    out.push((t, y));
                }
                let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                h = (hs.abs() * factor).min(self.h_max);
                if hit && ratio <= 1.0 {
                    // A step clipped onto a target says nothing about the step size.
                    h = h.max(h_trial);
                }
                if h < 1e-14 * t.abs().max(1.0) {
                    return Err(Error::IntegrationFailure(format!("step size underflow at t = {t}")));
                }
            }
        }
        Ok(out)
    }
}
