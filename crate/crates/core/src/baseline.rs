//! Fluid approximation of the mean occupancy.

use crate::error::{invalid, Result};
use crate::scenario::ScenarioSpec;

/// Mean occupancy at `t = 1..=T`.
pub type MeanTrajectory = Vec<f64>;

/// Forward Euler on `x' = λ(t) − μ·1{x > 0}` with `μ = 1`, clamped at zero.
pub fn fluid_mean(s: &ScenarioSpec, h: f64) -> Result<MeanTrajectory> {
    fluid_mean_with_rate(s, h, 1.0)
}

pub fn fluid_mean_with_rate(s: &ScenarioSpec, h: f64, mu: f64) -> Result<MeanTrajectory> {
    if !(h > 0.0 && h <= 1e-2) {
        return invalid(format!("step must lie in (0, 1e-2], got {h}"));
    }
    let steps = (1.0 / h).ceil() as usize;
    let h = 1.0 / steps as f64;
    let mut x = s.initial_mean();
    let mut out = Vec::with_capacity(s.horizon);
    for t in 0..s.horizon {
        let lam = s.rate_at(t);
        for _ in 0..steps {
            // at x = 0 the server only drains what arrives
            let drift = if x > 0.0 { lam - mu } else { (lam - mu).max(0.0) };
            x = (x + h * drift).max(0.0);
        }
        out.push(x);
    }
    Ok(out)
}
