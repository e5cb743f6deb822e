use crate::error::{Error, Result};
use crate::scenario::ScenarioSpec;

use super::LabelMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct CkeOptions {
    /// Integration step; rounded down so that a period holds a whole number of steps.
    pub step: f64,
    /// Largest tracked state; mass pushed above it is lost.
    pub max_state: usize,
    pub service_rate: f64,
    /// Tolerated probability mass lost through the top state.
    pub max_mass_loss: f64,
}

impl Default for CkeOptions {
    fn default() -> Self {
        CkeOptions { step: 1e-3, max_state: 200, service_rate: 1.0, max_mass_loss: 1e-10 }
    }
}

/// Birth–death forward equations integrated with RK4 (step `h`).
pub fn cke_solve(s: &ScenarioSpec, h: f64) -> Result<LabelMatrix> {
    cke_solve_with(s, &CkeOptions { step: h, ..Default::default() })
}

pub fn cke_solve_with(s: &ScenarioSpec, opts: &CkeOptions) -> Result<LabelMatrix> {
    s.validate()?;
    if !s.service.is_exponential() || s.arrival_dists.iter().any(|d| !d.is_exponential()) {
        return Err(Error::UnsupportedModel(
            "CKE oracle needs exponential inter-arrival and service laws".into(),
        ));
    }
    if !(opts.step > 0.0 && opts.step <= 1e-3) {
        return Err(Error::InvalidArgument(format!("step must lie in (0, 1e-3], got {}", opts.step)));
    }
    let l = s.truncation();
    let top = opts.max_state.max(l);
    let mu = opts.service_rate;
    let steps = (1.0 / opts.step).ceil() as usize;
    let h = 1.0 / steps as f64;

    let mut p = vec![0.0; top + 1];
    p[..s.p0.len()].copy_from_slice(&s.p0);
    let mut k = [vec![0.0; top + 1], vec![0.0; top + 1], vec![0.0; top + 1], vec![0.0; top + 1]];
    let mut tmp = vec![0.0; top + 1];

    let deriv = |x: &[f64], lam: f64, out: &mut [f64]| {
        let n = x.len() - 1;
        out[0] = -lam * x[0] + mu * x[1];
        for i in 1..n {
            out[i] = lam * x[i - 1] - (lam + mu) * x[i] + mu * x[i + 1];
        }
        out[n] = lam * x[n - 1] - (lam + mu) * x[n];
    };

    let mut rows = Vec::with_capacity(s.horizon);
    for t in 0..s.horizon {
        let lam = s.rate_at(t);
        for _ in 0..steps {
            deriv(&p, lam, &mut k[0]);
            for i in 0..=top {
                tmp[i] = p[i] + 0.5 * h * k[0][i];
            }
            deriv(&tmp, lam, &mut k[1]);
            for i in 0..=top {
                tmp[i] = p[i] + 0.5 * h * k[1][i];
            }
            deriv(&tmp, lam, &mut k[2]);
            for i in 0..=top {
                tmp[i] = p[i] + h * k[2][i];
            }
            deriv(&tmp, lam, &mut k[3]);
            for i in 0..=top {
                p[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
        }
        let mass: f64 = p.iter().sum();
        if 1.0 - mass > opts.max_mass_loss {
            return Err(Error::Numerical(format!(
                "CKE lost {:.3e} probability above state {top} by t={}",
                1.0 - mass,
                t + 1
            )));
        }
        let mut row: Vec<f64> = p[..l].iter().map(|v| v.max(0.0)).collect();
        row.push(p[l..].iter().sum::<f64>().max(0.0));
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= total);
        rows.push(row);
    }
    Ok(LabelMatrix::from_rows_unchecked(rows))
}
