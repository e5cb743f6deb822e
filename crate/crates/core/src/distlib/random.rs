//! Random phase-type generator covering a wide SCV span.
//!
//! Each draw picks one of four structures and randomizes its parameters:
//!
//! * Erlang(k), k log-uniform on `1..=max_erlang_phases` (SCV down to 1/k)
//! * hyperexponential with 2–5 branches, log-uniform rates and weights (SCV >= 1, heavy right tail)
//! * Coxian chain of order 2..=max_order
//! * dense sub-generator of order 2..=max_order with random sparsity
//!
//! The result is rescaled to mean one. Draws that fail validation or exceed
//! `max_scv` are discarded and redrawn.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::PhaseType;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhSamplerConfig {
    pub max_order: usize,
    pub max_erlang_phases: u32,
    /// Relative weights of (erlang, hyperexponential, coxian, dense).
    pub structure_weights: [f64; 4],
    pub max_scv: f64,
}

impl Default for PhSamplerConfig {
    fn default() -> Self {
        PhSamplerConfig {
            max_order: 20,
            max_erlang_phases: 400,
            structure_weights: [1.0; 4],
            max_scv: 400.0,
        }
    }
}

impl PhSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_order < 2 {
            return invalid("max_order must be >= 2");
        }
        if self.max_erlang_phases == 0 {
            return invalid("max_erlang_phases must be >= 1");
        }
        if self.structure_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
            || self.structure_weights.iter().sum::<f64>() <= 0.0
        {
            return invalid("structure weights must be non-negative with a positive sum");
        }
        if !(self.max_scv > 1.0) {
            return invalid("max_scv must exceed 1");
        }
        Ok(())
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo10: f64, hi10: f64) -> f64 {
    10f64.powf(rng.random_range(lo10..hi10))
}

fn dirichlet_flat<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn draw_structure<R: Rng + ?Sized>(rng: &mut R, cfg: &PhSamplerConfig) -> Result<PhaseType> {
    let total: f64 = cfg.structure_weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut kind = 3;
    for (i, w) in cfg.structure_weights.iter().enumerate() {
        if u < *w {
            kind = i;
            break;
        }
        u -= w;
    }
    match kind {
        0 => {
            let hi = f64::from(cfg.max_erlang_phases) + 1.0;
            let k = (rng.random_range(0.0..hi.ln()).exp().floor() as u32)
                .clamp(1, cfg.max_erlang_phases);
            PhaseType::erlang(k, f64::from(k))
        }
        1 => {
            let b = rng.random_range(2..=5usize);
            let rates: Vec<f64> = (0..b).map(|_| log_uniform(rng, -2.0, 1.5)).collect();
            let mut p: Vec<f64> = (0..b).map(|_| log_uniform(rng, -3.0, 0.0)).collect();
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
            PhaseType::hyperexponential(&p, &rates)
        }
        2 => {
            let n = rng.random_range(2..=cfg.max_order);
            let rates: Vec<f64> = (0..n).map(|_| log_uniform(rng, -1.0, 1.0)).collect();
            let cont: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
            PhaseType::coxian(&rates, &cont)
        }
        _ => {
            let n = rng.random_range(2..=cfg.max_order);
            let alpha = dirichlet_flat(rng, n);
            let density = rng.random_range(0.1..1.0);
            let mut s = vec![vec![0.0; n]; n];
            for (i, row) in s.iter_mut().enumerate() {
                let mut out = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    if j != i && rng.random::<f64>() < density {
                        *v = log_uniform(rng, -1.0, 1.0);
                        out += *v;
                    }
                }
                let exit = if rng.random::<f64>() < 0.5 { log_uniform(rng, -1.0, 1.0) } else { 0.0 };
                row[i] = -(out + exit);
            }
            // guarantee a way out
            let last = n - 1;
            let extra = log_uniform(rng, -1.0, 1.0);
            s[last][last] -= extra;
            PhaseType::new(alpha, s)
        }
    }
}

/// Draws a random mean-one phase-type distribution.
pub fn ph_random<R: Rng + ?Sized>(rng: &mut R, cfg: &PhSamplerConfig) -> PhaseType {
    debug_assert!(cfg.validate().is_ok());
    loop {
        let Ok(raw) = draw_structure(rng, cfg) else { continue };
        let Ok(ph) = raw.normalized() else { continue };
        let m = ph.moments(2);
        if !((m[0] - 1.0).abs() <= 1e-9) {
            continue;
        }
        let scv = m.scv();
        if scv.is_finite() && scv > 0.0 && scv <= cfg.max_scv {
            return ph;
        }
    }
}
