//! Capacity planning under a tail constraint, and input estimation from event logs.

use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distlib::{Dist, Family, MomentVector, ParametricDist};
use crate::error::{invalid, Error, Result};
use crate::features::featurize_with_service_rate;
use crate::mbrnn::{forward, ModelParams};
use crate::scenario::ScenarioSpec;
use crate::simkernel::{cke_solve_with, simulate_with_service_rate, CkeOptions, SimConfig};

/// Anything that maps a scenario and a service rate to per-period occupancy distributions.
pub trait OccupancyPredictor: Sync {
    fn predict(&self, s: &ScenarioSpec, service_rate: f64) -> Result<Vec<Vec<f64>>>;
}

/// Exact transient solution; Markovian problems only.
#[derive(Clone, Debug)]
pub struct CkePredictor {
    pub step: f64,
    pub max_state: usize,
}

impl Default for CkePredictor {
    fn default() -> Self {
        CkePredictor { step: 1e-3, max_state: 400 }
    }
}

impl OccupancyPredictor for CkePredictor {
    fn predict(&self, s: &ScenarioSpec, service_rate: f64) -> Result<Vec<Vec<f64>>> {
        let opts = CkeOptions { step: self.step, max_state: self.max_state, service_rate, ..Default::default() };
        Ok(cke_solve_with(s, &opts)?.into_rows())
    }
}

pub struct ModelPredictor<'a> {
    pub model: &'a ModelParams<f32>,
}

impl OccupancyPredictor for ModelPredictor<'_> {
    fn predict(&self, s: &ScenarioSpec, service_rate: f64) -> Result<Vec<Vec<f64>>> {
        let x = featurize_with_service_rate(s, self.model.arch.n_arrival, self.model.arch.n_service, service_rate)?;
        forward(self.model, x.rows())
    }
}

#[derive(Clone, Debug)]
pub struct SimPredictor {
    pub num_reps: usize,
    pub seed: u64,
}

impl OccupancyPredictor for SimPredictor {
    fn predict(&self, s: &ScenarioSpec, service_rate: f64) -> Result<Vec<Vec<f64>>> {
        let cfg = SimConfig { num_reps: self.num_reps, seed: self.seed, l: s.truncation() };
        Ok(simulate_with_service_rate(s, &cfg, service_rate)?.into_rows())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacityProblem {
    /// Arrival pattern and initial law; `scenario.service` is the unit-mean service law
    /// that each candidate rate speeds up.
    pub scenario: ScenarioSpec,
    pub grid: Vec<f64>,
    /// Cost per unit of service rate.
    pub c1: f64,
    /// Cost per customer-period.
    pub c2: f64,
    pub tail_level: usize,
    pub tail_prob: f64,
}

impl Default for CapacityProblem {
    fn default() -> Self {
        let erlang = ParametricDist::new(Family::Erlang { k: 2 }, 1.0, 0.5).expect("Erlang(2)");
        let mut p0 = vec![0.0; 51];
        p0[0] = 1.0;
        let scenario = ScenarioSpec::stationary(Dist::Named(ParametricDist::exponential(1.0).expect("exp")), 1.0, Dist::Named(erlang), p0, 60)
            .expect("default scenario");
        CapacityProblem { scenario, grid: rate_grid(500), c1: 0.05, c2: 10.0, tail_level: 30, tail_prob: 1e-3 }
    }
}

/// `n` evenly spaced rates over `[0.1, 10]`.
pub fn rate_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.1],
        _ => (0..n).map(|i| 0.1 + 9.9 * i as f64 / (n - 1) as f64).collect(),
    }
}

impl CapacityProblem {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.grid.is_empty() {
            return invalid("rate grid is empty");
        }
        if self.grid.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return invalid("grid rates must be finite and > 0");
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("grid must be strictly ascending");
        }
        if !(self.c1 >= 0.0 && self.c2 >= 0.0) {
            return invalid("costs must be >= 0");
        }
        if self.tail_level == 0 || self.tail_level > self.scenario.truncation() {
            return invalid(format!("tail level must lie in 1..={}", self.scenario.truncation()));
        }
        if !(0.0..=1.0).contains(&self.tail_prob) {
            return invalid("tail probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Total cost and worst-period tail mass of one predicted trajectory.
    pub fn assess(&self, rate: f64, p: &[Vec<f64>]) -> (f64, f64) {
        let occupancy: f64 = p.iter().flat_map(|row| row.iter().enumerate().map(|(k, v)| k as f64 * v)).sum();
        let tail = p.iter().map(|row| row[self.tail_level..].iter().sum::<f64>()).fold(0.0, f64::max);
        (self.c1 * rate + self.c2 * occupancy, tail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub rate: f64,
    pub cost: f64,
    pub max_tail: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CapacityDecision {
    Feasible { rate: f64, cost: f64 },
    /// No grid rate meets the tail constraint; reports the rate with the smallest worst-period tail.
    Infeasible { rate: f64, max_tail: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityOutcome {
    pub decision: CapacityDecision,
    /// Cheapest rate ignoring the tail constraint.
    pub unconstrained: (f64, f64),
    pub table: Vec<GridRow>,
}

/// Grid search over service rates. Ties go to the lower rate. A predictor that
/// fails numerically at a rate (mass escaping the CKE state space) marks that
/// rate infeasible at infinite cost.
pub fn optimize_capacity(p: &CapacityProblem, predictor: &dyn OccupancyPredictor) -> Result<CapacityOutcome> {
    p.validate()?;
    let table: Vec<GridRow> = p
        .grid
        .par_iter()
        .map(|&rate| match predictor.predict(&p.scenario, rate) {
            Ok(pred) => {
                let (cost, max_tail) = p.assess(rate, &pred);
                Ok(GridRow { rate, cost, max_tail, feasible: max_tail <= p.tail_prob })
            }
            Err(Error::Numerical(_)) => Ok(GridRow { rate, cost: f64::INFINITY, max_tail: 1.0, feasible: false }),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let u = argmin(table.iter()).expect("grid is non-empty");
    let unconstrained = (u.rate, u.cost);
    let decision = match argmin(table.iter().filter(|r| r.feasible)) {
        Some(r) => CapacityDecision::Feasible { rate: r.rate, cost: r.cost },
        None => {
            let r = table.iter().fold(&table[0], |b, r| if r.max_tail < b.max_tail { r } else { b });
            CapacityDecision::Infeasible { rate: r.rate, max_tail: r.max_tail }
        }
    };
    Ok(CapacityOutcome { decision, unconstrained, table })
}

fn argmin<'a>(rows: impl Iterator<Item = &'a GridRow>) -> Option<&'a GridRow> {
    rows.fold(None, |best, r| match best {
        Some(b) if b.cost <= r.cost => Some(b),
        _ => Some(r),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub inter_arrivals: Vec<f64>,
    pub services: Vec<f64>,
    pub initial_counts: Vec<usize>,
}

#[derive(Deserialize)]
struct LogRow {
    kind: String,
    value: f64,
}

impl EventLog {
    /// Reads a CSV with header `kind,value`, where kind is `arrival`, `service` or `initial`.
    pub fn from_csv<R: Read>(r: R) -> Result<Self> {
        let mut log = EventLog::default();
        for (i, row) in csv::Reader::from_reader(r).deserialize::<LogRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
            match row.kind.as_str() {
                "arrival" => log.inter_arrivals.push(row.value),
                "service" => log.services.push(row.value),
                "initial" if row.value >= 0.0 && row.value.fract() == 0.0 => log.initial_counts.push(row.value as usize),
                "initial" => return Err(Error::Format(format!("line {line}: initial count must be a non-negative integer"))),
                k => return Err(Error::Format(format!("line {line}: unknown kind {k:?}"))),
            }
        }
        log.validate()?;
        Ok(log)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inter_arrivals.is_empty() || self.services.is_empty() || self.initial_counts.is_empty() {
            return invalid("every event-log stream needs at least one sample");
        }
        if self.inter_arrivals.iter().chain(&self.services).any(|x| !(x.is_finite() && *x > 0.0)) {
            return invalid("event-log times must be finite and > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputEstimates {
    pub arrival: MomentVector,
    pub service: MomentVector,
    pub p0: Vec<f64>,
}

/// Sample raw moments `(1/n) Σ x^i`, `i = 1..=n_moments`.
pub fn sample_moments(xs: &[f64], n_moments: usize) -> Result<MomentVector> {
    if xs.is_empty() || n_moments == 0 {
        return invalid("need samples and at least one moment");
    }
    let mut acc = vec![0.0; n_moments];
    for &x in xs {
        let mut p = 1.0;
        for a in acc.iter_mut() {
            p *= x;
            *a += p;
        }
    }
    let n = xs.len() as f64;
    MomentVector::new(acc.into_iter().map(|a| a / n).collect())
}

pub fn estimate_inputs(log: &EventLog, n_moments: usize, l: usize) -> Result<InputEstimates> {
    log.validate()?;
    let mut p0 = vec![0.0; l + 1];
    for &c in &log.initial_counts {
        p0[c.min(l)] += 1.0;
    }
    let n = log.initial_counts.len() as f64;
    p0.iter_mut().for_each(|v| *v /= n);
    Ok(InputEstimates {
        arrival: sample_moments(&log.inter_arrivals, n_moments)?,
        service: sample_moments(&log.services, n_moments)?,
        p0,
    })
}
