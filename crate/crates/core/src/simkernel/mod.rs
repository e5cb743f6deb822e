//! Replicated discrete-event simulation of a scenario, and a
//! Chapman–Kolmogorov oracle for Markovian instances.

mod cke;
mod labels;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cke::{cke_solve, cke_solve_with, CkeOptions};
pub use labels::LabelMatrix;

use crate::distlib::Sampler;
use crate::error::{invalid, Result};
use crate::scenario::{ScenarioSpec, DEFAULT_TRUNCATION};
use crate::seeding::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_reps: usize,
    pub seed: u64,
    pub l: usize,
}

impl SimConfig {
    pub fn new(num_reps: usize, seed: u64) -> Self {
        SimConfig { num_reps, seed, l: DEFAULT_TRUNCATION }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_reps == 0 {
            return invalid("num_reps must be >= 1");
        }
        if self.l == 0 {
            return invalid("truncation l must be >= 1");
        }
        Ok(())
    }
}

/// Samplers prepared once per scenario and shared by all replications.
struct PathModel<'a> {
    spec: &'a ScenarioSpec,
    arrivals: Vec<Sampler>,
    service: Sampler,
    /// Service times are divided by this factor.
    service_rate: f64,
    p0_cdf: Vec<f64>,
}

impl<'a> PathModel<'a> {
    fn new(spec: &'a ScenarioSpec, service_rate: f64) -> Self {
        let mut acc = 0.0;
        let p0_cdf = spec
            .p0
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        PathModel {
            spec,
            arrivals: spec.arrival_dists.iter().map(|d| d.sampler()).collect(),
            service: spec.service.sampler(),
            service_rate,
            p0_cdf,
        }
    }

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.p0_cdf.last().copied().unwrap_or(1.0);
        self.p0_cdf.partition_point(|c| *c <= u).min(self.p0_cdf.len() - 1)
    }

    /// Walks one sample path, calling `record(t, n)` at each integer `t = 1..=T`.
    fn run<R: Rng + ?Sized>(&self, rng: &mut R, mut record: impl FnMut(usize, usize)) {
        let mut n = self.initial(rng);
        let mut next_dep = if n > 0 { self.service.sample(rng) / self.service_rate } else { f64::INFINITY };
        let mut next_arr = f64::INFINITY;
        for t in 1..=self.spec.horizon {
            let start = (t - 1) as f64;
            let seg = self.spec.segment_at(t - 1);
            if seg.start_period == t - 1 {
                // the pending arrival of the previous process never happens
                next_arr = start + self.arrivals[seg.dist].sample(rng) / seg.rate;
            }
            let arr = &self.arrivals[seg.dist];
            let end = t as f64;
            loop {
                if next_arr <= end && next_arr <= next_dep {
                    n += 1;
                    if n == 1 {
                        next_dep = next_arr + self.service.sample(rng) / self.service_rate;
                    }
                    next_arr += arr.sample(rng) / seg.rate;
                } else if next_dep <= end {
                    n -= 1;
                    next_dep = if n > 0 {
                        next_dep + self.service.sample(rng) / self.service_rate
                    } else {
                        f64::INFINITY
                    };
                } else {
                    break;
                }
            }
            record(t, n);
        }
    }
}

/// One sample path: `min(N(t), l)` for `t = 1..=T`, with `l` the scenario truncation.
pub fn simulate_path<R: Rng + ?Sized>(s: &ScenarioSpec, rng: &mut R) -> Vec<usize> {
    let l = s.truncation();
    let model = PathModel::new(s, 1.0);
    let mut out = Vec::with_capacity(s.horizon);
    model.run(rng, |_, n| out.push(n.min(l)));
    out
}

/// Empirical occupancy distribution over `cfg.num_reps` replications.
pub fn simulate(s: &ScenarioSpec, cfg: &SimConfig) -> Result<LabelMatrix> {
    simulate_with_service_rate(s, cfg, 1.0)
}

/// As [`simulate`] with every service time divided by `service_rate`.
pub fn simulate_with_service_rate(s: &ScenarioSpec, cfg: &SimConfig, service_rate: f64) -> Result<LabelMatrix> {
    cfg.validate()?;
    s.validate()?;
    if !(service_rate.is_finite() && service_rate > 0.0) {
        return invalid(format!("service rate must be > 0, got {service_rate}"));
    }
    let model = PathModel::new(s, service_rate);
    let (t_len, w) = (s.horizon, cfg.l + 1);
    let chunk = 256;
    let counts = (0..cfg.num_reps.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut local = vec![0u64; t_len * w];
            for rep in c * chunk..((c + 1) * chunk).min(cfg.num_reps) {
                let mut rng = child_rng(cfg.seed, "replication", rep as u64);
                model.run(&mut rng, |t, n| local[(t - 1) * w + n.min(cfg.l)] += 1);
            }
            local
        })
        .reduce(
            || vec![0u64; t_len * w],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let reps = cfg.num_reps as f64;
    let rows = counts.chunks(w).map(|r| r.iter().map(|c| *c as f64 / reps).collect()).collect();
    Ok(LabelMatrix::from_rows_unchecked(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distlib::{Dist, PhaseType};
    use crate::seeding::rng_from_seed;

    fn delta(i: usize) -> Vec<f64> {
        let mut p = vec![0.0; 51];
        p[i] = 1.0;
        p
    }

    fn exp() -> Dist {
        Dist::Ph(PhaseType::exponential(1.0).unwrap())
    }

    #[test]
    fn near_zero_rate_from_empty_stays_empty() {
        let s = ScenarioSpec::stationary(exp(), 1e-9, exp(), delta(0), 15).unwrap();
        let path = simulate_path(&s, &mut rng_from_seed(1));
        assert!(path.iter().all(|n| *n == 0));
    }

    #[test]
    fn deterministic_drain() {
        let one = Dist::Deterministic { value: 1.0 };
        let s = ScenarioSpec::stationary(exp(), 1e-9, one, delta(5), 8).unwrap();
        let path = simulate_path(&s, &mut rng_from_seed(2));
        assert_eq!(path, vec![4, 3, 2, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn arrival_ties_precede_sampling() {
        // arrivals exactly at 1, 2, 3, ... and unit services starting at each
        let one = Dist::Deterministic { value: 1.0 };
        let s = ScenarioSpec::stationary(one.clone(), 1.0, one, delta(0), 4).unwrap();
        let path = simulate_path(&s, &mut rng_from_seed(3));
        assert_eq!(path, vec![1, 1, 1, 1]);
    }

    #[test]
    fn pending_arrival_is_dropped_at_boundary() {
        use crate::scenario::ArrivalSegment;
        // first process would arrive at 1.5, but its segment ends at 1
        let a = Dist::Deterministic { value: 1.0 };
        let segs = vec![
            ArrivalSegment { start_period: 0, length: 1, rate: 1.0 / 1.5, dist: 0 },
            ArrivalSegment { start_period: 1, length: 2, rate: 0.5, dist: 0 },
        ];
        let long = Dist::Deterministic { value: 1.0 };
        let s = ScenarioSpec::from_segments(vec![a], segs, long, delta(0)).unwrap();
        // restart at 1 gives the next arrival at 3
        assert_eq!(simulate_path(&s, &mut rng_from_seed(4)), vec![0, 0, 1]);
    }

    #[test]
    fn single_replication_rows_are_basis_vectors() {
        let s = ScenarioSpec::stationary(exp(), 0.8, exp(), delta(3), 10).unwrap();
        let m = simulate(&s, &SimConfig::new(1, 5)).unwrap();
        for r in m.rows() {
            assert_eq!(r.iter().filter(|v| **v == 1.0).count(), 1);
            assert_eq!(r.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn same_seed_same_labels() {
        let s = ScenarioSpec::stationary(exp(), 0.9, exp(), delta(2), 12).unwrap();
        let cfg = SimConfig::new(2000, 6);
        assert_eq!(simulate(&s, &cfg).unwrap(), simulate(&s, &cfg).unwrap());
    }

    #[test]
    fn truncation_collects_tail() {
        let s = ScenarioSpec::stationary(exp(), 5.0, exp(), delta(30), 20).unwrap();
        let m = simulate(&s, &SimConfig::new(500, 7)).unwrap();
        assert!(m.row(19)[50] > 0.9);
        m.validate(1e-12).unwrap();
    }
}
