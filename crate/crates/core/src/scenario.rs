//! Queue instances: cyclic arrival-rate patterns built from renewal segments,
//! a stationary service law, and a random initial occupancy distribution.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::distlib::{ph_random, Dist, ParametricDist, PhSamplerConfig};
use crate::error::{invalid, Result};
use crate::seeding::rng_from_seed;

pub const DEFAULT_TRUNCATION: usize = 50;
pub const DEFAULT_MAX_INITIAL: usize = 30;
pub const RAW_RATE_RANGE: (f64, f64) = (0.5, 10.0);

/// A maximal run of periods served by one renewal arrival process.
///
/// The inter-arrival law is `arrival_dists[dist]` (mean one) divided by `rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSegment {
    pub start_period: usize,
    pub length: usize,
    pub rate: f64,
    pub dist: usize,
}

impl ArrivalSegment {
    pub fn end_period(&self) -> usize {
        self.start_period + self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub horizon: usize,
    pub cycle_length: usize,
    pub rho_bar: f64,
    pub seed: u64,
    /// Mean-one inter-arrival laws referenced by the segments.
    pub arrival_dists: Vec<Dist>,
    pub segments: Vec<ArrivalSegment>,
    /// Mean-one service law.
    pub service: Dist,
    /// Initial occupancy distribution over `0..=l`.
    pub p0: Vec<f64>,
}

impl ScenarioSpec {
    /// Assembles a scenario from explicit segments. The cycle is the whole
    /// horizon and `rho_bar` is the period-average rate.
    pub fn from_segments(
        arrival_dists: Vec<Dist>,
        segments: Vec<ArrivalSegment>,
        service: Dist,
        p0: Vec<f64>,
    ) -> Result<Self> {
        let horizon: usize = segments.iter().map(|s| s.length).sum();
        let rho_bar = segments.iter().map(|s| s.rate * s.length as f64).sum::<f64>()
            / (horizon.max(1) as f64);
        let s = ScenarioSpec {
            horizon,
            cycle_length: horizon,
            rho_bar,
            seed: 0,
            arrival_dists,
            segments,
            service,
            p0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Single renewal arrival process at `rate` over `horizon` periods.
    pub fn stationary(arrival: Dist, rate: f64, service: Dist, p0: Vec<f64>, horizon: usize) -> Result<Self> {
        let seg = ArrivalSegment { start_period: 0, length: horizon, rate, dist: 0 };
        Self::from_segments(vec![arrival], vec![seg], service, p0)
    }

    /// Truncation level `l` (the last occupancy bin collects `>= l`).
    pub fn truncation(&self) -> usize {
        self.p0.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return invalid("horizon must be >= 1");
        }
        if self.p0.len() < 2 {
            return invalid("p0 needs at least two bins");
        }
        if self.p0.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return invalid("p0 entries must be finite and >= 0");
        }
        let total: f64 = self.p0.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return invalid(format!("p0 sums to {total}"));
        }
        self.service.validate()?;
        if (self.service.mean() - 1.0).abs() > 1e-9 {
            return invalid(format!("service mean is {}, expected 1", self.service.mean()));
        }
        for (i, d) in self.arrival_dists.iter().enumerate() {
            d.validate()?;
            if (d.mean() - 1.0).abs() > 1e-9 {
                return invalid(format!("arrival distribution {i} has mean {}", d.mean()));
            }
        }
        let mut next = 0;
        for s in &self.segments {
            if s.start_period != next {
                return invalid(format!("segment starting at {} leaves a gap or overlap at {next}", s.start_period));
            }
            if s.length == 0 {
                return invalid("segment length must be >= 1");
            }
            if !(s.rate.is_finite() && s.rate > 0.0) {
                return invalid(format!("segment rate must be > 0, got {}", s.rate));
            }
            if s.dist >= self.arrival_dists.len() {
                return invalid(format!("segment references missing distribution {}", s.dist));
            }
            next = s.end_period();
        }
        if next != self.horizon {
            return invalid(format!("segments cover {next} periods, horizon is {}", self.horizon));
        }
        if self.cycle_length == 0 || self.cycle_length > self.horizon {
            return invalid("cycle length must lie in 1..=horizon");
        }
        let cycle_mean = (0..self.cycle_length).map(|t| self.rate_at(t)).sum::<f64>()
            / self.cycle_length as f64;
        if (cycle_mean - self.rho_bar).abs() > 1e-9 {
            return invalid(format!("cycle mean rate {cycle_mean} differs from rho_bar {}", self.rho_bar));
        }
        Ok(())
    }

    /// Segment active during period `t` (0-based, i.e. the interval `(t, t+1]`).
    pub fn segment_at(&self, t: usize) -> &ArrivalSegment {
        let i = self.segments.partition_point(|s| s.end_period() <= t);
        &self.segments[i.min(self.segments.len() - 1)]
    }

    pub fn rate_at(&self, t: usize) -> f64 {
        self.segment_at(t).rate
    }

    pub fn initial_mean(&self) -> f64 {
        self.p0.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
    }

    /// Same arrival pattern and service law over a longer (or shorter)
    /// horizon; the cycle keeps repeating.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let c = self.cycle_length;
        let runs = cycle_runs(self);
        let mut s = self.clone();
        s.horizon = horizon;
        s.segments = tile(&runs, c, horizon);
        s.cycle_length = c.min(horizon);
        s.rho_bar = (0..s.cycle_length).map(|t| self.rate_at(t % c)).sum::<f64>() / s.cycle_length as f64;
        s.validate()?;
        Ok(s)
    }
}

/// One cycle's runs as `(length, rate, dist)`.
fn cycle_runs(s: &ScenarioSpec) -> Vec<(usize, f64, usize)> {
    let mut runs: Vec<(usize, f64, usize)> = Vec::new();
    for t in 0..s.cycle_length {
        let seg = s.segment_at(t);
        match runs.last_mut() {
            Some(r) if r.1 == seg.rate && r.2 == seg.dist && t != seg.start_period => r.0 += 1,
            _ => runs.push((1, seg.rate, seg.dist)),
        }
    }
    runs
}

/// Uniform draw on the simplex over `0..=k`, zero-padded to `l+1` entries.
pub fn sample_initial_state<R: Rng + ?Sized>(rng: &mut R, k: usize, l: usize) -> Result<Vec<f64>> {
    if k >= l {
        return invalid(format!("max initial count k={k} must be below truncation l={l}"));
    }
    let mut p = vec![0.0; l + 1];
    let mut total = 0.0;
    for v in p.iter_mut().take(k + 1) {
        *v = Exp1.sample(rng);
        total += *v;
    }
    p.iter_mut().take(k + 1).for_each(|v| *v /= total);
    Ok(p)
}

/// `lambda_i <- rho_bar * lambda_i / mean(lambda)`.
pub fn normalize_rates(rates: &[f64], rho_bar: f64) -> Vec<f64> {
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    rates.iter().map(|r| rho_bar * r / mean).collect()
}

/// One cycle of the arrival-rate pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalPattern {
    pub cycle_length: usize,
    /// Lengths of the `m` runs partitioning the cycle.
    pub run_lengths: Vec<usize>,
    /// Normalized rate of each run.
    pub run_rates: Vec<f64>,
}

impl ArrivalPattern {
    pub fn num_runs(&self) -> usize {
        self.run_lengths.len()
    }

    pub fn cycle_mean_rate(&self) -> f64 {
        self.run_lengths.iter().zip(&self.run_rates).map(|(l, r)| *l as f64 * r).sum::<f64>()
            / self.cycle_length as f64
    }
}

/// Draws cycle length, run partition and normalized run rates.
///
/// `force_runs` pins the number of runs `m` (clamped to the cycle length).
pub fn sample_arrival_pattern<R: Rng + ?Sized>(
    rng: &mut R,
    horizon: usize,
    rho_bar: f64,
    force_runs: Option<usize>,
) -> Result<ArrivalPattern> {
    if horizon < 3 {
        return invalid(format!("horizon must be >= 3 to draw a cycle, got {horizon}"));
    }
    if !(0.0 < rho_bar && rho_bar.is_finite()) {
        return invalid(format!("rho_bar must be > 0, got {rho_bar}"));
    }
    let lo = horizon.div_ceil(3);
    let hi = (2 * horizon) / 3;
    let cycle_length = rng.random_range(lo..=hi);
    let m = match force_runs {
        Some(m) => m.clamp(1, cycle_length),
        None => rng.random_range(1..=cycle_length),
    };
    let mut cuts: Vec<usize> = if m > 1 {
        sample_indices(rng, cycle_length - 1, m - 1).into_iter().map(|c| c + 1).collect()
    } else {
        Vec::new()
    };
    cuts.sort_unstable();
    let mut run_lengths = Vec::with_capacity(m);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(cycle_length)) {
        run_lengths.push(c - prev);
        prev = c;
    }
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(RAW_RATE_RANGE.0..RAW_RATE_RANGE.1)).collect();
    let per_period: Vec<f64> = run_lengths
        .iter()
        .zip(&raw)
        .flat_map(|(l, r)| std::iter::repeat_n(*r, *l))
        .collect();
    let mean = per_period.iter().sum::<f64>() / cycle_length as f64;
    let run_rates = raw.iter().map(|r| rho_bar * r / mean).collect();
    Ok(ArrivalPattern { cycle_length, run_lengths, run_rates })
}

/// Repeats one cycle of runs across `horizon`, truncating the last cycle and
/// merging adjacent runs that share rate and distribution.
fn tile(runs: &[(usize, f64, usize)], cycle_length: usize, horizon: usize) -> Vec<ArrivalSegment> {
    let mut out: Vec<ArrivalSegment> = Vec::new();
    let mut t = 0;
    'outer: for _ in 0..horizon.div_ceil(cycle_length) {
        for (len, rate, dist) in runs {
            if t >= horizon {
                break 'outer;
            }
            let length = (*len).min(horizon - t);
            match out.last_mut() {
                Some(last) if last.rate == *rate && last.dist == *dist => last.length += length,
                _ => out.push(ArrivalSegment { start_period: t, length, rate: *rate, dist: *dist }),
            }
            t += length;
        }
    }
    out
}

/// Where the segment and service distributions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSource {
    /// Independent random phase-type draws for every run and for service.
    RandomPh(PhSamplerConfig),
    /// One named family for all arrival runs and one for service.
    Named { arrival: ParametricDist, service: ParametricDist },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub horizon: usize,
    /// `rho_bar ~ U(lo, hi)`; equal bounds pin it.
    pub rho_bar_range: (f64, f64),
    pub max_initial: usize,
    pub truncation: usize,
    pub source: DistSource,
    #[serde(default)]
    pub force_runs: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            horizon: 60,
            rho_bar_range: (0.5, 1.0),
            max_initial: DEFAULT_MAX_INITIAL,
            truncation: DEFAULT_TRUNCATION,
            source: DistSource::RandomPh(PhSamplerConfig::default()),
            force_runs: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rho_bar_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return invalid(format!("bad rho_bar range ({lo}, {hi})"));
        }
        if self.horizon < 3 {
            return invalid("horizon must be >= 3");
        }
        if self.max_initial >= self.truncation {
            return invalid("max_initial must be below truncation");
        }
        match &self.source {
            DistSource::RandomPh(c) => c.validate(),
            DistSource::Named { arrival, service } => {
                arrival.validate()?;
                service.validate()?;
                if (arrival.mean - 1.0).abs() > 1e-12 || (service.mean - 1.0).abs() > 1e-12 {
                    return invalid("named families must have mean one");
                }
                Ok(())
            }
        }
    }
}

/// Draws a complete scenario from `seed`.
pub fn build_scenario(seed: u64, cfg: &ScenarioConfig) -> Result<ScenarioSpec> {
    cfg.validate()?;
    let mut rng = rng_from_seed(seed);
    let (lo, hi) = cfg.rho_bar_range;
    let rho_bar = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let pattern = sample_arrival_pattern(&mut rng, cfg.horizon, rho_bar, cfg.force_runs)?;
    let m = pattern.num_runs();
    let (arrival_dists, service) = match &cfg.source {
        DistSource::RandomPh(pc) => {
            let arr: Vec<Dist> = (0..m).map(|_| Dist::Ph(ph_random(&mut rng, pc))).collect();
            (arr, Dist::Ph(ph_random(&mut rng, pc)))
        }
        DistSource::Named { arrival, service } => (vec![Dist::Named(*arrival)], Dist::Named(*service)),
    };
    let runs: Vec<(usize, f64, usize)> = pattern
        .run_lengths
        .iter()
        .zip(&pattern.run_rates)
        .enumerate()
        .map(|(i, (l, r))| (*l, *r, i.min(arrival_dists.len() - 1)))
        .collect();
    let p0 = sample_initial_state(&mut rng, cfg.max_initial, cfg.truncation)?;
    let spec = ScenarioSpec {
        horizon: cfg.horizon,
        cycle_length: pattern.cycle_length,
        rho_bar: pattern.cycle_mean_rate(),
        seed,
        arrival_dists,
        segments: tile(&runs, pattern.cycle_length, cfg.horizon),
        service,
        p0,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distlib::Family;
    use crate::seeding::{derive_seed, rng_from_seed};
    use proptest::prelude::*;

    #[test]
    fn initial_state_examples() {
        let mut rng = rng_from_seed(1);
        let p = sample_initial_state(&mut rng, 0, 50).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1..].iter().all(|v| *v == 0.0));

        let p = sample_initial_state(&mut rng, 30, 50).unwrap();
        assert!(p[31..].iter().all(|v| *v == 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(sample_initial_state(&mut rng, 50, 50).is_err());
    }

    #[test]
    fn initial_state_is_symmetric_dirichlet() {
        let mut rng = rng_from_seed(2);
        let n = 100_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let p = sample_initial_state(&mut rng, 2, 50).unwrap();
            for i in 0..3 {
                acc[i] += p[i];
            }
        }
        for a in acc {
            assert!((a / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
    }

    #[test]
    fn normalization_example() {
        let r = normalize_rates(&[1.0, 2.0, 3.0], 0.6);
        for (g, w) in r.iter().zip([0.3, 0.6, 0.9]) {
            assert!((g - w).abs() < 1e-12);
        }
        let twice = normalize_rates(&r, 0.6);
        assert!(r.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn cycle_length_bounds_for_sixty() {
        let mut rng = rng_from_seed(3);
        for _ in 0..500 {
            let p = sample_arrival_pattern(&mut rng, 60, 0.8, None).unwrap();
            assert!((20..=40).contains(&p.cycle_length));
            assert!((p.cycle_mean_rate() - 0.8).abs() < 1e-9);
            assert_eq!(p.run_lengths.iter().sum::<usize>(), p.cycle_length);
            assert!(p.run_rates.iter().all(|r| *r > 0.0 && *r <= 20.0));
        }
    }

    #[test]
    fn single_run_gives_stationary_instance() {
        let cfg = ScenarioConfig { force_runs: Some(1), ..Default::default() };
        let s = build_scenario(5, &cfg).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].length, 60);
        assert!((s.segments[0].rate - s.rho_bar).abs() < 1e-12);
    }

    #[test]
    fn fixed_seed_gives_identical_json() {
        let cfg = ScenarioConfig::default();
        let a = serde_json::to_string(&build_scenario(42, &cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&build_scenario(42, &cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let back: ScenarioSpec = serde_json::from_str(&a).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), a);
    }

    #[test]
    fn thousand_draws_pass_invariants_and_repeat_per_cycle() {
        let cfg = ScenarioConfig { horizon: 30, ..Default::default() };
        for i in 0..1000 {
            let s = build_scenario(derive_seed(11, "scenario", i), &cfg).unwrap();
            s.validate().unwrap();
            assert!((0.5..=1.0).contains(&s.rho_bar));
            for t in 0..s.horizon.saturating_sub(s.cycle_length) {
                let (a, b) = (s.segment_at(t), s.segment_at(t + s.cycle_length));
                assert_eq!(a.dist, b.dist);
                assert_eq!(a.rate, b.rate);
            }
        }
    }

    #[test]
    fn named_source_and_horizon_extension() {
        let arrival = ParametricDist::new(Family::LogNormal, 1.0, 4.0).unwrap();
        let service = ParametricDist::new(Family::Gamma, 1.0, 0.25).unwrap();
        let cfg = ScenarioConfig {
            horizon: 20,
            rho_bar_range: (0.7, 0.7),
            source: DistSource::Named { arrival, service },
            ..Default::default()
        };
        let s = build_scenario(8, &cfg).unwrap();
        assert_eq!(s.arrival_dists.len(), 1);
        assert!((s.rho_bar - 0.7).abs() < 1e-9);
        let long = s.with_horizon(60).unwrap();
        assert_eq!(long.horizon, 60);
        for t in 0..60 {
            assert_eq!(long.rate_at(t), s.rate_at(t % s.cycle_length));
        }
    }

    #[test]
    fn validation_catches_gaps() {
        let d = Dist::Deterministic { value: 1.0 };
        let segs = vec![
            ArrivalSegment { start_period: 0, length: 2, rate: 1.0, dist: 0 },
            ArrivalSegment { start_period: 3, length: 2, rate: 1.0, dist: 0 },
        ];
        let mut p0 = vec![0.0; 51];
        p0[0] = 1.0;
        assert!(ScenarioSpec::from_segments(vec![d.clone()], segs, d, p0).is_err());
    }

    proptest! {
        #[test]
        fn tiling_covers_horizon(seed in any::<u64>(), horizon in 3usize..90) {
            let mut rng = rng_from_seed(seed);
            let p = sample_arrival_pattern(&mut rng, horizon, 0.75, None).unwrap();
            let runs: Vec<_> = p.run_lengths.iter().zip(&p.run_rates).enumerate()
                .map(|(i, (l, r))| (*l, *r, i)).collect();
            let segs = tile(&runs, p.cycle_length, horizon);
            prop_assert_eq!(segs.iter().map(|s| s.length).sum::<usize>(), horizon);
            let mut next = 0;
            for s in &segs {
                prop_assert_eq!(s.start_period, next);
                next = s.end_period();
            }
        }
    }
}
