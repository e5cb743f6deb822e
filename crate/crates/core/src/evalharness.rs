//! Test-set construction, the evaluation experiments, and the moment sweep.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::fluid_mean;
use crate::dataset::{to_examples, DatasetRecord};
use crate::distlib::{Dist, Family, ParametricDist};
use crate::error::{invalid, Result};
use crate::features::featurize;
use crate::mbrnn::{forward, train, ModelParams, TrainConfig};
use crate::metrics::{aggregate, EvalSample, MetricOptions, MetricsReport, RemNorm, SeriesStats, StratumKey};
use crate::scenario::{build_scenario, DistSource, ScenarioConfig, ScenarioSpec};
use crate::seeding::derive_seed;
use crate::simkernel::{cke_solve, simulate, LabelMatrix, SimConfig};

pub const RHO_LEVELS: [f64; 6] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// Reference diffusion and network figures for the three stationary cases:
/// `(arrival scv, service scv, diffusion SAE, network SAE, diffusion REM, network REM)`.
pub const STATIONARY_REFERENCE: [(f64, f64, f64, f64, f64, f64); 3] = [
    (1.0, 1.0, 0.035, 0.03, 1.219, 1.01),
    (0.5, 0.5, 0.039, 0.015, 0.21, 1.15),
    (5.0, 5.0, 0.286, 0.08, 15.594, 2.71),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSetKind {
    /// Random phase-type mixtures from the training generator.
    RandomPh,
    /// Named families with controlled SCV on a full factorial grid.
    NamedFamilies,
}

/// The five inter-arrival/service families of the factorial test set.
pub fn named_grid() -> Vec<ParametricDist> {
    let mk = |f, scv| ParametricDist::new(f, 1.0, scv).expect("valid family");
    vec![
        mk(Family::LogNormal, 0.25),
        mk(Family::LogNormal, 4.0),
        mk(Family::Gamma, 0.25),
        mk(Family::Gamma, 4.0),
        mk(Family::Exponential, 1.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub scenario: ScenarioSpec,
    pub key: StratumKey,
}

/// Scenarios only (no labels). Kind 2 cycles through the 150 combinations.
pub fn build_testset_scenarios(kind: TestSetKind, size: usize, seed: u64, horizon: usize) -> Result<Vec<TestCase>> {
    if size == 0 {
        return invalid("test set size must be >= 1");
    }
    let grid = named_grid();
    (0..size)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, "testset", i as u64);
            match kind {
                TestSetKind::RandomPh => {
                    let cfg = ScenarioConfig { horizon, ..Default::default() };
                    let scenario = build_scenario(s, &cfg)?;
                    let key = StratumKey { rho_bar: scenario.rho_bar, ..Default::default() };
                    Ok(TestCase { scenario, key })
                }
                TestSetKind::NamedFamilies => {
                    let c = i % (grid.len() * grid.len() * RHO_LEVELS.len());
                    let rho = RHO_LEVELS[c % RHO_LEVELS.len()];
                    let service = grid[(c / RHO_LEVELS.len()) % grid.len()];
                    let arrival = grid[c / (RHO_LEVELS.len() * grid.len())];
                    let cfg = ScenarioConfig {
                        horizon,
                        rho_bar_range: (rho, rho),
                        source: DistSource::Named { arrival, service },
                        ..Default::default()
                    };
                    let scenario = build_scenario(s, &cfg)?;
                    let key = StratumKey { rho_bar: rho, arrival_scv: Some(arrival.scv), service_scv: Some(service.scv) };
                    Ok(TestCase { scenario, key })
                }
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub case: TestCase,
    pub labels: LabelMatrix,
}

fn is_markovian(s: &ScenarioSpec) -> bool {
    s.service.is_exponential() && s.arrival_dists.iter().all(Dist::is_exponential)
}

/// Ground truth for each case: the CKE solution for Markovian instances,
/// simulation otherwise.
pub fn label_cases(cases: Vec<TestCase>, num_reps: usize, seed: u64) -> Result<Vec<LabeledCase>> {
    cases
        .into_par_iter()
        .enumerate()
        .map(|(i, case)| {
            let labels = if is_markovian(&case.scenario) {
                match cke_solve(&case.scenario, 1e-3) {
                    Ok(m) => m,
                    Err(_) => simulate(&case.scenario, &sim_cfg(&case.scenario, num_reps, seed, i))?,
                }
            } else {
                simulate(&case.scenario, &sim_cfg(&case.scenario, num_reps, seed, i))?
            };
            Ok(LabeledCase { case, labels })
        })
        .collect()
}

fn sim_cfg(s: &ScenarioSpec, num_reps: usize, seed: u64, i: usize) -> SimConfig {
    SimConfig { num_reps, seed: derive_seed(seed, "label", i as u64), l: s.truncation() }
}

pub fn build_testset(kind: TestSetKind, size: usize, seed: u64, horizon: usize, num_reps: usize) -> Result<Vec<LabeledCase>> {
    label_cases(build_testset_scenarios(kind, size, seed, horizon)?, num_reps, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Overall accuracy (experiments 1 and 3).
    Overall,
    /// Accuracy against time (experiments 2 and 4).
    TimeSeries,
    /// Stationary GI/GI/1 cases against reference diffusion figures (experiment 5).
    Stationary,
    /// Evaluation past the training horizon in three bands (experiment 6).
    LongHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub experiment: Experiment,
    pub testset: TestSetKind,
    pub size: usize,
    pub horizon: usize,
    pub num_reps: usize,
    pub seed: u64,
    pub include_fluid: bool,
    /// Evaluation horizon as a multiple of `horizon` (long-horizon experiment).
    pub horizon_multiple: usize,
    pub rem_norm: RemNorm,
}

impl ExperimentSpec {
    /// Desk-scale defaults for experiment `n` in `1..=6`.
    pub fn numbered(n: u8, horizon: usize, seed: u64) -> Result<Self> {
        let (experiment, testset, size) = match n {
            1 => (Experiment::Overall, TestSetKind::RandomPh, 300),
            2 => (Experiment::TimeSeries, TestSetKind::RandomPh, 300),
            3 => (Experiment::Overall, TestSetKind::NamedFamilies, 150),
            4 => (Experiment::TimeSeries, TestSetKind::NamedFamilies, 150),
            5 => (Experiment::Stationary, TestSetKind::NamedFamilies, 3),
            6 => (Experiment::LongHorizon, TestSetKind::RandomPh, 300),
            _ => return invalid(format!("experiment number must be 1..=6, got {n}")),
        };
        Ok(ExperimentSpec {
            name: format!("experiment-{n}"),
            experiment,
            testset,
            size,
            horizon,
            num_reps: 2000,
            seed,
            include_fluid: true,
            horizon_multiple: 3,
            rem_norm: RemNorm::Truth,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidSummary {
    pub rem: SeriesStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub first_period: usize,
    pub last_period: usize,
    pub sae: f64,
    pub pare: Vec<(f64, f64)>,
    pub rem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationaryRow {
    pub case: usize,
    pub arrival: String,
    pub service: String,
    pub arrival_scv: f64,
    pub service_scv: f64,
    pub sae: f64,
    pub rem: f64,
    pub reference_diffusion_sae: f64,
    pub reference_network_sae: f64,
    pub reference_diffusion_rem: f64,
    pub reference_network_rem: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub metrics: MetricsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fluid: Option<FluidSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bands: Option<Vec<BandRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationary: Option<Vec<StationaryRow>>,
}

/// The three stationary cases, each starting from five customers at `ρ = 0.5`.
pub fn stationary_cases(horizon: usize, seed: u64) -> Result<Vec<(String, TestCase)>> {
    let mut p0 = vec![0.0; 51];
    p0[5] = 1.0;
    let specs = [
        ("exponential", ParametricDist::exponential(1.0)?),
        ("erlang-2", ParametricDist::new(Family::Erlang { k: 2 }, 1.0, 0.5)?),
        ("hyperexponential", ParametricDist::new(Family::HyperExp2, 1.0, 5.0)?),
    ];
    specs
        .iter()
        .map(|(name, d)| {
            let mut s = ScenarioSpec::stationary(Dist::Named(*d), 0.5, Dist::Named(*d), p0.clone(), horizon)?;
            s.seed = seed;
            let key = StratumKey { rho_bar: 0.5, arrival_scv: Some(d.scv), service_scv: Some(d.scv) };
            Ok((name.to_string(), TestCase { scenario: s, key }))
        })
        .collect()
}

fn predict(model: &ModelParams<f32>, s: &ScenarioSpec) -> Result<Vec<Vec<f64>>> {
    let x = featurize(s, model.arch.n_arrival, model.arch.n_service)?;
    forward(model, x.rows())
}

fn mean_row(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(k, v)| k as f64 * v).sum()
}

fn fluid_rem(cases: &[LabeledCase], norm: RemNorm) -> Result<FluidSummary> {
    let horizon = cases.iter().map(|c| c.labels.horizon()).max().unwrap_or(0);
    let per: Vec<Vec<Option<f64>>> = cases
        .par_iter()
        .map(|c| {
            let e = fluid_mean(&c.case.scenario, 1e-3)?;
            Ok(c.labels
                .rows()
                .iter()
                .zip(&e)
                .map(|(y, f)| {
                    let m = mean_row(y);
                    let d = if norm == RemNorm::Truth { m } else { *f };
                    (d > 0.0).then(|| 100.0 * (m - f).abs() / d)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut per_period = Vec::with_capacity(horizon);
    let mut per_period_ci = Vec::with_capacity(horizon);
    let (mut count, mut excluded, mut total) = (0, 0, 0.0);
    let mut sample_means = Vec::new();
    for t in 0..horizon {
        let xs: Vec<f64> = per.iter().filter_map(|s| s.get(t).copied().flatten()).collect();
        excluded += per.iter().filter(|s| matches!(s.get(t), Some(None))).count();
        count += xs.len();
        total += xs.iter().sum::<f64>();
        let (m, c) = mean_ci(&xs);
        per_period.push(m);
        per_period_ci.push(c);
    }
    for s in &per {
        let v: Vec<f64> = s.iter().flatten().copied().collect();
        if !v.is_empty() {
            sample_means.push(v.iter().sum::<f64>() / v.len() as f64);
        }
    }
    let overall = if count > 0 { total / count as f64 } else { 0.0 };
    Ok(FluidSummary { rem: SeriesStats { per_period, per_period_ci, overall, overall_ci: mean_ci(&sample_means).1, count, excluded } })
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, 1.96 * (var / n).sqrt())
}

fn score(cases: &[LabeledCase], preds: &[Vec<Vec<f64>>], opts: &MetricOptions) -> Result<MetricsReport> {
    let samples: Vec<EvalSample> = cases
        .iter()
        .zip(preds)
        .map(|(c, p)| EvalSample { truth: c.labels.rows(), pred: p, key: c.case.key.clone() })
        .collect();
    aggregate(&samples, opts)
}

fn band_mean(s: &SeriesStats, lo: usize, hi: usize) -> f64 {
    let v = &s.per_period[lo..hi];
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs one experiment against `model`; a pure function of `(spec, model)`.
pub fn run_experiment(spec: &ExperimentSpec, model: &ModelParams<f32>) -> Result<ExperimentReport> {
    if spec.horizon == 0 || spec.num_reps == 0 {
        return invalid("horizon and num_reps must be >= 1");
    }
    let opts = MetricOptions { rem_norm: spec.rem_norm, ..Default::default() };
    let (cases, names) = match spec.experiment {
        Experiment::Stationary => {
            let named = stationary_cases(spec.horizon, spec.seed)?;
            let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            (named.into_iter().map(|(_, c)| c).collect::<Vec<_>>(), names)
        }
        Experiment::LongHorizon => {
            let base = build_testset_scenarios(spec.testset, spec.size, spec.seed, spec.horizon)?;
            let long = spec.horizon * spec.horizon_multiple.max(1);
            let cases = base
                .into_iter()
                .map(|c| Ok(TestCase { scenario: c.scenario.with_horizon(long)?, key: c.key }))
                .collect::<Result<Vec<_>>>()?;
            (cases, Vec::new())
        }
        _ => (build_testset_scenarios(spec.testset, spec.size, spec.seed, spec.horizon)?, Vec::new()),
    };
    if let Some(c) = cases.first() {
        if c.scenario.truncation() + 1 != model.arch.output {
            return invalid(format!("model predicts {} bins, scenarios have {}", model.arch.output, c.scenario.p0.len()));
        }
    }
    let labeled = label_cases(cases, spec.num_reps, spec.seed)?;
    let preds: Vec<Vec<Vec<f64>>> = labeled.par_iter().map(|c| predict(model, &c.case.scenario)).collect::<Result<_>>()?;
    let metrics = score(&labeled, &preds, &opts)?;
    let fluid = if spec.include_fluid { Some(fluid_rem(&labeled, spec.rem_norm)?) } else { None };

    let bands = (spec.experiment == Experiment::LongHorizon).then(|| {
        let t = metrics.horizon;
        (0..3)
            .map(|b| {
                let (lo, hi) = (b * t / 3, (b + 1) * t / 3);
                BandRow {
                    first_period: lo + 1,
                    last_period: hi,
                    sae: band_mean(&metrics.all.sae, lo, hi),
                    pare: metrics.all.pare.iter().map(|(q, s)| (*q, band_mean(s, lo, hi))).collect(),
                    rem: band_mean(&metrics.all.rem, lo, hi),
                }
            })
            .collect()
    });

    let stationary = if spec.experiment == Experiment::Stationary {
        let rows = labeled
            .iter()
            .zip(&preds)
            .zip(&names)
            .enumerate()
            .map(|(i, ((c, p), name))| {
                let one = score(std::slice::from_ref(c), std::slice::from_ref(p), &opts)?;
                let r = STATIONARY_REFERENCE[i];
                Ok(StationaryRow {
                    case: i + 1,
                    arrival: name.clone(),
                    service: name.clone(),
                    arrival_scv: r.0,
                    service_scv: r.1,
                    sae: one.all.sae.overall,
                    rem: one.all.rem.overall,
                    reference_diffusion_sae: r.2,
                    reference_network_sae: r.3,
                    reference_diffusion_rem: r.4,
                    reference_network_rem: r.5,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(rows)
    } else {
        None
    };

    Ok(ExperimentReport { spec: spec.clone(), metrics, fluid, bands, stationary })
}

/// Writes `report.json`, `metrics.csv` and `spec.json` into `dir`.
pub fn save_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&report.spec)? + "\n")?;
    report.metrics.write_csv(std::fs::File::create(dir.join("metrics.csv"))?)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub val_sae: f64,
}

/// Trains one model per moment count `n = 1..=n_max` (same count for arrivals
/// and service) and reports each best validation SAE.
pub fn moment_sweep(n_max: usize, train_set: &[DatasetRecord], val_set: &[DatasetRecord], cfg: &TrainConfig) -> Result<Vec<SweepPoint>> {
    if !(1..=6).contains(&n_max) {
        return invalid(format!("n_max must lie in 1..=6, got {n_max}"));
    }
    (1..=n_max)
        .map(|n| {
            let tr = to_examples(train_set, n, n)?;
            let va = to_examples(val_set, n, n)?;
            let c = TrainConfig { n_arrival: n, n_service: n, ..cfg.clone() };
            let out = train(&tr, &va, &c)?;
            log::info!("moment sweep n={n}: val SAE {:.5}", out.history.best_val_sae);
            Ok(SweepPoint { n, val_sae: out.history.best_val_sae })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub name: String,
    /// Worst per-period SAE between simulation and the CKE solution.
    pub max_sae: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Simulator against the CKE oracle on a two-segment M(t)/M/1 queue
/// (rates 2 then 0.2, `T = 20`) from an empty and from a uniform{0..5} start.
pub fn oracle_check(seed: u64, num_reps: usize, tolerance: f64) -> Result<Vec<OracleCase>> {
    let exp = Dist::Named(ParametricDist::exponential(1.0)?);
    let segs = vec![
        crate::scenario::ArrivalSegment { start_period: 0, length: 10, rate: 2.0, dist: 0 },
        crate::scenario::ArrivalSegment { start_period: 10, length: 10, rate: 0.2, dist: 0 },
    ];
    let mut empty = vec![0.0; 51];
    empty[0] = 1.0;
    let mut uniform = vec![0.0; 51];
    uniform[..6].iter_mut().for_each(|v| *v = 1.0 / 6.0);
    [("empty start", empty), ("uniform start", uniform)]
        .into_iter()
        .enumerate()
        .map(|(i, (name, p0))| {
            let s = ScenarioSpec::from_segments(vec![exp.clone()], segs.clone(), exp.clone(), p0)?;
            let exact = cke_solve(&s, 1e-3)?;
            let sim = simulate(&s, &SimConfig { num_reps, seed: derive_seed(seed, "oracle", i as u64), l: 50 })?;
            let max_sae = sim
                .rows()
                .iter()
                .zip(exact.rows())
                .map(|(a, b)| crate::metrics::sae(a, b))
                .fold(0.0, f64::max);
            Ok(OracleCase { name: name.into(), max_sae, tolerance, pass: max_sae <= tolerance })
        })
        .collect()
}
