//! Per-period distribution accuracy: SAE, PARE at fixed percentiles, and REM,
//! aggregated over samples with optional strata.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const PERCENTILES: [f64; 6] = [0.25, 0.5, 0.75, 0.9, 0.99, 0.999];
const Z95: f64 = 1.96;

pub fn sae(y: &[f64], yhat: &[f64]) -> f64 {
    debug_assert_eq!(y.len(), yhat.len());
    y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum()
}

/// `min{k : Σ_{i<=k} p_i >= q}` with a 1e-12 slack for rounding.
pub fn inverse_cdf(p: &[f64], q: f64) -> usize {
    let mut acc = 0.0;
    for (k, v) in p.iter().enumerate() {
        acc += v;
        if acc >= q - 1e-12 {
            return k;
        }
    }
    p.len() - 1
}

/// Percent error between inverse CDFs; `None` when the true quantile is 0.
pub fn pare(y: &[f64], yhat: &[f64], q: f64) -> Option<f64> {
    let a = inverse_cdf(y, q);
    if a == 0 {
        return None;
    }
    let b = inverse_cdf(yhat, q);
    Some(100.0 * (a as f64 - b as f64).abs() / a as f64)
}

fn mean_of(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(k, v)| k as f64 * v).sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemNorm {
    #[default]
    Truth,
    Prediction,
}

/// Percent relative error of the mean; `None` when the denominator is 0.
pub fn rem(y: &[f64], yhat: &[f64], norm: RemNorm) -> Option<f64> {
    let (a, b) = (mean_of(y), mean_of(yhat));
    let d = match norm {
        RemNorm::Truth => a,
        RemNorm::Prediction => b,
    };
    (d > 0.0).then(|| 100.0 * (a - b).abs() / d)
}

/// Grouping attributes of one evaluated sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumKey {
    pub rho_bar: f64,
    pub arrival_scv: Option<f64>,
    pub service_scv: Option<f64>,
}

impl StratumKey {
    pub fn rho_bucket(&self) -> Option<String> {
        let r = self.rho_bar;
        if !(0.5..=1.0).contains(&r) {
            return None;
        }
        let i = (((r - 0.5) * 10.0 + 1e-9).floor() as usize).min(4);
        let lo = 0.5 + 0.1 * i as f64;
        let close = if i == 4 { ']' } else { ')' };
        Some(format!("rho[{lo:.1},{:.1}{close}", lo + 0.1))
    }

    pub fn scv_pair(&self) -> Option<String> {
        Some(format!("scv={}/{}", self.arrival_scv?, self.service_scv?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricOptions {
    pub percentiles: Vec<f64>,
    pub rem_norm: RemNorm,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions { percentiles: PERCENTILES.to_vec(), rem_norm: RemNorm::Truth }
    }
}

/// Mean and 95% normal half-width of one metric, per period and overall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub per_period: Vec<f64>,
    pub per_period_ci: Vec<f64>,
    pub overall: f64,
    pub overall_ci: f64,
    /// Included (sample, period) pairs.
    pub count: usize,
    /// Pairs dropped for a zero denominator.
    pub excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub samples: usize,
    pub sae: SeriesStats,
    pub rem: SeriesStats,
    /// `(percentile, stats)` in option order.
    pub pare: Vec<(f64, SeriesStats)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: usize,
    pub options: MetricOptions,
    pub all: MetricBlock,
    pub strata: BTreeMap<String, MetricBlock>,
    pub notes: Vec<String>,
}

/// Per-sample `[T]` series; `None` marks an excluded pair.
struct SampleSeries {
    sae: Vec<Option<f64>>,
    rem: Vec<Option<f64>>,
    pare: Vec<Vec<Option<f64>>>,
}

fn score(y: &[Vec<f64>], yhat: &[Vec<f64>], opts: &MetricOptions) -> SampleSeries {
    SampleSeries {
        sae: y.iter().zip(yhat).map(|(a, b)| Some(sae(a, b))).collect(),
        rem: y.iter().zip(yhat).map(|(a, b)| rem(a, b, opts.rem_norm)).collect(),
        pare: opts
            .percentiles
            .iter()
            .map(|q| y.iter().zip(yhat).map(|(a, b)| pare(a, b, *q)).collect())
            .collect(),
    }
}

fn mean_ci(xs: &[f64]) -> (f64, f64) {
    match xs.len() {
        0 => (0.0, 0.0),
        1 => (xs[0], 0.0),
        n => {
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
            (m, Z95 * (var / n as f64).sqrt())
        }
    }
}

fn stats(series: &[&Vec<Option<f64>>], horizon: usize) -> SeriesStats {
    let mut per_period = Vec::with_capacity(horizon);
    let mut per_period_ci = Vec::with_capacity(horizon);
    let (mut count, mut excluded) = (0, 0);
    for t in 0..horizon {
        let xs: Vec<f64> = series.iter().filter_map(|s| s.get(t).copied().flatten()).collect();
        count += xs.len();
        excluded += series.iter().filter(|s| matches!(s.get(t), Some(None))).count();
        let (m, c) = mean_ci(&xs);
        per_period.push(m);
        per_period_ci.push(c);
    }
    let all: Vec<f64> = series.iter().flat_map(|s| s.iter().flatten().copied()).collect();
    let overall = if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 };
    let sample_means: Vec<f64> = series
        .iter()
        .filter_map(|s| {
            let v: Vec<f64> = s.iter().flatten().copied().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let overall_ci = mean_ci(&sample_means).1;
    SeriesStats { per_period, per_period_ci, overall, overall_ci, count, excluded }
}

fn block(samples: &[&SampleSeries], horizon: usize, opts: &MetricOptions) -> MetricBlock {
    let sae = stats(&samples.iter().map(|s| &s.sae).collect::<Vec<_>>(), horizon);
    let rem = stats(&samples.iter().map(|s| &s.rem).collect::<Vec<_>>(), horizon);
    let pare = opts
        .percentiles
        .iter()
        .enumerate()
        .map(|(i, q)| (*q, stats(&samples.iter().map(|s| &s.pare[i]).collect::<Vec<_>>(), horizon)))
        .collect();
    MetricBlock { samples: samples.len(), sae, rem, pare }
}

/// One sample to score: truth rows, predicted rows, and its strata key.
pub struct EvalSample<'a> {
    pub truth: &'a [Vec<f64>],
    pub pred: &'a [Vec<f64>],
    pub key: StratumKey,
}

pub fn aggregate(samples: &[EvalSample<'_>], opts: &MetricOptions) -> Result<MetricsReport> {
    if samples.is_empty() {
        return invalid("nothing to aggregate");
    }
    for (i, s) in samples.iter().enumerate() {
        if s.truth.len() != s.pred.len() || s.truth.iter().zip(s.pred).any(|(a, b)| a.len() != b.len()) {
            return invalid(format!("sample {i}: truth and prediction shapes differ"));
        }
    }
    let horizon = samples.iter().map(|s| s.truth.len()).max().unwrap_or(0);
    let scored: Vec<SampleSeries> = samples.par_iter().map(|s| score(s.truth, s.pred, opts)).collect();

    let mut groups: BTreeMap<String, Vec<&SampleSeries>> = BTreeMap::new();
    for (s, sc) in samples.iter().zip(&scored) {
        if let Some(b) = s.key.rho_bucket() {
            groups.entry(b).or_default().push(sc);
        }
        if let Some(p) = s.key.scv_pair() {
            groups.entry(p).or_default().push(sc);
        }
    }
    let mut notes = Vec::new();
    for i in 0..5 {
        let key = StratumKey { rho_bar: 0.55 + 0.1 * i as f64, ..Default::default() };
        let name = key.rho_bucket().expect("in range");
        if !groups.contains_key(&name) {
            notes.push(format!("stratum {name} is empty and omitted"));
        }
    }
    let all: Vec<&SampleSeries> = scored.iter().collect();
    Ok(MetricsReport {
        horizon,
        options: opts.clone(),
        all: block(&all, horizon, opts),
        strata: groups.into_iter().map(|(k, v)| (k.clone(), block(&v, horizon, opts))).collect(),
        notes,
    })
}

impl MetricsReport {
    /// Long-form CSV: `period, metric, stratum, value, ci_half`; period `overall` holds the totals.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["period", "metric", "stratum", "value", "ci_half"])
            .map_err(csv_err)?;
        let blocks = std::iter::once(("all", &self.all)).chain(self.strata.iter().map(|(k, v)| (k.as_str(), v)));
        for (name, b) in blocks {
            let mut series: Vec<(String, &SeriesStats)> = vec![("sae".into(), &b.sae), ("rem".into(), &b.rem)];
            series.extend(b.pare.iter().map(|(q, s)| (format!("pare_{q}"), s)));
            for (metric, s) in series {
                for t in 0..s.per_period.len() {
                    out.write_record([
                        (t + 1).to_string(),
                        metric.clone(),
                        name.to_string(),
                        s.per_period[t].to_string(),
                        s.per_period_ci[t].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
                out.write_record(["overall".into(), metric.clone(), name.to_string(), s.overall.to_string(), s.overall_ci.to_string()])
                    .map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(k: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        v
    }

    #[test]
    fn sae_examples() {
        assert_eq!(sae(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(sae(&unit(0, 3), &unit(2, 3)), 2.0);
        assert!((sae(&[0.5, 0.5], &[0.6, 0.4]) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pare_examples() {
        let y = unit(4, 10);
        assert_eq!(pare(&y, &y, 0.5), Some(0.0));
        assert_eq!(pare(&y, &unit(5, 10), 0.5), Some(25.0));
        assert_eq!(pare(&unit(0, 10), &y, 0.25), None);
    }

    #[test]
    fn rem_examples() {
        let y = [0.0, 0.0, 1.0];
        assert_eq!(rem(&y, &y, RemNorm::Truth), Some(0.0));
        let yh = [0.0, 0.1, 0.9];
        assert!((rem(&y, &yh, RemNorm::Truth).unwrap() - 5.0).abs() < 1e-9);
        assert!((rem(&y, &yh, RemNorm::Prediction).unwrap() - 100.0 * 0.1 / 1.9).abs() < 1e-9);
        assert_eq!(rem(&unit(0, 3), &yh, RemNorm::Truth), None);
    }

    #[test]
    fn single_sample_single_period() {
        let y = vec![vec![0.5, 0.5]];
        let yh = vec![vec![0.6, 0.4]];
        let r = aggregate(
            &[EvalSample { truth: &y, pred: &yh, key: StratumKey { rho_bar: 0.7, ..Default::default() } }],
            &MetricOptions::default(),
        )
        .unwrap();
        assert!((r.all.sae.overall - 0.2).abs() < 1e-12);
        assert_eq!(r.all.sae.per_period, vec![r.all.sae.overall]);
        assert!(r.strata.contains_key("rho[0.7,0.8)"));
        assert_eq!(r.notes.len(), 4);
    }

    #[test]
    fn perfect_predictions_are_zero() {
        let y: Vec<Vec<f64>> = (0..5).map(|k| unit(k, 8)).collect();
        let samples: Vec<EvalSample> = (0..3)
            .map(|_| EvalSample { truth: &y, pred: &y, key: StratumKey::default() })
            .collect();
        let r = aggregate(&samples, &MetricOptions::default()).unwrap();
        for s in [&r.all.sae, &r.all.rem] {
            assert_eq!(s.overall, 0.0);
            assert!(s.per_period_ci.iter().all(|c| *c == 0.0));
        }
        // y = δ_0 in the first period is excluded from REM
        assert_eq!(r.all.rem.excluded, 3);
    }

    #[test]
    fn rho_buckets_close_at_one() {
        let k = |r| StratumKey { rho_bar: r, ..Default::default() }.rho_bucket();
        assert_eq!(k(1.0).as_deref(), Some("rho[0.9,1.0]"));
        assert_eq!(k(0.5).as_deref(), Some("rho[0.5,0.6)"));
        assert_eq!(k(0.6).as_deref(), Some("rho[0.6,0.7)"));
        assert_eq!(k(0.3), None);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let y = vec![vec![0.5, 0.5], vec![1.0, 0.0]];
        let r = aggregate(&[EvalSample { truth: &y, pred: &y, key: StratumKey::default() }], &MetricOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("period,metric,stratum,value,ci_half\n"));
        assert_eq!(text.lines().count(), 1 + 8 * 3);
    }

    fn row(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn sae_is_bounded_symmetric_triangle(a in row(12), b in row(12), c in row(12)) {
            let ab = sae(&a, &b);
            prop_assert!((0.0..=2.0 + 1e-12).contains(&ab));
            prop_assert_eq!(ab, sae(&b, &a));
            prop_assert!(ab <= sae(&a, &c) + sae(&c, &b) + 1e-12);
        }

        #[test]
        fn padding_keeps_rem_and_pare(a in row(10), b in row(10), q in 0.01f64..0.99) {
            let mut ap = a.clone();
            let mut bp = b.clone();
            ap.extend([0.0; 5]);
            bp.extend([0.0; 5]);
            prop_assert_eq!(rem(&a, &b, RemNorm::Truth), rem(&ap, &bp, RemNorm::Truth));
            prop_assert_eq!(pare(&a, &b, q), pare(&ap, &bp, q));
        }

        #[test]
        fn aggregate_ignores_order(rows in proptest::collection::vec((row(6), row(6)), 2..6)) {
            let samples: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> =
                rows.iter().map(|(a, b)| (vec![a.clone()], vec![b.clone()])).collect();
            let mk = |v: &[(Vec<Vec<f64>>, Vec<Vec<f64>>)]| {
                let s: Vec<EvalSample> = v.iter().map(|(a, b)| EvalSample { truth: a, pred: b, key: StratumKey::default() }).collect();
                aggregate(&s, &MetricOptions::default()).unwrap()
            };
            let fwd = mk(&samples);
            let mut rev = samples.clone();
            rev.reverse();
            let back = mk(&rev);
            prop_assert!((fwd.all.sae.overall - back.all.sae.overall).abs() < 1e-12);
            prop_assert!((fwd.all.rem.overall - back.all.rem.overall).abs() < 1e-9);
        }
    }
}
