//! Model inputs: per-period log moments of the active arrival law, log moments
//! of the service law, and the initial occupancy vector.

use serde::{Deserialize, Serialize};

use crate::distlib::{scale, MomentVector};
use crate::error::{invalid, Result};
use crate::scenario::ScenarioSpec;

pub const DEFAULT_MOMENTS: usize = 4;

/// `T × D` input, `D = n_arrival + n_service + (l+1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureMatrix {
    rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let Some(w) = rows.first().map(Vec::len) else {
            return invalid("feature matrix has no rows");
        };
        if rows.iter().any(|r| r.len() != w) {
            return invalid("feature rows differ in width");
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("feature entries must be finite");
        }
        Ok(FeatureMatrix { rows })
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.rows
    }
}

pub fn feature_width(n_arrival: usize, n_service: usize, l: usize) -> usize {
    n_arrival + n_service + l + 1
}

/// Natural log of the first `n` moments.
pub fn log_moments(m: &[f64], n: usize) -> Result<Vec<f64>> {
    if n > m.len() {
        return invalid(format!("asked for {n} moments, have {}", m.len()));
    }
    m[..n]
        .iter()
        .map(|v| {
            if v.is_finite() && *v > 0.0 {
                Ok(v.ln())
            } else {
                invalid(format!("moment must be > 0, got {v}"))
            }
        })
        .collect()
}

/// Builds features from explicit per-period arrival moments (already at the
/// period's rate), service moments and `p0`.
pub fn featurize_moments(arrivals: &[MomentVector], service: &MomentVector, p0: &[f64], n_arrival: usize, n_service: usize) -> Result<FeatureMatrix> {
    let s = log_moments(service, n_service)?;
    let mut cache: Option<(&MomentVector, Vec<f64>)> = None;
    let rows = arrivals
        .iter()
        .map(|a| {
            let la = match &cache {
                Some((prev, v)) if *prev == a => v.clone(),
                _ => {
                    let v = log_moments(a, n_arrival)?;
                    cache = Some((a, v.clone()));
                    v
                }
            };
            let mut row = Vec::with_capacity(n_arrival + n_service + p0.len());
            row.extend(la);
            row.extend_from_slice(&s);
            row.extend_from_slice(p0);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::new(rows)
}

/// Per-period arrival moments: the active segment's law scaled to mean `1/rate`.
pub fn arrival_moments(s: &ScenarioSpec, n: usize) -> Result<Vec<MomentVector>> {
    let base: Vec<MomentVector> = s.arrival_dists.iter().map(|d| d.moments(n)).collect();
    let mut out = Vec::with_capacity(s.horizon);
    for seg in &s.segments {
        let m = scale(&base[seg.dist], 1.0 / seg.rate)?;
        out.extend(std::iter::repeat_n(m, seg.length));
    }
    Ok(out)
}

pub fn featurize(s: &ScenarioSpec, n_arrival: usize, n_service: usize) -> Result<FeatureMatrix> {
    featurize_with_service_rate(s, n_arrival, n_service, 1.0)
}

/// As [`featurize`] with the service law sped up by `service_rate`.
pub fn featurize_with_service_rate(s: &ScenarioSpec, n_arrival: usize, n_service: usize, service_rate: f64) -> Result<FeatureMatrix> {
    if n_arrival == 0 || n_service == 0 {
        return invalid("need at least one arrival and one service moment");
    }
    let arr = arrival_moments(s, n_arrival)?;
    let svc = scale(&s.service.moments(n_service), 1.0 / service_rate)?;
    featurize_moments(&arr, &svc, &s.p0, n_arrival, n_service)
}
