//! Inter-arrival and service time distributions: phase-type and parametric
//! families, exact raw moments, sampling, and moment scaling.

mod named;
mod phase_type;
mod random;

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use named::{named_family, Family, NamedSampler, ParametricDist};
pub use phase_type::{PhSampler, PhaseType};
pub use random::{ph_random, PhSamplerConfig};

use crate::error::{invalid, Result};

/// Raw moments `m_1..m_n`; entry `i` (0-based) is `E[X^{i+1}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentVector(Vec<f64>);

impl MomentVector {
    /// Validates positivity and `m_2 >= m_1^2` (relative slack 1e-9).
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return invalid("moment vector is empty");
        }
        if let Some(bad) = m.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return invalid(format!("moments must be finite and > 0, found {bad}"));
        }
        if m.len() >= 2 && m[1] < m[0] * m[0] * (1.0 - 1e-9) {
            return invalid(format!("m2 = {} below m1^2 = {}", m[1], m[0] * m[0]));
        }
        Ok(MomentVector(m))
    }

    pub(crate) fn from_exact(m: Vec<f64>) -> Self {
        MomentVector(m)
    }

    /// Squared coefficient of variation `m_2 / m_1^2 - 1`.
    pub fn scv(&self) -> f64 {
        scv_of(self)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for MomentVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Moments of `c·X` given those of `X`: `m_i c^i`.
pub fn scale(m: &MomentVector, c: f64) -> Result<MomentVector> {
    if !(c.is_finite() && c > 0.0) {
        return invalid(format!("scale factor must be > 0, got {c}"));
    }
    let mut f = 1.0;
    Ok(MomentVector(
        m.iter()
            .map(|v| {
                f *= c;
                v * f
            })
            .collect(),
    ))
}

pub fn scv_of(m: &[f64]) -> f64 {
    assert!(m.len() >= 2, "scv needs two moments");
    m[1] / (m[0] * m[0]) - 1.0
}

/// A distribution reference as stored in scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Ph(PhaseType),
    Named(ParametricDist),
    /// Point mass; only for degenerate test instances.
    Deterministic { value: f64 },
}

impl Dist {
    pub fn moments(&self, n: usize) -> MomentVector {
        match self {
            Dist::Ph(p) => p.moments(n),
            Dist::Named(d) => d.moments(n),
            Dist::Deterministic { value } => {
                MomentVector((1..=n).map(|i| value.powi(i as i32)).collect())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.moments(1)[0]
    }

    pub fn scv(&self) -> f64 {
        self.moments(2).scv()
    }

    pub fn is_exponential(&self) -> bool {
        match self {
            Dist::Ph(p) => p.is_exponential(),
            Dist::Named(d) => matches!(d.family, Family::Exponential | Family::Erlang { k: 1 }),
            Dist::Deterministic { .. } => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Dist::Ph(_) => Ok(()),
            Dist::Named(d) => d.validate(),
            Dist::Deterministic { value } if !(value.is_finite() && *value > 0.0) => {
                invalid(format!("deterministic value must be > 0, got {value}"))
            }
            Dist::Deterministic { .. } => Ok(()),
        }
    }

    pub fn sampler(&self) -> Sampler {
        match self {
            Dist::Ph(p) => Sampler::Ph(p.sampler()),
            Dist::Named(d) => Sampler::Named(d.sampler()),
            Dist::Deterministic { value } => Sampler::Point(*value),
        }
    }
}

impl From<PhaseType> for Dist {
    fn from(p: PhaseType) -> Self {
        Dist::Ph(p)
    }
}

impl From<ParametricDist> for Dist {
    fn from(d: ParametricDist) -> Self {
        Dist::Named(d)
    }
}

#[derive(Clone, Debug)]
pub enum Sampler {
    Ph(PhSampler),
    Named(NamedSampler),
    Point(f64),
}

impl Sampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Ph(s) => s.sample(rng),
            Sampler::Named(s) => s.sample(rng),
            Sampler::Point(v) => *v,
        }
    }
}

/// Exact moments of a phase-type distribution.
pub fn ph_moments(d: &PhaseType, n: usize) -> MomentVector {
    d.moments(n)
}

/// One absorption time of `d`.
pub fn ph_sample<R: Rng + ?Sized>(d: &PhaseType, rng: &mut R) -> f64 {
    d.sampler().sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use proptest::prelude::*;

    #[test]
    fn scale_examples() {
        let m = MomentVector::new(vec![1.0, 2.0, 6.0, 24.0]).unwrap();
        assert_eq!(scale(&m, 1.0).unwrap(), m);
        assert_eq!(&*scale(&m, 0.5).unwrap(), &[0.5, 0.5, 0.75, 1.5]);
        let lam = 4.0;
        assert!((scale(&m, 1.0 / lam).unwrap()[0] - 0.25).abs() < 1e-15);
        assert!(scale(&m, 0.0).is_err());
        assert!(scale(&m, -2.0).is_err());
    }

    #[test]
    fn scv_examples() {
        assert!((scv_of(&[1.0, 2.0]) - 1.0).abs() < 1e-15);
        assert!((scv_of(&[1.0, 1.5]) - 0.5).abs() < 1e-15);
        assert!((scv_of(&[2.0, 8.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn moment_vector_validation() {
        assert!(MomentVector::new(vec![]).is_err());
        assert!(MomentVector::new(vec![1.0, -2.0]).is_err());
        assert!(MomentVector::new(vec![2.0, 3.0]).is_err());
        assert!(MomentVector::new(vec![2.0, 4.0]).is_ok());
    }

    #[test]
    fn ph_mean_matches_monte_carlo() {
        let cfg = PhSamplerConfig::default();
        let mut rng = rng_from_seed(77);
        let d = ph_random(&mut rng, &cfg);
        let s = d.sampler();
        let n = 200_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        let scv = d.moments(2).scv();
        // loose bound scaled by the standard error
        let se = (scv / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 5.0 * se + 1e-3, "mean {mean}, scv {scv}");
        assert!(ph_sample(&d, &mut rng) > 0.0);
    }

    #[test]
    fn dist_json_is_tagged() {
        let d = Dist::Ph(PhaseType::new(vec![1.0], vec![vec![-1.0]]).unwrap());
        let v = serde_json::to_value(&d).unwrap();
        assert_eq!(v, serde_json::json!({"kind": "ph", "alpha": [1.0], "subgen": [[-1.0]]}));
        assert_eq!(serde_json::from_value::<Dist>(v).unwrap(), d);

        let e = Dist::Ph(PhaseType::erlang(300, 300.0).unwrap());
        let back: Dist = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);

        let g = Dist::Named(ParametricDist::new(Family::Erlang { k: 2 }, 1.0, 0.5).unwrap());
        let back: Dist = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn scaling_preserves_scv(m1 in 0.1f64..10.0, excess in 0.0f64..50.0, c in 1e-3f64..1e3) {
            let m = MomentVector::new(vec![m1, m1 * m1 * (1.0 + excess)]).unwrap();
            let s = scale(&m, c).unwrap();
            prop_assert!((s.scv() - m.scv()).abs() <= 1e-12 * (1.0 + m.scv()));
        }
    }
}
