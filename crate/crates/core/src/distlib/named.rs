use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use super::MomentVector;
use crate::error::{invalid, Result};

/// Parametric families used for controlled-SCV test instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Exponential,
    Erlang { k: u32 },
    /// Two-branch hyperexponential with balanced means (`r = 0.5`).
    HyperExp2,
    LogNormal,
    Gamma,
}

/// A family member specified by its mean and squared coefficient of variation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParametricDist {
    pub family: Family,
    pub mean: f64,
    pub scv: f64,
}

impl ParametricDist {
    pub fn new(family: Family, mean: f64, scv: f64) -> Result<Self> {
        let d = ParametricDist { family, mean, scv };
        d.validate()?;
        Ok(d)
    }

    pub fn exponential(mean: f64) -> Result<Self> {
        Self::new(Family::Exponential, mean, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean > 0.0) {
            return invalid(format!("mean must be > 0, got {}", self.mean));
        }
        if !(self.scv.is_finite() && self.scv > 0.0) {
            return invalid(format!("scv must be > 0, got {}", self.scv));
        }
        match self.family {
            Family::Exponential if (self.scv - 1.0).abs() > 1e-9 => {
                invalid(format!("exponential has scv 1, got {}", self.scv))
            }
            Family::Erlang { k } if k == 0 || (self.scv - 1.0 / f64::from(k)).abs() > 1e-9 => {
                invalid(format!("Erlang({k}) requires scv = 1/{k}, got {}", self.scv))
            }
            Family::HyperExp2 if self.scv < 1.0 => {
                invalid(format!("balanced H2 requires scv >= 1, got {}", self.scv))
            }
            _ => Ok(()),
        }
    }

    /// Branch probabilities and rates of the balanced-means H2.
    fn h2_params(&self) -> ([f64; 2], [f64; 2]) {
        let c2 = self.scv;
        let p1 = 0.5 * (1.0 + ((c2 - 1.0) / (c2 + 1.0)).sqrt());
        let p2 = 1.0 - p1;
        ([p1, p2], [2.0 * p1 / self.mean, 2.0 * p2 / self.mean])
    }

    /// Exact raw moments `m_1..m_n` from the family's closed forms.
    pub fn moments(&self, n: usize) -> MomentVector {
        let mean = self.mean;
        let m: Vec<f64> = match self.family {
            Family::Exponential => rising(1.0, mean, n),
            Family::Erlang { k } => rising(f64::from(k), mean / f64::from(k), n),
            Family::Gamma => {
                let shape = 1.0 / self.scv;
                rising(shape, mean * self.scv, n)
            }
            Family::LogNormal => {
                let s2 = (1.0 + self.scv).ln();
                let mu = mean.ln() - 0.5 * s2;
                (1..=n)
                    .map(|i| {
                        let i = i as f64;
                        (i * mu + 0.5 * i * i * s2).exp()
                    })
                    .collect()
            }
            Family::HyperExp2 => {
                let (p, r) = self.h2_params();
                let mut fact = 1.0;
                (1..=n)
                    .map(|i| {
                        fact *= i as f64;
                        fact * (p[0] / r[0].powi(i as i32) + p[1] / r[1].powi(i as i32))
                    })
                    .collect()
            }
        };
        MomentVector::from_exact(m)
    }

    pub fn sampler(&self) -> NamedSampler {
        match self.family {
            Family::Exponential => NamedSampler::Exp(Exp::new(1.0 / self.mean).expect("valid")),
            Family::Erlang { k } => NamedSampler::Gamma(
                Gamma::new(f64::from(k), self.mean / f64::from(k)).expect("valid"),
            ),
            Family::Gamma => NamedSampler::Gamma(
                Gamma::new(1.0 / self.scv, self.mean * self.scv).expect("valid"),
            ),
            Family::LogNormal => {
                let s2 = (1.0 + self.scv).ln();
                let mu = self.mean.ln() - 0.5 * s2;
                NamedSampler::LogNormal(LogNormal::new(mu, s2.sqrt()).expect("valid"))
            }
            Family::HyperExp2 => {
                let (p, r) = self.h2_params();
                NamedSampler::H2 {
                    p1: p[0],
                    slow: Exp::new(r[1]).expect("valid"),
                    fast: Exp::new(r[0]).expect("valid"),
                }
            }
        }
    }
}

/// `scale^i · k(k+1)...(k+i-1)` for `i = 1..=n`.
fn rising(k: f64, scale: f64, n: usize) -> Vec<f64> {
    let mut acc = 1.0;
    (0..n)
        .map(|i| {
            acc *= (k + i as f64) * scale;
            acc
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum NamedSampler {
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    LogNormal(LogNormal<f64>),
    H2 { p1: f64, fast: Exp<f64>, slow: Exp<f64> },
}

impl NamedSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NamedSampler::Exp(d) => d.sample(rng),
            NamedSampler::Gamma(d) => d.sample(rng),
            NamedSampler::LogNormal(d) => d.sample(rng),
            NamedSampler::H2 { p1, fast, slow } => {
                if rng.random::<f64>() < *p1 {
                    fast.sample(rng)
                } else {
                    slow.sample(rng)
                }
            }
        }
    }
}

/// Builds the sampler and the first four exact raw moments of `spec`.
pub fn named_family(spec: &ParametricDist) -> Result<(NamedSampler, MomentVector)> {
    spec.validate()?;
    Ok((spec.sampler(), spec.moments(4)))
}
