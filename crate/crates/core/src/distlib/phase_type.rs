use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01};
use serde::{Deserialize, Serialize};

use super::MomentVector;
use crate::error::{Error, Result};

const PROB_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e13;

/// Absorption time of a finite continuous-time Markov chain.
///
/// Two storage forms share one type: a dense `(alpha, subgen)` pair for
/// general chains, and a compact Erlang form (`phases`, per-phase `rate`)
/// so very low-variability members do not need a `k×k` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhaseTypeWire", into = "PhaseTypeWire")]
pub struct PhaseType {
    repr: Repr,
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Dense {
        n: usize,
        alpha: Vec<f64>,
        /// Row-major `n×n`.
        subgen: Vec<f64>,
    },
    Erlang {
        phases: u32,
        rate: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct PhaseTypeWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subgen: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    erlang_phases: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    erlang_rate: Option<f64>,
}

impl TryFrom<PhaseTypeWire> for PhaseType {
    type Error = Error;

    fn try_from(w: PhaseTypeWire) -> Result<Self> {
        match (w.alpha, w.subgen, w.erlang_phases, w.erlang_rate) {
            (Some(alpha), Some(subgen), None, None) => PhaseType::new(alpha, subgen),
            (None, None, Some(k), Some(rate)) => PhaseType::erlang(k, rate),
            _ => Err(Error::Format(
                "phase-type needs either {alpha, subgen} or {erlang_phases, erlang_rate}".into(),
            )),
        }
    }
}

impl From<PhaseType> for PhaseTypeWire {
    fn from(p: PhaseType) -> Self {
        match p.repr {
            Repr::Dense { n, alpha, subgen } => PhaseTypeWire {
                alpha: Some(alpha),
                subgen: Some(subgen.chunks(n).map(<[f64]>::to_vec).collect()),
                erlang_phases: None,
                erlang_rate: None,
            },
            Repr::Erlang { phases, rate } => PhaseTypeWire {
                alpha: None,
                subgen: None,
                erlang_phases: Some(phases),
                erlang_rate: Some(rate),
            },
        }
    }
}

impl PhaseType {
    /// Validates and builds a dense phase-type distribution.
    pub fn new(alpha: Vec<f64>, subgen: Vec<Vec<f64>>) -> Result<Self> {
        let n = alpha.len();
        if n == 0 {
            return Err(Error::InvalidArgument("phase-type order must be >= 1".into()));
        }
        if subgen.len() != n || subgen.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(format!(
                "sub-generator must be {n}x{n} to match alpha"
            )));
        }
        let flat: Vec<f64> = subgen.into_iter().flatten().collect();
        Self::from_flat(alpha, flat)
    }

    fn from_flat(alpha: Vec<f64>, subgen: Vec<f64>) -> Result<Self> {
        let n = alpha.len();
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::InvalidArgument("alpha entries must be finite and >= 0".into()));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!("alpha sums to {total}, expected 1")));
        }
        for i in 0..n {
            let row = &subgen[i * n..(i + 1) * n];
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("sub-generator has non-finite entries".into()));
            }
            if row[i] >= 0.0 {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is not negative")));
            }
            if row.iter().enumerate().any(|(j, v)| j != i && *v < 0.0) {
                return Err(Error::InvalidArgument(format!("row {i} has a negative off-diagonal")));
            }
            let s: f64 = row.iter().sum();
            if s > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!("row {i} sums to {s} > 0")));
            }
        }
        let ph = PhaseType { repr: Repr::Dense { n, alpha, subgen } };
        ph.check_absorbing()?;
        Ok(ph)
    }

    /// Erlang with `phases` stages of rate `rate` each (mean `phases / rate`).
    pub fn erlang(phases: u32, rate: f64) -> Result<Self> {
        if phases == 0 {
            return Err(Error::InvalidArgument("Erlang needs at least one phase".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::InvalidArgument(format!("Erlang rate must be > 0, got {rate}")));
        }
        Ok(PhaseType { repr: Repr::Erlang { phases, rate } })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::erlang(1, rate)
    }

    /// Mixture of exponentials; `probs` must sum to one.
    pub fn hyperexponential(probs: &[f64], rates: &[f64]) -> Result<Self> {
        if probs.len() != rates.len() {
            return Err(Error::InvalidArgument("probs and rates differ in length".into()));
        }
        let n = rates.len();
        let mut subgen = vec![0.0; n * n];
        for (i, r) in rates.iter().enumerate() {
            subgen[i * n + i] = -r;
        }
        Self::from_flat(probs.to_vec(), subgen)
    }

    /// Coxian chain: phase `i` has rate `rates[i]` and moves on to `i+1` with
    /// probability `cont[i]` (otherwise absorbs). `cont` has `n-1` entries.
    pub fn coxian(rates: &[f64], cont: &[f64]) -> Result<Self> {
        let n = rates.len();
        if n == 0 || cont.len() + 1 != n {
            return Err(Error::InvalidArgument("coxian needs n rates and n-1 continuations".into()));
        }
        let mut subgen = vec![0.0; n * n];
        for i in 0..n {
            subgen[i * n + i] = -rates[i];
            if i + 1 < n {
                subgen[i * n + i + 1] = rates[i] * cont[i];
            }
        }
        let mut alpha = vec![0.0; n];
        alpha[0] = 1.0;
        Self::from_flat(alpha, subgen)
    }

    /// Number of phases.
    pub fn order(&self) -> usize {
        match &self.repr {
            Repr::Dense { n, .. } => *n,
            Repr::Erlang { phases, .. } => *phases as usize,
        }
    }

    pub fn is_exponential(&self) -> bool {
        match &self.repr {
            Repr::Erlang { phases, .. } => *phases == 1,
            Repr::Dense { n, .. } => *n == 1,
        }
    }

    /// Dense `(alpha, subgen)` view; materializes the Erlang form.
    pub fn to_dense(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        match &self.repr {
            Repr::Dense { n, alpha, subgen } => {
                (alpha.clone(), subgen.chunks(*n).map(<[f64]>::to_vec).collect())
            }
            Repr::Erlang { phases, rate } => {
                let k = *phases as usize;
                let mut alpha = vec![0.0; k];
                alpha[0] = 1.0;
                let mut s = vec![vec![0.0; k]; k];
                for i in 0..k {
                    s[i][i] = -rate;
                    if i + 1 < k {
                        s[i][i + 1] = *rate;
                    }
                }
                (alpha, s)
            }
        }
    }

    fn neg_subgen(&self) -> Option<DMatrix<f64>> {
        match &self.repr {
            Repr::Dense { n, subgen, .. } => {
                Some(DMatrix::from_row_slice(*n, *n, subgen).map(|v| -v))
            }
            Repr::Erlang { .. } => None,
        }
    }

    fn check_absorbing(&self) -> Result<()> {
        let Some(m) = self.neg_subgen() else { return Ok(()) };
        let n = m.nrows();
        let inv = m
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("sub-generator is singular".into()))?;
        let norm1 = |a: &DMatrix<f64>| {
            (0..n).map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
        };
        let cond = norm1(&m) * norm1(&inv);
        if !cond.is_finite() || cond > MAX_CONDITION {
            return Err(Error::Numerical(format!("sub-generator condition number {cond:e} too large")));
        }
        Ok(())
    }

    /// Exact raw moments `E[X^i] = i! alpha (-S)^{-i} 1` for `i = 1..=n`.
    pub fn moments(&self, n: usize) -> MomentVector {
        let m = match &self.repr {
            Repr::Erlang { phases, rate } => {
                let k = f64::from(*phases);
                let mut out = Vec::with_capacity(n);
                let mut acc = 1.0;
                for i in 0..n {
                    acc *= (k + i as f64) / rate;
                    out.push(acc);
                }
                out
            }
            Repr::Dense { n: order, alpha, .. } => {
                let lu = self.neg_subgen().expect("dense").lu();
                let a = DVector::from_column_slice(alpha);
                let mut v = DVector::from_element(*order, 1.0);
                let mut fact = 1.0;
                let mut out = Vec::with_capacity(n);
                for i in 1..=n {
                    // construction already rejected singular sub-generators
                    v = lu.solve(&v).expect("non-singular sub-generator");
                    fact *= i as f64;
                    out.push(fact * a.dot(&v));
                }
                out
            }
        };
        MomentVector::from_exact(m)
    }

    pub fn mean(&self) -> f64 {
        self.moments(1)[0]
    }

    /// Distribution of `c·X`: every rate divided by `c`.
    pub fn scale_time(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidArgument(format!("time scale must be > 0, got {c}")));
        }
        match &self.repr {
            Repr::Erlang { phases, rate } => Self::erlang(*phases, rate / c),
            Repr::Dense { n, alpha, subgen } => {
                let n = *n;
                let mut out = vec![0.0; n * n];
                for i in 0..n {
                    let row = &subgen[i * n..(i + 1) * n];
                    let exit = (-row.iter().sum::<f64>()).max(0.0) / c;
                    let mut off = 0.0;
                    for j in 0..n {
                        if j != i {
                            out[i * n + j] = row[j] / c;
                            off += out[i * n + j];
                        }
                    }
                    out[i * n + i] = -(off + exit);
                }
                Self::from_flat(alpha.clone(), out)
            }
        }
    }

    /// Rescaled copy with mean exactly one.
    pub fn normalized(&self) -> Result<Self> {
        self.scale_time(1.0 / self.mean())
    }

    pub fn sampler(&self) -> PhSampler {
        match &self.repr {
            Repr::Erlang { phases, rate } => {
                if *phases <= 32 {
                    PhSampler::ErlangSum { phases: *phases, rate: *rate }
                } else {
                    PhSampler::Gamma(
                        Gamma::new(f64::from(*phases), 1.0 / rate).expect("validated Erlang"),
                    )
                }
            }
            Repr::Dense { n, alpha, subgen } => {
                let n = *n;
                let mut init = Vec::with_capacity(n);
                let mut acc = 0.0;
                for a in alpha {
                    acc += a;
                    init.push(acc);
                }
                let mut hold = Vec::with_capacity(n);
                let mut jumps = Vec::with_capacity(n * (n + 1));
                for i in 0..n {
                    let row = &subgen[i * n..(i + 1) * n];
                    let q = -row[i];
                    hold.push(q);
                    let mut acc = 0.0;
                    for (j, v) in row.iter().enumerate() {
                        if j != i {
                            acc += v / q;
                        }
                        jumps.push(acc);
                    }
                    // slot n is absorption
                    jumps.push(1.0);
                }
                PhSampler::Chain { n, init, hold, jumps }
            }
        }
    }
}

/// Precomputed tables for drawing absorption times.
#[derive(Clone, Debug)]
pub enum PhSampler {
    ErlangSum { phases: u32, rate: f64 },
    Gamma(Gamma<f64>),
    Chain {
        n: usize,
        /// Cumulative initial distribution.
        init: Vec<f64>,
        /// Total outflow rate per phase.
        hold: Vec<f64>,
        /// Row `i` holds `n+1` cumulative jump probabilities; slot `n` absorbs.
        jumps: Vec<f64>,
    },
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln()
}

fn pick(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1)
}

impl PhSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PhSampler::ErlangSum { phases, rate } => {
                (0..*phases).map(|_| exp1(rng)).sum::<f64>() / rate
            }
            PhSampler::Gamma(g) => g.sample(rng),
            PhSampler::Chain { n, init, hold, jumps } => {
                let mut phase = pick(init, rng.random());
                let mut t = 0.0;
                loop {
                    t += exp1(rng) / hold[phase];
                    let row = &jumps[phase * (n + 1)..(phase + 1) * (n + 1)];
                    let next = pick(row, rng.random());
                    if next == *n {
                        return t;
                    }
                    phase = next;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn unit_exponential_moments_are_factorials() {
        let m = PhaseType::exponential(1.0).unwrap().moments(4);
        for (got, want) in m.iter().zip([1.0, 2.0, 6.0, 24.0]) {
            assert!(close(*got, want, 1e-12), "{got} vs {want}");
        }
        // the same law written densely
        let d = PhaseType::new(vec![1.0], vec![vec![-1.0]]).unwrap().moments(4);
        assert!(d.iter().zip(m.iter()).all(|(a, b)| close(*a, *b, 1e-12)));
    }

    #[test]
    fn erlang_two_moments_match_rising_factorial() {
        // k(k+1)...(k+i-1) / rate^i with k = 2, rate = 2
        let want = [1.0, 1.5, 3.0, 7.5];
        let compact = PhaseType::erlang(2, 2.0).unwrap().moments(4);
        let (a, s) = PhaseType::erlang(2, 2.0).unwrap().to_dense();
        let dense = PhaseType::new(a, s).unwrap().moments(4);
        for i in 0..4 {
            assert!(close(compact[i], want[i], 1e-12));
            assert!(close(dense[i], want[i], 1e-12));
        }
    }

    #[test]
    fn rejects_invalid_structure() {
        assert!(PhaseType::new(vec![0.5, 0.4], vec![vec![-1.0, 0.0], vec![0.0, -1.0]]).is_err());
        assert!(PhaseType::new(vec![1.0], vec![vec![1.0]]).is_err());
        assert!(PhaseType::new(vec![1.0, 0.0], vec![vec![-1.0, 2.0], vec![0.0, -1.0]]).is_err());
        // closed loop with no exit: singular
        let r = PhaseType::new(vec![1.0, 0.0], vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
        assert!(matches!(r, Err(Error::Numerical(_))));
        assert!(PhaseType::erlang(0, 1.0).is_err());
    }

    #[test]
    fn sampler_is_reproducible_and_positive() {
        let ph = PhaseType::exponential(1.0).unwrap();
        let s = ph.sampler();
        let a = s.sample(&mut rng_from_seed(11));
        let b = s.sample(&mut rng_from_seed(11));
        assert_eq!(a, b);
        assert!(a > 0.0);
    }

    #[test]
    fn erlang_two_sample_mean() {
        let s = PhaseType::erlang(2, 2.0).unwrap().sampler();
        let mut rng = rng_from_seed(3);
        let n = 1_000_000;
        let mean = (0..n).map(|_| s.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn hyperexponential_sample_scv() {
        // balanced-means H2 with SCV 4
        let c2: f64 = 4.0;
        let p1 = 0.5 * (1.0 + ((c2 - 1.0) / (c2 + 1.0)).sqrt());
        let ph = PhaseType::hyperexponential(&[p1, 1.0 - p1], &[2.0 * p1, 2.0 * (1.0 - p1)]).unwrap();
        let m = ph.moments(2);
        assert!(close(m.scv(), 4.0, 1e-10));
        let s = ph.sampler();
        let mut rng = rng_from_seed(5);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = s.sample(&mut rng);
            s1 += x;
            s2 += x * x;
        }
        let (e1, e2) = (s1 / n as f64, s2 / n as f64);
        let scv = e2 / (e1 * e1) - 1.0;
        assert!((scv - 4.0).abs() / 4.0 < 0.05, "scv {scv}");
    }

    #[test]
    fn large_erlang_uses_gamma_path() {
        let ph = PhaseType::erlang(400, 400.0).unwrap();
        assert!(matches!(ph.sampler(), PhSampler::Gamma(_)));
        assert!(close(ph.moments(2).scv(), 1.0 / 400.0, 1e-9));
    }

    #[test]
    fn scale_time_divides_rates() {
        let ph = PhaseType::coxian(&[1.0, 3.0, 0.5], &[0.4, 0.7]).unwrap();
        let m = ph.moments(3);
        let s = ph.scale_time(2.5).unwrap().moments(3);
        for i in 0..3 {
            assert!(close(s[i], m[i] * 2.5f64.powi(i as i32 + 1), 1e-10));
        }
        assert!(close(ph.normalized().unwrap().mean(), 1.0, 1e-12));
    }

    #[test]
    fn json_shape() {
        let ph = PhaseType::new(vec![1.0], vec![vec![-2.0]]).unwrap();
        let v = serde_json::to_value(&ph).unwrap();
        assert_eq!(v, serde_json::json!({"alpha": [1.0], "subgen": [[-2.0]]}));
        let back: PhaseType = serde_json::from_value(v).unwrap();
        assert_eq!(back, ph);
        let bad = serde_json::json!({"alpha": [0.3], "subgen": [[-2.0]]});
        assert!(serde_json::from_value::<PhaseType>(bad).is_err());
    }
}
