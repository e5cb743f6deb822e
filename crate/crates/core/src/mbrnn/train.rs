use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{backward, forward_trace};
use super::params::{Arch, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::sae;
use crate::seeding::child_rng;
use crate::simkernel::LabelMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_arrival: usize,
    pub n_service: usize,
    pub layers: usize,
    pub hidden: usize,
    pub lr0: f64,
    /// Per-epoch factor: `lr = lr0 · lr_decay^epoch`.
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Add `weight_decay · w` to the gradient instead of shrinking weights directly.
    pub coupled_weight_decay: bool,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_arrival: 4,
            n_service: 4,
            layers: 4,
            hidden: 128,
            lr0: 1e-3,
            lr_decay: 0.95,
            weight_decay: 1e-5,
            coupled_weight_decay: false,
            batch: 32,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return invalid(format!("lr0 must be >= 0, got {}", self.lr0));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return invalid(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return invalid("weight_decay must be >= 0");
        }
        if self.batch == 0 {
            return invalid("batch must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return invalid("bad Adam constants");
        }
        Ok(())
    }

    pub fn arch(&self, l: usize) -> Result<Arch> {
        Arch::new(self.n_arrival, self.n_service, l, self.layers, self.hidden)
    }
}

/// One supervised sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: FeatureMatrix,
    pub y: LabelMatrix,
}

struct Flat {
    x: Vec<f32>,
    y: Vec<f32>,
    t: usize,
}

fn flatten(examples: &[Example], arch: &Arch) -> Result<Vec<Flat>> {
    examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            if e.x.width() != arch.input() || e.y.width() != arch.output || e.x.horizon() != e.y.horizon() {
                return invalid(format!(
                    "example {i}: shapes {}x{} / {}x{} do not fit input {} output {}",
                    e.x.horizon(),
                    e.x.width(),
                    e.y.horizon(),
                    e.y.width(),
                    arch.input(),
                    arch.output
                ));
            }
            Ok(Flat {
                x: e.x.rows().iter().flatten().map(|v| *v as f32).collect(),
                y: e.y.rows().iter().flatten().map(|v| *v as f32).collect(),
                t: e.x.horizon(),
            })
        })
        .collect()
}

/// Mean per-period SAE of `p` over `examples`.
pub fn mean_sae(p: &ModelParams<f32>, examples: &[Example]) -> Result<f64> {
    let arch = p.arch;
    let flat = flatten(examples, &arch)?;
    Ok(flat_sae(p, &flat))
}

fn flat_sae(p: &ModelParams<f32>, flat: &[Flat]) -> f64 {
    let o = p.arch.output;
    let per: Vec<(f64, usize)> = flat
        .par_iter()
        .map(|f| {
            let tr = forward_trace(p, &f.x, f.t);
            let mut s = 0.0;
            for (a, b) in tr.probs.chunks(o).zip(f.y.chunks(o)) {
                let a: Vec<f64> = a.iter().map(|v| f64::from(*v)).collect();
                let b: Vec<f64> = b.iter().map(|v| f64::from(*v)).collect();
                s += sae(&b, &a);
            }
            (s, f.t)
        })
        .collect();
    let (s, n) = per.iter().fold((0.0, 0), |(s, n), (a, b)| (s + a, n + b));
    s / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_sae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub initial_val_sae: f64,
    pub epochs: Vec<EpochStats>,
    /// Index into `epochs` of the retained parameters (`None` if no epoch ran).
    pub best_epoch: Option<usize>,
    pub best_val_sae: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub history: History,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, p: &mut [f32], g: &mut [f32], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let wd = cfg.weight_decay as f32;
        if cfg.coupled_weight_decay {
            g.iter_mut().zip(p.iter()).for_each(|(gv, pv)| *gv += wd * *pv);
        } else {
            let shrink = 1.0 - (lr * cfg.weight_decay) as f32;
            p.iter_mut().for_each(|v| *v *= shrink);
        }
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (cfg.adam_eps * c2.sqrt()) as f32;
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

/// Trains from a fresh initialization drawn from `cfg.seed`.
pub fn train(train_set: &[Example], val_set: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(first) = train_set.first() else {
        return invalid("training set is empty");
    };
    if val_set.is_empty() {
        return invalid("validation set is empty");
    }
    let arch = cfg.arch(first.y.width() - 1)?;
    let mut params: ModelParams<f32> = ModelParams::init(arch, &mut child_rng(cfg.seed, "init", 0));
    let tr = flatten(train_set, &arch)?;
    let va = flatten(val_set, &arch)?;

    let initial = flat_sae(&params, &va);
    log::info!("initial validation SAE {initial:.5}");
    let mut history = History { initial_val_sae: initial, epochs: Vec::new(), best_epoch: None, best_val_sae: f64::INFINITY };
    let mut best = params.clone();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..tr.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        order.shuffle(&mut child_rng(cfg.seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let w = 1.0 / chunk.len() as f32;
            let parts: Vec<(f32, Vec<f32>)> = chunk
                .par_iter()
                .map(|&i| {
                    let f = &tr[i];
                    let mut g = vec![0.0f32; params.len()];
                    let l = backward(&params, &f.x, &f.y, f.t, w, &mut g);
                    (l, g)
                })
                .collect();
            let mut g = vec![0.0f32; params.len()];
            for (l, part) in &parts {
                total += f64::from(*l) * chunk.len() as f64;
                g.iter_mut().zip(part).for_each(|(a, b)| *a += *b);
            }
            adam.update(&mut params.data, &mut g, lr, cfg);
        }
        if !params.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after epoch {epoch}")));
        }
        let val_sae = flat_sae(&params, &va);
        let train_loss = total / tr.len() as f64;
        log::info!("epoch {epoch}: lr {lr:.3e} train loss {train_loss:.5} val SAE {val_sae:.5}");
        if val_sae < history.best_val_sae {
            history.best_val_sae = val_sae;
            history.best_epoch = Some(epoch);
            best.data.copy_from_slice(&params.data);
        }
        history.epochs.push(EpochStats { epoch, lr, train_loss, val_sae });
    }
    if history.best_epoch.is_none() {
        history.best_val_sae = initial;
    }
    Ok(TrainOutcome { params: best, history })
}
