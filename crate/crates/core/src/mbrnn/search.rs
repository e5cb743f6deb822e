use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use super::train::{train, Example, TrainConfig};
use crate::error::{invalid, Result};
use crate::seeding::child_rng;

/// Discrete search grid; every combination is one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpSpace {
    pub lr0: Vec<f64>,
    pub layers: Vec<usize>,
    pub hidden: Vec<usize>,
    pub batch: Vec<usize>,
    pub weight_decay: Vec<f64>,
}

impl Default for HpSpace {
    fn default() -> Self {
        HpSpace {
            lr0: vec![1e-4, 5e-4, 1e-3, 5e-3],
            layers: vec![2, 3, 4, 5, 6],
            hidden: vec![16, 32, 64, 128],
            batch: vec![32, 64, 128, 256],
            weight_decay: vec![1e-4, 1e-5, 1e-6],
        }
    }
}

impl HpSpace {
    pub fn size(&self) -> usize {
        self.lr0.len() * self.layers.len() * self.hidden.len() * self.batch.len() * self.weight_decay.len()
    }

    /// Candidate `idx` in mixed-radix order (weight decay varies fastest).
    pub fn config_at(&self, idx: usize, base: &TrainConfig) -> TrainConfig {
        let mut r = idx;
        let mut pick = |n: usize| {
            let v = r % n;
            r /= n;
            v
        };
        let wd = self.weight_decay[pick(self.weight_decay.len())];
        let batch = self.batch[pick(self.batch.len())];
        let hidden = self.hidden[pick(self.hidden.len())];
        let layers = self.layers[pick(self.layers.len())];
        let lr0 = self.lr0[pick(self.lr0.len())];
        TrainConfig { lr0, layers, hidden, batch, weight_decay: wd, ..base.clone() }
    }

    pub fn contains(&self, c: &TrainConfig) -> bool {
        self.lr0.contains(&c.lr0)
            && self.layers.contains(&c.layers)
            && self.hidden.contains(&c.hidden)
            && self.batch.contains(&c.batch)
            && self.weight_decay.contains(&c.weight_decay)
    }
}

/// Distinct candidates drawn uniformly; `budget` is capped at the grid size.
pub fn draw_configs(space: &HpSpace, budget: usize, seed: u64, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
    let n = space.size();
    if n == 0 || budget == 0 {
        return invalid("search needs a non-empty space and budget >= 1");
    }
    let budget = if budget > n {
        log::warn!("budget {budget} exceeds the {n}-point space; capping");
        n
    } else {
        budget
    };
    let mut rng = child_rng(seed, "hp_search", 0);
    Ok(sample_indices(&mut rng, n, budget).into_iter().map(|i| space.config_at(i, base)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub config: TrainConfig,
    pub val_sae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: TrainConfig,
    pub best_val_sae: f64,
    pub trials: Vec<Trial>,
}

/// Trains each drawn candidate and keeps the lowest validation SAE (first wins ties).
pub fn hp_search(
    space: &HpSpace,
    budget: usize,
    seed: u64,
    train_set: &[Example],
    val_set: &[Example],
    base: &TrainConfig,
) -> Result<SearchResult> {
    let configs = draw_configs(space, budget, seed, base)?;
    let mut trials = Vec::with_capacity(configs.len());
    for (i, c) in configs.into_iter().enumerate() {
        log::info!("trial {i}: lr0 {} layers {} hidden {} batch {} wd {}", c.lr0, c.layers, c.hidden, c.batch, c.weight_decay);
        let out = train(train_set, val_set, &c)?;
        trials.push(Trial { config: c, val_sae: out.history.best_val_sae });
    }
    let best = trials
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.val_sae.total_cmp(&b.1.val_sae).then(a.0.cmp(&b.0)))
        .map(|(_, t)| t.clone())
        .expect("at least one trial");
    Ok(SearchResult { best: best.config, best_val_sae: best.val_sae, trials })
}
