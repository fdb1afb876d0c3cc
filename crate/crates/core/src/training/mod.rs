//! GOP pre-training of the preprocessing network and utterance-score
//! regression, both driven by Adam with per-utterance steps and early
//! stopping on a dev set.

mod early_stop;
mod pretrain;
mod regress;

pub use early_stop::{early_stop, StopDecision};
pub use pretrain::{gop_targets, pretrain_gop, similarity_gop_pairs, PhoneTargets};
pub use regress::{mse, train_scorer};

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Run GOP pre-training before score regression.
    pub pretrain: bool,
    /// Share of training utterances held out when no dev set is given.
    pub dev_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            max_epochs: 50,
            patience: 7,
            seed: 0,
            pretrain: false,
            dev_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dev_fraction must be in (0, 1), got {}",
                self.dev_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch losses of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub stage: String,
    pub train_loss: Vec<f64>,
    pub dev_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub stopped_early: bool,
    pub steps: usize,
}

impl TrainLog {
    fn new(stage: &str) -> Self {
        Self {
            stage: stage.to_string(),
            train_loss: Vec::new(),
            dev_loss: Vec::new(),
            best_epoch: 0,
            best_dev_loss: f64::INFINITY,
            stopped_early: false,
            steps: 0,
        }
    }

    pub fn epochs(&self) -> usize {
        self.dev_loss.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Visiting order of `n` items in `epoch`; a pure function of its arguments.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Seeded split of `corpus` into (train, dev); dev gets `fraction` of the
/// utterances (at least one). Original order is kept within each part.
pub fn holdout_split(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    let n = corpus.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "need at least 2 utterances to hold out a dev set, got {n}"
        )));
    }
    let dev_n = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut is_dev = vec![false; n];
    idx[..dev_n].iter().for_each(|&i| is_dev[i] = true);
    let part = |want: bool| Corpus {
        num_phones: corpus.num_phones,
        feat_dim: corpus.feat_dim,
        utterances: corpus
            .utterances
            .iter()
            .zip(&is_dev)
            .filter(|(_, &d)| d == want)
            .map(|(u, _)| u.clone())
            .collect(),
    };
    Ok((part(false), part(true)))
}
