use super::early_stop::{early_stop, StopDecision};
use super::{epoch_order, holdout_split, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::frontend::{compute_gop, Corpus, UtteranceSample};
use crate::scorer::{preprocess, Partition, ScorerParams};
use crate::tensor::{Adam, AdamState, Graph, Tensor};

/// Inputs and normalized-GOP targets of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneTargets {
    pub features: Tensor,
    pub ids: Vec<usize>,
    pub targets: Vec<f64>,
}

/// Normalized GOP of every phone segment in `sample`.
pub fn gop_targets(sample: &UtteranceSample) -> Result<PhoneTargets> {
    let targets = sample
        .segments
        .iter()
        .map(|s| compute_gop(&sample.post, s).map(|r| r.normalized))
        .collect::<Result<Vec<_>>>()?;
    Ok(PhoneTargets {
        features: sample.phone_features()?,
        ids: sample.phone_ids(),
        targets,
    })
}

fn prepare(corpus: &Corpus) -> Result<Vec<PhoneTargets>> {
    corpus
        .utterances
        .iter()
        .filter(|u| !u.segments.is_empty())
        .map(gop_targets)
        .collect()
}

/// Rescaled similarity `(cos + 1) / 2` per phone, as a graph node (`N×1`).
fn rescaled_similarity(g: &mut Graph, params: &ScorerParams, item: &PhoneTargets) -> Result<crate::tensor::Var> {
    let x = g.input(item.features.clone());
    let (h, e) = preprocess(g, params, x, &item.ids)?;
    let s = g.cosine_rows(h, e)?;
    Ok(g.affine(s, 0.5, 0.5))
}

fn item_loss(g: &mut Graph, params: &ScorerParams, item: &PhoneTargets) -> Result<crate::tensor::Var> {
    let s = rescaled_similarity(g, params, item)?;
    let t = g.input(Tensor::new(vec![item.targets.len(), 1], item.targets.clone())?);
    let d = g.sub(s, t)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

fn mean_loss(params: &ScorerParams, items: &[PhoneTargets]) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let mut g = Graph::new();
        let l = item_loss(&mut g, params, item)?;
        total += g.value(l).item()?;
    }
    Ok(total / items.len() as f64)
}

/// `(s', g)` for every phone of `corpus`, where `s'` is the rescaled
/// embedding similarity and `g` the normalized GOP.
pub fn similarity_gop_pairs(params: &ScorerParams, corpus: &Corpus) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for item in prepare(corpus)? {
        let mut g = Graph::new();
        let s = rescaled_similarity(&mut g, params, &item)?;
        out.extend(g.value(s).data().iter().copied().zip(item.targets));
    }
    Ok(out)
}

/// Fits the preprocessing network so that the rescaled similarity of each
/// phone tracks its normalized GOP. Only preprocessing tensors change.
/// Without `dev`, a seeded share of `train` is held out for early stopping.
pub fn pretrain_gop(
    train: &Corpus,
    dev: Option<&Corpus>,
    mut params: ScorerParams,
    cfg: &TrainConfig,
) -> Result<(ScorerParams, TrainLog)> {
    cfg.validate()?;
    let (train_items, dev_items) = match dev {
        Some(dev) => (prepare(train)?, prepare(dev)?),
        None => {
            let (t, d) = holdout_split(train, cfg.dev_fraction, cfg.seed)?;
            (prepare(&t)?, prepare(&d)?)
        }
    };
    if train_items.is_empty() || dev_items.is_empty() {
        return Err(Error::Config("pre-training needs non-empty train and dev sets".into()));
    }

    let adam = Adam::with_lr(cfg.lr);
    let mut state = AdamState::new(params.store());
    let pre = params.ids_in(Partition::Preprocessing);
    let mut log = TrainLog::new("pretrain");
    let mut best = params.clone();
    let shuffle_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;

    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        for (step, &i) in epoch_order(train_items.len(), shuffle_seed, epoch).iter().enumerate() {
            let mut g = Graph::new();
            let loss = item_loss(&mut g, &params, &train_items[i])?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            let grads = g.backward(loss)?;
            adam.step(&mut state, params.store_mut(), &grads, |id| pre.contains(&id))?;
            total += value;
            log.steps += 1;
        }
        let dev_loss = mean_loss(&params, &dev_items)?;
        if !dev_loss.is_finite() {
            return Err(Error::Diverged { epoch, step: train_items.len() });
        }
        log.train_loss.push(total / train_items.len() as f64);
        log.dev_loss.push(dev_loss);
        if dev_loss < log.best_dev_loss {
            log.best_dev_loss = dev_loss;
            log.best_epoch = epoch;
            best = params.clone();
        }
        if let StopDecision::Stop { .. } = early_stop(&log.dev_loss, cfg.patience) {
            log.stopped_early = true;
            break;
        }
    }
    Ok((best, log))
}
