use super::early_stop::{early_stop, StopDecision};
use super::{epoch_order, TrainConfig, TrainLog};
use crate::error::{Error, Result};
use crate::frontend::Corpus;
use crate::scorer::{forward, predict, ScorerParams};
use crate::tensor::{Adam, AdamState, Graph, Tensor};

/// Mean squared error of predicted against labelled scores over `corpus`.
pub fn mse(params: &ScorerParams, corpus: &Corpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Config("mse of an empty corpus".into()));
    }
    let mut total = 0.0;
    for u in &corpus.utterances {
        let d = predict(params, u)?.score - u.score;
        total += d * d;
    }
    Ok(total / corpus.len() as f64)
}

/// Regresses the utterance score with squared error, one Adam step per
/// utterance over every parameter. Returns the parameters of the epoch
/// with the lowest dev loss.
pub fn train_scorer(
    train: &Corpus,
    dev: &Corpus,
    mut params: ScorerParams,
    cfg: &TrainConfig,
) -> Result<(ScorerParams, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config("training needs non-empty train and dev sets".into()));
    }
    let adam = Adam::with_lr(cfg.lr);
    let mut state = AdamState::new(params.store());
    let mut log = TrainLog::new("train");
    let mut best = params.clone();

    for epoch in 0..cfg.max_epochs {
        let mut total = 0.0;
        for (step, &i) in epoch_order(train.len(), cfg.seed, epoch).iter().enumerate() {
            let u = &train.utterances[i];
            let mut g = Graph::new();
            let f = forward(&mut g, &params, u)?;
            let y = g.input(Tensor::new(vec![1, 1], vec![u.score])?);
            let d = g.sub(f.score, y)?;
            let loss = g.mul(d, d)?;
            let value = g.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            let grads = g.backward(loss)?;
            adam.step(&mut state, params.store_mut(), &grads, |_| true)?;
            total += value;
            log.steps += 1;
        }
        let dev_loss = mse(&params, dev)?;
        if !dev_loss.is_finite() {
            return Err(Error::Diverged { epoch, step: train.len() });
        }
        log.train_loss.push(total / train.len() as f64);
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
