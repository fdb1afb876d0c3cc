#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop { best_epoch: usize },
}

/// Stops once the best dev loss is `patience` or more epochs old. Ties do
/// not count as improvement, so the earliest minimum is the best epoch.
pub fn early_stop(dev_losses: &[f64], patience: usize) -> StopDecision {
    let Some(best_epoch) = best_epoch(dev_losses) else {
        return StopDecision::Continue;
    };
    if dev_losses.len() - 1 - best_epoch >= patience {
        StopDecision::Stop { best_epoch }
    } else {
        StopDecision::Continue
    }
}

pub(crate) fn best_epoch(losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in losses.iter().enumerate() {
        match best {
            Some((_, b)) if l >= b => {}
            _ => best = Some((i, l)),
        }
    }
    best.map(|(i, _)| i)
}
