use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::evaluate;
use crate::error::Result;
use crate::frontend::Corpus;
use crate::scorer::{ScorerConfig, ScorerParams, Variant};
use crate::training::{pretrain_gop, train_scorer, TrainConfig, TrainLog};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub pretrain: bool,
    pub pcc: f64,
}

/// Test PCC per variant (rows) and pre-training setting (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn get(&self, variant: Variant, pretrain: bool) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.pretrain == pretrain)
            .map(|c| c.pcc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14} {:>10} {:>10}\n", "variant", "pretrain=0", "pretrain=1");
        for v in Variant::ALL {
            let cell = |p| self.get(v, p).map_or("-".to_string(), |x| format!("{x:.4}"));
            let _ = writeln!(out, "{:<14} {:>10} {:>10}", v.name(), cell(false), cell(true));
        }
        out
    }
}

/// One trained system of the grid.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub variant: Variant,
    pub pretrain: bool,
    pub params: ScorerParams,
    pub pretrain_log: Option<TrainLog>,
    pub train_log: TrainLog,
}

/// Trains the six systems from the same initialization seed and reports
/// test PCC for each. `base` supplies every config field but the variant.
pub fn ablation_grid(
    train: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    base: &ScorerConfig,
    cfg: &TrainConfig,
) -> Result<(AblationTable, Vec<AblationRun>)> {
    let mut cells = Vec::new();
    let mut runs = Vec::new();
    for variant in Variant::ALL {
        let config = ScorerConfig {
            variant,
            ..base.clone()
        };
        let init = ScorerParams::init(&config, cfg.seed)?;
        for pretrain in [false, true] {
            let (start, pretrain_log) = if pretrain {
                let (p, log) = pretrain_gop(train, Some(dev), init.clone(), cfg)?;
                (p, Some(log))
            } else {
                (init.clone(), None)
            };
            let (params, train_log) = train_scorer(train, dev, start, cfg)?;
            let pcc = evaluate(&params, test)?.pcc;
            cells.push(AblationCell { variant, pretrain, pcc });
            runs.push(AblationRun {
                variant,
                pretrain,
                params,
                pretrain_log,
                train_log,
            });
        }
    }
    Ok((AblationTable { cells }, runs))
}
