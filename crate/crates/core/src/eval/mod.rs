//! Correlation-based evaluation, embedding similarity analysis and the
//! variant × pre-training ablation grid.

mod ablation;

pub use ablation::{ablation_grid, AblationCell, AblationRun, AblationTable};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Corpus;
use crate::scorer::{predict, preprocess, ScorerParams};
use crate::tensor::{cosine, Graph, Tensor};

/// Sample Pearson correlation coefficient.
pub fn pcc(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::dim("pcc", &[preds.len()], &[labels.len()]));
    }
    let n = preds.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 points, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(preds), mean(labels));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in preds.iter().zip(labels) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            if sxx == 0.0 { "predictions are constant" } else { "labels are constant" }.into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub predicted: f64,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: Vec<EvalItem>,
    pub pcc: f64,
    pub count: usize,
}

/// Scores every utterance of `corpus` and correlates with its labels.
pub fn evaluate(params: &ScorerParams, corpus: &Corpus) -> Result<EvalReport> {
    let cfg = params.config();
    if corpus.num_phones != cfg.num_phones || corpus.feat_dim != cfg.feat_dim {
        return Err(Error::Config(format!(
            "corpus has {} phones / {}-dim features, model expects {} / {}",
            corpus.num_phones, corpus.feat_dim, cfg.num_phones, cfg.feat_dim
        )));
    }
    let items = corpus
        .utterances
        .iter()
        .map(|u| {
            Ok(EvalItem {
                id: u.id.clone(),
                predicted: predict(params, u)?.score,
                label: u.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<f64> = items.iter().map(|i| i.predicted).collect();
    let labels: Vec<f64> = items.iter().map(|i| i.label).collect();
    Ok(EvalReport {
        pcc: pcc(&preds, &labels)?,
        count: items.len(),
        items,
    })
}

pub fn export_report(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Pairwise cosine similarity of phone embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

/// Cosine similarity between the consumed phone embeddings (after
/// embedding lookup, layer norm and tanh) of `ids`, labelled by id.
pub fn embedding_similarity(params: &ScorerParams, ids: &[usize]) -> Result<SimilarityMatrix> {
    if ids.len() < 2 {
        return Err(Error::Input(format!("need at least 2 phones, got {}", ids.len())));
    }
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[ids.len(), params.config().feat_dim]));
    let (_, e) = preprocess(&mut g, params, x, ids)?;
    let e = g.value(e);
    let n = ids.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        matrix[i][i] = 1.0;
        for j in 0..i {
            let c = cosine(e.row(i), e.row(j));
            matrix[i][j] = c;
            matrix[j][i] = c;
        }
    }
    Ok(SimilarityMatrix {
        labels: ids.iter().map(|p| p.to_string()).collect(),
        matrix,
    })
}

impl SimilarityMatrix {
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.labels.len() {
            return Err(Error::Input(format!(
                "{} labels for {} phones",
                labels.len(),
                self.labels.len()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("phone");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.matrix) {
            out.push_str(l);
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Input("empty heatmap CSV".into()))?;
        let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
        let mut matrix = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or_default();
            if labels.get(i).map(String::as_str) != Some(label) {
                return Err(Error::Parse {
                    line: i + 2,
                    message: format!("row label `{label}` does not match header"),
                });
            }
            let row = cells
                .map(|c| {
                    c.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 2,
                        message: e.to_string(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            matrix.push(row);
        }
        Ok(Self { labels, matrix })
    }
}

pub fn export_heatmap(matrix: &SimilarityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix.to_csv()).map_err(|e| Error::io(path, e))
}

/// Mean off-diagonal similarity within and across groups given by `group_of`.
pub fn cluster_contrast(matrix: &SimilarityMatrix, group_of: &[usize]) -> (f64, f64) {
    let (mut within, mut wn, mut across, mut an) = (0.0, 0usize, 0.0, 0usize);
    for (i, row) in matrix.matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i == j {
                continue;
            }
            if group_of[i] == group_of[j] {
                within += v;
                wn += 1;
            } else {
                across += v;
                an += 1;
            }
        }
    }
    (within / wn.max(1) as f64, across / an.max(1) as f64)
}
