//! Frame-level inputs and the phone-level features derived from them.
//!
//! Alignments and posteriorgrams come from an external acoustic model; this
//! module only consumes them, either from the JSONL interchange format or
//! from the synthetic generator.

mod corpus;
mod gop;
mod synth;

pub use corpus::{load_corpus, read_corpus, save_corpus, write_corpus, Corpus, CorpusHeader};
pub use gop::{compute_gop, compute_lpp, normalize_gop, segment_lpps, GopRecord};
pub use synth::{synth_generate, Inventory, SplitSizes, SynthConfig, SynthCorpus};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on `|sum_q p(q|frame) - 1|`.
pub const POSTERIOR_SUM_TOL: f64 = 1e-6;

/// Per-frame log posteriors over the phone set plus per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriorgram {
    log_post: Tensor,
    frame_feats: Tensor,
}

impl Posteriorgram {
    /// `log_post` is `T×|Q|`, `frame_feats` is `T×D1`.
    pub fn new(log_post: Tensor, frame_feats: Tensor) -> Result<Self> {
        if log_post.shape().len() != 2
            || frame_feats.shape().len() != 2
            || log_post.shape()[0] != frame_feats.shape()[0]
        {
            return Err(Error::dim("posteriorgram", log_post.shape(), frame_feats.shape()));
        }
        Ok(Self {
            log_post,
            frame_feats,
        })
    }

    pub fn frames(&self) -> usize {
        self.log_post.shape()[0]
    }

    pub fn num_phones(&self) -> usize {
        self.log_post.shape()[1]
    }

    pub fn feat_dim(&self) -> usize {
        self.frame_feats.shape()[1]
    }

    pub fn log_post(&self) -> &Tensor {
        &self.log_post
    }

    pub fn frame_feats(&self) -> &Tensor {
        &self.frame_feats
    }

    /// Index of the first row violating the posterior invariants, with reason.
    fn check_rows(&self) -> Option<(usize, String)> {
        for t in 0..self.frames() {
            let row = self.log_post.row(t);
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v > 0.0) {
                return Some((t, format!("log posterior {v} must be finite and <= 0")));
            }
            let total: f64 = row.iter().map(|v| v.exp()).sum();
            if (total - 1.0).abs() > POSTERIOR_SUM_TOL {
                return Some((t, format!("posteriors sum to {total}, expected 1")));
            }
        }
        None
    }
}

/// One aligned phone: frames `start..end` of the utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhoneSegment {
    pub phone: usize,
    pub word: usize,
    pub start: usize,
    pub end: usize,
}

impl PhoneSegment {
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_bounds(&self, frames: usize) -> Result<()> {
        if self.start >= self.end || self.end > frames {
            return Err(Error::Alignment {
                start: self.start,
                end: self.end,
                frames,
            });
        }
        Ok(())
    }
}

/// A scored utterance with its alignment and posteriorgram.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceSample {
    pub id: String,
    pub score: f64,
    pub segments: Vec<PhoneSegment>,
    pub post: Posteriorgram,
}

impl UtteranceSample {
    pub fn num_phones(&self) -> usize {
        self.segments.len()
    }

    pub fn word_count(&self) -> usize {
        self.segments.last().map_or(0, |s| s.word + 1)
    }

    pub fn phone_ids(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.phone).collect()
    }

    /// Phone indices grouped by word, in order.
    pub fn word_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.word_count()];
        for (i, s) in self.segments.iter().enumerate() {
            groups[s.word].push(i);
        }
        groups
    }

    /// Phone-level acoustic features, one averaged row per segment (`N×D1`).
    pub fn phone_features(&self) -> Result<Tensor> {
        let d = self.post.feat_dim();
        let mut data = Vec::with_capacity(self.segments.len() * d);
        for seg in &self.segments {
            data.extend(segment_average(self.post.frame_feats(), seg)?);
        }
        Tensor::new(vec![self.segments.len(), d], data)
    }

    /// Checks every invariant; on failure returns `(field, message)`.
    pub fn validate(&self, num_phones: usize, feat_dim: usize) -> Result<(), (String, String)> {
        let fail = |f: &str, m: String| Err((f.to_string(), m));
        if !(0.0..=1.0).contains(&self.score) {
            return fail("score", format!("{} outside [0, 1]", self.score));
        }
        if self.post.num_phones() != num_phones {
            return fail(
                "log_post",
                format!("{} columns, header says {num_phones}", self.post.num_phones()),
            );
        }
        if self.post.feat_dim() != feat_dim {
            return fail(
                "frame_feats",
                format!("{} columns, header says {feat_dim}", self.post.feat_dim()),
            );
        }
        if !self.post.frame_feats().is_finite() {
            return fail("frame_feats", "non-finite value".into());
        }
        if let Some((t, msg)) = self.post.check_rows() {
            return fail(&format!("log_post[{t}]"), msg);
        }
        if self.segments.is_empty() {
            return fail("phones", "utterance has no phones".into());
        }
        let frames = self.post.frames();
        let mut prev: Option<&PhoneSegment> = None;
        for (i, s) in self.segments.iter().enumerate() {
            if s.phone >= num_phones {
                return fail(
                    &format!("phones[{i}].phone"),
                    format!("{} not in 0..{num_phones}", s.phone),
                );
            }
            if s.start >= s.end {
                return fail(
                    &format!("phones[{i}].t_e"),
                    format!("t_e {} must exceed t_s {}", s.end, s.start),
                );
            }
            if s.end > frames {
                return fail(
                    &format!("phones[{i}].t_e"),
                    format!("t_e {} beyond {frames} frames", s.end),
                );
            }
            match prev {
                None if s.word != 0 => {
                    return fail(&format!("phones[{i}].word"), "first word index must be 0".into())
                }
                Some(p) if s.start < p.end => {
                    return fail(
                        &format!("phones[{i}].t_s"),
                        format!("overlaps previous segment ending at {}", p.end),
                    )
                }
                Some(p) if s.word != p.word && s.word != p.word + 1 => {
                    return fail(
                        &format!("phones[{i}].word"),
                        format!("word {} after {} is not contiguous", s.word, p.word),
                    )
                }
                _ => {}
            }
            prev = Some(s);
        }
        Ok(())
    }
}

/// Mean of frame rows `seg.start..seg.end`.
pub fn segment_average(frame_feats: &Tensor, seg: &PhoneSegment) -> Result<Vec<f64>> {
    seg.check_bounds(frame_feats.rows())?;
    let d = frame_feats.last_dim();
    let mut acc = vec![0.0; d];
    for t in seg.start..seg.end {
        for (a, v) in acc.iter_mut().zip(frame_feats.row(t)) {
            *a += v;
        }
    }
    let inv = 1.0 / seg.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}
