//! Synthetic corpora with known pronunciation ground truth.
//!
//! Every phone has a fixed "native" prototype vector; prototypes are grouped
//! into clusters of similar sounds. A speaker of skill `u` realizes each phone
//! at its own prototype with probability `u` and at its confusable neighbour's
//! prototype otherwise. Frame features are the realized prototype plus
//! Gaussian noise, frame posteriors come from a softmax over negative squared
//! distances to every prototype, and the label is the fraction of correctly
//! realized phones plus a little rating noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, PhoneSegment, Posteriorgram, UtteranceSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_phones: usize,
    pub feat_dim: usize,
    pub num_clusters: usize,
    /// Std-dev of cluster centres around the origin.
    pub cluster_scale: f64,
    /// Std-dev of phone prototypes around their cluster centre.
    pub phone_scale: f64,
    pub words_per_utterance: (usize, usize),
    pub phones_per_word: (usize, usize),
    pub frames_per_phone: (usize, usize),
    /// Std-dev of the Gaussian added to every frame feature.
    pub noise: f64,
    /// Inverse temperature of the posterior softmax over `-|x - proto|^2`.
    pub sharpness: f64,
    pub label_noise: f64,
    /// Speaker skill is drawn uniformly from this closed range.
    pub skill_range: (f64, f64),
    pub splits: SplitSizes,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_phones: 40,
            feat_dim: 32,
            num_clusters: 8,
            cluster_scale: 1.0,
            phone_scale: 0.35,
            words_per_utterance: (3, 6),
            phones_per_word: (2, 4),
            frames_per_phone: (2, 5),
            noise: 0.3,
            sharpness: 1.0,
            label_noise: 0.05,
            skill_range: (0.0, 1.0),
            splits: SplitSizes {
                train: 500,
                dev: 100,
                test: 100,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.num_phones < 2 {
            return err(format!("need at least 2 phones, got {}", self.num_phones));
        }
        if self.feat_dim == 0 {
            return err("feat_dim must be positive".into());
        }
        if self.num_clusters == 0 || self.num_clusters > self.num_phones {
            return err(format!(
                "num_clusters must be in 1..={}, got {}",
                self.num_phones, self.num_clusters
            ));
        }
        if self.splits.total() == 0 {
            return err("corpus would have zero utterances".into());
        }
        for (name, (lo, hi)) in [
            ("words_per_utterance", self.words_per_utterance),
            ("phones_per_word", self.phones_per_word),
            ("frames_per_phone", self.frames_per_phone),
        ] {
            if lo == 0 || lo > hi {
                return err(format!("{name} range ({lo}, {hi}) is invalid"));
            }
        }
        let (a, b) = self.skill_range;
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return err(format!("skill_range ({a}, {b}) must lie in [0, 1]"));
        }
        for (name, v) in [
            ("cluster_scale", self.cluster_scale),
            ("phone_scale", self.phone_scale),
            ("noise", self.noise),
            ("sharpness", self.sharpness),
            ("label_noise", self.label_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Ground truth behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    /// `|Q|×D1` native prototypes.
    pub prototypes: Tensor,
    pub cluster: Vec<usize>,
    /// Nearest other prototype (Euclidean) for every phone.
    pub confusable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub inventory: Inventory,
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Inventory {
    fn generate(cfg: &SynthConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        let (q, d) = (cfg.num_phones, cfg.feat_dim);
        let centres: Vec<Vec<f64>> = (0..cfg.num_clusters)
            .map(|_| (0..d).map(|_| cfg.cluster_scale * normal(&mut rng)).collect())
            .collect();
        let cluster: Vec<usize> = (0..q).map(|p| p % cfg.num_clusters).collect();
        let mut protos = Vec::with_capacity(q * d);
        for &c in &cluster {
            for j in 0..d {
                protos.push(centres[c][j] + cfg.phone_scale * normal(&mut rng));
            }
        }
        let prototypes = Tensor::new(vec![q, d], protos).expect("prototype shape");
        let confusable = (0..q)
            .map(|p| {
                (0..q)
                    .filter(|&o| o != p)
                    .min_by(|&a, &b| {
                        let da = sq_dist(prototypes.row(p), prototypes.row(a));
                        let db = sq_dist(prototypes.row(p), prototypes.row(b));
                        da.total_cmp(&db)
                    })
                    .expect("at least two phones")
            })
            .collect();
        Self {
            prototypes,
            cluster,
            confusable,
        }
    }

    pub fn num_phones(&self) -> usize {
        self.cluster.len()
    }

    /// Log-softmax of `-sharpness * |x - proto_q|^2` over all phones.
    fn log_posterior(&self, x: &[f64], sharpness: f64) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.num_phones())
            .map(|q| -sharpness * sq_dist(x, self.prototypes.row(q)))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| (l - lse).min(0.0)).collect()
    }

    fn utterance(&self, cfg: &SynthConfig, seed: u64, index: usize) -> UtteranceSample {
        let mut rng = rng_for(seed, index as u64 + 1);
        let (lo, hi) = cfg.skill_range;
        let skill = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let words = rng.random_range(cfg.words_per_utterance.0..=cfg.words_per_utterance.1);

        let d = cfg.feat_dim;
        let mut segments = Vec::new();
        let mut feats = Vec::new();
        let mut log_post = Vec::new();
        let mut correct = 0usize;
        let mut frame = 0usize;
        for word in 0..words {
            let phones = rng.random_range(cfg.phones_per_word.0..=cfg.phones_per_word.1);
            for _ in 0..phones {
                let phone = rng.random_range(0..self.num_phones());
                let ok = rng.random::<f64>() < skill;
                let realized = if ok {
                    correct += 1;
                    phone
                } else {
                    self.confusable[phone]
                };
                let frames = rng.random_range(cfg.frames_per_phone.0..=cfg.frames_per_phone.1);
                for _ in 0..frames {
                    let x: Vec<f64> = self
                        .prototypes
                        .row(realized)
                        .iter()
                        .map(|v| v + cfg.noise * normal(&mut rng))
                        .collect();
                    log_post.push(self.log_posterior(&x, cfg.sharpness));
                    feats.push(x);
                }
                segments.push(PhoneSegment {
                    phone,
                    word,
                    start: frame,
                    end: frame + frames,
                });
                frame += frames;
            }
        }
        let fraction = correct as f64 / segments.len() as f64;
        let score = (fraction + cfg.label_noise * normal(&mut rng)).clamp(0.0, 1.0);
        let post = Posteriorgram::new(
            Tensor::from_rows(&log_post, self.num_phones()).expect("posterior rows"),
            Tensor::from_rows(&feats, d).expect("feature rows"),
        )
        .expect("posteriorgram shape");
        UtteranceSample {
            id: format!("utt{index:06}"),
            score,
            segments,
            post,
        }
    }
}

/// Deterministic corpus for `seed`. Utterance `i` (numbered across the
/// train, dev and test splits in that order) draws from its own random
/// stream, so any subset can be regenerated independently.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SynthCorpus> {
    cfg.validate()?;
    let inventory = Inventory::generate(cfg, seed);
    let make = |range: std::ops::Range<usize>| Corpus {
        num_phones: cfg.num_phones,
        feat_dim: cfg.feat_dim,
        utterances: range.map(|i| inventory.utterance(cfg, seed, i)).collect(),
    };
    let s = cfg.splits;
    let train = make(0..s.train);
    let dev = make(s.train..s.train + s.dev);
    let test = make(s.train + s.dev..s.total());
    Ok(SynthCorpus {
        inventory,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::compute_gop;

    fn small(train: usize) -> SynthConfig {
        SynthConfig {
            num_phones: 12,
            feat_dim: 6,
            num_clusters: 3,
            splits: SplitSizes {
                train,
                dev: 2,
                test: 2,
            },
            ..SynthConfig::default()
        }
    }

    #[test]
    fn perfect_speaker() {
        let cfg = SynthConfig {
            noise: 0.0,
            label_noise: 0.0,
            skill_range: (1.0, 1.0),
            ..small(5)
        };
        let corpus = synth_generate(&cfg, 7).unwrap();
        for utt in &corpus.train.utterances {
            assert_eq!(utt.score, 1.0);
            for seg in &utt.segments {
                assert_eq!(compute_gop(&utt.post, seg).unwrap().gop, 0.0);
            }
            let x = utt.phone_features().unwrap();
            for (i, seg) in utt.segments.iter().enumerate() {
                let proto = corpus.inventory.prototypes.row(seg.phone);
                assert!(x.row(i).iter().zip(proto).all(|(a, b)| (a - b).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn worst_speaker_scores_zero() {
        let cfg = SynthConfig {
            label_noise: 0.0,
            skill_range: (0.0, 0.0),
            ..small(5)
        };
        let corpus = synth_generate(&cfg, 3).unwrap();
        assert!(corpus.train.utterances.iter().all(|u| u.score == 0.0));
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synth_generate(&small(4), 11).unwrap();
        let b = synth_generate(&small(4), 11).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(4), 12).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn utterance_streams_are_independent_of_split_sizes() {
        let a = synth_generate(&small(4), 5).unwrap();
        let b = synth_generate(&small(6), 5).unwrap();
        assert_eq!(a.train.utterances[..4], b.train.utterances[..4]);
    }

    #[test]
    fn generated_samples_pass_validation() {
        let c = synth_generate(&small(6), 9).unwrap();
        for u in &c.train.utterances {
            u.validate(12, 6).unwrap();
        }
    }

    #[test]
    fn confusable_is_another_phone() {
        let c = synth_generate(&small(1), 1).unwrap();
        for (p, &q) in c.inventory.confusable.iter().enumerate() {
            assert_ne!(p, q);
        }
    }

    #[test]
    fn degenerate_configs() {
        let one_phone = SynthConfig {
            num_phones: 1,
            num_clusters: 1,
            ..small(1)
        };
        assert!(matches!(synth_generate(&one_phone, 0), Err(Error::Config(_))));
        let empty = SynthConfig {
            splits: SplitSizes {
                train: 0,
                dev: 0,
                test: 0,
            },
            ..small(1)
        };
        assert!(matches!(synth_generate(&empty, 0), Err(Error::Config(_))));
    }
}
