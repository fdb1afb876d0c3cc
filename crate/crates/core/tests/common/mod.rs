#![allow(dead_code)]

pub mod oracle;

use pronscore::frontend::{
    compute_gop, synth_generate, Corpus, PhoneSegment, Posteriorgram, SplitSizes, SynthConfig, UtteranceSample,
};
use pronscore::scorer::{forward, predict, ScorerConfig, ScorerParams, Variant};
use pronscore::tensor::{grad_check_params, Graph, ParamCheck, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_synth(train: usize, dev: usize, test: usize) -> SynthConfig {
    SynthConfig {
        num_phones: 10,
        feat_dim: 6,
        num_clusters: 3,
        splits: SplitSizes { train, dev, test },
        ..SynthConfig::default()
    }
}

/// A 2-word, 4-phone utterance over a 10-phone set with 6-dim features.
pub fn two_word_sample(seed: u64) -> UtteranceSample {
    let cfg = SynthConfig {
        words_per_utterance: (2, 2),
        phones_per_word: (2, 2),
        ..small_synth(1, 0, 0)
    };
    synth_generate(&cfg, seed).unwrap().train.utterances.remove(0)
}

pub fn corpus(cfg: &SynthConfig, seed: u64) -> (Corpus, Corpus, Corpus) {
    let c = synth_generate(cfg, seed).unwrap();
    (c.train, c.dev, c.test)
}

/// Initialized parameters with every tensor nudged off its structured init
/// (non-zero biases, non-unit gains).
pub fn generic_params(variant: Variant, feat_dim: usize, num_phones: usize, seed: u64) -> ScorerParams {
    let cfg = ScorerConfig::new(variant, feat_dim, num_phones);
    let mut p = ScorerParams::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<_> = p.store().ids().collect();
    for id in ids {
        for v in p.store_mut().get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    p
}

/// Finite-difference check of every scorer parameter on the 2-word,
/// 4-phone sample with a squared-error loss.
pub fn scorer_grad_check(variant: Variant) -> Vec<ParamCheck> {
    let sample = two_word_sample(4);
    let params = generic_params(variant, 6, 10, 21);
    // Label 0.01 below the current prediction: the loss's own rounding
    // (~1e-16 * residual / h) must stay well under the 1e-8 absolute floor.
    let y0 = predict(&params, &sample).unwrap().score - 0.01;
    grad_check_params(params.store(), 1e-5, |g: &mut Graph, store| {
        let mut p = params.clone();
        *p.store_mut() = store.clone();
        let f = forward(g, &p, &sample)?;
        let y = g.input(Tensor::scalar(y0));
        let d = g.sub(f.score, y)?;
        let sq = g.mul(d, d)?;
        Ok(g.sum(sq))
    })
    .unwrap()
}

pub fn random_posteriorgram(frames: usize, phones: usize, rng: &mut ChaCha8Rng) -> Posteriorgram {
    let mut log_post = Vec::with_capacity(frames * phones);
    for _ in 0..frames {
        let logits: Vec<f64> = (0..phones).map(|_| rng.random_range(-4.0..4.0)).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        log_post.extend(logits.iter().map(|l| (l - lse).min(0.0)));
    }
    let feats = (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
    Posteriorgram::new(
        Tensor::new(vec![frames, phones], log_post).unwrap(),
        Tensor::new(vec![frames, 3], feats).unwrap(),
    )
    .unwrap()
}

pub fn random_segment(frames: usize, phones: usize, rng: &mut ChaCha8Rng) -> PhoneSegment {
    let start = rng.random_range(0..frames);
    let end = rng.random_range(start + 1..=frames);
    PhoneSegment {
        phone: rng.random_range(0..phones),
        word: 0,
        start,
        end,
    }
}

/// Compares `compute_gop` with a brute-force search over all 40 phones on
/// `n` random segments. Returns how many segments were argmax cases.
pub fn gop_against_brute_force(n: usize, seed: u64) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut argmax_hits = 0;
    for k in 0..n {
        let post = random_posteriorgram(12, 40, &mut rng);
        let seg = random_segment(12, 40, &mut rng);
        let lp = post.log_post();
        let lpp = |q: usize| {
            let mut s = 0.0;
            for t in seg.start..seg.end {
                s += lp.at(t, q);
            }
            s / (seg.end - seg.start) as f64
        };
        let best = (0..40).map(lpp).fold(f64::NEG_INFINITY, f64::max);
        let rec = compute_gop(&post, &seg).map_err(|e| e.to_string())?;
        let is_argmax = lpp(seg.phone) == best;
        if rec.lpp != lpp(seg.phone)
            || rec.gop != lpp(seg.phone) - best
            || rec.gop > 0.0
            || (rec.gop == 0.0) != is_argmax
            || rec.normalized != rec.gop.exp()
        {
            return Err(format!("segment {k}: {rec:?} vs brute force best {best}"));
        }
        argmax_hits += usize::from(is_argmax);
    }
    Ok(argmax_hits)
}
