use super::layers::{sinusoidal_encoding, EncoderLayer};
use super::{ScorerParams, Variant};
use crate::error::{Error, Result};
use crate::frontend::UtteranceSample;
use crate::tensor::{Graph, Tensor, Var};

/// Fused phone-level representation `P_Q` (`N×fusion_dim`).
#[derive(Debug, Clone, Copy)]
pub struct PhoneQuality {
    pub quality: Var,
    /// Per-phone cosine similarity (`N×1`), similarity variant only.
    pub similarity: Option<Var>,
}

/// Encoder output plus attention matrices, indexed `[layer][head]`.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub out: Var,
    pub attention: Vec<Vec<Var>>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub score: Var,
    pub acoustic: Var,
    pub phone_embedding: Var,
    pub quality: PhoneQuality,
    pub phone: Encoded,
    pub word: Encoded,
}

/// Acoustic embedding `tanh(LN(X·W + b))` and phone embedding
/// `tanh(LN(table[ids]))`, both `N×D2`.
pub fn preprocess(g: &mut Graph, params: &ScorerParams, x: Var, ids: &[usize]) -> Result<(Var, Var)> {
    let cfg = params.config();
    if let Some(&bad) = ids.iter().find(|&&p| p >= cfg.num_phones) {
        return Err(Error::Input(format!(
            "phone id {bad} not in 0..{}",
            cfg.num_phones
        )));
    }
    if g.value(x).rows() != ids.len() {
        return Err(Error::dim("preprocess", g.value(x).shape(), &[ids.len()]));
    }
    let l = &params.layout;
    let s = params.store();
    let h = l.acoustic.apply(g, s, x)?;
    let h = l.acoustic_norm.apply(g, s, h, cfg.ln_eps)?;
    let h = g.tanh(h);

    let table = g.param(s, l.embedding);
    let e = g.gather(table, ids)?;
    let e = l.embedding_norm.apply(g, s, e, cfg.ln_eps)?;
    let e = g.tanh(e);
    Ok((h, e))
}

fn same_shape(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<()> {
    if g.value(a).shape() != g.value(b).shape() || g.value(a).shape().len() != 2 {
        return Err(Error::dim(op, g.value(a).shape(), g.value(b).shape()));
    }
    Ok(())
}

fn mlp(g: &mut Graph, params: &ScorerParams, x: Var) -> Result<Var> {
    let l = &params.layout;
    let s = params.store();
    let h = l.mlp1.apply(g, s, x)?;
    let h = g.relu(h);
    l.mlp2.apply(g, s, h)
}

pub fn fuse_add(g: &mut Graph, params: &ScorerParams, h: Var, e: Var) -> Result<PhoneQuality> {
    same_shape(g, h, e, "fuse_add")?;
    let sum = g.add(h, e)?;
    Ok(PhoneQuality {
        quality: mlp(g, params, sum)?,
        similarity: None,
    })
}

pub fn fuse_concat(g: &mut Graph, params: &ScorerParams, h: Var, e: Var) -> Result<PhoneQuality> {
    same_shape(g, h, e, "fuse_concat")?;
    let cat = g.concat_last(h, e)?;
    Ok(PhoneQuality {
        quality: mlp(g, params, cat)?,
        similarity: None,
    })
}

pub fn fuse_similarity(g: &mut Graph, params: &ScorerParams, h: Var, e: Var) -> Result<PhoneQuality> {
    let base = fuse_concat(g, params, h, e)?;
    let s = g.cosine_rows(h, e)?;
    Ok(PhoneQuality {
        quality: g.concat_last(base.quality, s)?,
        similarity: Some(s),
    })
}

/// Dispatches on the configured variant.
pub fn fuse(g: &mut Graph, params: &ScorerParams, h: Var, e: Var) -> Result<PhoneQuality> {
    match params.config().variant {
        Variant::AddPhone => fuse_add(g, params, h, e),
        Variant::ConcatPhone => fuse_concat(g, params, h, e),
        Variant::Similarity => fuse_similarity(g, params, h, e),
    }
}

fn encode(
    g: &mut Graph,
    params: &ScorerParams,
    mut x: Var,
    layers: &[EncoderLayer],
) -> Result<Encoded> {
    let cfg = params.config();
    if cfg.positional_encoding {
        let shape = g.value(x).shape().to_vec();
        let pe = g.input(sinusoidal_encoding(shape[0], shape[1]));
        x = g.add(x, pe)?;
    }
    let mut attention = Vec::with_capacity(layers.len());
    for layer in layers {
        let (out, weights) = layer.apply(g, params.store(), x, cfg.ln_eps)?;
        attention.push(weights);
        x = out;
    }
    Ok(Encoded { out: x, attention })
}

/// `tanh(FC(LN(P_Q)))`, optional positions, then the phone encoder.
pub fn phone_encode(g: &mut Graph, params: &ScorerParams, quality: Var) -> Result<Encoded> {
    if g.value(quality).rows() == 0 {
        return Err(Error::EmptyUtterance("phone encoder needs at least one phone"));
    }
    let l = &params.layout;
    let s = params.store();
    let x = l.phone_in_norm.apply(g, s, quality, params.config().ln_eps)?;
    let x = l.phone_in.apply(g, s, x)?;
    let x = g.tanh(x);
    encode(g, params, x, &l.phone_layers)
}

/// Averages phones into words, then `tanh(FC(·))` and the word encoder.
pub fn word_pool_encode(
    g: &mut Graph,
    params: &ScorerParams,
    phone_feats: Var,
    words: &[Vec<usize>],
) -> Result<Encoded> {
    if words.is_empty() {
        return Err(Error::EmptyUtterance("no words to encode"));
    }
    let pooled = g.mean_pool(phone_feats, words)?;
    let l = &params.layout;
    let x = l.word_in.apply(g, params.store(), pooled)?;
    let x = g.tanh(x);
    encode(g, params, x, &l.word_layers)
}

/// Mean over words, then `sigmoid(FC(·))`; a `1×1` node.
pub fn utterance_score(g: &mut Graph, params: &ScorerParams, word_feats: Var) -> Result<Var> {
    let w = g.value(word_feats).rows();
    if w == 0 {
        return Err(Error::EmptyUtterance("utterance score needs at least one word"));
    }
    let pooled = g.mean_pool(word_feats, &[(0..w).collect()])?;
    let logit = params.layout.output.apply(g, params.store(), pooled)?;
    Ok(g.sigmoid(logit))
}

/// Full pipeline from an utterance to its predicted score.
pub fn forward(g: &mut Graph, params: &ScorerParams, sample: &UtteranceSample) -> Result<Forward> {
    if sample.segments.is_empty() {
        return Err(Error::EmptyUtterance("utterance has no phones"));
    }
    if sample.post.feat_dim() != params.config().feat_dim {
        return Err(Error::dim(
            "forward",
            &[params.config().feat_dim],
            &[sample.post.feat_dim()],
        ));
    }
    let x = g.input(sample.phone_features()?);
    let (h, e) = preprocess(g, params, x, &sample.phone_ids())?;
    let quality = fuse(g, params, h, e)?;
    let phone = phone_encode(g, params, quality.quality)?;
    let word = word_pool_encode(g, params, phone.out, &sample.word_groups())?;
    let score = utterance_score(g, params, word.out)?;
    Ok(Forward {
        score,
        acoustic: h,
        phone_embedding: e,
        quality,
        phone,
        word,
    })
}

/// Inference result detached from the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub quality: Tensor,
    pub similarity: Option<Vec<f64>>,
}

pub fn predict(params: &ScorerParams, sample: &UtteranceSample) -> Result<Prediction> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, sample)?;
    Ok(Prediction {
        score: g.value(f.score).item()?,
        quality: g.value(f.quality.quality).clone(),
        similarity: f.quality.similarity.map(|s| g.value(s).data().to_vec()),
    })
}
