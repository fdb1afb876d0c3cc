//! Hierarchical pronunciation scorer.
//!
//! Phone-level acoustic vectors and phone ids go through a preprocessing
//! network (acoustic projection and phone embedding), are fused into a
//! phone-quality representation by one of three [`Variant`]s, and then flow
//! phone encoder -> word pooling -> word encoder -> utterance score.

mod checkpoint;
mod forward;
mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    forward, fuse, fuse_add, fuse_concat, fuse_similarity, phone_encode, predict, preprocess,
    utterance_score, word_pool_encode, Encoded, Forward, PhoneQuality, Prediction,
};
pub use layers::sinusoidal_encoding;
pub use params::{LayerShape, Partition, ScorerParams};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How acoustic and phone embeddings are combined per phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `MLP(H_a + E_p)`
    AddPhone,
    /// `MLP([H_a; E_p])`
    ConcatPhone,
    /// `[MLP([H_a; E_p]); cos(H_a, E_p)]`
    Similarity,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::AddPhone, Variant::ConcatPhone, Variant::Similarity];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AddPhone => "add_phone",
            Variant::ConcatPhone => "concat_phone",
            Variant::Similarity => "similarity",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}`; valid variants: add_phone, concat_phone, similarity"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub att_dim: usize,
    pub nhead: usize,
    pub ff_dim: usize,
    pub nlayer: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            att_dim: 32,
            nhead: 4,
            ff_dim: 32,
            nlayer: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub variant: Variant,
    /// Acoustic feature dimension (D1).
    pub feat_dim: usize,
    /// Embedding dimension of `H_a` and `E_p` (D2).
    pub embed_dim: usize,
    pub num_phones: usize,
    pub mlp_hidden: usize,
    pub mlp_out: usize,
    pub phone_encoder: EncoderConfig,
    pub word_encoder: EncoderConfig,
    pub positional_encoding: bool,
    pub ln_eps: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Similarity,
            feat_dim: 512,
            embed_dim: 32,
            num_phones: 40,
            mlp_hidden: 32,
            mlp_out: 32,
            phone_encoder: EncoderConfig::default(),
            word_encoder: EncoderConfig::default(),
            positional_encoding: true,
            ln_eps: 1e-5,
        }
    }
}

impl ScorerConfig {
    pub fn new(variant: Variant, feat_dim: usize, num_phones: usize) -> Self {
        Self {
            variant,
            feat_dim,
            num_phones,
            ..Self::default()
        }
    }

    /// Width of the fused phone-quality representation.
    pub fn fusion_dim(&self) -> usize {
        match self.variant {
            Variant::AddPhone | Variant::ConcatPhone => self.mlp_out,
            Variant::Similarity => self.mlp_out + 1,
        }
    }

    /// Input width of the projection MLP.
    pub fn mlp_in(&self) -> usize {
        match self.variant {
            Variant::AddPhone => self.embed_dim,
            Variant::ConcatPhone | Variant::Similarity => 2 * self.embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("feat_dim", self.feat_dim),
            ("embed_dim", self.embed_dim),
            ("num_phones", self.num_phones),
            ("mlp_hidden", self.mlp_hidden),
            ("mlp_out", self.mlp_out),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        for (name, enc) in [("phone_encoder", &self.phone_encoder), ("word_encoder", &self.word_encoder)] {
            if enc.att_dim == 0 || enc.nhead == 0 || enc.ff_dim == 0 || enc.nlayer == 0 {
                return err(format!("{name}: all sizes must be positive"));
            }
            if enc.att_dim % enc.nhead != 0 {
                return err(format!(
                    "{name}: att_dim {} not divisible by nhead {}",
                    enc.att_dim, enc.nhead
                ));
            }
        }
        if !self.embed_dim.is_multiple_of(self.phone_encoder.nhead) {
            return err(format!(
                "embed_dim {} not divisible by nhead {}",
                self.embed_dim, self.phone_encoder.nhead
            ));
        }
        if !(self.ln_eps > 0.0) {
            return err(format!("ln_eps must be > 0, got {}", self.ln_eps));
        }
        Ok(())
    }
}
