use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{EncoderLayer, Linear, Norm};
use super::{EncoderConfig, ScorerConfig};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Which training stage may update a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    /// Acoustic projection and phone embedding (updated by GOP pre-training).
    Preprocessing,
    Rest,
}

impl Partition {
    pub fn of(name: &str) -> Self {
        if name.starts_with("pre.") {
            Partition::Preprocessing
        } else {
            Partition::Rest
        }
    }
}

/// One row of the network's size table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub acoustic: Linear,
    pub acoustic_norm: Norm,
    pub embedding: ParamId,
    pub embedding_norm: Norm,
    pub mlp1: Linear,
    pub mlp2: Linear,
    pub phone_in_norm: Norm,
    pub phone_in: Linear,
    pub phone_layers: Vec<EncoderLayer>,
    pub word_in: Linear,
    pub word_layers: Vec<EncoderLayer>,
    pub output: Linear,
}

enum Init {
    Xavier,
    Embedding,
    Zeros,
    Ones,
}

struct Builder<'a> {
    store: ParamStore,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Builder<'_> {
    fn tensor(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let mut t = Tensor::zeros(shape);
        match (init, self.rng.as_deref_mut()) {
            (Init::Ones, _) => t = Tensor::full(shape, 1.0),
            (Init::Zeros, _) | (_, None) => {}
            (Init::Xavier, Some(rng)) => {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-a..a));
            }
            (Init::Embedding, Some(rng)) => {
                let n = Normal::new(0.0, 0.1).expect("valid normal");
                t.data_mut().iter_mut().for_each(|v| *v = n.sample(rng));
            }
        }
        self.store.insert(name, t)
    }

    fn linear(&mut self, name: &str, input: usize, output: usize, bias: bool) -> Result<Linear> {
        let weight = self.tensor(&format!("{name}.weight"), &[input, output], Init::Xavier)?;
        let bias = if bias {
            Some(self.tensor(&format!("{name}.bias"), &[output], Init::Zeros)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    fn norm(&mut self, name: &str, dim: usize) -> Result<Norm> {
        Ok(Norm {
            gamma: self.tensor(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: self.tensor(&format!("{name}.beta"), &[dim], Init::Zeros)?,
        })
    }

    fn encoder(&mut self, prefix: &str, cfg: &EncoderConfig) -> Result<Vec<EncoderLayer>> {
        let d = cfg.att_dim;
        (0..cfg.nlayer)
            .map(|l| {
                let p = format!("{prefix}.{l}");
                Ok(EncoderLayer {
                    nhead: cfg.nhead,
                    query: self.linear(&format!("{p}.attn.query"), d, d, true)?,
                    key: self.linear(&format!("{p}.attn.key"), d, d, false)?,
                    value: self.linear(&format!("{p}.attn.value"), d, d, true)?,
                    out: self.linear(&format!("{p}.attn.out"), d, d, true)?,
                    norm1: self.norm(&format!("{p}.norm1"), d)?,
                    ff1: self.linear(&format!("{p}.ff1"), d, cfg.ff_dim, true)?,
                    ff2: self.linear(&format!("{p}.ff2"), cfg.ff_dim, d, true)?,
                    norm2: self.norm(&format!("{p}.norm2"), d)?,
                })
            })
            .collect()
    }

    /// Registers every tensor; the preprocessing block comes first so its
    /// initial values depend only on the seed and its own dimensions.
    fn build(mut self, cfg: &ScorerConfig) -> Result<(ParamStore, Layout)> {
        let d2 = cfg.embed_dim;
        let acoustic = self.linear("pre.acoustic", cfg.feat_dim, d2, true)?;
        let acoustic_norm = self.norm("pre.acoustic_norm", d2)?;
        let embedding = self.tensor("pre.embedding.weight", &[cfg.num_phones, d2], Init::Embedding)?;
        let embedding_norm = self.norm("pre.embedding_norm", d2)?;

        let mlp1 = self.linear("proj.fc1", cfg.mlp_in(), cfg.mlp_hidden, true)?;
        let mlp2 = self.linear("proj.fc2", cfg.mlp_hidden, cfg.mlp_out, true)?;

        let pe = &cfg.phone_encoder;
        let phone_in_norm = self.norm("phone.in_norm", cfg.fusion_dim())?;
        let phone_in = self.linear("phone.in_fc", cfg.fusion_dim(), pe.att_dim, true)?;
        let phone_layers = self.encoder("phone.enc", pe)?;

        let we = &cfg.word_encoder;
        let word_in = self.linear("word.in_fc", pe.att_dim, we.att_dim, true)?;
        let word_layers = self.encoder("word.enc", we)?;

        let output = self.linear("out.fc", we.att_dim, 1, true)?;
        let layout = Layout {
            acoustic,
            acoustic_norm,
            embedding,
            embedding_norm,
            mlp1,
            mlp2,
            phone_in_norm,
            phone_in,
            phone_layers,
            word_in,
            word_layers,
            output,
        };
        Ok((self.store, layout))
    }
}

/// All trainable tensors of a scorer together with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    config: ScorerConfig,
    store: ParamStore,
    pub(crate) layout: Layout,
}

impl ScorerParams {
    /// Fresh initialization: Xavier-uniform weights, N(0, 0.1) embeddings,
    /// zero biases, unit layer-norm gains.
    pub fn init(config: &ScorerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (store, layout) = Builder {
            store: ParamStore::new(),
            rng: Some(&mut rng),
        }
        .build(config)?;
        Ok(Self {
            config: config.clone(),
            store,
            layout,
        })
    }

    /// Rebuilds from named tensors; every expected tensor must be present
    /// with the expected shape, and no others.
    pub fn from_named(config: &ScorerConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (mut store, layout) = Builder {
            store: ParamStore::new(),
            rng: None,
        }
        .build(config)?;
        if tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                store.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    store.get(id).shape()
                )));
            }
            *store.get_mut(id) = t;
        }
        Ok(Self {
            config: config.clone(),
            store,
            layout,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn partition(&self, id: ParamId) -> Partition {
        Partition::of(self.store.name(id))
    }

    pub fn ids_in(&self, partition: Partition) -> Vec<ParamId> {
        self.store
            .ids()
            .filter(|&id| self.partition(id) == partition)
            .collect()
    }

    /// Copies the preprocessing tensors of `other` into `self`.
    pub fn load_preprocessing(&mut self, other: &ScorerParams) -> Result<()> {
        for id in self.ids_in(Partition::Preprocessing) {
            let name = self.store.name(id).to_string();
            let src = other
                .store
                .by_name(&name)
                .ok_or_else(|| Error::Checkpoint(format!("source lacks `{name}`")))?;
            if src.shape() != self.store.get(id).shape() {
                return Err(Error::dim("load_preprocessing", src.shape(), self.store.get(id).shape()));
            }
            *self.store.get_mut(id) = src.clone();
        }
        Ok(())
    }

    /// In × out size of every layer, in network order.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let l = &self.layout;
        let s = &self.store;
        let row = |name: &str, (input, output): (usize, usize)| LayerShape {
            name: name.to_string(),
            input,
            output,
        };
        let emb = s.get(l.embedding).shape();
        let cfg = &self.config;
        let mut rows = vec![
            row("preprocessing.acoustic_fc", l.acoustic.dims(s)),
            row("preprocessing.embedding", (1, emb[1])),
            row("projection.fusion_input", (cfg.embed_dim, cfg.mlp_in())),
            row("projection.mlp_fc1", l.mlp1.dims(s)),
            row("projection.mlp_fc2", l.mlp2.dims(s)),
            row("projection.output", (cfg.mlp_out, cfg.fusion_dim())),
            row("phone.input_fc", l.phone_in.dims(s)),
        ];
        for (i, layer) in l.phone_layers.iter().enumerate() {
            rows.push(row(&format!("phone.encoder.{i}"), (layer.query.dims(s).0, layer.out.dims(s).1)));
        }
        rows.push(row("word.input_fc", l.word_in.dims(s)));
        for (i, layer) in l.word_layers.iter().enumerate() {
            rows.push(row(&format!("word.encoder.{i}"), (layer.query.dims(s).0, layer.out.dims(s).1)));
        }
        rows.push(row("output.fc", l.output.dims(s)));
        rows
    }
}
