use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Linear {
    /// `in×out`
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn dims(&self, store: &ParamStore) -> (usize, usize) {
        let s = store.get(self.weight).shape();
        (s[0], s[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var, eps: f64) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, eps)
    }
}

/// Post-norm transformer encoder layer with ReLU feed-forward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EncoderLayer {
    pub nhead: usize,
    pub query: Linear,
    /// No bias: a key bias shifts every score in a row equally and cancels
    /// in the softmax.
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub norm1: Norm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: Norm,
}

impl EncoderLayer {
    /// Returns the layer output and the per-head attention matrices.
    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        eps: f64,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.query.apply(g, store, x)?;
        let k = self.key.apply(g, store, x)?;
        let v = self.value.apply(g, store, x)?;
        let att_dim = g.value(q).last_dim();
        let dk = att_dim / self.nhead;
        let scale = 1.0 / (dk as f64).sqrt();

        let mut heads: Option<Var> = None;
        let mut weights = Vec::with_capacity(self.nhead);
        for h in 0..self.nhead {
            let qh = g.slice_last(q, h * dk, dk)?;
            let kh = g.slice_last(k, h * dk, dk)?;
            let vh = g.slice_last(v, h * dk, dk)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores)?;
            weights.push(attn);
            let oh = g.matmul(attn, vh)?;
            heads = Some(match heads {
                None => oh,
                Some(acc) => g.concat_last(acc, oh)?,
            });
        }
        let merged = heads.expect("nhead >= 1");
        let attended = self.out.apply(g, store, merged)?;

        let res1 = g.add(x, attended)?;
        let x1 = self.norm1.apply(g, store, res1, eps)?;
        let hidden = self.ff1.apply(g, store, x1)?;
        let hidden = g.relu(hidden);
        let ff = self.ff2.apply(g, store, hidden)?;
        let res2 = g.add(x1, ff)?;
        let out = self.norm2.apply(g, store, res2, eps)?;
        Ok((out, weights))
    }
}

/// Fixed sinusoidal position table, `len×dim`.
pub fn sinusoidal_encoding(len: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![len, dim], data).expect("encoding shape")
}
