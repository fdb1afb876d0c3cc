use std::collections::HashMap;

use super::{dot_norms, sigmoid, ParamId, ParamStore, Tensor, COSINE_EPS};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SoftmaxRows(Var),
    MeanPool {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    ConcatLast(Var, Var),
    SliceLast {
        x: Var,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    CosineRows {
        a: Var,
        b: Var,
        stats: Vec<(f64, f64, f64)>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use computation tape. Nodes are appended in evaluation order, so
/// every node's inputs precede it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Gradients for every bound parameter, in binding order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|(p, v)| self.get(*v).map(|g| (*p, g)))
    }
}

fn same_or_scalar(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

fn binary(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = match (a.numel() == n, b.numel() == n) {
        (true, true) => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        (true, false) => {
            let y = b.data()[0];
            a.data().iter().map(|&x| f(x, y)).collect()
        }
        _ => {
            let x = a.data()[0];
            b.data().iter().map(|&y| f(x, y)).collect()
        }
    };
    Tensor { shape, data }
}

/// Sum a full-shape gradient down to the operand's shape (identity or scalar).
fn reduce_like(grad: &Tensor, target: &Tensor) -> Tensor {
    if grad.numel() == target.numel() {
        Tensor {
            shape: target.shape().to_vec(),
            data: grad.data().to_vec(),
        }
    } else {
        Tensor {
            shape: target.shape().to_vec(),
            data: vec![grad.sum()],
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Gradients::get`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_or_scalar("add", self.value(a), self.value(b))?;
        let value = binary(self.value(a), self.value(b), shape, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_or_scalar("sub", self.value(a), self.value(b))?;
        let value = binary(self.value(a), self.value(b), shape, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = same_or_scalar("mul", self.value(a), self.value(b))?;
        let value = binary(self.value(a), self.value(b), shape, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `x[.., n] + bias[n]`, the bias added to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = bv.numel();
        if xv.shape().is_empty() || xv.last_dim() != d || bv.shape().len() != 1 {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(d.max(1)) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(value, Op::AddRow(x, bias), rg))
    }

    /// `scale * x + shift`, elementwise with constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Normalizes over the last axis, then scales by `gamma` and shifts by `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let d = xv.last_dim();
        if xv.shape().is_empty() || d == 0 {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        if gv.shape() != [d] || bv.shape() != [d] {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        if eps <= 0.0 {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let rows = xv.leading();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gv.data()[j] * h + bv.data()[j];
            }
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::dim("softmax_rows", xv.shape(), &[]));
        }
        let n = xv.shape()[1];
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor {
            shape: xv.shape().to_vec(),
            data: out,
        };
        let rg = self.rg(x);
        Ok(self.push(value, Op::SoftmaxRows(x), rg))
    }

    /// Averages rows of `x[n×d]` per group. Groups must be non-empty,
    /// disjoint, and cover `0..n`.
    pub fn mean_pool(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 {
            return Err(Error::dim("mean_pool", xv.shape(), &[]));
        }
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut seen = vec![false; n];
        for (gi, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Input(format!("mean_pool group {gi} is empty")));
            }
            for &i in group {
                if i >= n {
                    return Err(Error::Input(format!(
                        "mean_pool index {i} out of range for {n} rows"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Input(format!("mean_pool row {i} in two groups")));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Input(format!("mean_pool row {i} not covered")));
        }
        let mut out = vec![0.0; groups.len() * d];
        for (gi, group) in groups.iter().enumerate() {
            let dst = &mut out[gi * d..(gi + 1) * d];
            for &i in group {
                for (o, v) in dst.iter_mut().zip(xv.row(i)) {
                    *o += v;
                }
            }
            let inv = 1.0 / group.len() as f64;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        let value = Tensor {
            shape: vec![groups.len(), d],
            data: out,
        };
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::MeanPool {
                x,
                groups: groups.to_vec(),
            },
            rg,
        ))
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (ash, bsh) = (av.shape(), bv.shape());
        if ash.is_empty() || bsh.is_empty() || ash[..ash.len() - 1] != bsh[..bsh.len() - 1] {
            return Err(Error::dim("concat_last", ash, bsh));
        }
        let (p, q) = (av.last_dim(), bv.last_dim());
        let rows = av.leading();
        let mut out = Vec::with_capacity(rows * (p + q));
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&bv.data()[r * q..(r + 1) * q]);
        }
        let mut shape = ash.to_vec();
        *shape.last_mut().unwrap() = p + q;
        let value = Tensor { shape, data: out };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::ConcatLast(a, b), rg))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if xv.shape().is_empty() || start + len > d {
            return Err(Error::dim("slice_last", xv.shape(), &[start, len]));
        }
        let rows = xv.leading();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * d + start..r * d + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor { shape, data: out };
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceLast { x, start }, rg))
    }

    /// Row lookup `table[ids]` (embedding).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::dim("gather", tv.shape(), &[]));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Input(format!("id {id} out of range 0..{rows}")));
            }
            out.extend_from_slice(tv.row(id));
        }
        let value = Tensor {
            shape: vec![ids.len(), d],
            data: out,
        };
        let rg = self.rg(table);
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let value = Tensor::scalar(xv.sum() / xv.numel() as f64);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// Per-row cosine similarity of `a[n×d]` and `b[n×d]`, shape `n×1`.
    /// Rows where either norm is below 1e-12 yield 0 and pass no gradient.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.shape().len() != 2 {
            return Err(Error::dim("cosine_rows", av.shape(), bv.shape()));
        }
        let n = av.shape()[0];
        let mut stats = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for r in 0..n {
            let (dot, na, nb) = dot_norms(av.row(r), bv.row(r));
            stats.push((dot, na, nb));
            out.push(if na < COSINE_EPS || nb < COSINE_EPS {
                0.0
            } else {
                (dot / (na * nb)).clamp(-1.0, 1.0)
            });
        }
        let value = Tensor {
            shape: vec![n, 1],
            data: out,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::CosineRows { a, b, stats }, rg))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.bound.iter().map(|(p, v)| (*p, *v)).collect();
        params.sort();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.rg(*a) {
                    // dA = dC · Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, Tensor { shape: vec![m, k], data: da });
                }
                if self.rg(*b) {
                    // dB = Aᵀ · dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data()[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += aip * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, Tensor { shape: vec![k, n], data: db });
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose().expect("transpose of 2-D gradient");
                self.accumulate(grads, *a, gt);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, reduce_like(g, self.value(*a)));
                self.accumulate(grads, *b, reduce_like(g, self.value(*b)));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, reduce_like(g, self.value(*a)));
                let neg = g.map(|v| -v);
                self.accumulate(grads, *b, reduce_like(&neg, self.value(*b)));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let ga = binary(g, bv, g.shape().to_vec(), |x, y| x * y);
                    self.accumulate(grads, *a, reduce_like(&ga, av));
                }
                if self.rg(*b) {
                    let gb = binary(g, av, g.shape().to_vec(), |x, y| x * y);
                    self.accumulate(grads, *b, reduce_like(&gb, bv));
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.rg(*bias) {
                    let d = self.value(*bias).numel();
                    let mut gb = vec![0.0; d];
                    for row in g.data().chunks(d.max(1)) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::vector(gb));
                }
            }
            Op::Affine(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::Tanh(x) => {
                let gx = binary(g, out, g.shape().to_vec(), |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let gx = binary(g, xv, g.shape().to_vec(), |gv, v| if v > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = binary(g, out, g.shape().to_vec(), |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = out.last_dim();
                let rows = out.leading();
                let gam = self.value(*gamma).data();
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gbeta = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            let gv = g.data()[r * d + j];
                            gg[j] += gv * xhat[r * d + j];
                            gbeta[j] += gv;
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::vector(gg));
                    self.accumulate(grads, *beta, Tensor::vector(gbeta));
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; rows * d];
                    let df = d as f64;
                    for r in 0..rows {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * d + j];
                        }
                        let inv = inv_std[r];
                        for j in 0..d {
                            let dh = g.data()[r * d + j] * gam[j];
                            gx[r * d + j] =
                                inv / df * (df * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
                        }
                    }
                    self.accumulate(
                        grads,
                        *x,
                        Tensor {
                            shape: out.shape().to_vec(),
                            data: gx,
                        },
                    );
                }
            }
            Op::SoftmaxRows(x) => {
                let n = out.last_dim();
                let mut gx = vec![0.0; out.numel()];
                for ((gr, yr), dst) in g
                    .data()
                    .chunks(n.max(1))
                    .zip(out.data().chunks(n.max(1)))
                    .zip(gx.chunks_mut(n.max(1)))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((o, gv), y) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = y * (gv - dot);
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: out.shape().to_vec(),
                        data: gx,
                    },
                );
            }
            Op::MeanPool { x, groups } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let mut gx = vec![0.0; xv.numel()];
                for (gi, group) in groups.iter().enumerate() {
                    let inv = 1.0 / group.len() as f64;
                    let src = &g.data()[gi * d..(gi + 1) * d];
                    for &i in group {
                        for (o, v) in gx[i * d..(i + 1) * d].iter_mut().zip(src) {
                            *o += v * inv;
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *x,
                    Tensor {
                        shape: xv.shape().to_vec(),
                        data: gx,
                    },
                );
            }
            Op::ConcatLast(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q) = (av.last_dim(), bv.last_dim());
                let rows = av.leading();
                let mut ga = Vec::with_capacity(av.numel());
                let mut gb = Vec::with_capacity(bv.numel());
                for r in 0..rows {
                    let row = &g.data()[r * (p + q)..(r + 1) * (p + q)];
                    ga.extend_from_slice(&row[..p]);
                    gb.extend_from_slice(&row[p..]);
                }
                self.accumulate(grads, *a, Tensor { shape: av.shape().to_vec(), data: ga });
                self.accumulate(grads, *b, Tensor { shape: bv.shape().to_vec(), data: gb });
            }
            Op::SliceLast { x, start } => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let len = out.last_dim();
                let mut gx = vec![0.0; xv.numel()];
                for r in 0..xv.leading() {
                    gx[r * d + start..r * d + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, Tensor { shape: xv.shape().to_vec(), data: gx });
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let d = tv.last_dim();
                let mut gt = vec![0.0; tv.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (o, v) in gt[id * d..(id + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *table, Tensor { shape: tv.shape().to_vec(), data: gt });
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), g.data()[0]));
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let v = g.data()[0] / xv.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.shape(), v));
            }
            Op::CosineRows { a, b, stats } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d = av.last_dim();
                let mut ga = vec![0.0; av.numel()];
                let mut gb = vec![0.0; bv.numel()];
                for (r, &(dot, na, nb)) in stats.iter().enumerate() {
                    if na < COSINE_EPS || nb < COSINE_EPS {
                        continue;
                    }
                    let gs = g.data()[r];
                    let s = dot / (na * nb);
                    let (arow, brow) = (av.row(r), bv.row(r));
                    for j in 0..d {
                        ga[r * d + j] = gs * (brow[j] / (na * nb) - s * arow[j] / (na * na));
                        gb[r * d + j] = gs * (arow[j] / (na * nb) - s * brow[j] / (nb * nb));
                    }
                }
                self.accumulate(grads, *a, Tensor { shape: av.shape().to_vec(), data: ga });
                self.accumulate(grads, *b, Tensor { shape: bv.shape().to_vec(), data: gb });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut g = Graph::new();
        let i2 = g.input(Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap());
        let m = g.input(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]).unwrap());
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p).data(), &[1., 2., 3., 4.]);

        let a = g.input(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let b = g.input(Tensor::new(vec![2, 1], vec![3., 4.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 1]);
        assert_eq!(g.value(c).data(), &[11.]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let z = g.input(Tensor::scalar(0.0));
        let t = g.tanh(z);
        let s = g.sigmoid(z);
        let neg = g.input(Tensor::scalar(-3.2));
        let r = g.relu(neg);
        assert_eq!(g.value(t).data(), &[0.0]);
        assert_eq!(g.value(s).data(), &[0.5]);
        assert_eq!(g.value(r).data(), &[0.0]);
    }

    #[test]
    fn elementwise_scalar_broadcast_only() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1., 2., 3.]));
        let s = g.input(Tensor::scalar(10.));
        let sum = g.add(a, s).unwrap();
        assert_eq!(g.value(sum).data(), &[11., 12., 13.]);
        let b = g.input(Tensor::vector(vec![1., 2.]));
        assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
        assert!(g.mul(a, b).is_err());
        assert!(g.sub(a, b).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::vector(vec![1., 1., 1.]));
        let gamma = g.input(Tensor::full(&[3], 1.0));
        let beta = g.input(Tensor::zeros(&[3]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0., 0., 0.]);

        let x = g.input(Tensor::vector(vec![0., 2.]));
        let gamma = g.input(Tensor::full(&[2], 1.0));
        let beta = g.input(Tensor::zeros(&[2]));
        let y = g.layer_norm(x, gamma, beta, 1e-300).unwrap();
        assert!(close(g.value(y).data(), &[-1., 1.], 1e-12));
    }

    #[test]
    fn layer_norm_rejects_empty_axis() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 0]));
        let gamma = g.input(Tensor::zeros(&[0]));
        let beta = g.input(Tensor::zeros(&[0]));
        assert!(matches!(
            g.layer_norm(x, gamma, beta, 1e-5),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 2], vec![0., 0., 1000., 1000.]).unwrap());
        let y = g.softmax_rows(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn mean_pool_examples() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![2, 1], vec![0., 2.]).unwrap());
        let one = g.mean_pool(x, &[vec![0, 1]]).unwrap();
        assert_eq!(g.value(one).data(), &[1.0]);
        let id = g.mean_pool(x, &[vec![0], vec![1]]).unwrap();
        assert_eq!(g.value(id), g.value(x));
        assert!(matches!(g.mean_pool(x, &[vec![0, 1], vec![]]), Err(Error::Input(_))));
        assert!(g.mean_pool(x, &[vec![0]]).is_err());
        assert!(g.mean_pool(x, &[vec![0, 1], vec![1]]).is_err());
    }

    #[test]
    fn concat_examples() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1., 2.]));
        let b = g.input(Tensor::vector(vec![3.]));
        let c = g.concat_last(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[1., 2., 3.]);

        let e = g.input(Tensor::vector(vec![]));
        let f = g.input(Tensor::vector(vec![5.]));
        let c = g.concat_last(e, f).unwrap();
        assert_eq!(g.value(c).data(), &[5.]);

        let m = g.input(Tensor::zeros(&[2, 32]));
        let s = g.input(Tensor::zeros(&[2, 1]));
        let c = g.concat_last(m, s).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 33]);

        let bad = g.input(Tensor::zeros(&[3, 1]));
        assert!(matches!(g.concat_last(m, bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_sum_and_half_square() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let s = g.sum(w);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1., 1., 1.]);

        let mut g = Graph::new();
        let w = g.variable(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let sq = g.mul(w, w).unwrap();
        let s = g.sum(sq);
        let half = g.scale(s, 0.5);
        let grads = g.backward(half).unwrap();
        assert!(close(grads.get(w).unwrap().data(), &[0.3, -1.0, 2.0], 1e-15));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let w = g.variable(Tensor::vector(vec![1., 2.]));
        let t = g.tanh(w);
        assert!(matches!(g.backward(t), Err(Error::Contract(_))));
    }

    #[test]
    fn param_binding_is_cached() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1., 2.])).unwrap();
        let mut g = Graph::new();
        let a = g.param(&store, id);
        let b = g.param(&store, id);
        assert_eq!(a, b);
        let p = g.mul(a, b).unwrap();
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.param(id).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn cosine_zero_row_has_no_gradient() {
        let mut g = Graph::new();
        let a = g.variable(Tensor::new(vec![1, 2], vec![0., 0.]).unwrap());
        let b = g.variable(Tensor::new(vec![1, 2], vec![1., 2.]).unwrap());
        let c = g.cosine_rows(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[0.0]);
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[0., 0.]);
        assert_eq!(grads.get(b).unwrap().data(), &[0., 0.]);
    }
}
