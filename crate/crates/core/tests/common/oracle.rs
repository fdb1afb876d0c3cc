//! Plain nested-Vec reimplementation of the scorer maths, used as an
//! independent reference for the graph-based code.
#![allow(dead_code)]

use pronscore::scorer::ScorerParams;

pub type Mat = Vec<Vec<f64>>;

pub fn param(p: &ScorerParams, name: &str) -> Vec<f64> {
    p.store()
        .by_name(name)
        .unwrap_or_else(|| panic!("no tensor {name}"))
        .data()
        .to_vec()
}

/// `x · W + b` with `W` stored row-major as `in×out`.
pub fn linear(p: &ScorerParams, name: &str, x: &Mat, bias: bool) -> Mat {
    let w = param(p, &format!("{name}.weight"));
    let b = bias.then(|| param(p, &format!("{name}.bias")));
    x.iter()
        .map(|row| {
            let out = w.len() / row.len();
            (0..out)
                .map(|j| {
                    let mut acc = 0.0;
                    for (i, v) in row.iter().enumerate() {
                        acc += v * w[i * out + j];
                    }
                    acc + b.as_ref().map_or(0.0, |b| b[j])
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm(p: &ScorerParams, name: &str, x: &Mat, eps: f64) -> Mat {
    let g = param(p, &format!("{name}.gamma"));
    let b = param(p, &format!("{name}.beta"));
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(j, v)| g[j] * (v - mean) / (var + eps).sqrt() + b[j])
                .collect()
        })
        .collect()
}

pub fn map(x: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    x.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn concat(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(r, s)| r.iter().chain(s).copied().collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn mlp(p: &ScorerParams, x: &Mat) -> Mat {
    let h = map(&linear(p, "proj.fc1", x, true), |v| v.max(0.0));
    linear(p, "proj.fc2", &h, true)
}

/// One post-norm encoder layer; returns the output and per-head attention.
pub fn encoder_layer(p: &ScorerParams, prefix: &str, x: &Mat, nhead: usize, eps: f64) -> (Mat, Vec<Mat>) {
    let q = linear(p, &format!("{prefix}.attn.query"), x, true);
    let k = linear(p, &format!("{prefix}.attn.key"), x, false);
    let v = linear(p, &format!("{prefix}.attn.value"), x, true);
    let n = x.len();
    let d = q[0].len();
    let dk = d / nhead;
    let mut merged = vec![vec![0.0; d]; n];
    let mut weights = Vec::new();
    for h in 0..nhead {
        let cols = h * dk..(h + 1) * dk;
        let mut att = Vec::new();
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                merged[i][c] = (0..n).map(|j| w[j] * v[j][c]).sum();
            }
            att.push(w);
        }
        weights.push(att);
    }
    let attended = linear(p, &format!("{prefix}.attn.out"), &merged, true);
    let x1 = layer_norm(p, &format!("{prefix}.norm1"), &add(x, &attended), eps);
    let hidden = map(&linear(p, &format!("{prefix}.ff1"), &x1, true), |v| v.max(0.0));
    let ff = linear(p, &format!("{prefix}.ff2"), &hidden, true);
    (layer_norm(p, &format!("{prefix}.norm2"), &add(&x1, &ff), eps), weights)
}

pub fn positions(n: usize, d: usize) -> Mat {
    (0..n)
        .map(|pos| {
            (0..d)
                .map(|i| {
                    let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
                    if i % 2 == 0 {
                        angle.sin()
                    } else {
                        angle.cos()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn phone_encode(p: &ScorerParams, quality: &Mat) -> (Mat, Vec<Mat>) {
    let cfg = p.config();
    let x = layer_norm(p, "phone.in_norm", quality, cfg.ln_eps);
    let mut x = map(&linear(p, "phone.in_fc", &x, true), f64::tanh);
    if cfg.positional_encoding {
        x = add(&x, &positions(x.len(), x[0].len()));
    }
    encoder_layer(p, "phone.enc.0", &x, cfg.phone_encoder.nhead, cfg.ln_eps)
}
