use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

fn rel_err(autodiff: f64, numeric: f64) -> f64 {
    (autodiff - numeric).abs() / numeric.abs().max(1e-8)
}

/// Evaluates a scalar graph function at `point` without recording gradients.
fn eval_at<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.input(point.clone());
    let y = f(&mut g, x)?;
    g.value(y).item()
}

/// Central difference `(f(x+h) - f(x-h)) / 2h` for every coordinate.
pub fn central_difference<F>(f: &F, point: &Tensor, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut x = point.clone();
    let mut out = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let plus = eval_at(f, &x)?;
        x.data_mut()[i] = orig - step;
        let minus = eval_at(f, &x)?;
        x.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Max over coordinates of `|autodiff - central| / max(1e-8, |central|)`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.variable(point.clone());
    let y = f(&mut g, x)?;
    let grads = g.backward(y)?;
    let zeros = Tensor::zeros(point.shape());
    let analytic = grads.get(x).unwrap_or(&zeros);
    let numeric = central_difference(&f, point, step)?;
    Ok(analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max))
}

/// Per-parameter outcome of [`grad_check_params`].
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub numel: usize,
    pub max_rel_err: f64,
}

/// Finite-difference check of every parameter in `store` against the
/// gradients of a loss built by `loss`.
pub fn grad_check_params<F>(store: &ParamStore, step: f64, loss: F) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let y = loss(&mut g, store)?;
    let grads = g.backward(y)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let y = loss(&mut g, s)?;
        g.value(y).item()
    };

    let mut work = store.clone();
    let mut report = Vec::with_capacity(store.len());
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let zeros = Tensor::zeros(store.get(id).shape());
        let analytic = grads.param(id).unwrap_or(&zeros).clone();
        let mut worst: f64 = 0.0;
        for i in 0..store.get(id).numel() {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
        report.push(ParamCheck {
            name: store.name(id).to_string(),
            numel: store.get(id).numel(),
            max_rel_err: worst,
        });
    }
    Ok(report)
}
