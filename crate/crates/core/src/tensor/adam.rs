use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Contract(format!(
                "adam betas must be in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        Ok(())
    }

    /// One bias-corrected update of every parameter that received a gradient
    /// and passes `trainable`. Parameters without a gradient are untouched.
    pub fn step(
        &self,
        state: &mut AdamState,
        params: &mut ParamStore,
        grads: &Gradients,
        trainable: impl Fn(ParamId) -> bool,
    ) -> Result<()> {
        let pairs: Vec<(ParamId, &Tensor)> =
            grads.params().filter(|(id, _)| trainable(*id)).collect();
        self.step_with(state, params, &pairs)
    }

    /// Same update with explicitly supplied gradients.
    pub fn step_with(
        &self,
        state: &mut AdamState,
        params: &mut ParamStore,
        grads: &[(ParamId, &Tensor)],
    ) -> Result<()> {
        self.validate()?;
        for (id, g) in grads {
            if params.get(*id).shape() != g.shape() {
                return Err(Error::dim("adam_step", params.get(*id).shape(), g.shape()));
            }
        }
        state.ensure(params);
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, g) in grads {
            let i = id.index();
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            let w = params.get_mut(*id).data_mut();
            for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// First/second moment estimates, one per parameter in the store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let mut s = Self::default();
        s.ensure(params);
        s
    }

    fn ensure(&mut self, params: &ParamStore) {
        while self.m.len() < params.len() {
            let shape = params.get(ParamId(self.m.len())).shape().to_vec();
            self.m.push(Tensor::zeros(&shape));
            self.v.push(Tensor::zeros(&shape));
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.m.get(id.index())
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor> {
        self.v.get(id.index())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(w)).unwrap();
        (store, id)
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        let id = store
            .insert("w", Tensor::vector(vec![0.5, -1.25, 3.0]))
            .unwrap();
        let before = store.clone();
        let mut state = AdamState::new(&store);
        let zero = Tensor::zeros(&[3]);
        Adam::default()
            .step_with(&mut state, &mut store, &[(id, &zero)])
            .unwrap();
        assert_eq!(store, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g| + eps).
        let (mut store, id) = scalar_store(0.0);
        let mut state = AdamState::new(&store);
        let g = Tensor::scalar(1.0);
        Adam::default()
            .step_with(&mut state, &mut store, &[(id, &g)])
            .unwrap();
        let expected = -0.002 * 1.0 / (1.0 + 1e-8);
        assert!((store.get(id).item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn approaches_minimum_of_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut state = AdamState::new(&store);
        let adam = Adam::default();
        let mut dist = vec![3.0];
        for _ in 0..100 {
            let w = store.get(id).item().unwrap();
            let g = Tensor::scalar(2.0 * (w - 3.0));
            adam.step_with(&mut state, &mut store, &[(id, &g)]).unwrap();
            dist.push((store.get(id).item().unwrap() - 3.0).abs());
        }
        assert!(dist.windows(2).all(|p| p[1] < p[0]));
        // Constant-sign gradient: each step moves by almost exactly lr.
        assert!((dist[0] - dist[100] - 0.2).abs() < 5e-3, "{}", dist[100]);
        assert!(state.second_moment(id).unwrap().data()[0] >= 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let (mut store, id) = scalar_store(0.0);
        let mut state = AdamState::new(&store);
        let g = Tensor::zeros(&[2]);
        assert!(matches!(
            Adam::default().step_with(&mut state, &mut store, &[(id, &g)]),
            Err(Error::Dimension { .. })
        ));
    }
}
