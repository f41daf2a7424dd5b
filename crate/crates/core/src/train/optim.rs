use crate::autodiff::Tensor;
use crate::model::{OptimizerState, ParamStore};
use crate::{Error, Result};

/// Adam with decoupled weight decay. Decay applies to matrices only;
/// biases, layer-norm parameters and other vectors are left alone.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    state: OptimizerState,
}

impl AdamW {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Result<Self> {
        let zeros = params
            .entries()
            .iter()
            .map(|e| Tensor::zeros(e.tensor.shape()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            state: OptimizerState {
                t: 0,
                m: zeros.clone(),
                v: zeros,
            },
        })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn set_state(&mut self, params: &ParamStore, state: OptimizerState) -> Result<()> {
        let ok = state.m.len() == params.len()
            && state.v.len() == params.len()
            && params
                .entries()
                .iter()
                .zip(state.m.iter().zip(&state.v))
                .all(|(p, (m, v))| m.shape() == p.tensor.shape() && v.shape() == p.tensor.shape());
        if !ok {
            return Err(Error::Checkpoint("optimizer state does not match the parameters".into()));
        }
        self.state = state;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Input(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        let s = &mut self.state;
        s.t += 1;
        let bc1 = 1.0 - self.beta1.powi(s.t as i32);
        let bc2 = 1.0 - self.beta2.powi(s.t as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads[i].data();
            let p = params.get_mut(id);
            let decay = if p.ndim() >= 2 { self.weight_decay } else { 0.0 };
            let m = s.m[i].data_mut();
            let v = s.v[i].data_mut();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + self.eps) + decay * *w;
                *w -= self.lr * update;
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales so the global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
