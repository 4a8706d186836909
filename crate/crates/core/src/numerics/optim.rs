use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{BicError, Result};

/// Decoupled-weight-decay Adam with optional variance rectification (RAdamW).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub rectify: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            rectify: true,
        }
    }
}

/// First/second moment buffers plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState<R> {
    pub config: AdamWConfig,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
    step: u64,
}

impl<R: Real> OptimState<R> {
    pub fn new(params: &ParamStore<R>, config: AdamWConfig) -> Self {
        let zeros = |t: &Tensor<R>| vec![R::zero(); t.len()];
        OptimState {
            config,
            m: params.iter().map(|p| zeros(&p.tensor)).collect(),
            v: params.iter().map(|p| zeros(&p.tensor)).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Variance-rectification multiplier for step `t`, or `None` while the
    /// approximated SMA length is too short (plain momentum step).
    fn rectifier(&self, t: u64) -> Option<f64> {
        let b2 = self.config.beta2;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b2t = b2.powi(t as i32);
        let rho_t = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
        (rho_t > 5.0).then(|| {
            ((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt()
        })
    }
}

/// Applies one update to every parameter in `active`. `grads` is aligned with
/// the store's registration order; an active parameter without a gradient is
/// a training-logic error.
pub fn step_optimizer<R: Real>(
    params: &mut ParamStore<R>,
    grads: &[Option<Tensor<R>>],
    active: &[ParamId],
    state: &mut OptimState<R>,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(BicError::Training(format!(
            "gradient list has {} entries for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for &id in active {
        if grads[id.index()].is_none() {
            return Err(BicError::Training(format!(
                "missing gradient for `{}`",
                params.name(id)
            )));
        }
    }

    state.step += 1;
    let t = state.step;
    let c = state.config.clone();
    let bc1 = 1.0 - c.beta1.powi(t as i32);
    let bc2 = 1.0 - c.beta2.powi(t as i32);
    let rect = if c.rectify { state.rectifier(t) } else { Some(1.0) };
    let (b1, b2) = (R::lit(c.beta1), R::lit(c.beta2));
    let (one_b1, one_b2) = (R::lit(1.0 - c.beta1), R::lit(1.0 - c.beta2));
    let decay = R::lit(1.0 - c.lr * c.weight_decay);
    let eps = R::lit(c.eps);
    let inv_bc1 = R::lit(1.0 / bc1);
    let inv_bc2 = R::lit(1.0 / bc2);

    for &id in active {
        let g = grads[id.index()].as_ref().expect("checked above").data();
        let m = &mut state.m[id.index()];
        let v = &mut state.v[id.index()];
        let w = params.get_mut(id).data_mut();
        if g.len() != w.len() {
            return Err(BicError::dim("step_optimizer", &[w.len()], &[g.len()]));
        }
        match rect {
            Some(r) => {
                let step = R::lit(c.lr * r);
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + one_b1 * g[i];
                    v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                    let denom = (v[i] * inv_bc2).sqrt() + eps;
                    w[i] = w[i] * decay - step * (m[i] * inv_bc1) / denom;
                }
            }
            None => {
                let step = R::lit(c.lr);
                for i in 0..w.len() {
                    m[i] = b1 * m[i] + one_b1 * g[i];
                    v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                    w[i] = w[i] * decay - step * m[i] * inv_bc1;
                }
            }
        }
    }
    Ok(())
}
