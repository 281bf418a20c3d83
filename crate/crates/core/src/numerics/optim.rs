//! Adaptive-moment optimiser with bias correction.

use super::mlp::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub first: ParamSet,
    pub second: ParamSet,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// One descent step on `params` in place.
pub fn opt_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.sizes() != grads.sizes() || params.sizes() != state.first.sizes() {
        return Err(Error::Dimension("optimizer shape mismatch".into()));
    }
    let (b1, b2) = cfg.betas;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}
