//! Adam with bias correction, plain SGD, and global-norm gradient clipping.

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::mgu::Model;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    /// First-moment estimates, one per parameter.
    pub m: Gradients,
    /// Second-moment estimates; never negative.
    pub v: Gradients,
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            t: 0,
            config,
        }
    }
}

/// Rescales `g` so its global L2 norm is at most `max_norm`. Returns the
/// factor applied (1.0 when already within bounds).
pub fn clip_global_norm(g: &mut Gradients, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::arg(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let norm = g.norm();
    if !norm.is_finite() {
        return Err(Error::Numeric(format!("gradient norm is {norm}")));
    }
    if norm <= max_norm {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    g.scale_inplace(scale);
    Ok(scale)
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(model: &mut Model, g: &Gradients, s: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::arg(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    g.check_congruent(model)?;
    s.m.check_congruent(model)?;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = s.config;
    s.t += 1;
    let t = i32::try_from(s.t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    let params = model.params_mut();
    let grads = g.as_array();
    let ms = s.m.as_array_mut();
    let vs = s.v.as_array_mut();
    for (((p, gm), m), v) in params.into_iter().zip(grads).zip(ms).zip(vs) {
        let p = p.data_mut();
        let m = m.data_mut();
        let v = v.data_mut();
        for (i, &gi) in gm.data().iter().enumerate() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + epsilon);
            if !step.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite Adam update at step {}",
                    s.t
                )));
            }
            p[i] -= step;
        }
    }
    Ok(())
}

/// `theta <- theta - lr * g`.
pub fn sgd_step(model: &mut Model, g: &Gradients, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::arg(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    g.check_congruent(model)?;
    if !g.all_finite() {
        return Err(Error::Numeric("non-finite gradient in SGD step".into()));
    }
    for (p, gm) in model.params_mut().into_iter().zip(g.as_array()) {
        p.axpy(-lr, gm)?;
    }
    Ok(())
}
