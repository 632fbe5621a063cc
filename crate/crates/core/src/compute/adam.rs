use super::params::{Gradients, ParamStore};
use super::ComputeError;

/// Adam hyper-parameters. `l2` adds `l2 · θ` to the gradient of every
/// parameter whose `decay` flag is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over every parameter that has a gradient.
///
/// Parameters absent from `grads` keep their value and moments. All
/// gradients are checked before any parameter is touched, so a non-finite
/// gradient leaves the store unchanged.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) -> Result<(), ComputeError> {
    for (id, g) in grads.iter() {
        let param = store.get(id);
        if g.dim() != param.value.dim() {
            return Err(ComputeError::ShapeMismatch {
                op: "adam_step",
                left: param.value.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.iter().all(|v| v.is_finite()) {
            return Err(ComputeError::NonFiniteGradient {
                name: param.name.clone(),
            });
        }
    }

    let step = store.step() + 1;
    store.set_step(step);
    let t = step as i32;
    let correction1 = 1.0 - cfg.beta1.powi(t);
    let correction2 = 1.0 - cfg.beta2.powi(t);
    let params = store.params_mut();
    for (id, g) in grads.iter() {
        let p = &mut params[id.0];
        let l2 = if p.decay { cfg.l2 } else { 0.0 };
        ndarray::Zip::from(&mut p.value)
            .and(&mut p.first_moment)
            .and(&mut p.second_moment)
            .and(g)
            .for_each(|theta, m, v, &g| {
                let g = g + l2 * *theta;
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}
