use std::collections::HashMap;

use super::{shape_err, Gradients, ParamId, ParamStore, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// First and second moment accumulators keyed by parameter.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<ParamId, (Vec<S>, Vec<S>)>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, moments: HashMap::new() }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Starts a new step; returns the bias-correction terms for it.
    fn advance(&mut self) -> (f64, f64) {
        self.step += 1;
        let t = self.step as i32;
        (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
    }

    /// Applies one update to `value` in place using moments stored under `id`.
    fn apply(&mut self, id: ParamId, value: &mut [S], grad: &[S], lr: f64, bc: (f64, f64)) -> Result<()> {
        if value.len() != grad.len() {
            return Err(shape_err("adam", format!("param has {} values, grad {}", value.len(), grad.len())));
        }
        let c = self.config;
        let (m, v) = self
            .moments
            .entry(id)
            .or_insert_with(|| (vec![S::zero(); value.len()], vec![S::zero(); value.len()]));
        if m.len() != value.len() {
            return Err(shape_err("adam", format!("moment has {} values, param {}", m.len(), value.len())));
        }
        let (b1, b2) = (S::from_f64(c.beta1), S::from_f64(c.beta2));
        let (one_b1, one_b2) = (S::from_f64(1.0 - c.beta1), S::from_f64(1.0 - c.beta2));
        let wd = S::from_f64(c.weight_decay);
        let step_size = S::from_f64(lr / bc.0);
        let inv_bc2 = S::from_f64(1.0 / bc.1);
        let eps = S::from_f64(c.eps);
        for i in 0..value.len() {
            let g = grad[i] + wd * value[i];
            m[i] = b1 * m[i] + one_b1 * g;
            v[i] = b2 * v[i] + one_b2 * g * g;
            value[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
        }
        Ok(())
    }
}

/// One bias-corrected Adam step over every parameter that has a gradient.
/// Parameters without a gradient (frozen or unreached) are left untouched.
pub fn adam_step<S: Scalar>(
    store: &mut ParamStore<S>,
    grads: &Gradients<S>,
    state: &mut OptimizerState<S>,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(shape_err("adam", format!("learning rate must be non-negative, got {lr}")));
    }
    let bc = state.advance();
    let mut ids: Vec<ParamId> = grads.param_ids().collect();
    ids.sort();
    for id in ids {
        let g = grads.param(id).expect("listed id");
        if g.shape() != store.value(id).shape() {
            return Err(shape_err(
                "adam",
                format!("{}: param {:?} vs grad {:?}", store.get(id).name, store.value(id).shape(), g.shape()),
            ));
        }
        state.apply(id, store.value_mut(id).data_mut(), g.data(), lr, bc)?;
    }
    Ok(())
}
