use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators per parameter plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn moments(&self, id: ParamId) -> Option<(&[f64], &[f64])> {
        self.moments.get(&id).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One bias-corrected Adam update of every parameter in `store` from its
/// accumulated `grad`.
pub fn adam_step(store: &mut ParamStore, state: &mut OptimizerState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (id, p) in store.iter_mut() {
        let n = p.value.numel();
        let (m, v) = state
            .moments
            .entry(id)
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        for (((w, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(grad: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new(0);
        let id = s.add("w", Tensor::scalar(1.0)).unwrap();
        s.get_mut(id).grad = Tensor::scalar(grad);
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let (mut s, id) = one_param(0.0);
        let mut st = OptimizerState::new();
        adam_step(&mut s, &mut st, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(s.get(id).value.data(), &[1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one_param(1.0);
        let mut st = OptimizerState::new();
        adam_step(&mut s, &mut st, 0.1, &AdamConfig::default()).unwrap();
        let delta = s.get(id).value.data()[0] - 1.0;
        assert!((delta + 0.1 / (1.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn sign_flip_flips_update() {
        let (mut a, ia) = one_param(0.7);
        let (mut b, ib) = one_param(-0.7);
        adam_step(&mut a, &mut OptimizerState::new(), 0.01, &AdamConfig::default()).unwrap();
        adam_step(&mut b, &mut OptimizerState::new(), 0.01, &AdamConfig::default()).unwrap();
        let da = a.get(ia).value.data()[0] - 1.0;
        let db = b.get(ib).value.data()[0] - 1.0;
        assert!((da + db).abs() < 1e-15 && da < 0.0);
    }

    #[test]
    fn rejects_non_positive_lr() {
        let (mut s, _) = one_param(1.0);
        assert!(adam_step(&mut s, &mut OptimizerState::new(), 0.0, &AdamConfig::default()).is_err());
    }
}
