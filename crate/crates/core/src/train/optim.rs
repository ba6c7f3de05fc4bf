use dimvl_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradMap, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers, keyed like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: GradMap,
    pub v: GradMap,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros: GradMap = params.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ParamStore, grads: &GradMap, state: &mut AdamState, lr: f64) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::Dimension(format!("gradient {:?} for {name} of shape {:?}", g.shape(), p.shape())));
        }
        if !state.m.contains_key(name) || !state.v.contains_key(name) {
            return Err(Error::Contract(format!("optimizer has no moments for {name}")));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads[name].data();
        let m = state.m.get_mut(name).expect("checked").data_mut();
        let v = state.v.get_mut(name).expect("checked").data_mut();
        for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Constant rate, optionally ramped linearly from zero over the first
/// `warmup_steps` steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, warmup_steps: 0 }
    }

    /// Rate for the 1-based step `step`.
    pub fn at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            self.base * step as f64 / self.warmup_steps as f64
        } else {
            self.base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w".into(), Tensor::vector(vec![v, v]).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let grads: GradMap = [("w".to_string(), Tensor::vector(vec![1.0, -1.0]).unwrap())].into();
        adam_step(&mut p, &grads, &mut st, 0.1).unwrap();
        // m̂ = g, v̂ = g², update = -lr·g/(|g| + eps).
        let expected = 0.1 / (1.0 + 1e-8);
        let w = p.get("w").unwrap().data();
        assert!((w[0] + expected).abs() < 1e-15 && (w[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(0.5);
        let mut st = AdamState::new(&p, AdamConfig::default());
        let grads: GradMap = [("w".to_string(), Tensor::zeros(&[2]))].into();
        adam_step(&mut p, &grads, &mut st, 0.1).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut p = store(0.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &GradMap::new(), &mut st, 0.1), Err(Error::Contract(_))));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn warmup_ramps_then_holds() {
        let s = LrSchedule { base: 1.0, warmup_steps: 4 };
        assert_eq!(s.at(1), 0.25);
        assert_eq!(s.at(4), 1.0);
        assert_eq!(s.at(100), 1.0);
        assert_eq!(LrSchedule::constant(0.3).at(1), 0.3);
    }
}
