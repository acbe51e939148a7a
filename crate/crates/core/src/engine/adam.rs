use crate::engine::param::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-15,
        }
    }
}

/// First/second moment buffers for one [`ParamStore`], indexed like it.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Self {
            step: 0,
            config,
            m: store.iter().map(|t| vec![T::zero(); t.len()]).collect(),
            v: store.iter().map(|t| vec![T::zero(); t.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update of every learnable tensor in `store`.
pub fn adam_step<T: Real>(state: &mut AdamState<T>, store: &mut ParamStore<T>) {
    assert_eq!(state.m.len(), store.len(), "Adam state does not match store");
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::of(c.beta1);
    let b2 = T::of(c.beta2);
    let one_m_b1 = T::of(1.0 - c.beta1);
    let one_m_b2 = T::of(1.0 - c.beta2);
    // Fold the bias corrections into the step size and epsilon:
    // lr * m_hat / (sqrt(v_hat) + eps) == step * m / (sqrt(v) + eps_hat).
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let step = T::of(c.lr * bc2.sqrt() / bc1);
    let eps = T::of(c.eps * bc2.sqrt());

    for (i, tensor) in store.iter_mut().enumerate() {
        if !tensor.learnable {
            continue;
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for (((p, &g), m), v) in tensor
            .values
            .iter_mut()
            .zip(tensor.grad.iter())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::param::ParamTensor;

    fn scalar_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut t = ParamTensor::from_values("p", vec![1], vec![value]).unwrap();
        t.grad = vec![grad];
        s.insert(t).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = scalar_store(1.25, 0.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut st, &mut s);
        assert_eq!(s.get(0).values[0], 1.25);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(0.0, 1.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut st, &mut s);
        assert!((s.get(0).values[0] + 0.02).abs() < 1e-12);
    }

    #[test]
    fn repeated_gradient_does_not_grow_the_step() {
        // Direct evaluation of the recurrence with g = 1 twice:
        // step 1: m=0.1, v=0.01 -> update lr * 1.0
        // step 2: m=0.19, v=0.0199 -> m_hat=1, v_hat=1 -> update lr * 1.0
        let mut s = scalar_store(0.0, 1.0);
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut st, &mut s);
        let first = -s.get(0).values[0];
        adam_step(&mut st, &mut s);
        let second = -s.get(0).values[0] - first;
        assert!(second <= first * (1.0 + 1e-6), "{second} > {first}");
    }

    #[test]
    fn frozen_tensors_are_skipped() {
        let mut s = scalar_store(3.0, 1.0);
        s.get_mut(0).learnable = false;
        let mut st = AdamState::new(AdamConfig::default(), &s);
        adam_step(&mut st, &mut s);
        assert_eq!(s.get(0).values[0], 3.0);
    }
}
