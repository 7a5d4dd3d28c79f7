//! Adam optimizer over a [`ParamStore`].

use std::collections::BTreeMap;

use super::store::ParamStore;

pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    state: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    /// One update from named gradients. Non-trainable tensors and tensors
    /// without gradients are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<String, Vec<f32>>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let Some(param) = store.get_mut(name) else {
                continue;
            };
            if !param.trainable {
                continue;
            }
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                param.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        // f(w) = (w - 3)^2, gradient 2(w - 3)
        let mut store = ParamStore::new();
        store.insert("w", vec![0.0], vec![1]);
        let mut opt = Adam::new(0.1, 0.8, 0.999);
        for _ in 0..400 {
            let w = store.get("w").unwrap().value[0];
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), vec![2.0 * (w - 3.0)]);
            opt.step(&mut store, &grads);
        }
        let w = store.get("w").unwrap().value[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }

    #[test]
    fn frozen_params_do_not_move() {
        let mut store = ParamStore::new();
        store.insert_frozen("w", vec![1.0], vec![1]);
        let mut opt = Adam::new(0.1, 0.9, 0.999);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![5.0]);
        opt.step(&mut store, &grads);
        assert_eq!(store.get("w").unwrap().value, vec![1.0]);
    }
}
