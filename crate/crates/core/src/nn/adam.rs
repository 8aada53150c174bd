use ndarray::{ArrayD, NdFloat, Zip};

use super::params::{Grads, Param, ParamRole, ParamStore};

/// Adam with L2 weight decay added to the gradient of weight tensors only
/// (biases and rectifier slopes are not decayed).
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: NdFloat> Adam<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<ArrayD<T>> = store.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr` on the parameters accepted by
    /// `trainable`; the others are left bit-identical.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64, trainable: impl Fn(&Param<T>) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::from(self.beta1).unwrap(), T::from(self.beta2).unwrap());
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let lr = T::from(lr).unwrap();
        let eps = T::from(self.eps).unwrap();
        let wd = T::from(self.weight_decay).unwrap();
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !trainable(p) {
                continue;
            }
            let decay = matches!(p.role, ParamRole::Weight { .. });
            Zip::from(&mut p.value)
                .and(&grads.tensors[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|w, &g, m, v| {
                    let g = if decay { g + wd * *w } else { g };
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
