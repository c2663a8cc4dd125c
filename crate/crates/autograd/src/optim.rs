use std::collections::HashMap;

use crate::{Gradients, ParamId, ParamStore, Scalar, Tensor};

/// Adam with bias correction.
#[derive(Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: HashMap<ParamId, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(self.eps);
        for (id, g) in grads.params() {
            let (m, v) = self
                .moments
                .entry(id)
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.value_mut(id);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv -= step_size * *mv / ((*vv * inv_bc2).sqrt() + eps);
            }
        }
    }

    /// First/second moment tensors for serialization.
    pub fn moments(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>, &Tensor<T>)> {
        self.moments.iter().map(|(&k, (m, v))| (k, m, v))
    }

    pub fn restore(&mut self, step: u64, moments: Vec<(ParamId, Tensor<T>, Tensor<T>)>) {
        self.step = step;
        self.moments = moments.into_iter().map(|(k, m, v)| (k, (m, v))).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Mode};

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::default();
        for _ in 0..2000 {
            let g = Graph::new(Mode::Train);
            let x = g.param(&store, id);
            let loss = g.sum_all(g.mul(x, x));
            let grads = g.backward(loss);
            drop(g);
            opt.step(&mut store, &grads, 0.05);
        }
        assert!(store.value(id).max_abs() < 1e-3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(&[1], vec![1.0]));
        let g = Graph::new(Mode::Train);
        let x = g.param(&store, id);
        let loss = g.scale(x, 5.0);
        let grads = g.backward(loss);
        drop(g);
        let mut opt = Adam::default();
        opt.step(&mut store, &grads, 0.1);
        assert!((store.value(id).data()[0] - 0.9).abs() < 1e-6);
    }
}
