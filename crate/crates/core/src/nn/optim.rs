use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

pub trait Optimizer<T: Scalar> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64);
}

/// RMSprop with `rho = 0.9`, `eps = 1e-7`.
#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub rho: f64,
    pub eps: f64,
    sq: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            rho: 0.9,
            eps: 1e-7,
            sq: Grads::zeros_like(store).data,
        }
    }
}

impl<T: Scalar> Optimizer<T> for RmsProp<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        let rho = T::of(self.rho);
        let one_minus = T::of(1.0 - self.rho);
        let eps = T::of(self.eps);
        let lr = T::of(lr);
        for ((p, g), s) in store.params.iter_mut().zip(&grads.data).zip(&mut self.sq) {
            for ((w, &gi), si) in p.data.iter_mut().zip(g).zip(s.iter_mut()) {
                *si = rho * *si + one_minus * gi * gi;
                *w -= lr * gi / (si.sqrt() + eps);
            }
        }
    }
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-7` and bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            t: 0,
            m: Grads::zeros_like(store).data,
            v: Grads::zeros_like(store).data,
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, store: &mut ParamStore<T>, grads: &Grads<T>, lr: f64) {
        self.t += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::of(1.0 - self.beta1);
        let c2 = T::of(1.0 - self.beta2);
        let step = lr * (1.0 - self.beta2.powi(self.t)).sqrt() / (1.0 - self.beta1.powi(self.t));
        let step = T::of(step);
        let eps = T::of(self.eps);
        for (((p, g), m), v) in store
            .params
            .iter_mut()
            .zip(&grads.data)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                *w -= step * *mi / (vi.sqrt() + eps);
            }
        }
    }
}
