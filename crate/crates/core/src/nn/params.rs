use rand_distr::{Distribution, Normal};

use super::Scalar;
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Named parameter tensors in registration order. Convolution and linear
/// layers register `<layer>.weight` followed by `<layer>.bias`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a zero tensor and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        self.params.push(Param {
            name: name.into(),
            shape,
            data: vec![T::zero(); len],
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    #[inline]
    pub fn data(&self, idx: usize) -> &[T] {
        &self.params[idx].data
    }

    /// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    pub fn init_he(&mut self, rng: &mut Rng) {
        for p in &mut self.params {
            if p.name.ends_with(".bias") {
                p.data.iter_mut().for_each(|v| *v = T::zero());
                continue;
            }
            let fan_in: usize = p.shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("std > 0");
            p.data.iter_mut().for_each(|v| *v = T::of(normal.sample(rng)));
        }
    }

    /// Copies every parameter whose name satisfies `select` from `src`.
    /// Returns the copied names; any shape mismatch aborts before copying.
    pub fn copy_from(
        &mut self,
        src: &ParamStore<T>,
        select: impl Fn(&str) -> bool,
    ) -> Result<Vec<String>> {
        let mut mismatched = Vec::new();
        let mut plan = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if !select(&p.name) {
                continue;
            }
            match src.index_of(&p.name) {
                Some(j) if src.params[j].shape == p.shape => plan.push((i, j)),
                Some(j) => mismatched.push(format!(
                    "{} ({:?} vs {:?})",
                    p.name, src.params[j].shape, p.shape
                )),
                None => mismatched.push(format!("{} (missing in source)", p.name)),
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::Transfer { layers: mismatched });
        }
        let names = plan
            .iter()
            .map(|&(i, j)| {
                self.params[i].data.clone_from(&src.params[j].data);
                self.params[i].name.clone()
            })
            .collect();
        Ok(names)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub data: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Self {
            data: store
                .params
                .iter()
                .map(|p| vec![T::zero(); p.data.len()])
                .collect(),
        }
    }

    /// Weight and bias buffers of the layer whose weight sits at `idx`.
    pub fn pair_mut(&mut self, idx: usize) -> (&mut [T], &mut [T]) {
        let (a, b) = self.data.split_at_mut(idx + 1);
        (&mut a[idx], &mut b[0])
    }

    pub fn add(&mut self, other: &Grads<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}
