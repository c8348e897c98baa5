use serde::{Deserialize, Serialize};

use crate::real::Real;

/// A named dense tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// The ordered parameter set of a network. Gradients and optimizer moments
/// use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<T> {
    pub tensors: Vec<Param<T>>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: vec![T::zero(); p.data.len()],
                })
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|p| p.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.tensors.iter().find(|p| p.name == name)
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.tensors {
            p.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// `self += scale * other`, tensor by tensor in a fixed order.
    pub fn add_scaled(&mut self, other: &Params<T>, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scalars(&self) -> impl Iterator<Item = &T> {
        self.tensors.iter().flat_map(|p| p.data.iter())
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.tensors.iter_mut().flat_map(|p| p.data.iter_mut())
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&x| U::of(x.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn same_layout<U>(&self, other: &Params<U>) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.data.len() == b.data.len())
    }
}
