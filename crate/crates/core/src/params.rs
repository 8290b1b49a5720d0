//! Named parameter collections and initialisation.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::numerics::{Scalar, Tensor};
use crate::{Error, Result};

/// Ordered list of named learnable tensors. The position of a tensor is its
/// parameter index on a [`crate::Graph`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a tensor and returns its index.
    pub fn push(&mut self, name: &str, tensor: Tensor<S>) -> usize {
        self.names.push(String::from(name));
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, index: usize) -> &Tensor<S> {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Tensor<S> {
        &mut self.tensors[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.tensors.iter().map(Tensor::shape)
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn zeros_like(&self) -> Vec<Tensor<S>> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Checks that this set has exactly the names and shapes of `layout`.
    pub fn check_layout<T: Scalar>(&self, layout: &ParamSet<T>) -> Result<()> {
        if self.len() != layout.len() {
            return Err(Error::Config(alloc::format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                self.len()
            )));
        }
        for ((name, t), (lname, lt)) in self.iter().zip(layout.iter()) {
            if name != lname {
                return Err(Error::Param {
                    name: String::from(name),
                    reason: alloc::format!("expected parameter {lname:?} at this position"),
                });
            }
            if t.shape() != lt.shape() {
                return Err(Error::Param {
                    name: String::from(name),
                    reason: alloc::format!("shape {:?}, expected {:?}", t.shape(), lt.shape()),
                });
            }
            if !t.is_finite() {
                return Err(Error::Param {
                    name: String::from(name),
                    reason: String::from("contains non-finite values"),
                });
            }
        }
        Ok(())
    }
}

/// Uniform in `+-sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<S: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<S> {
    let bound = Float::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(alloc::vec![rows, cols], data).expect("positive dims")
}

/// A learnable vector treated as a `1 x n` weight for initialisation.
pub fn xavier_vector<S: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor<S> {
    let bound = Float::sqrt(6.0 / (n + 1) as f64);
    let data = (0..n)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(alloc::vec![n], data).expect("positive dims")
}

pub fn zeros_vector<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::zeros(&[n])
}

pub fn ones_vector<S: Scalar>(n: usize) -> Tensor<S> {
    Tensor::full(&[n], S::one())
}
