//! Minimal define-by-run reverse-mode autodiff over row-major `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its value and whatever it needs for the backward sweep;
//! [`Tape::backward`] visits the nodes once in reverse append order. Model
//! weights live in a [`ParameterSet`] and enter the tape through
//! [`Tape::param`], which registers each parameter at most once per tape.

mod kernels;
mod params;
mod tape;

pub mod gradcheck;

pub use params::{ParamKind, ParameterSet};
pub use tape::{Gradients, NodeId, Tape};

use crate::error::{shape_err, Result};

/// Default additive guard used by `log`, normalizers and metric denominators.
pub const EPS: f64 = 1e-8;

/// Row-major tensor of `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Resolves a possibly negative axis index.
pub(crate) fn resolve_axis(op: &'static str, rank: usize, axis: isize) -> Result<usize> {
    let a = if axis < 0 { rank as isize + axis } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(shape_err(op, format!("axis {axis} out of range for rank {rank}")));
    }
    Ok(a as usize)
}
