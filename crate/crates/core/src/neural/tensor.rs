use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major `f64` array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {} values", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// Xavier/Glorot uniform over a `[rows, cols]` matrix (or a vector,
    /// treated as `[len, 1]`).
    pub fn xavier(shape: &[usize], rng: &mut Rng) -> Self {
        let (fan_out, fan_in) = match shape {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            _ => (shape.iter().product(), 1),
        };
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += W x` for a row-major `[out.len(), x.len()]` matrix.
#[inline]
pub fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ g`.
#[inline]
pub fn matvec_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(n)) {
        if *gi != 0.0 {
            for (o, wij) in out.iter_mut().zip(row) {
                *o += gi * wij;
            }
        }
    }
}

/// `W += g xᵀ`.
#[inline]
pub fn outer_acc(w: &mut [f64], g: &[f64], x: &[f64]) {
    let n = x.len();
    for (gi, row) in g.iter().zip(w.chunks_exact_mut(n)) {
        if *gi != 0.0 {
            for (wij, xj) in row.iter_mut().zip(x) {
                *wij += gi * xj;
            }
        }
    }
}

/// Named parameter tensors plus the seed they were initialized from.
/// Gradients use the same type with matching names and shapes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor>,
    pub seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore { tensors: BTreeMap::new(), seed }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    /// Panics when the tensor is missing: model code only asks for names it
    /// registered itself, and loaded checkpoints are validated up front.
    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("parameter {name} not registered"))
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(&v.shape))).collect(),
            seed: self.seed,
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors.values().flat_map(|t| &t.data).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors.values_mut() {
            t.data.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn add_assign(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Shape(format!("{} tensors vs {} tensors", self.tensors.len(), other.tensors.len())));
        }
        for ((ka, a), (kb, b)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb || a.shape != b.shape {
                return Err(Error::Shape(format!("{ka}{:?} vs {kb}{:?}", a.shape, b.shape)));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Flat coordinate view used by the gradient checker.
    pub fn coordinates(&self) -> Vec<(String, usize)> {
        self.tensors.iter().flat_map(|(k, t)| (0..t.len()).map(move |i| (k.clone(), i))).collect()
    }
}
