use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::normal;
use crate::scalar::Scalar;

/// Dense row-major matrix value. Scalars are `1x1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 2],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 2], data: Vec<T>) -> Result<Self> {
        if data.len() != shape[0] * shape[1] {
            return Err(Error::Shape(format!(
                "{} values for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 2]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: [usize; 2]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: [usize; 2], v: T) -> Self {
        Self {
            shape,
            data: vec![v; shape[0] * shape[1]],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: [1, 1],
            data: vec![v],
        }
    }

    pub fn row_vector(values: Vec<T>) -> Self {
        Self {
            shape: [1, values.len()],
            data: values,
        }
    }

    pub fn column_vector(values: Vec<T>) -> Self {
        Self {
            shape: [values.len(), 1],
            data: values,
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            shape: [rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn from_f64(shape: [usize; 2], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn randn(shape: [usize; 2], rng: &mut impl Rng) -> Self {
        let data = (0..shape[0] * shape[1]).map(|_| T::of(normal(rng))).collect();
        Self { shape, data }
    }

    pub fn uniform(shape: [usize; 2], low: f64, high: f64, rng: &mut impl Rng) -> Self {
        let data = (0..shape[0] * shape[1])
            .map(|_| T::of(rng.random_range(low..high)))
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.shape[1]..(i + 1) * self.shape[1]]
    }

    /// Value of a `1x1` tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let [m, n] = self.shape;
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Self { shape: [n, m], data }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let [m, k] = self.shape;
        let [k2, n] = other.shape;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            let out = &mut data[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out.iter_mut().zip(brow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self { shape: [m, n], data })
    }

    /// Rows selected by index.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let n = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: [idx.len(), n],
            data,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}
