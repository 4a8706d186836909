use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{BicError, Result};

/// Dense row-major matrix. Vectors are `1×n` rows and scalars are `1×1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<R> {
    rows: usize,
    cols: usize,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(rows: usize, cols: usize, data: Vec<R>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(BicError::Size(format!(
                "tensor extents must be positive, got [{rows}, {cols}]"
            )));
        }
        if data.len() != rows * cols {
            return Err(BicError::dim("tensor", &[rows, cols], &[data.len()]));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Row-major constructor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let data = rows.iter().flatten().map(|&x| R::lit(x)).collect();
        Tensor::new(r, c, data).expect("non-empty rows")
    }

    pub fn row_vector(values: &[R]) -> Self {
        Tensor::new(1, values.len(), values.to_vec()).expect("non-empty vector")
    }

    pub fn scalar(value: R) -> Self {
        Tensor {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor extents must be positive");
        Tensor {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: R) -> Self {
        let mut t = Self::zeros(rows, cols);
        t.data.fill(value);
        t
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = R::one();
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> R {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: R) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> R {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    pub fn to_nested_f64(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|x| x.as_f64()).collect())
            .collect()
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| S::lit(x.as_f64())).collect(),
        }
    }

    pub fn sum_squares(&self) -> R {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Plain (non-recorded) matrix product.
    pub fn matmul(&self, other: &Tensor<R>) -> Result<Tensor<R>> {
        if self.cols != other.rows {
            return Err(BicError::dim("matmul", &self.shape(), &other.shape()));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        super::real::gemm_nn(
            &self.data,
            &other.data,
            &mut out.data,
            self.rows,
            self.cols,
            other.cols,
        );
        Ok(out)
    }
}
