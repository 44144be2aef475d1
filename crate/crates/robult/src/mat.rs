//! Plain row-major f64 matrix used for datasets, representations taken out
//! of the graph, and metric computations. No gradient machinery.

use crate::error::{Result, RobultError};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(RobultError::Dimension {
                op: "mat_from_vec",
                lhs: vec![rows, cols],
                rhs: vec![data.len()],
            });
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// New matrix made of the given rows, in order.
    pub fn take_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.rows, self.cols], self.data.clone())
            .expect("mat dimensions are consistent by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Mat {
        let shape = t.shape();
        debug_assert_eq!(shape.len(), 2);
        Mat {
            rows: shape[0],
            cols: shape[1],
            data: t.values_vec(),
        }
    }
}
