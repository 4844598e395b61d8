//! Dense row-major f64 matrix, just enough linear algebra for the MLP.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape_check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Shape {
                expected: format!("{rows}x{cols}"),
                found: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    /// self (n×m) * other (m×k) -> n×k. Loop order keeps the inner
    /// traversal contiguous so the optimizer can vectorize it.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let (n, m, k) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(n, k);
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            let o_row = &mut out.data[i * k..(i + 1) * k];
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[l * k..(l + 1) * k];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// selfᵀ (m×n interpreted) * other: returns self.cols × other.cols.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "row counts must agree");
        let (n, m, k) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, k);
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            let b_row = &other.data[i * k..(i + 1) * k];
            for (l, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[l * k..(l + 1) * k];
                for (o, &b) in o_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// self * otherᵀ: returns self.rows × other.rows.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "column counts must agree");
        let (n, m, k) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(n, k);
        for i in 0..n {
            let a_row = &self.data[i * m..(i + 1) * m];
            for j in 0..k {
                let b_row = &other.data[j * m..(j + 1) * m];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                out.data[i * k + j] = acc;
            }
        }
        out
    }

    /// Adds a bias row vector to every row.
    pub fn add_row_bias(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(bias.iter()) {
                *v += b;
            }
        }
    }

    /// Column sums, i.e. the bias gradient of a pre-activation gradient.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, &v) in sums.iter_mut().zip(self.row(r).iter()) {
                *s += v;
            }
        }
        sums
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    /// Elementwise product with `mask` in place.
    pub fn mul_mask(&mut self, mask: &Matrix) {
        assert_eq!(self.data.len(), mask.data.len());
        for (v, &m) in self.data.iter_mut().zip(mask.data.iter()) {
            *v *= m;
        }
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        out.map_inplace(|v| v * c);
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.data.len(), other.data.len());
        for (v, &o) in self.data.iter_mut().zip(other.data.iter()) {
            *v += o;
        }
    }
}
