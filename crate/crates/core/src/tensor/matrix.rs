use super::{Result, TensorError};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::DimensionMismatch {
                what: "matrix data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite("matrix data"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self * x + bias`
    pub fn affine_into(&self, x: &[f64], bias: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(bias.len(), self.rows);
        out.clear();
        out.extend(
            self.data
                .chunks_exact(self.cols)
                .zip(bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()),
        );
    }

    /// `out += self^T * delta`
    pub fn transpose_mul_acc(&self, delta: &[f64], out: &mut [f64]) {
        for (row, d) in self.data.chunks_exact(self.cols).zip(delta) {
            if *d == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * d;
            }
        }
    }

    /// `self += scale * delta ⊗ x`
    pub fn add_outer(&mut self, delta: &[f64], x: &[f64], scale: f64) {
        for (row, d) in self.data.chunks_exact_mut(self.cols).zip(delta) {
            let s = d * scale;
            if s == 0.0 {
                continue;
            }
            for (w, xi) in row.iter_mut().zip(x) {
                *w += s * xi;
            }
        }
    }
}
