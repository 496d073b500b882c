//! Dense row-major matrix and the pure kernels the decoder is built from.
//!
//! Everything computes in f64. 32-bit floats appear only at I/O boundaries
//! (feature files, checkpoints); they are widened on the way in.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::numeric(
                "matrix",
                format!("{}x{} needs {} entries, got {}", rows, cols, rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::numeric("matrix", "ragged rows"));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    /// A single row vector.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Widen a 32-bit stored vector into a 1xN row.
    pub fn widen_row(values: &[f32]) -> Matrix {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            let o_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Row-wise softmax, stabilized by per-row max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::numeric("softmax_rows", "non-finite input"));
    }
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Mean over rows: NxC -> 1xC.
pub fn mean_rows(m: &Matrix) -> Result<Matrix> {
    if m.rows == 0 {
        return Err(Error::numeric("mean_rows", "zero rows"));
    }
    let mut out = Matrix::zeros(1, m.cols);
    for r in 0..m.rows {
        for c in 0..m.cols {
            out.data[c] += m.data[r * m.cols + c];
        }
    }
    let inv = 1.0 / m.rows as f64;
    for v in &mut out.data {
        *v *= inv;
    }
    Ok(out)
}

/// Stack matrices vertically. All operands must share a column count.
pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
    let cols = match parts.first() {
        Some(m) => m.cols,
        None => return Err(Error::numeric("concat_rows", "no operands")),
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for m in parts {
        if m.cols != cols {
            return Err(Error::shape("concat_rows", (rows, cols), m.shape()));
        }
        data.extend_from_slice(&m.data);
        rows += m.rows;
    }
    Ok(Matrix { rows, cols, data })
}

/// Probability clamp for the loss. Keeps log() away from zero.
pub const PROB_EPSILON: f64 = 1e-12;

/// Negative log-likelihood of the ground-truth class probability.
///
/// `p` is clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` first; values outside
/// [0, 1] even after clamping are rejected.
pub fn cross_entropy(p: f64) -> Result<f64> {
    if !p.is_finite() || !(-PROB_EPSILON..=1.0 + PROB_EPSILON).contains(&p) {
        return Err(Error::numeric(
            "cross_entropy",
            format!("probability {p} outside [0, 1]"),
        ));
    }
    let clamped = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    Ok(-clamped.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_is_noop() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let i = Matrix::identity(2);
        assert_eq!(matmul(&i, &m).unwrap(), m);
        assert_eq!(matmul(&m, &i).unwrap(), m);
    }

    #[test]
    fn matmul_hand_checked_case() {
        // [[1,2],[3,4]] * [[5],[6]] = [[17],[39]]
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c, Matrix::from_rows(&[vec![17.0], vec![39.0]]).unwrap());
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Matrix::zeros(2, 2);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&z, &m).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 1);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(err.contains("4x1"), "{err}");
    }

    #[test]
    fn softmax_symmetric_pair() {
        let m = Matrix::row_vector(&[0.0, 0.0]);
        let s = softmax_rows(&m).unwrap();
        assert_eq!(s.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        for c in [-3.0, 0.0, 17.5] {
            let m = Matrix::row_vector(&[c; 5]);
            let s = softmax_rows(&m).unwrap();
            for &v in s.row(0) {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_exp_normalize_oracle() {
        // Oracle: direct exp-normalize at double precision.
        let input: [f64; 3] = [1.0, 2.0, 3.0];
        let exps: Vec<f64> = input.iter().map(|v| v.exp()).collect();
        let total: f64 = exps.iter().sum();
        let expected: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let s = softmax_rows(&Matrix::row_vector(&input)).unwrap();
        for (got, want) in s.row(0).iter().zip(&expected) {
            assert!((got - want).abs() < 1e-15);
        }
        // Frozen values from the oracle above.
        let frozen = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (got, want) in s.row(0).iter().zip(&frozen) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let base = Matrix::row_vector(&[0.3, -1.2, 2.5, 0.0]);
        let shifted = base.map(|v| v + 7.25);
        // Max-stabilization makes the shifted input bitwise identical.
        assert_eq!(softmax_rows(&base).unwrap(), softmax_rows(&shifted).unwrap());
    }

    #[test]
    fn softmax_rejects_nan() {
        let m = Matrix::row_vector(&[f64::NAN, 0.0]);
        assert!(softmax_rows(&m).is_err());
    }

    #[test]
    fn cross_entropy_half_is_ln2() {
        assert!((cross_entropy(0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_perfect_prediction() {
        assert!(cross_entropy(1.0 - 1e-12).unwrap() < 1e-11);
    }

    #[test]
    fn cross_entropy_quarter_oracle() {
        // Oracle: -ln(0.25) = ln 4.
        assert!((cross_entropy(0.25).unwrap() - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_out_of_range() {
        assert!(cross_entropy(1.5).is_err());
        assert!(cross_entropy(-0.2).is_err());
        assert!(cross_entropy(f64::NAN).is_err());
    }

    #[test]
    fn mean_rows_averages() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mean = mean_rows(&m).unwrap();
        assert_eq!(mean.row(0), &[2.0, 3.0]);
    }

    #[test]
    fn concat_rows_stacks() {
        let a = Matrix::row_vector(&[1.0, 2.0]);
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let c = concat_rows(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (3, 2));
        assert_eq!(c.row(2), &[5.0, 6.0]);
    }
}
