//! Dense f64 matrices and vectors, plus the elementwise nonlinearities used
//! by the recurrent cells.
//!
//! Everything is 64-bit and row-major. The sizes involved here are modest
//! (hidden dimensions of a few hundred against vocabularies of a few tens of
//! thousands), so plain loops over contiguous slices are enough.

use rand::Rng;

use crate::error::{Error, Result};

/// Numerically stable logistic sigmoid, 1 / (1 + e^(-x)).
///
/// The two-branch form avoids overflow of `exp` for large negative inputs;
/// it is exact for |x| well past 700.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output: s * (1 - s).
#[inline]
pub fn sigmoid_prime_from_output(s: f64) -> f64 {
    s * (1.0 - s)
}

/// A dense vector of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector { data: vec![0.0; dim] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    /// Elementwise tanh.
    pub fn tanh(&self) -> Vector {
        Vector::from_vec(self.data.iter().map(|x| x.tanh()).collect())
    }

    /// Elementwise sum; dimensions must agree.
    pub fn add(&self, other: &Vector) -> Result<Vector> {
        self.check_same_dim("add", other)?;
        Ok(Vector::from_vec(
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    /// Elementwise (Hadamard) product; dimensions must agree.
    pub fn mul(&self, other: &Vector) -> Result<Vector> {
        self.check_same_dim("mul", other)?;
        Ok(Vector::from_vec(
            self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect(),
        ))
    }

    /// Inner product; dimensions must agree.
    pub fn dot(&self, other: &Vector) -> Result<f64> {
        self.check_same_dim("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// self += scale * other.
    pub fn add_scaled(&mut self, other: &Vector, scale: f64) -> Result<()> {
        self.check_same_dim("add_scaled", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    fn check_same_dim(&self, op: &'static str, other: &Vector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                op,
                left: self.dim().to_string(),
                right: other.dim().to_string(),
            });
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Shift-invariant softmax: the maximum is subtracted before exponentiation,
/// so arbitrarily large (finite) scores cannot overflow.
pub fn softmax(v: &Vector) -> Result<Vector> {
    if v.dim() == 0 {
        return Err(Error::EmptySoftmax);
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for x in &mut out {
        *x /= sum;
    }
    Ok(Vector::from_vec(out))
}

/// A dense row-major matrix of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds from row slices; all rows must share one length.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Matrix { rows, cols, data }
    }

    /// Uniform initialization on [-a, a] with a = sqrt(6 / (rows + cols)).
    pub fn glorot_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies column `j` into a vector. This is how one-hot inputs are
    /// multiplied without ever materializing them.
    pub fn column(&self, j: usize) -> Vector {
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            out.push(self.data[i * self.cols + j]);
        }
        Vector::from_vec(out)
    }

    /// y = M v.
    pub fn matvec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.dim() {
            return Err(Error::Dimension {
                op: "matvec",
                left: self.shape_string(),
                right: v.dim().to_string(),
            });
        }
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            out.push(row.iter().zip(v.iter()).map(|(m, x)| m * x).sum());
        }
        Ok(Vector::from_vec(out))
    }

    /// y = M^T v, without forming the transpose.
    pub fn matvec_transpose(&self, v: &Vector) -> Result<Vector> {
        if self.rows != v.dim() {
            return Err(Error::Dimension {
                op: "matvec_transpose",
                left: self.shape_string(),
                right: v.dim().to_string(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let vi = v[i];
            for (o, m) in out.iter_mut().zip(row) {
                *o += m * vi;
            }
        }
        Ok(Vector::from_vec(out))
    }

    /// self += scale * a b^T.
    pub fn add_outer_scaled(&mut self, a: &Vector, b: &Vector, scale: f64) -> Result<()> {
        if self.rows != a.dim() || self.cols != b.dim() {
            return Err(Error::Dimension {
                op: "add_outer_scaled",
                left: self.shape_string(),
                right: format!("{}x{}", a.dim(), b.dim()),
            });
        }
        for i in 0..self.rows {
            let ai = scale * a[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, bj) in row.iter_mut().zip(b.iter()) {
                *r += ai * bj;
            }
        }
        Ok(())
    }

    /// Adds `v` into column `j`, scaled. The sparse counterpart of
    /// `add_outer_scaled` for one-hot inputs.
    pub fn add_column_scaled(&mut self, j: usize, v: &Vector, scale: f64) -> Result<()> {
        if self.rows != v.dim() || j >= self.cols {
            return Err(Error::Dimension {
                op: "add_column_scaled",
                left: self.shape_string(),
                right: format!("{} (col {})", v.dim(), j),
            });
        }
        for i in 0..self.rows {
            self.data[i * self.cols + j] += scale * v[i];
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension {
                op: "matrix add",
                left: self.shape_string(),
                right: other.shape_string(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_symmetry_point() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn sigmoid_saturates() {
        assert!((sigmoid(100.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-100.0) < 1e-12);
        // Stable far beyond the naive overflow point.
        assert!(sigmoid(700.0).is_finite());
        assert!(sigmoid(-700.0).is_finite());
    }

    #[test]
    fn sigmoid_of_one() {
        // 1/(1+e^-1), evaluated independently to full f64 precision.
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_monotone() {
        let mut prev = sigmoid(-10.0);
        for i in -9..=10 {
            let s = sigmoid(i as f64);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn softmax_uniform() {
        let v = softmax(&Vector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariant_no_overflow() {
        let v = softmax(&Vector::from_vec(vec![1000.0, 1000.0, 1000.0])).unwrap();
        for &x in v.as_slice() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_reference_values() {
        // Expected values computed with an arbitrary-precision evaluation of
        // e^x_i / sum e^x_j.
        let v = softmax(&Vector::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (got, want) in v.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_empty_rejected() {
        let err = softmax(&Vector::zeros(0)).unwrap_err();
        assert!(err.to_string().contains("empty softmax input"));
    }

    #[test]
    fn matvec_identity_and_zero() {
        let id = Matrix::identity(3);
        let v = Vector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(id.matvec(&v).unwrap().as_slice(), &[1.0, 2.0, 3.0]);

        let z = Matrix::zeros(2, 2);
        let v = Vector::from_vec(vec![5.0, 7.0]);
        assert_eq!(z.matvec(&v).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn matvec_hand_computed() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let v = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(m.matvec(&v).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matvec_shape_mismatch_names_both_shapes() {
        let m = Matrix::zeros(2, 3);
        let v = Vector::zeros(4);
        let err = m.matvec(&v).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains('4'), "{msg}");
    }

    #[test]
    fn transpose_matvec_agrees_with_explicit() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let v = Vector::from_vec(vec![1.0, -1.0]);
        // M^T v = [1-4, 2-5, 3-6]
        assert_eq!(m.matvec_transpose(&v).unwrap().as_slice(), &[-3.0, -3.0, -3.0]);
    }

    #[test]
    fn column_lookup_matches_onehot_matvec() {
        let m = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let onehot = Vector::from_vec(vec![0.0, 1.0, 0.0]);
        assert_eq!(m.column(1).as_slice(), m.matvec(&onehot).unwrap().as_slice());
    }
}
