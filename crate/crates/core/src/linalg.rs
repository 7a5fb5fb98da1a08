//! Dense row-major `f64` matrices and the seeded generator used to fill them.
//!
//! Every parameter, gradient and activation in the crate is a [`Matrix`].
//! Shapes are checked on every binary operation; there is no broadcasting.
//!
//! Random draws come from [`RngState`], a thin wrapper over ChaCha8
//! (`rand_chacha::ChaCha8Rng`) seeded through `SeedableRng::seed_from_u64`.
//! ChaCha is a counter-based stream cipher, so a given seed produces the same
//! stream on every platform. Uniform reals use the 53-bit mantissa conversion
//! of `rand::Rng::gen::<f64>()`; normals use `rand_distr::StandardNormal`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Matrix of the given shape with every entry set to `fill`.
    pub fn new(rows: usize, cols: usize, fill: f64) -> Result<Self> {
        check_dims(rows, cols)?;
        Ok(Self {
            rows,
            cols,
            data: vec![fill; rows * cols],
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, 0.0)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(rows, cols)?;
        if data.len() != rows * cols {
            return Err(CoreError::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(CoreError::Dimension("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
    }

    /// I.i.d. uniform entries on `[-half_width, half_width]`.
    pub fn init_uniform(
        rows: usize,
        cols: usize,
        half_width: f64,
        rng: &mut RngState,
    ) -> Result<Self> {
        check_dims(rows, cols)?;
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "uniform half width must be positive, got {half_width}"
            )));
        }
        let data = (0..rows * cols)
            .map(|_| rng.uniform(-half_width, half_width))
            .collect();
        Ok(Self { rows, cols, data })
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn init_normal(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Result<Self> {
        check_dims(rows, cols)?;
        if !(std >= 0.0 && std.is_finite()) {
            return Err(CoreError::Parameter(format!(
                "normal std must be non-negative, got {std}"
            )));
        }
        let data = (0..rows * cols).map(|_| std * rng.standard_normal()).collect();
        Ok(Self { rows, cols, data })
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    /// `a * x + y`, checked for matching shapes and a finite result.
    pub fn axpy(a: f64, x: &Matrix, y: &Matrix) -> Result<Matrix> {
        let mut out = y.clone();
        out.add_scaled(a, x)?;
        if !out.is_finite() {
            return Err(CoreError::numeric("axpy", "non-finite result"));
        }
        Ok(out)
    }

    /// In-place `self += a * x`.
    pub fn add_scaled(&mut self, a: f64, x: &Matrix) -> Result<()> {
        self.check_same_shape(x, "add_scaled")?;
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y += a * xv;
        }
        Ok(())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "hadamard")?;
        Ok(self.zip_map(other, |a, b| a * b))
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Sum of squared entries (no ½ factor).
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(CoreError::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: rhs.cols,
            data: out,
        })
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows {
            return Err(CoreError::Dimension(format!(
                "t_matmul {}x{}ᵀ by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.cols * rhs.cols];
        for k in 0..self.rows {
            let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix {
            rows: self.cols,
            cols: rhs.cols,
            data: out,
        })
    }

    /// `self · rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.cols {
            return Err(CoreError::Dimension(format!(
                "matmul_t {}x{} by {}x{}ᵀ",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = vec![0.0; self.rows * rhs.rows];
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..rhs.rows {
                out[i * rhs.rows + j] = a.iter().zip(rhs.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        Ok(Matrix {
            rows: self.rows,
            cols: rhs.rows,
            data: out,
        })
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            if i >= self.rows {
                return Err(CoreError::Dimension(format!(
                    "row {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    pub fn check_same_shape(&self, other: &Matrix, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::Dimension(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(CoreError::Dimension(format!(
            "matrix dimensions must be positive, got {rows}x{cols}"
        )));
    }
    Ok(())
}

/// Seeded ChaCha8 stream. Cloning forks the stream at its current position.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.gen();
        lo + (hi - lo) * u
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.index(i + 1);
            v.swap(i, j);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_fills_constant() {
        let m = Matrix::new(2, 2, 0.0).unwrap();
        assert_eq!(m.as_slice(), &[0.0; 4]);
        let m = Matrix::new(1, 3, 1.5).unwrap();
        assert_eq!(m.shape(), (1, 3));
        assert_eq!(m.as_slice(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(Matrix::new(0, 3, 0.0), Err(CoreError::Dimension(_))));
        assert!(matches!(Matrix::new(3, 0, 0.0), Err(CoreError::Dimension(_))));
    }

    #[test]
    fn axpy_cases() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(Matrix::axpy(2.0, &x, &y).unwrap().as_slice(), &[2.0, 3.0]);
        assert_eq!(Matrix::axpy(0.0, &x, &y).unwrap(), y);
        let z = Matrix::zeros(1, 2).unwrap();
        assert_eq!(Matrix::axpy(1.0, &x, &z).unwrap(), x);
    }

    #[test]
    fn axpy_shape_mismatch() {
        let x = Matrix::zeros(1, 2).unwrap();
        let y = Matrix::zeros(2, 1).unwrap();
        assert!(matches!(Matrix::axpy(1.0, &x, &y), Err(CoreError::Dimension(_))));
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap().frobenius_sq(), 25.0);
        assert_eq!(Matrix::zeros(3, 3).unwrap().frobenius_sq(), 0.0);
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(m.frobenius_sq(), 10.0);
    }

    #[test]
    fn uniform_init_is_seeded() {
        let a = Matrix::init_uniform(2, 2, 0.02, &mut RngState::new(1234)).unwrap();
        let b = Matrix::init_uniform(2, 2, 0.02, &mut RngState::new(1234)).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| v.abs() <= 0.02));
    }

    #[test]
    fn uniform_init_rejects_zero_width() {
        let r = Matrix::init_uniform(2, 2, 0.0, &mut RngState::new(1));
        assert!(matches!(r, Err(CoreError::Parameter(_))));
    }

    #[test]
    fn uniform_sample_mean_is_centred() {
        // Var of U[-h, h] is h²/3; the mean of n draws has sd h/sqrt(3n).
        let h = 0.02;
        let n = 1_000_000;
        let m = Matrix::init_uniform(1000, 1000, h, &mut RngState::new(99)).unwrap();
        let mean = m.sum() / n as f64;
        let sigma = h / (3.0 * n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn products_agree_with_transpose_route() {
        let mut rng = RngState::new(5);
        let a = Matrix::init_normal(4, 3, 1.0, &mut rng).unwrap();
        let b = Matrix::init_normal(4, 2, 1.0, &mut rng).unwrap();
        let c = Matrix::init_normal(5, 3, 1.0, &mut rng).unwrap();
        let lhs = a.t_matmul(&b).unwrap();
        let rhs = a.transpose().matmul(&b).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-14);
        let lhs = a.matmul_t(&c).unwrap();
        let rhs = a.matmul(&c.transpose()).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngState::new(3).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn axpy_one_with_zeros_is_exact(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
            let x = Matrix::init_normal(r, c, 3.0, &mut RngState::new(seed)).unwrap();
            let z = Matrix::zeros(r, c).unwrap();
            let out = Matrix::axpy(1.0, &x, &z).unwrap();
            let same = out.as_slice().iter().zip(x.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }

        #[test]
        fn frobenius_nonnegative_and_zero_iff_zero(seed in any::<u64>(), r in 1usize..6, c in 1usize..6, zero in any::<bool>()) {
            let m = if zero {
                Matrix::zeros(r, c).unwrap()
            } else {
                Matrix::init_uniform(r, c, 1.0, &mut RngState::new(seed)).unwrap()
            };
            let f = m.frobenius_sq();
            prop_assert!(f >= 0.0);
            prop_assert_eq!(f == 0.0, m.as_slice().iter().all(|&v| v == 0.0));
        }

        #[test]
        fn equal_seeds_give_identical_draw_sequences(seed in any::<u64>()) {
            let mut a = RngState::new(seed);
            let mut b = RngState::new(seed);
            for _ in 0..3 {
                let x = Matrix::init_uniform(3, 2, 0.5, &mut a).unwrap();
                let y = Matrix::init_uniform(3, 2, 0.5, &mut b).unwrap();
                prop_assert_eq!(x, y);
            }
        }
    }
}
