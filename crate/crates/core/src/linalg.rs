//! Parameter vectors and the small dense linear algebra used as a desk-scale oracle.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{Error, Result};
use crate::math;

/// Flat real parameter vector (γ, λ, θ or a drift Δ). Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f64>", into = "Vec<f64>"))]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, got: 0 });
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(entries))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Row-major dense matrix. `symmetric` is only set when the entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    symmetric: bool,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols], symmetric: rows == cols }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m.data[i * d.len() + i] = x;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim(rows * cols, data.len())?;
        let mut m = Self { rows, cols, data, symmetric: false };
        m.symmetric = m.is_exactly_symmetric();
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Adds `value` at (i, j); the symmetric flag is recomputed lazily by [`Self::symmetrize`].
    pub fn add_at(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] += value;
        if i != j {
            self.symmetric = false;
        }
    }

    /// Mutable row-major entries; clears the symmetric flag.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        self.symmetric = false;
        &mut self.data
    }

    /// Adds `scale * other` in place.
    pub fn add_scaled(&mut self, scale: f64, other: &DenseMatrix) {
        axpy(scale, &other.data, &mut self.data);
        self.symmetric = self.symmetric && other.symmetric;
    }

    /// Averages the matrix with its transpose so that the symmetric flag holds exactly.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
        self.symmetric = true;
    }

    fn is_exactly_symmetric(&self) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let n = self.rows;
        (0..n).all(|i| (0..i).all(|j| self.data[i * n + j] == self.data[j * n + i]))
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = dot(&self.data[i * self.cols..(i + 1) * self.cols], v);
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out.symmetric = out.is_exactly_symmetric();
        out
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        if !self.symmetric {
            return Err(Error::NotSpd);
        }
        let n = self.rows;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotSpd);
            }
            let djj = math::sqrt(d);
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Cholesky { n, l })
    }
}

/// Lower-triangular factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
            y[i] /= self.l[i * n + i];
        }
        y
    }

    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| 2.0 * math::ln(self.l[i * self.n + i])).sum()
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        inv.symmetrize();
        inv
    }
}

/// Exact solve of `H x = v` for symmetric positive definite `H`, with one refinement sweep.
pub fn dense_solve(h: &DenseMatrix, v: &ParamVector) -> Result<ParamVector> {
    check_dim(h.cols(), v.dim())?;
    let chol = h.cholesky().map_err(|_| Error::OracleFailure)?;
    let mut x = chol.solve(v);
    let mut hx = vec![0.0; v.dim()];
    h.matvec(&x, &mut hx);
    let residual = sub(v, &hx);
    let correction = chol.solve(&residual);
    axpy(1.0, &correction, &mut x);
    ParamVector::new(x).map_err(|_| Error::OracleFailure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = seeded_rng(seed);
        let a: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let a = DenseMatrix::from_row_major(n, n, a).unwrap();
        let mut at = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                at.add_at(i, j, a.get(j, i));
            }
        }
        let mut m = a.matmul(&at);
        m.add_scaled(1.0, &DenseMatrix::identity(n));
        m.symmetrize();
        m
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let v = ParamVector::new(vec![0.3, -1.2, 7.0]).unwrap();
        let x = dense_solve(&DenseMatrix::identity(3), &v).unwrap();
        assert_eq!(x, v);
    }

    #[test]
    fn diagonal_solve() {
        let h = DenseMatrix::diagonal(&[2.0, 4.0]);
        let x = dense_solve(&h, &ParamVector::new(vec![2.0, 4.0]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn random_spd_residual() {
        for seed in 0..20 {
            let h = random_spd(10, seed);
            let mut rng = seeded_rng(1000 + seed);
            let v = ParamVector::new((0..10).map(|_| rng.normal()).collect()).unwrap();
            let x = dense_solve(&h, &v).unwrap();
            let mut hx = vec![0.0; 10];
            h.matvec(&x, &mut hx);
            assert!(norm2(&sub(&hx, &v)) <= 1e-10 * v.norm());
        }
    }

    #[test]
    fn non_spd_is_oracle_failure() {
        let h = DenseMatrix::diagonal(&[1.0, -1.0]);
        let v = ParamVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(dense_solve(&h, &v), Err(Error::OracleFailure));
        let asym = DenseMatrix::from_row_major(2, 2, vec![2.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(dense_solve(&asym, &v), Err(Error::OracleFailure));
    }

    #[test]
    fn param_vector_rejects_non_finite() {
        assert_eq!(ParamVector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite));
        assert_eq!(ParamVector::new(vec![f64::INFINITY]), Err(Error::NonFinite));
    }

    #[test]
    fn log_det_and_inverse() {
        let h = random_spd(5, 3);
        let chol = h.cholesky().unwrap();
        let inv = chol.inverse();
        let prod = h.matmul(&inv);
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod.get(i, j) - want).abs() < 1e-10);
            }
        }
        let d = DenseMatrix::diagonal(&[2.0, 3.0]);
        assert!((d.cholesky().unwrap().log_det() - 6f64.ln()).abs() < 1e-14);
    }
}
