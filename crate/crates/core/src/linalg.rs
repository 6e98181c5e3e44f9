//! Small dense matrices and the symmetric eigenvalue routines used by the
//! policy search.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::{Index, IndexMut};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("ragged rows: row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("eigensolver did not reach tolerance {tol:e} (residual {residual:e})")]
    NotConverged { tol: f64, residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Row-major dense matrix. Serialized as a list of rows.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
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
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, LinalgError> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * cols);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != cols {
                return Err(LinalgError::Ragged { row: r, len: row.len(), expected: cols });
            }
            data.extend(row);
        }
        Ok(Matrix { rows: n, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, LinalgError> {
        if self.cols != other.rows {
            return Err(LinalgError::DimensionMismatch(format!(
                "{}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i).iter().enumerate() {
                s[j] += v;
            }
        }
        s
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries((0..self.rows).map(|i| self.row(i))).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = LinalgError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// sorted descending.
pub fn jacobi_eigenvalues(a: &Matrix) -> Result<Vec<f64>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let n = a.rows();
    let mut m = a.clone();
    // symmetrize; callers pass symmetric input, this only guards rounding
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let scale = m.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
            ev.sort_by(|a, b| b.total_cmp(a));
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(LinalgError::NotConverged { tol: 1e-15, residual: f64::NAN })
}

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions { tol: 1e-10, max_iter: 20_000 }
    }
}

/// Largest eigenvalue of a symmetric matrix restricted to the complement
/// of the all-ones vector. Power iteration on the shifted, projected
/// operator; falls back to Jacobi on the projected matrix when power
/// iteration stalls.
pub fn second_largest_eigenvalue(y: &Matrix, opts: PowerOptions) -> Result<f64, LinalgError> {
    if !y.is_square() {
        return Err(LinalgError::NotSquare { rows: y.rows(), cols: y.cols() });
    }
    let n = y.rows();
    if n < 2 {
        return Err(LinalgError::DimensionMismatch("need at least 2 nodes".into()));
    }
    match power_deflated(y, opts) {
        Ok(v) => Ok(v),
        Err(err) => {
            log::debug!("power iteration fallback: {err}");
            deflated_jacobi(y)
        }
    }
}

fn project_out_ones(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in v.iter_mut() {
        *x -= mean;
    }
}

fn power_deflated(y: &Matrix, opts: PowerOptions) -> Result<f64, LinalgError> {
    let n = y.rows();
    // shift by the Gershgorin lower bound so the wanted eigenvalue dominates
    let shift = (0..n)
        .map(|i| {
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| y[(i, j)].abs()).sum();
            y[(i, i)] - r
        })
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 + 1.0).sqrt() * 0.37 + (i % 3) as f64).collect();
    project_out_ones(&mut v);
    let nv = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let mut w = y.mul_vec(&v);
        let lambda = dot(&w, &v);
        residual = w.iter().zip(&v).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        if residual <= opts.tol {
            return Ok(lambda);
        }
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= shift * vi;
        }
        project_out_ones(&mut w);
        let nw = norm_sq(&w).sqrt();
        if nw == 0.0 {
            // v lies in the kernel of the shifted operator
            return Ok(shift);
        }
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
    }
    Err(LinalgError::NotConverged { tol: opts.tol, residual })
}

/// Jacobi on Q Y Q with Q = I - 11^T/n; the ones direction maps to 0 and
/// is removed from the spectrum explicitly.
fn deflated_jacobi(y: &Matrix) -> Result<f64, LinalgError> {
    let n = y.rows();
    let q = Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
    let qyq = q.matmul(y)?.matmul(&q)?;
    let ev = jacobi_eigenvalues(&qyq)?;
    // drop the eigenvalue closest to zero that belongs to the ones vector:
    // its Rayleigh quotient is exactly 0, so remove one zero-nearest entry
    let ones_val = 0.0;
    let idx = ev
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - ones_val).abs().total_cmp(&(b.1 - ones_val).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let rest: Vec<f64> = ev.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, v)| *v).collect();
    Ok(rest.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// Second eigenvalue from the full Jacobi spectrum of a doubly stochastic
/// matrix (the top eigenvalue, 1, belongs to the ones vector).
pub fn second_eigenvalue_jacobi(y: &Matrix) -> Result<f64, LinalgError> {
    deflated_jacobi(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_two_by_two() {
        let m = Matrix::from_rows(vec![vec![0.91, 0.09], vec![0.09, 0.91]]).unwrap();
        let ev = jacobi_eigenvalues(&m).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14);
        assert!((ev[1] - 0.82).abs() < 1e-14);
    }

    #[test]
    fn second_eigen_golden() {
        let m = Matrix::from_rows(vec![vec![0.91, 0.09], vec![0.09, 0.91]]).unwrap();
        let l = second_largest_eigenvalue(&m, PowerOptions::default()).unwrap();
        assert!((l - 0.82).abs() < 1e-12);
    }

    #[test]
    fn identity_has_lambda_one() {
        for n in 2..6 {
            let l = second_largest_eigenvalue(&Matrix::identity(n), PowerOptions::default()).unwrap();
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn averaging_matrix_lambda_zero() {
        let m = Matrix::filled(4, 4, 0.25);
        let l = second_largest_eigenvalue(&m, PowerOptions::default()).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn negative_spectrum_handled() {
        // eigenvalues on the complement are both -1/2 for this circulant
        let m = Matrix::from_rows(vec![
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
        ])
        .unwrap();
        let l = second_largest_eigenvalue(&m, PowerOptions::default()).unwrap();
        assert!((l + 0.5).abs() < 1e-10, "{l}");
    }

    #[test]
    fn fallback_matches_power() {
        let m = Matrix::from_rows(vec![
            vec![0.7, 0.2, 0.1, 0.0],
            vec![0.2, 0.5, 0.1, 0.2],
            vec![0.1, 0.1, 0.6, 0.2],
            vec![0.0, 0.2, 0.2, 0.6],
        ])
        .unwrap();
        let a = second_largest_eigenvalue(&m, PowerOptions::default()).unwrap();
        let b = second_eigenvalue_jacobi(&m).unwrap();
        assert!((a - b).abs() < 1e-9);
        // a starved iteration cap forces the Jacobi route
        let c = second_largest_eigenvalue(&m, PowerOptions { tol: 1e-10, max_iter: 1 }).unwrap();
        assert!((c - b).abs() < 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[1.0,2.0],[3.0,4.0]]");
        let back: Matrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<Matrix>("[[1.0],[1.0,2.0]]").is_err());
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let p = a.matmul(&a.transpose()).unwrap();
        assert_eq!(p.to_rows(), vec![vec![14.0, 32.0], vec![32.0, 77.0]]);
        assert!(a.matmul(&a).is_err());
    }
}
