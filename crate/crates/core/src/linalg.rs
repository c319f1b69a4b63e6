//! Dense nonnegative matrices and Perron-Frobenius power iteration.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{param, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return param("ragged rows");
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Fill entry `(i, j)` with `f(i, j)`, rows in parallel.
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; rows * cols];
        if cols > 0 {
            data.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = f(i, j);
                }
            });
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = A x`. Each row is reduced sequentially, so the result does not
    /// depend on the thread count.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        if self.rows * self.cols < 4096 {
            return (0..self.rows).map(|i| dot(self.row(i), x)).collect();
        }
        (0..self.rows)
            .into_par_iter()
            .map(|i| dot(self.row(i), x))
            .collect()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|v| *v >= 0.0)
    }

    pub fn max_row_sum(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PowerOptions {
    /// Stop once successive estimates, or the Collatz-Wielandt bracket,
    /// agree to this relative tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

/// Spectral radius and Perron vector of a nonnegative matrix.
#[derive(Debug, Clone, Serialize)]
pub struct PerronPair {
    pub radius: f64,
    /// Nonnegative, sup-norm 1.
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Collatz-Wielandt bounds `min_i (Ax)_i/x_i <= r <= max_i (Ax)_i/x_i`,
    /// valid once the iterate is strictly positive.
    pub lower: f64,
    pub upper: f64,
}

/// Power iteration from the all-ones vector with sup-norm normalization.
///
/// The estimate is the Rayleigh quotient `x·Ax / x·x`. Iteration stops when
/// two successive estimates differ by less than `tol` (relative) and the
/// Collatz-Wielandt bracket is no wider than `sqrt(tol)`, or as soon as the
/// bracket itself is narrower than `tol`.
pub fn power_iteration(a: &DenseMatrix, opts: &PowerOptions) -> Result<PerronPair> {
    if a.rows != a.cols {
        return param(format!("matrix is {}x{}, not square", a.rows, a.cols));
    }
    if !a.is_nonnegative() {
        return param("power iteration needs a nonnegative matrix");
    }
    let dim = a.rows;
    let mut x = vec![1.0; dim];
    let mut prev = f64::NAN;
    let mut result = PerronPair {
        radius: 0.0,
        vector: x.clone(),
        iterations: 0,
        converged: true,
        lower: 0.0,
        upper: 0.0,
    };
    if dim == 0 {
        return Ok(result);
    }
    for it in 1..=opts.max_iter {
        let y = a.matvec(&x);
        let norm = sup_norm(&y);
        if norm == 0.0 {
            // A x = 0 for a positive x: A is the zero matrix on the cone
            result.radius = 0.0;
            result.iterations = it;
            result.vector = x;
            return Ok(result);
        }
        let rayleigh = dot(&x, &y) / dot(&x, &x);
        let (lower, upper) = collatz_wielandt(&x, &y);
        x = y.iter().map(|v| v / norm).collect();
        result.iterations = it;
        result.lower = lower;
        result.upper = upper;
        let bracket = upper - lower;
        let scale = rayleigh.abs().max(f64::MIN_POSITIVE);
        let settled = (rayleigh - prev).abs() < opts.tol * scale;
        if bracket <= opts.tol * upper || (settled && bracket <= opts.tol.sqrt() * upper) {
            result.radius = if bracket.is_finite() {
                0.5 * (lower + upper)
            } else {
                rayleigh
            };
            result.vector = x;
            return Ok(result);
        }
        prev = rayleigh;
    }
    result.converged = false;
    result.radius = if (result.upper - result.lower).is_finite() {
        0.5 * (result.lower + result.upper)
    } else {
        prev
    };
    result.vector = x;
    Ok(result)
}

fn collatz_wielandt(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        if xi > 0.0 {
            let ratio = yi / xi;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        } else if yi > 0.0 {
            hi = f64::INFINITY;
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radius(rows: Vec<Vec<f64>>) -> PerronPair {
        power_iteration(
            &DenseMatrix::from_rows(rows).unwrap(),
            &PowerOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn one_by_one() {
        let r = radius(vec![vec![0.5]]);
        assert!((r.radius - 0.5).abs() < 1e-15);
        assert!(r.converged);
    }

    #[test]
    fn permutation() {
        let r = radius(vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!((r.radius - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix() {
        let r = radius(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(r.radius, 0.0);
    }

    #[test]
    fn two_by_two_positive() {
        // eigenvalues of [[2,1],[1,2]] are 3 and 1
        let r = radius(vec![vec![2.0, 1.0], vec![1.0, 2.0]]);
        assert!((r.radius - 3.0).abs() < 1e-12);
        assert!(r.vector.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_negative_entries() {
        let a = DenseMatrix::from_rows(vec![vec![1.0, -1.0], vec![0.0, 1.0]]).unwrap();
        assert!(power_iteration(&a, &PowerOptions::default()).is_err());
    }

    #[test]
    fn parallel_and_serial_matvec_agree() {
        let a = DenseMatrix::from_fn(100, 100, |i, j| ((i * 31 + j * 7) % 13) as f64 / 13.0);
        let x: Vec<f64> = (0..100).map(|i| (i as f64).sin().abs()).collect();
        let y = a.matvec(&x);
        for (i, yi) in y.iter().enumerate() {
            assert_eq!(*yi, dot(a.row(i), &x));
        }
    }
}
