//! Dense symmetric positive-definite solves for the small normal-equation
//! systems used by ridge, the stacker and the cubic mapping.

use crate::error::{Error, Result};

/// Diagonal jitter added per retry when a Cholesky factorization fails.
pub const JITTER: f64 = 1e-10;
/// Number of jittered retries after the first attempt.
pub const MAX_JITTER_RETRIES: usize = 3;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.len(),
                });
            }
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.data[i * self.n..(i + 1) * self.n].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    /// Factor `a`; `None` when a pivot is non-positive or non-finite.
    pub fn factor(a: &SquareMatrix) -> Option<Self> {
        let n = a.dim();
        let mut l = SquareMatrix::zeros(n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let ljj = d.sqrt();
            l.set(j, j, ljj);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / ljj);
            }
        }
        Some(Cholesky { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l.get(i, k) * y[k];
            }
            y[i] = s / self.l.get(i, i);
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l.get(k, i) * x[k];
            }
            x[i] = s / self.l.get(i, i);
        }
        x
    }
}

/// Outcome of [`solve_spd`].
#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: Vec<f64>,
    /// Total diagonal jitter that had to be added (0 when the first attempt succeeded).
    pub jitter: f64,
    pub factor: Cholesky,
}

/// Solve `A x = b` for symmetric positive-definite `A`, retrying with
/// `JITTER·I` added up to [`MAX_JITTER_RETRIES`] times.
pub fn solve_spd(a: &SquareMatrix, b: &[f64]) -> Result<SpdSolution> {
    if b.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.len(),
        });
    }
    let mut work = a.clone();
    let mut jitter = 0.0;
    for attempt in 0..=MAX_JITTER_RETRIES {
        if attempt > 0 {
            work.add_diagonal(JITTER);
            jitter += JITTER;
        }
        if let Some(factor) = Cholesky::factor(&work) {
            let x = factor.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(SpdSolution { x, jitter, factor });
            }
        }
    }
    Err(Error::Numerical(format!(
        "matrix of order {} not positive definite after {MAX_JITTER_RETRIES} jitter retries",
        a.dim()
    )))
}

/// 2-norm condition estimate of an SPD matrix: largest eigenvalue by power
/// iteration over smallest by inverse iteration through the Cholesky factor.
/// Infinite when the matrix cannot be factored.
pub fn condition_estimate(a: &SquareMatrix) -> f64 {
    let n = a.dim();
    if n == 0 {
        return 1.0;
    }
    let Some(factor) = Cholesky::factor(a) else {
        return f64::INFINITY;
    };
    let start: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 1e-3).collect();
    let lambda_max = power_iterate(start.clone(), |v| a.mul_vec(v));
    let inv_max = power_iterate(start, |v| factor.solve(v));
    if !(lambda_max.is_finite() && inv_max.is_finite()) || inv_max <= 0.0 {
        return f64::INFINITY;
    }
    lambda_max * inv_max
}

fn power_iterate(mut v: Vec<f64>, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut lambda = 0.0;
    for _ in 0..200 {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return f64::INFINITY;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w = apply(&v);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = SquareMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let sol = solve_spd(&a, &[2.0, 1.0]).unwrap();
        assert!((sol.x[0] - 0.5).abs() < 1e-14);
        assert!(sol.x[1].abs() < 1e-14);
        assert_eq!(sol.jitter, 0.0);
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let a = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let sol = solve_spd(&a, &[1.0, 1.0]).unwrap();
        assert!(sol.jitter > 0.0);
        let r = a.mul_vec(&sol.x);
        assert!((r[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn indefinite_fails_after_retries() {
        let a = SquareMatrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(solve_spd(&a, &[1.0, 1.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn condition_of_diagonal() {
        let a = SquareMatrix::from_rows(&[vec![100.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.01]]).unwrap();
        let c = condition_estimate(&a);
        assert!((c - 1e4).abs() / 1e4 < 1e-6, "{c}");
        let singular = SquareMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(condition_estimate(&singular) > 1e12);
    }
}
