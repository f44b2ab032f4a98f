use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SquareMatrix};
use crate::matrix::FeatureMatrix;

use super::{ScorerModel, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Diagonal jitter the SPD solve needed.
    pub jitter: f64,
}

/// Closed-form ridge with an unpenalized intercept.
///
/// Solves `(Xcᵀ Xc + λI) w = Xcᵀ yc` on mean-centered data and sets
/// `b = ȳ − x̄·w`. When `λ > 0` and there are more features than rows the
/// equivalent `N×N` system `(Xc Xcᵀ + λI) α = yc`, `w = Xcᵀ α` is solved
/// instead.
pub fn ridge_solve(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<RidgeSolution> {
    let n = x.rows();
    let d = x.dim();
    if n == 0 {
        return Err(Error::InvalidArgument("ridge needs at least one row".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge lambda {lambda} must be finite and >= 0")));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite ridge input".into()));
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            mean[j as usize] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let (weights, jitter) = if lambda > 0.0 && d > n {
        solve_dual(x, &mean, &yc, lambda)?
    } else {
        solve_primal(x, &mean, &yc, lambda)?
    };
    let intercept = y_mean - mean.iter().zip(&weights).map(|(m, w)| m * w).sum::<f64>();
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numerical("ridge solution is not finite".into()));
    }
    Ok(RidgeSolution {
        weights,
        intercept,
        jitter,
    })
}

fn solve_primal(x: &FeatureMatrix, mean: &[f64], yc: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let d = x.dim();
    let mut gram = SquareMatrix::zeros(d);
    let mut rhs = vec![0.0; d];
    for i in 0..x.rows() {
        let row: Vec<f64> = x.dense_row(i).iter().zip(mean).map(|(v, m)| v - m).collect();
        for a in 0..d {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            rhs[a] += ra * yc[i];
            for b in 0..=a {
                gram.add(a, b, ra * row[b]);
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram.set(b, a, gram.get(a, b));
        }
    }
    gram.add_diagonal(lambda);
    let sol = solve_spd(&gram, &rhs)?;
    Ok((sol.x, sol.jitter))
}

fn solve_dual(x: &FeatureMatrix, mean: &[f64], yc: &[f64], lambda: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.rows();
    let d = x.dim();
    let dense: Vec<Vec<f64>> = (0..n).map(|i| x.dense_row(i)).collect();
    let mean_dot: Vec<f64> = (0..n).map(|i| x.dot_row(i, mean)).collect();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    let mut k = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = x.dot_row(j, &dense[i]) - mean_dot[i] - mean_dot[j] + mean_sq;
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k.add_diagonal(lambda);
    let sol = solve_spd(&k, yc)?;
    let alpha = sol.x;
    let alpha_sum: f64 = alpha.iter().sum();
    let mut w = vec![0.0; d];
    for (i, a) in alpha.iter().enumerate() {
        let (idx, val) = x.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            w[j as usize] += a * v;
        }
    }
    for (wj, m) in w.iter_mut().zip(mean) {
        *wj -= m * alpha_sum;
    }
    Ok((w, sol.jitter))
}

/// Closed-form ridge regressor; the returned model carries `x`'s fingerprint.
pub fn train_ridge(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<ScorerModel> {
    let sol = ridge_solve(x, y, lambda)?;
    Ok(ScorerModel {
        fingerprint: x.fingerprint(),
        archetype: String::new(),
        seed: 0,
        stage: Stage::Baseline,
        intercept: sol.intercept,
        weights: sol.weights,
    })
}
