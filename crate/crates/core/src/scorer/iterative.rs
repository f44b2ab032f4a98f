use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featurize::ensure_fingerprint;
use crate::matrix::FeatureMatrix;

use super::{clamp_score, HyperParams, ScorerModel, Stage};

/// Mean squared-error loss with an L2 penalty scaled by the training size:
/// `L(w, b) = 1/(2N) Σ (x_i·w + b − y_i)² + λ/(2N) ‖w‖²`.
///
/// Its minimizer is the closed-form ridge solution with the same `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeObjective {
    pub lambda: f64,
}

impl RidgeObjective {
    pub fn value(&self, x: &FeatureMatrix, y: &[f64], weights: &[f64], intercept: f64) -> f64 {
        let n = x.rows() as f64;
        let sq: f64 = (0..x.rows())
            .map(|i| {
                let r = x.dot_row(i, weights) + intercept - y[i];
                r * r
            })
            .sum();
        let penalty: f64 = weights.iter().map(|w| w * w).sum();
        0.5 * sq / n + 0.5 * self.lambda * penalty / n
    }

    /// Analytic gradient: `(∂L/∂w, ∂L/∂b)`.
    pub fn gradient(&self, x: &FeatureMatrix, y: &[f64], weights: &[f64], intercept: f64) -> (Vec<f64>, f64) {
        let n = x.rows() as f64;
        let mut gw: Vec<f64> = weights.iter().map(|w| self.lambda * w / n).collect();
        let mut gb = 0.0;
        for i in 0..x.rows() {
            let r = x.dot_row(i, weights) + intercept - y[i];
            gb += r / n;
            let (idx, val) = x.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                gw[j as usize] += r * v / n;
            }
        }
        (gw, gb)
    }
}

/// Largest relative discrepancy between the analytic gradient of
/// [`RidgeObjective`] at `model` and central finite differences with step `epsilon`.
pub fn gradient_check(x: &FeatureMatrix, y: &[f64], model: &ScorerModel, lambda: f64, epsilon: f64) -> f64 {
    let obj = RidgeObjective { lambda };
    let (gw, gb) = obj.gradient(x, y, &model.weights, model.intercept);
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);

    let mut w = model.weights.clone();
    let mut worst: f64 = 0.0;
    for j in 0..w.len() {
        let orig = w[j];
        w[j] = orig + epsilon;
        let up = obj.value(x, y, &w, model.intercept);
        w[j] = orig - epsilon;
        let down = obj.value(x, y, &w, model.intercept);
        w[j] = orig;
        worst = worst.max(rel(gw[j], (up - down) / (2.0 * epsilon)));
    }
    let up = obj.value(x, y, &w, model.intercept + epsilon);
    let down = obj.value(x, y, &w, model.intercept - epsilon);
    worst.max(rel(gb, (up - down) / (2.0 * epsilon)))
}

/// Learning rate for 0-based `step` out of `total` with `warmup` warmup steps:
/// ramps linearly to `peak` over the warmup, then decays linearly to zero.
pub fn learning_rate_at(peak: f64, step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        peak * (step + 1) as f64 / warmup as f64
    } else {
        peak * (total - step) as f64 / (total - warmup) as f64
    }
}

fn holdout_rmse(x: &FeatureMatrix, y: &[f64], rows: &[usize], w: &[f64], b: f64) -> f64 {
    let sq: f64 = rows
        .iter()
        .map(|&i| {
            let r = clamp_score(x.dot_row(i, w) + b) - y[i];
            r * r
        })
        .sum();
    (sq / rows.len() as f64).sqrt()
}

/// Mini-batch gradient descent on [`RidgeObjective`] with a linear warmup/decay schedule.
///
/// Without `init` the weights start at zero and the intercept at the mean
/// training target. With early stopping, the last
/// `early_stopping_holdout_fraction` of a seed-shuffled order is held out,
/// evaluated (clamped RMSE) after every epoch, and training stops after the
/// first epoch that fails to improve on the best; the best epoch's weights
/// are returned. The schedule length is always fixed by `max_epochs`.
pub fn train_iterative(init: Option<&ScorerModel>, x: &FeatureMatrix, y: &[f64], hyper: &HyperParams) -> Result<ScorerModel> {
    hyper.validate()?;
    let n = x.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite training input".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut train, holdout) = if hyper.early_stopping && n >= 2 {
        order.shuffle(&mut rng);
        let n_hold = ((hyper.early_stopping_holdout_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let holdout = order.split_off(n - n_hold);
        (order, holdout)
    } else {
        (order, Vec::new())
    };

    let (mut w, mut b, archetype, seed) = match init {
        Some(m) => {
            ensure_fingerprint(m.fingerprint, x.fingerprint())?;
            if m.dim() != x.dim() {
                return Err(Error::DimensionMismatch {
                    expected: m.dim(),
                    got: x.dim(),
                });
            }
            (m.weights.clone(), m.intercept, m.archetype.clone(), m.seed)
        }
        None => {
            let mean = train.iter().map(|&i| y[i]).sum::<f64>() / train.len() as f64;
            (vec![0.0; x.dim()], mean, String::new(), hyper.seed)
        }
    };

    let n_train = train.len();
    let steps_per_epoch = n_train.div_ceil(hyper.batch_size);
    let total = steps_per_epoch * hyper.max_epochs;
    let warmup = (hyper.warmup_fraction * total as f64).floor() as usize;
    let decay = hyper.ridge_lambda / n_train as f64;

    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    let mut residuals = Vec::with_capacity(hyper.batch_size);
    let mut step = 0usize;
    for _epoch in 0..hyper.max_epochs {
        train.shuffle(&mut rng);
        for batch in train.chunks(hyper.batch_size) {
            let lr = learning_rate_at(hyper.learning_rate, step, total, warmup);
            residuals.clear();
            let mut loss = 0.0;
            for &i in batch {
                let r = x.dot_row(i, &w) + b - y[i];
                loss += 0.5 * r * r;
                residuals.push(r);
            }
            loss /= batch.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at step {step}")));
            }
            if decay > 0.0 {
                let shrink = 1.0 - lr * decay;
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
            let scale = lr / batch.len() as f64;
            let mut gb = 0.0;
            for (&i, &r) in batch.iter().zip(&residuals) {
                gb += r;
                let (idx, val) = x.row(i);
                for (&j, &v) in idx.iter().zip(val) {
                    w[j as usize] -= scale * r * v;
                }
            }
            b -= scale * gb;
            step += 1;
        }
        if !holdout.is_empty() {
            let score = holdout_rmse(x, y, &holdout, &w, b);
            if !score.is_finite() {
                return Err(Error::Numerical(format!("non-finite holdout loss at step {step}")));
            }
            match &best {
                Some((best_score, _, _)) if score >= *best_score => break,
                _ => best = Some((score, w.clone(), b)),
            }
        }
    }
    if let Some((_, bw, bb)) = best {
        w = bw;
        b = bb;
    }

    Ok(ScorerModel {
        fingerprint: x.fingerprint(),
        archetype,
        seed,
        stage: init.map_or(Stage::Baseline, |m| m.stage),
        intercept: b,
        weights: w,
    })
}
