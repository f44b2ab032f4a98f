//! RMSE, the cubic prediction-to-gold mapping, and cross-validation reports.

mod cv;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, SquareMatrix};

pub use cv::{cross_validate, cross_validate_many, FoldOutput, FoldPredictor, Setting};

pub fn rmse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty arrays".into()));
    }
    let sq: f64 = pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn fold_mean(per_fold: &[f64]) -> Result<f64> {
    if per_fold.is_empty() {
        return Err(Error::InvalidArgument("fold mean of no folds".into()));
    }
    Ok(per_fold.iter().sum::<f64>() / per_fold.len() as f64)
}

/// `mapped = a0 + a1·p + a2·p² + a3·p³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingCoeffs {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    /// Set when fewer than four distinct predictions forced a lower order.
    pub degenerate: bool,
}

impl MappingCoeffs {
    pub const IDENTITY: MappingCoeffs = MappingCoeffs {
        a0: 0.0,
        a1: 1.0,
        a2: 0.0,
        a3: 0.0,
        degenerate: false,
    };

    pub fn apply(&self, p: f64) -> f64 {
        self.a0 + p * (self.a1 + p * (self.a2 + p * self.a3))
    }

    pub fn apply_all(&self, pred: &[f64]) -> Vec<f64> {
        pred.iter().map(|&p| self.apply(p)).collect()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares fit of `gold` on `[1, p, p², p³]`.
///
/// The fit runs in the centered, scaled variable `t = (p − mean(p)) / std(p)`
/// and is converted back to coefficients in `p`. With fewer than four distinct
/// prediction values the order drops to `distinct − 1`.
pub fn fit_third_order_mapping(pred: &[f64], gold: &[f64]) -> Result<MappingCoeffs> {
    if pred.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("mapping needs at least one pair".into()));
    }
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite mapping input".into()));
    }
    let distinct = pred.iter().map(|p| p.to_bits()).collect::<HashSet<_>>().len();
    let order = distinct.saturating_sub(1).min(3);
    let n = pred.len() as f64;
    let center = pred.iter().sum::<f64>() / n;
    let spread = (pred.iter().map(|p| (p - center) * (p - center)).sum::<f64>() / n).sqrt();
    let scale = if order == 0 || spread == 0.0 { 1.0 } else { spread };

    let m = order + 1;
    let mut gram = SquareMatrix::zeros(m);
    let mut rhs = vec![0.0; m];
    let mut powers = vec![0.0; m];
    for (&p, &g) in pred.iter().zip(gold) {
        let t = (p - center) / scale;
        powers[0] = 1.0;
        for k in 1..m {
            powers[k] = powers[k - 1] * t;
        }
        for a in 0..m {
            rhs[a] += powers[a] * g;
            for b in 0..m {
                gram.add(a, b, powers[a] * powers[b]);
            }
        }
    }
    let beta = solve_spd(&gram, &rhs)?.x;

    let mut a = [0.0; 4];
    for (k, &bk) in beta.iter().enumerate() {
        let s = bk / scale.powi(k as i32);
        for (j, aj) in a.iter_mut().enumerate().take(k + 1) {
            *aj += s * binomial(k, j) * (-center).powi((k - j) as i32);
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("mapping coefficients are not finite".into()));
    }
    Ok(MappingCoeffs {
        a0: a[0],
        a1: a[1],
        a2: a[2],
        a3: a[3],
        degenerate: distinct < 4,
    })
}

/// Fit the cubic mapping on `(pred, gold)` and return the RMSE of the mapped predictions.
pub fn mapped_rmse(pred: &[f64], gold: &[f64]) -> Result<(f64, MappingCoeffs)> {
    let coeffs = fit_third_order_mapping(pred, gold)?;
    let mapped = coeffs.apply_all(pred);
    Ok((rmse(&mapped, gold)?, coeffs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub setting: String,
    pub rmse_raw: f64,
    pub rmse_mapped: f64,
    pub mapping: MappingCoeffs,
    pub per_fold: Vec<f64>,
    pub fold_mean: Option<f64>,
}

impl EvalReport {
    /// Raw and mapped RMSE over one set of pairs, without fold information.
    pub fn from_pairs(setting: impl Into<String>, pred: &[f64], gold: &[f64]) -> Result<Self> {
        let rmse_raw = rmse(pred, gold)?;
        let (rmse_mapped, mapping) = mapped_rmse(pred, gold)?;
        Ok(EvalReport {
            setting: setting.into(),
            rmse_raw,
            rmse_mapped,
            mapping,
            per_fold: Vec::new(),
            fold_mean: None,
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("report serialization cannot fail")
    }
}

/// Aligned table with one row per report: per-fold RMSE columns then the mean.
pub fn render_cv_table(reports: &[EvalReport]) -> String {
    let folds = reports.iter().map(|r| r.per_fold.len()).max().unwrap_or(0);
    let name_w = reports.iter().map(|r| r.setting.len()).max().unwrap_or(0).max("Model".len());
    let mut out = format!("{:<name_w$}", "Model");
    for f in 1..=folds {
        out.push_str(&format!("  {f:>5}"));
    }
    out.push_str(&format!("  {:>5}\n", "Mean"));
    out.push_str(&"-".repeat(name_w + 7 * (folds + 1)));
    out.push('\n');
    for r in reports {
        out.push_str(&format!("{:<name_w$}", r.setting));
        for f in 0..folds {
            match r.per_fold.get(f) {
                Some(v) => out.push_str(&format!("  {v:>5.3}")),
                None => out.push_str(&format!("  {:>5}", "-")),
            }
        }
        match r.fold_mean {
            Some(m) => out.push_str(&format!("  {m:>5.3}\n")),
            None => out.push_str(&format!("  {:>5}\n", "-")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!((rmse(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 2.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn fold_mean_basics() {
        assert_eq!(fold_mean(&[0.25]).unwrap(), 0.25);
        assert!(fold_mean(&[]).is_err());
    }

    #[test]
    fn identity_and_affine_are_exact() {
        let gold: Vec<f64> = (0..20).map(|i| 1.0 + 0.3 * i as f64).collect();
        let (r, c) = mapped_rmse(&gold, &gold).unwrap();
        assert!(r < 1e-12, "{r}");
        assert!(!c.degenerate);
        let pred: Vec<f64> = gold.iter().map(|g| 2.0 * g + 1.0).collect();
        let (r, c) = mapped_rmse(&pred, &gold).unwrap();
        assert!(r < 1e-9, "{r}");
        assert!((c.a1 - 0.5).abs() < 1e-9 && (c.a0 + 0.5).abs() < 1e-9);
    }

    #[test]
    fn constant_prediction_gives_population_std() {
        let gold = [1.0, 2.0, 4.0, 5.0];
        let (r, c) = mapped_rmse(&[3.0; 4], &gold).unwrap();
        assert!(c.degenerate);
        assert!((c.apply(3.0) - 3.0).abs() < 1e-12);
        let pop_std = (gold.iter().map(|g| (g - 3.0) * (g - 3.0)).sum::<f64>() / 4.0).sqrt();
        assert!((r - pop_std).abs() < 1e-12);
    }

    #[test]
    fn two_distinct_values_fit_a_line() {
        let (r, c) = mapped_rmse(&[1.0, 1.0, 2.0, 2.0], &[3.0, 5.0, 6.0, 8.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.a2, 0.0);
        assert_eq!(c.a3, 0.0);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(fit_third_order_mapping(&[f64::NAN], &[1.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn table_layout() {
        let r = EvalReport {
            setting: "Baseline".into(),
            rmse_raw: 0.5,
            rmse_mapped: 0.4,
            mapping: MappingCoeffs::IDENTITY,
            per_fold: vec![0.512, 0.460, 0.440, 0.398, 0.488],
            fold_mean: Some(0.4596),
        };
        let t = render_cv_table(&[r]);
        let row = t.lines().nth(2).unwrap();
        assert_eq!(row, "Baseline  0.512  0.460  0.440  0.398  0.488  0.460");
    }
}
