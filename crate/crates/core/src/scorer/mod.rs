//! Linear complexity regressors over featurized sentences.
//!
//! Models are trained on raw (unclamped) linear outputs and clamp to the
//! 1–7 scale only when predicting.

mod iterative;
mod ridge;

use serde::{Deserialize, Serialize};

use crate::corpus::{MOS_MAX, MOS_MIN};
use crate::error::{Error, Result};
use crate::featurize::{ensure_fingerprint, Fingerprint};
use crate::matrix::FeatureMatrix;

pub use iterative::{gradient_check, learning_rate_at, train_iterative, RidgeObjective};
pub use ridge::{ridge_solve, train_ridge, RidgeSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Baseline,
    PseudoTuned,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerModel {
    pub fingerprint: Fingerprint,
    pub archetype: String,
    pub seed: u64,
    pub stage: Stage,
    pub intercept: f64,
    pub weights: Vec<f64>,
}

pub fn clamp_score(x: f64) -> f64 {
    x.clamp(MOS_MIN, MOS_MAX)
}

impl ScorerModel {
    pub fn constant(fingerprint: Fingerprint, dim: usize, intercept: f64) -> Self {
        ScorerModel {
            fingerprint,
            archetype: String::new(),
            seed: 0,
            stage: Stage::Baseline,
            intercept,
            weights: vec![0.0; dim],
        }
    }

    pub fn with_meta(mut self, archetype: impl Into<String>, seed: u64, stage: Stage) -> Self {
        self.archetype = archetype.into();
        self.seed = seed;
        self.stage = stage;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check(&self, x: &FeatureMatrix) -> Result<()> {
        ensure_fingerprint(self.fingerprint, x.fingerprint())?;
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Unclamped `X·w + b`.
    pub fn predict_raw(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..x.rows()).map(|i| x.dot_row(i, &self.weights) + self.intercept).collect())
    }

    /// `X·w + b`, clamped element-wise to [1, 7].
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(self.predict_raw(x)?.into_iter().map(clamp_score).collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warmup to the peak rate, then linear decay to zero.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stopping: bool,
    pub early_stopping_holdout_fraction: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl HyperParams {
    /// Training on pseudo-labels: ten epochs, no early stopping.
    pub fn pseudo_stage() -> Self {
        HyperParams {
            learning_rate: 0.5,
            schedule: Schedule::Linear,
            warmup_fraction: 0.1,
            batch_size: 32,
            max_epochs: 10,
            early_stopping: false,
            early_stopping_holdout_fraction: 0.1,
            ridge_lambda: 1.0,
            seed: 0,
        }
    }

    /// Fine-tuning on the labeled set: smaller rate, early stopping, at most ten epochs.
    pub fn fine_tune_stage() -> Self {
        HyperParams {
            learning_rate: 0.3,
            early_stopping: true,
            ..Self::pseudo_stage()
        }
    }

    /// Labeled-only baseline: early stopping, at most thirty epochs.
    pub fn baseline() -> Self {
        HyperParams {
            learning_rate: 0.5,
            max_epochs: 30,
            ..Self::fine_tune_stage()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!("warmup_fraction {} must be in [0, 1)", self.warmup_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        let h = self.early_stopping_holdout_fraction;
        if !(h > 0.0 && h < 1.0) {
            return bad(format!("early_stopping_holdout_fraction {h} must be in (0, 1)"));
        }
        if !(self.ridge_lambda.is_finite() && self.ridge_lambda >= 0.0) {
            return bad(format!("ridge_lambda {} must be >= 0", self.ridge_lambda));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_dense(rows, rows[0].len(), Fingerprint(3)).unwrap()
    }

    #[test]
    fn zero_weights_predict_intercept() {
        let m = ScorerModel::constant(Fingerprint(3), 2, 3.0);
        assert_eq!(m.predict(&x(&[vec![5.0, 1.0], vec![-2.0, 0.0]])).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn predictions_clamp() {
        let mut m = ScorerModel::constant(Fingerprint(3), 1, 0.0);
        m.weights[0] = 1.0;
        assert_eq!(m.predict(&x(&[vec![9.2], vec![-0.5], vec![4.0]])).unwrap(), vec![7.0, 1.0, 4.0]);
        assert_eq!(m.predict_raw(&x(&[vec![9.2]])).unwrap(), vec![9.2]);
    }

    #[test]
    fn fingerprint_and_dim_checked() {
        let m = ScorerModel::constant(Fingerprint(4), 1, 3.0);
        assert!(matches!(m.predict(&x(&[vec![1.0]])), Err(Error::FingerprintMismatch { .. })));
        let m = ScorerModel::constant(Fingerprint(3), 2, 3.0);
        assert!(matches!(m.predict(&x(&[vec![1.0]])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut m = ScorerModel::constant(Fingerprint(0xdead_beef), 3, 0.1 + 0.2).with_meta("char-3-5", 42, Stage::Final);
        m.weights = vec![1.0 / 3.0, -2.5e-300, f64::MAX];
        let back = ScorerModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        for (a, b) in back.weights.iter().zip(&m.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::pseudo_stage().validate().is_ok());
        assert!(HyperParams::fine_tune_stage().validate().is_ok());
        let h = HyperParams {
            warmup_fraction: 1.0,
            ..HyperParams::baseline()
        };
        assert!(h.validate().is_err());
        let h = HyperParams {
            batch_size: 0,
            ..HyperParams::baseline()
        };
        assert!(h.validate().is_err());
        let h = HyperParams {
            early_stopping_holdout_fraction: 0.0,
            ..HyperParams::baseline()
        };
        assert!(h.validate().is_err());
    }
}
