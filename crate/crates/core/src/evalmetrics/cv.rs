use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSentence;
use crate::ensemble::FoldPlan;
use crate::error::{Error, Result};

use super::{fold_mean, mapped_rmse, rmse, EvalReport};

/// The four evaluated configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// One model trained on the labeled training folds.
    Baseline,
    /// Mean of the pseudo-stage models, never trained on gold labels.
    PseudoOnly,
    /// Fine-tuned fold models aggregated by mean.
    EnsembleMean,
    /// Fine-tuned fold models combined by the linear stacker.
    EnsembleStacker,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::Baseline, Setting::PseudoOnly, Setting::EnsembleMean, Setting::EnsembleStacker];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Baseline => "baseline",
            Setting::PseudoOnly => "pseudo_only",
            Setting::EnsembleMean => "ensemble_mean",
            Setting::EnsembleStacker => "ensemble_stacker",
        }
    }

    pub fn uses_pseudo_labels(self) -> bool {
        self != Setting::Baseline
    }

    pub fn uses_fine_tuning(self) -> bool {
        matches!(self, Setting::EnsembleMean | Setting::EnsembleStacker)
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown setting {s:?} (expected baseline, pseudo_only, ensemble_mean or ensemble_stacker)")))
    }
}

/// What a predictor produced for one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutput {
    /// One prediction vector per requested setting, aligned with the evaluation rows.
    pub predictions: Vec<Vec<f64>>,
    /// Labeled ids used as pseudo-labeling anchors, if any.
    pub anchor_ids: Vec<u64>,
}

/// Trains on one fold's training part and predicts its held-out part.
pub trait FoldPredictor: Sync {
    fn fit_predict(&self, fold: usize, train: &[LabeledSentence], eval: &[LabeledSentence], settings: &[Setting]) -> Result<FoldOutput>;

    /// Whether anchors must come from the training part only. Checked after every fold.
    fn strict_anchors(&self) -> bool {
        true
    }
}

pub fn cross_validate<P: FoldPredictor>(setting: Setting, labeled: &[LabeledSentence], plan: &FoldPlan, predictor: &P) -> Result<EvalReport> {
    Ok(cross_validate_many(&[setting], labeled, plan, predictor)?.remove(0))
}

/// Run every fold once and report each setting. Folds run in parallel; results
/// are assembled in fold order.
pub fn cross_validate_many<P: FoldPredictor>(settings: &[Setting], labeled: &[LabeledSentence], plan: &FoldPlan, predictor: &P) -> Result<Vec<EvalReport>> {
    if settings.is_empty() {
        return Err(Error::InvalidArgument("no settings to evaluate".into()));
    }
    if plan.len() != labeled.len() {
        return Err(Error::DimensionMismatch {
            expected: labeled.len(),
            got: plan.len(),
        });
    }
    let outputs: Vec<(Vec<usize>, FoldOutput)> = (0..plan.n_folds)
        .into_par_iter()
        .map(|fold| {
            let (train_idx, eval_idx) = plan.split(fold);
            let train: Vec<LabeledSentence> = train_idx.iter().map(|&i| labeled[i].clone()).collect();
            let eval: Vec<LabeledSentence> = eval_idx.iter().map(|&i| labeled[i].clone()).collect();
            let out = predictor.fit_predict(fold, &train, &eval, settings)?;
            if out.predictions.len() != settings.len() {
                return Err(Error::DimensionMismatch {
                    expected: settings.len(),
                    got: out.predictions.len(),
                });
            }
            if let Some(bad) = out.predictions.iter().find(|p| p.len() != eval.len()) {
                return Err(Error::DimensionMismatch {
                    expected: eval.len(),
                    got: bad.len(),
                });
            }
            if predictor.strict_anchors() {
                let held: HashSet<u64> = eval.iter().map(|l| l.id).collect();
                if let Some(leak) = out.anchor_ids.iter().find(|id| held.contains(id)) {
                    return Err(Error::Validation(format!("fold {fold}: anchor {leak} belongs to the evaluation fold")));
                }
            }
            Ok((eval_idx, out))
        })
        .collect::<Result<_>>()?;

    settings
        .iter()
        .enumerate()
        .map(|(s, setting)| {
            let mut per_fold = Vec::with_capacity(plan.n_folds);
            let mut pooled_pred = Vec::with_capacity(labeled.len());
            let mut pooled_gold = Vec::with_capacity(labeled.len());
            for (eval_idx, out) in &outputs {
                let gold: Vec<f64> = eval_idx.iter().map(|&i| labeled[i].mos).collect();
                per_fold.push(rmse(&out.predictions[s], &gold)?);
                pooled_pred.extend_from_slice(&out.predictions[s]);
                pooled_gold.extend(gold);
            }
            let (rmse_mapped, mapping) = mapped_rmse(&pooled_pred, &pooled_gold)?;
            Ok(EvalReport {
                setting: setting.name().to_string(),
                rmse_raw: rmse(&pooled_pred, &pooled_gold)?,
                rmse_mapped,
                mapping,
                fold_mean: Some(fold_mean(&per_fold)?),
                per_fold,
            })
        })
        .collect()
}
