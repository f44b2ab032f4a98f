//! Two-stage ensemble: archetypes × seeds trained on pseudo-labels, each then
//! fine-tuned under k-fold cross-validation on the labeled set, combined by
//! mean or by a linear stacker fit on out-of-fold predictions.
//!
//! The default stacker sees one column per base model: row `i` holds the
//! prediction of that base model's variant whose fine-tuning fold excluded
//! `i`. At inference the fold variants of each base model are mean-pooled
//! into that column. [`StackerColumns::PerFoldModel`] instead uses one column
//! per fine-tuned model; there, every row is out-of-fold for only one model
//! per base model, so the other columns were fit on that row.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSentence;
use crate::error::{Error, Result};
use crate::featurize::{FeatureConfig, FeatureStats, Featurizer};
use crate::linalg::{condition_estimate, SquareMatrix};
use crate::matrix::FeatureMatrix;
use crate::pseudolabel::PseudoLabelSet;
use crate::scorer::{clamp_score, ridge_solve, train_iterative, HyperParams, ScorerModel, Stage};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_SEEDS: [u64; 3] = [13, 42, 2022];
/// Condition estimate above which the stacker switches to a small ridge penalty.
pub const STACKER_CONDITION_LIMIT: f64 = 1e12;
pub const STACKER_FALLBACK_LAMBDA: f64 = 1e-6;

/// One base-model configuration: a feature configuration plus its batch size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Archetype {
    pub name: String,
    pub features: FeatureConfig,
    pub batch_size: usize,
}

impl Archetype {
    /// The three default archetypes. The first one also drives retrieval and the baseline.
    pub fn defaults() -> Vec<Archetype> {
        vec![
            Archetype {
                name: "char-3-5".into(),
                features: FeatureConfig::default(),
                batch_size: 32,
            },
            Archetype {
                name: "char-2-4".into(),
                features: FeatureConfig {
                    hashed_dim: 1024,
                    ngram_min: 2,
                    ngram_max: 4,
                    ..FeatureConfig::default()
                },
                batch_size: 32,
            },
            Archetype {
                name: "char-4-6".into(),
                features: FeatureConfig {
                    hashed_dim: 4096,
                    ngram_min: 4,
                    ngram_max: 6,
                    ..FeatureConfig::default()
                },
                batch_size: 20,
            },
        ]
    }

    pub fn hyper(&self, base: &HyperParams, seed: u64) -> HyperParams {
        HyperParams {
            batch_size: self.batch_size,
            seed,
            ..base.clone()
        }
    }
}

/// An archetype with its fitted featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedArchetype {
    pub archetype: Archetype,
    pub stats: FeatureStats,
}

impl FittedArchetype {
    pub fn featurizer(&self) -> Result<Featurizer> {
        Featurizer::new(self.archetype.features.clone(), self.stats.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignment: Vec<usize>,
    pub seed: u64,
}

/// Shuffle `0..n` with `seed` and deal the indices round-robin into folds.
pub fn make_fold_plan(n: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(Error::InvalidArgument(format!("{n} items cannot fill {n_folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % n_folds;
    }
    Ok(FoldPlan {
        n_folds,
        assignment,
        seed,
    })
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// `(training indices, held-out indices)` for `fold`, both ascending.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (held, train): (Vec<usize>, Vec<usize>) = (0..self.assignment.len()).partition(|&i| self.assignment[i] == fold);
        (train, held)
    }
}

/// Featurize the pseudo-labeled texts per archetype and train one model per (archetype, seed).
pub fn train_pseudo_stage(pseudo: &PseudoLabelSet, archetypes: &[FittedArchetype], seeds: &[u64], hyper: &HyperParams) -> Result<Vec<ScorerModel>> {
    if pseudo.is_empty() {
        return Err(Error::InvalidArgument("pseudo-label set is empty".into()));
    }
    let texts = pseudo.texts();
    let features = archetypes
        .iter()
        .map(|a| Ok(a.featurizer()?.embed_matrix(&texts)))
        .collect::<Result<Vec<_>>>()?;
    train_pseudo_stage_on(&features, &pseudo.targets(), archetypes, seeds, hyper)
}

/// As [`train_pseudo_stage`] with pre-computed per-archetype feature matrices.
pub fn train_pseudo_stage_on(
    features: &[FeatureMatrix],
    targets: &[f64],
    archetypes: &[FittedArchetype],
    seeds: &[u64],
    hyper: &HyperParams,
) -> Result<Vec<ScorerModel>> {
    if features.len() != archetypes.len() {
        return Err(Error::DimensionMismatch {
            expected: archetypes.len(),
            got: features.len(),
        });
    }
    let jobs: Vec<(usize, u64)> = (0..archetypes.len()).flat_map(|a| seeds.iter().map(move |&s| (a, s))).collect();
    jobs.par_iter()
        .map(|&(a, seed)| {
            let arch = &archetypes[a].archetype;
            let model = train_iterative(None, &features[a], targets, &arch.hyper(hyper, seed))?;
            Ok(model.with_meta(arch.name.clone(), seed, Stage::PseudoTuned))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub fold: usize,
    pub model: ScorerModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackerColumns {
    /// One column per base model, fold variants mean-pooled.
    #[default]
    PerBaseModel,
    /// One column per fine-tuned model.
    PerFoldModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofColumn {
    pub archetype: String,
    pub seed: u64,
    /// `None` when the column pools all fold variants of a base model.
    pub fold: Option<usize>,
}

impl OofColumn {
    pub fn header(&self) -> String {
        match self.fold {
            Some(f) => format!("{}/s{}/f{}", self.archetype, self.seed, f),
            None => format!("{}/s{}/f*", self.archetype, self.seed),
        }
    }
}

/// Out-of-fold prediction matrix with per-entry provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofMatrix {
    pub row_ids: Vec<u64>,
    pub columns: Vec<OofColumn>,
    /// Row-major `rows × columns`.
    pub values: Vec<f64>,
    /// Index into the bundle's members of the model that produced each entry.
    pub producers: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OofAudit {
    pub entries: usize,
    pub out_of_fold: usize,
    pub in_fold: usize,
}

impl OofAudit {
    pub fn clean(&self) -> bool {
        self.in_fold == 0
    }
}

impl OofMatrix {
    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.get(i, j)).collect()
    }

    /// Count entries whose producing model was fine-tuned on that row.
    pub fn audit(&self, plan: &FoldPlan, members: &[Member]) -> OofAudit {
        let mut audit = OofAudit {
            entries: self.values.len(),
            out_of_fold: 0,
            in_fold: 0,
        };
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                let producer = &members[self.producers[i * self.cols() + j]];
                if producer.fold == plan.assignment[i] {
                    audit.out_of_fold += 1;
                } else {
                    audit.in_fold += 1;
                }
            }
        }
        audit
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.header());
        }
        out.push('\n');
        for i in 0..self.rows() {
            write!(out, "{}", self.row_ids[i]).unwrap();
            for v in self.row(i) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Fine-tune every base model on each fold's training part and collect out-of-fold predictions.
///
/// Returns the fine-tuned members in (base model, fold) order and the OOF matrix.
pub fn cv_fine_tune(
    base_models: &[ScorerModel],
    labeled: &[LabeledSentence],
    plan: &FoldPlan,
    archetypes: &[FittedArchetype],
    hyper: &HyperParams,
    columns: StackerColumns,
) -> Result<(Vec<Member>, OofMatrix)> {
    if plan.len() != labeled.len() {
        return Err(Error::DimensionMismatch {
            expected: labeled.len(),
            got: plan.len(),
        });
    }
    let texts: Vec<&str> = labeled.iter().map(|l| l.text.as_str()).collect();
    let features: HashMap<&str, FeatureMatrix> = archetypes
        .iter()
        .map(|a| Ok((a.archetype.name.as_str(), a.featurizer()?.embed_matrix(&texts))))
        .collect::<Result<_>>()?;
    let arch_of: HashMap<&str, &Archetype> = archetypes.iter().map(|a| (a.archetype.name.as_str(), &a.archetype)).collect();
    let y: Vec<f64> = labeled.iter().map(|l| l.mos).collect();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.n_folds).map(|f| plan.split(f)).collect();

    let jobs: Vec<(usize, usize)> = (0..base_models.len()).flat_map(|m| (0..plan.n_folds).map(move |f| (m, f))).collect();
    let results: Vec<(Member, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(m, f)| {
            let base = &base_models[m];
            let x = features
                .get(base.archetype.as_str())
                .ok_or_else(|| Error::Validation(format!("unknown archetype {:?}", base.archetype)))?;
            let arch = arch_of[base.archetype.as_str()];
            let (train, held) = &splits[f];
            let x_train = x.select(train);
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let h = arch.hyper(hyper, base.seed.wrapping_add(f as u64));
            let mut model = train_iterative(Some(base), &x_train, &y_train, &h)?;
            model.stage = Stage::Final;
            let preds = model.predict(&x.select(held))?;
            Ok((Member { fold: f, model }, preds))
        })
        .collect::<Result<_>>()?;

    let n = labeled.len();
    let k = plan.n_folds;
    let mut oof_by_member: Vec<Vec<f64>> = Vec::with_capacity(results.len());
    let mut members = Vec::with_capacity(results.len());
    for (member, preds) in results {
        // scatter held-out predictions back to labeled positions
        let mut full = vec![f64::NAN; n];
        let (_, held) = &splits[member.fold];
        for (&i, p) in held.iter().zip(preds) {
            full[i] = p;
        }
        oof_by_member.push(full);
        members.push(member);
    }

    let oof = match columns {
        StackerColumns::PerBaseModel => {
            let cols: Vec<OofColumn> = base_models
                .iter()
                .map(|b| OofColumn {
                    archetype: b.archetype.clone(),
                    seed: b.seed,
                    fold: None,
                })
                .collect();
            let mut values = Vec::with_capacity(n * cols.len());
            let mut producers = Vec::with_capacity(n * cols.len());
            for i in 0..n {
                for m in 0..base_models.len() {
                    let idx = m * k + plan.assignment[i];
                    values.push(oof_by_member[idx][i]);
                    producers.push(idx);
                }
            }
            OofMatrix {
                row_ids: labeled.iter().map(|l| l.id).collect(),
                columns: cols,
                values,
                producers,
            }
        }
        StackerColumns::PerFoldModel => {
            let cols: Vec<OofColumn> = members
                .iter()
                .map(|mem| OofColumn {
                    archetype: mem.model.archetype.clone(),
                    seed: mem.model.seed,
                    fold: Some(mem.fold),
                })
                .collect();
            let xs: HashMap<&str, &FeatureMatrix> = features.iter().map(|(k, v)| (*k, v)).collect();
            // in-fold entries are filled with the model's own prediction on its training rows
            let full: Vec<Vec<f64>> = members
                .par_iter()
                .map(|mem| mem.model.predict(xs[mem.model.archetype.as_str()]))
                .collect::<Result<_>>()?;
            let mut values = Vec::with_capacity(n * cols.len());
            let mut producers = Vec::with_capacity(n * cols.len());
            for i in 0..n {
                for (j, preds) in full.iter().enumerate() {
                    values.push(preds[i]);
                    producers.push(j);
                }
            }
            OofMatrix {
                row_ids: labeled.iter().map(|l| l.id).collect(),
                columns: cols,
                values,
                producers,
            }
        }
    };
    if oof.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("out-of-fold matrix has missing entries".into()));
    }
    Ok((members, oof))
}

/// Arithmetic mean, clamped to the score range.
pub fn aggregate_mean(row: &[f64]) -> Result<f64> {
    if row.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty row".into()));
    }
    Ok(clamp_score(row.iter().sum::<f64>() / row.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stacker {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub columns: StackerColumns,
    pub condition_estimate: f64,
    /// Set when the normal equations were ill-conditioned and a ridge penalty was used.
    pub ridge_fallback: bool,
}

impl Stacker {
    pub fn combine(&self, row: &[f64]) -> f64 {
        clamp_score(self.intercept + self.weights.iter().zip(row).map(|(w, x)| w * x).sum::<f64>())
    }
}

/// Ordinary least squares with intercept on the OOF columns.
pub fn fit_stacker(oof: &OofMatrix, y: &[f64], columns: StackerColumns) -> Result<Stacker> {
    let n = oof.rows();
    let m = oof.cols();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.len() });
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("empty out-of-fold matrix".into()));
    }
    if oof.values.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite stacker input".into()));
    }
    let means: Vec<f64> = (0..m).map(|j| oof.column(j).iter().sum::<f64>() / n as f64).collect();
    let mut gram = SquareMatrix::zeros(m);
    for i in 0..n {
        let row = oof.row(i);
        for a in 0..m {
            let ca = row[a] - means[a];
            for b in 0..m {
                gram.add(a, b, ca * (row[b] - means[b]));
            }
        }
    }
    let condition = condition_estimate(&gram);
    let ridge_fallback = !(condition <= STACKER_CONDITION_LIMIT);
    let lambda = if ridge_fallback { STACKER_FALLBACK_LAMBDA } else { 0.0 };
    let rows: Vec<Vec<f64>> = (0..n).map(|i| oof.row(i).to_vec()).collect();
    let x = FeatureMatrix::from_dense(&rows, m, crate::featurize::Fingerprint(0))?;
    let sol = ridge_solve(&x, y, lambda)?;
    Ok(Stacker {
        weights: sol.weights,
        intercept: sol.intercept,
        columns,
        condition_estimate: if condition.is_finite() { condition } else { f64::MAX },
        ridge_fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    Stacker(Stacker),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub archetypes: Vec<FittedArchetype>,
    pub seeds: Vec<u64>,
    pub plan: FoldPlan,
    pub aggregation: Aggregation,
    pub model_files: Vec<String>,
}

/// Fine-tuned models with everything needed to score new text.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBundle {
    pub archetypes: Vec<FittedArchetype>,
    pub seeds: Vec<u64>,
    pub plan: FoldPlan,
    /// Ordered by (archetype, seed, fold).
    pub members: Vec<Member>,
    pub aggregation: Aggregation,
}

impl EnsembleBundle {
    pub fn new(archetypes: Vec<FittedArchetype>, seeds: Vec<u64>, plan: FoldPlan, members: Vec<Member>, aggregation: Aggregation) -> Result<Self> {
        let expected = archetypes.len() * seeds.len() * plan.n_folds;
        if members.len() != expected {
            return Err(Error::Validation(format!(
                "bundle has {} models, expected {} archetypes x {} seeds x {} folds = {expected}",
                members.len(),
                archetypes.len(),
                seeds.len(),
                plan.n_folds
            )));
        }
        if let Aggregation::Stacker(s) = &aggregation {
            let want = match s.columns {
                StackerColumns::PerBaseModel => archetypes.len() * seeds.len(),
                StackerColumns::PerFoldModel => members.len(),
            };
            if s.weights.len() != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    got: s.weights.len(),
                });
            }
        }
        let bundle = EnsembleBundle {
            archetypes,
            seeds,
            plan,
            members,
            aggregation,
        };
        for m in &bundle.members {
            let arch = bundle.archetype(&m.model.archetype)?;
            crate::featurize::ensure_fingerprint(arch.stats.fingerprint, m.model.fingerprint)?;
        }
        Ok(bundle)
    }

    fn archetype(&self, name: &str) -> Result<&FittedArchetype> {
        self.archetypes
            .iter()
            .find(|a| a.archetype.name == name)
            .ok_or_else(|| Error::Validation(format!("bundle has no archetype {name:?}")))
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Result<Self> {
        self.aggregation = aggregation;
        Self::new(self.archetypes, self.seeds, self.plan, self.members, self.aggregation)
    }

    /// Per-member clamped predictions, `texts × members`.
    pub fn member_predictions<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>> {
        let mut features: HashMap<&str, FeatureMatrix> = HashMap::new();
        for a in &self.archetypes {
            features.insert(a.archetype.name.as_str(), a.featurizer()?.embed_matrix(texts));
        }
        let per_member: Vec<Vec<f64>> = self
            .members
            .par_iter()
            .map(|m| m.model.predict(&features[m.model.archetype.as_str()]))
            .collect::<Result<_>>()?;
        Ok((0..texts.len()).map(|i| per_member.iter().map(|p| p[i]).collect()).collect())
    }

    /// Mean-pool fold variants: one value per base model, in member order.
    pub fn pool_by_base_model(&self, row: &[f64]) -> Vec<f64> {
        row.chunks(self.plan.n_folds).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }

    pub fn aggregate(&self, row: &[f64]) -> Result<f64> {
        match &self.aggregation {
            Aggregation::Mean => aggregate_mean(row),
            Aggregation::Stacker(s) => Ok(match s.columns {
                StackerColumns::PerBaseModel => s.combine(&self.pool_by_base_model(row)),
                StackerColumns::PerFoldModel => s.combine(row),
            }),
        }
    }

    pub fn predict_texts<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<Vec<f64>> {
        self.member_predictions(texts)?.iter().map(|row| self.aggregate(row)).collect()
    }

    pub fn predict(&self, text: &str) -> Result<f64> {
        Ok(self.predict_texts(&[text])?[0])
    }

    fn model_file(m: &Member) -> String {
        format!("models/{}-s{}-f{}.json", m.model.archetype, m.model.seed, m.fold)
    }

    /// Relative paths and contents of the bundle directory.
    pub fn to_files(&self, oof: Option<&OofMatrix>) -> Vec<(String, Vec<u8>)> {
        let manifest = BundleManifest {
            archetypes: self.archetypes.clone(),
            seeds: self.seeds.clone(),
            plan: self.plan.clone(),
            aggregation: self.aggregation.clone(),
            model_files: self.members.iter().map(Self::model_file).collect(),
        };
        let mut files = vec![(
            "manifest.json".to_string(),
            serde_json::to_vec_pretty(&manifest).expect("manifest serialization cannot fail"),
        )];
        for m in &self.members {
            files.push((Self::model_file(m), m.model.to_json()));
        }
        if let Some(oof) = oof {
            files.push(("oof.csv".to_string(), oof.to_csv().into_bytes()));
        }
        files
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |rel: &str| {
            let p = dir.join(rel);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let manifest: BundleManifest = serde_json::from_slice(&read("manifest.json")?)?;
        let mut members = Vec::with_capacity(manifest.model_files.len());
        for rel in &manifest.model_files {
            let model = ScorerModel::from_json(&read(rel)?)?;
            let fold = rel
                .rsplit_once("-f")
                .and_then(|(_, f)| f.trim_end_matches(".json").parse().ok())
                .ok_or_else(|| Error::Corrupt(format!("cannot read fold from model file name {rel:?}")))?;
            members.push(Member { fold, model });
        }
        Self::new(manifest.archetypes, manifest.seeds, manifest.plan, members, manifest.aggregation)
    }
}
