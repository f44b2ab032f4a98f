//! End-to-end composition: corpus context, baseline, pseudo-labels, ensemble,
//! and the per-fold predictor used by cross-validation.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSentence, SentenceStore};
use crate::ensemble::{
    aggregate_mean, cv_fine_tune, fit_stacker, make_fold_plan, train_pseudo_stage_on, Aggregation, Archetype, EnsembleBundle, FittedArchetype,
    Member, OofMatrix, StackerColumns, DEFAULT_FOLDS, DEFAULT_SEEDS,
};
use crate::error::{Error, Result};
use crate::evalmetrics::{FoldOutput, FoldPredictor, Setting};
use crate::featurize::{fit_feature_stats, Featurizer};
use crate::matrix::FeatureMatrix;
use crate::pseudolabel::{AnchorCandidates, PseudoLabelConfig, PseudoLabelSet, PseudoLabeler, DEFAULT_K};
use crate::scorer::{train_iterative, HyperParams, ScorerModel, Stage};
use crate::simindex::VectorIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// The first archetype also featurizes the index and the baseline.
    pub archetypes: Vec<Archetype>,
    pub k: usize,
    pub exclude_labeled: bool,
    pub seeds: Vec<u64>,
    pub n_folds: usize,
    pub fold_seed: u64,
    pub baseline: HyperParams,
    pub pseudo_stage: HyperParams,
    pub fine_tune: HyperParams,
    pub stacker_columns: StackerColumns,
    /// Generate pseudo-labels once from all labeled anchors instead of per training fold.
    pub paper_faithful_cv: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            archetypes: Archetype::defaults(),
            k: DEFAULT_K,
            exclude_labeled: true,
            seeds: DEFAULT_SEEDS.to_vec(),
            n_folds: DEFAULT_FOLDS,
            fold_seed: 7,
            baseline: HyperParams::baseline(),
            pseudo_stage: HyperParams::pseudo_stage(),
            fine_tune: HyperParams::fine_tune_stage(),
            stacker_columns: StackerColumns::PerBaseModel,
            paper_faithful_cv: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.archetypes.is_empty() {
            return Err(Error::Validation("at least one archetype is required".into()));
        }
        let mut names = HashSet::new();
        for a in &self.archetypes {
            a.features.validate()?;
            if a.batch_size == 0 {
                return Err(Error::Validation(format!("archetype {:?}: batch_size must be positive", a.name)));
            }
            if a.name.is_empty() || a.name.contains(['/', '\\']) || !names.insert(a.name.as_str()) {
                return Err(Error::Validation(format!("archetype name {:?} is empty, contains a path separator or repeats", a.name)));
            }
        }
        if self.k == 0 {
            return Err(Error::Validation("k must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::Validation("seeds must be distinct".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Validation(format!("n_folds must be at least 2, got {}", self.n_folds)));
        }
        self.baseline.validate()?;
        self.pseudo_stage.validate()?;
        self.fine_tune.validate()
    }

    pub fn pseudo_label_config(&self) -> PseudoLabelConfig {
        PseudoLabelConfig {
            k: self.k,
            exclude_labeled: self.exclude_labeled,
            baseline_seed: self.baseline.seed,
        }
    }
}

/// Corpus-side state shared by every stage: the store, fitted featurizers,
/// per-archetype corpus features and the retrieval index.
pub struct CorpusContext {
    pub store: SentenceStore,
    pub archetypes: Vec<FittedArchetype>,
    featurizers: Vec<Featurizer>,
    features: Vec<FeatureMatrix>,
    row_of: HashMap<u64, usize>,
    pub index: VectorIndex,
}

/// Fit featurizer statistics for each archetype on the corpus.
pub fn fit_archetypes(store: &SentenceStore, archetypes: &[Archetype]) -> Result<Vec<FittedArchetype>> {
    archetypes
        .iter()
        .map(|a| {
            Ok(FittedArchetype {
                archetype: a.clone(),
                stats: fit_feature_stats(store.records(), &a.features)?,
            })
        })
        .collect()
}

/// Exact index over the corpus in `featurizer`'s space.
pub fn build_index(store: &SentenceStore, featurizer: &Featurizer) -> Result<VectorIndex> {
    let texts: Vec<&str> = store.records().iter().map(|r| r.text.as_str()).collect();
    let x = featurizer.embed_matrix(&texts);
    VectorIndex::build(
        x.dim(),
        store.records().iter().enumerate().map(|(i, r)| (r.id, x.dense_row(i))),
        featurizer.fingerprint(),
    )
}

impl CorpusContext {
    pub fn build(store: SentenceStore, archetypes: &[Archetype]) -> Result<Self> {
        let fitted = fit_archetypes(&store, archetypes)?;
        let first = fitted.first().ok_or_else(|| Error::Validation("at least one archetype is required".into()))?;
        let index = build_index(&store, &first.featurizer()?)?;
        Self::from_parts(store, fitted, index)
    }

    pub fn from_parts(store: SentenceStore, archetypes: Vec<FittedArchetype>, index: VectorIndex) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Validation("sentence store is empty".into()));
        }
        let featurizers = archetypes.iter().map(|a| a.featurizer()).collect::<Result<Vec<_>>>()?;
        let first = featurizers.first().ok_or_else(|| Error::Validation("at least one archetype is required".into()))?;
        crate::featurize::ensure_fingerprint(first.fingerprint(), index.fingerprint())?;
        let texts: Vec<&str> = store.records().iter().map(|r| r.text.as_str()).collect();
        let features = featurizers.iter().map(|f| f.embed_matrix(&texts)).collect();
        let row_of = store.records().iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        Ok(CorpusContext {
            store,
            archetypes,
            featurizers,
            features,
            row_of,
            index,
        })
    }

    /// The featurizer of the first archetype (index, baseline and retrieval space).
    pub fn primary(&self) -> &Featurizer {
        &self.featurizers[0]
    }

    pub fn featurizers(&self) -> &[Featurizer] {
        &self.featurizers
    }

    /// Per-archetype corpus features for the pseudo-labeled sentences, in label order.
    pub fn pseudo_features(&self, set: &PseudoLabelSet) -> Result<Vec<FeatureMatrix>> {
        let rows = set
            .labels
            .iter()
            .map(|l| {
                self.row_of
                    .get(&l.sentence_id)
                    .copied()
                    .ok_or_else(|| Error::Validation(format!("pseudo-label sentence {} is not in the store", l.sentence_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.features.iter().map(|x| x.select(&rows)).collect())
    }
}

/// Train the labeled-only regressor in the primary feature space.
pub fn train_baseline(featurizer: &Featurizer, archetype: &Archetype, labeled: &[LabeledSentence], hyper: &HyperParams) -> Result<ScorerModel> {
    let texts: Vec<&str> = labeled.iter().map(|l| l.text.as_str()).collect();
    let y: Vec<f64> = labeled.iter().map(|l| l.mos).collect();
    let h = archetype.hyper(hyper, hyper.seed);
    Ok(train_iterative(None, &featurizer.embed_matrix(&texts), &y, &h)?.with_meta(archetype.name.clone(), hyper.seed, Stage::Baseline))
}

/// One model per (archetype, seed) on the pseudo-labels, using the context's corpus features.
pub fn train_pseudo_stage(ctx: &CorpusContext, config: &PipelineConfig, pseudo: &PseudoLabelSet) -> Result<Vec<ScorerModel>> {
    if pseudo.is_empty() {
        return Err(Error::Validation("no pseudo-labels were admitted; the ensemble cannot be trained".into()));
    }
    let x = ctx.pseudo_features(pseudo)?;
    train_pseudo_stage_on(&x, &pseudo.targets(), &ctx.archetypes, &config.seeds, &config.pseudo_stage)
}

/// Fine-tune under k-fold CV on `labeled` and aggregate by mean or stacker.
pub fn train_ensemble(
    ctx: &CorpusContext,
    config: &PipelineConfig,
    pseudo_models: Vec<ScorerModel>,
    labeled: &[LabeledSentence],
    stacker: bool,
    plan_seed: u64,
) -> Result<TrainedEnsemble> {
    let plan = make_fold_plan(labeled.len(), config.n_folds, plan_seed)?;
    let (members, oof) = cv_fine_tune(&pseudo_models, labeled, &plan, &ctx.archetypes, &config.fine_tune, config.stacker_columns)?;
    let aggregation = if stacker {
        let y: Vec<f64> = labeled.iter().map(|l| l.mos).collect();
        Aggregation::Stacker(fit_stacker(&oof, &y, config.stacker_columns)?)
    } else {
        Aggregation::Mean
    };
    let bundle = EnsembleBundle::new(ctx.archetypes.clone(), config.seeds.clone(), plan, members.clone(), aggregation)?;
    Ok(TrainedEnsemble {
        pseudo_models,
        members,
        oof,
        bundle,
    })
}

/// Everything produced by a full training run.
pub struct TrainedEnsemble {
    pub pseudo_models: Vec<ScorerModel>,
    pub members: Vec<Member>,
    pub oof: OofMatrix,
    pub bundle: EnsembleBundle,
}

/// Orchestrates the stages over one corpus context.
pub struct Pipeline<'a> {
    ctx: &'a CorpusContext,
    config: PipelineConfig,
    labeler: PseudoLabeler<'a>,
    /// Retrieval results for every known anchor; admission depends on the baseline, retrieval does not.
    candidates: Vec<AnchorCandidates>,
    shared_pseudo: Option<PseudoLabelSet>,
}

impl<'a> Pipeline<'a> {
    /// `anchors` are the labeled training rows; `excluded_texts` every labeled text
    /// (training and test) that must never become a pseudo-label.
    pub fn new(ctx: &'a CorpusContext, config: PipelineConfig, anchors: &[LabeledSentence], excluded_texts: &[&str]) -> Result<Self> {
        config.validate()?;
        if config.archetypes.len() != ctx.archetypes.len() || config.archetypes.iter().zip(&ctx.archetypes).any(|(a, f)| *a != f.archetype) {
            return Err(Error::Validation("configured archetypes differ from the fitted corpus context".into()));
        }
        let labeler = PseudoLabeler::new(&ctx.store, &ctx.index, ctx.primary(), excluded_texts, config.exclude_labeled)?;
        let candidates = labeler.retrieve(anchors, config.k)?;
        let mut pipeline = Pipeline {
            ctx,
            config,
            labeler,
            candidates,
            shared_pseudo: None,
        };
        if pipeline.config.paper_faithful_cv {
            let baseline = pipeline.train_baseline(anchors)?;
            pipeline.shared_pseudo = Some(pipeline.pseudo_label(anchors, &baseline)?);
        }
        Ok(pipeline)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn context(&self) -> &CorpusContext {
        self.ctx
    }

    pub fn train_baseline(&self, labeled: &[LabeledSentence]) -> Result<ScorerModel> {
        train_baseline(self.ctx.primary(), &self.config.archetypes[0], labeled, &self.config.baseline)
    }

    /// Pseudo-labels gated by `baseline`, using the cached retrieval for `anchors`.
    pub fn pseudo_label(&self, anchors: &[LabeledSentence], baseline: &ScorerModel) -> Result<PseudoLabelSet> {
        let known: HashSet<u64> = self.candidates.iter().map(|c| c.anchor_id).collect();
        if let Some(a) = anchors.iter().find(|a| !known.contains(&a.id)) {
            return Err(Error::InvalidArgument(format!("anchor {} was not retrieved", a.id)));
        }
        self.labeler.admit(anchors, &self.candidates, baseline, self.config.pseudo_label_config())
    }

    pub fn train_pseudo_stage(&self, pseudo: &PseudoLabelSet) -> Result<Vec<ScorerModel>> {
        train_pseudo_stage(self.ctx, &self.config, pseudo)
    }

    pub fn train_ensemble(&self, pseudo_models: Vec<ScorerModel>, labeled: &[LabeledSentence], stacker: bool, plan_seed: u64) -> Result<TrainedEnsemble> {
        train_ensemble(self.ctx, &self.config, pseudo_models, labeled, stacker, plan_seed)
    }

    fn mean_of_models(&self, models: &[ScorerModel], texts: &[&str]) -> Result<Vec<f64>> {
        let x: Vec<FeatureMatrix> = self.ctx.featurizers.iter().map(|f| f.embed_matrix(texts)).collect();
        let slot: HashMap<&str, usize> = self.ctx.archetypes.iter().enumerate().map(|(i, a)| (a.archetype.name.as_str(), i)).collect();
        let preds = models.iter().map(|m| m.predict(&x[slot[m.archetype.as_str()]])).collect::<Result<Vec<_>>>()?;
        (0..texts.len()).map(|i| aggregate_mean(&preds.iter().map(|p| p[i]).collect::<Vec<_>>())).collect()
    }
}

impl FoldPredictor for Pipeline<'_> {
    fn fit_predict(&self, fold: usize, train: &[LabeledSentence], eval: &[LabeledSentence], settings: &[Setting]) -> Result<FoldOutput> {
        let texts: Vec<&str> = eval.iter().map(|l| l.text.as_str()).collect();
        let baseline = self.train_baseline(train)?;
        let mut out: HashMap<Setting, Vec<f64>> = HashMap::new();
        if settings.contains(&Setting::Baseline) {
            out.insert(Setting::Baseline, baseline.predict(&self.ctx.primary().embed_matrix(&texts))?);
        }
        let mut anchor_ids = Vec::new();
        if settings.iter().any(|s| s.uses_pseudo_labels()) {
            let fold_pseudo;
            let pseudo = match &self.shared_pseudo {
                Some(p) => p,
                None => {
                    fold_pseudo = self.pseudo_label(train, &baseline)?;
                    &fold_pseudo
                }
            };
            anchor_ids = pseudo.anchor_ids().into_iter().collect();
            anchor_ids.sort_unstable();
            let pseudo_models = self.train_pseudo_stage(pseudo)?;
            if settings.contains(&Setting::PseudoOnly) {
                out.insert(Setting::PseudoOnly, self.mean_of_models(&pseudo_models, &texts)?);
            }
            if settings.iter().any(|s| s.uses_fine_tuning()) {
                let stacker = settings.contains(&Setting::EnsembleStacker);
                let plan_seed = self.config.fold_seed.wrapping_add(1 + fold as u64);
                let trained = self.train_ensemble(pseudo_models, train, stacker, plan_seed)?;
                let rows = trained.bundle.member_predictions(&texts)?;
                if settings.contains(&Setting::EnsembleMean) {
                    out.insert(Setting::EnsembleMean, rows.iter().map(|r| aggregate_mean(r)).collect::<Result<_>>()?);
                }
                if stacker {
                    out.insert(Setting::EnsembleStacker, rows.iter().map(|r| trained.bundle.aggregate(r)).collect::<Result<_>>()?);
                }
            }
        }
        Ok(FoldOutput {
            predictions: settings.iter().map(|s| out[s].clone()).collect(),
            anchor_ids,
        })
    }

    fn strict_anchors(&self) -> bool {
        self.shared_pseudo.is_none()
    }
}
