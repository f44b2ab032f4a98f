use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use plexity::corpus::{labeled_to_tsv, load_labeled, normalize_sentence, LabeledSentence, SentenceStore};
use plexity::ensemble::{aggregate_mean, make_fold_plan, Aggregation, EnsembleBundle, FittedArchetype};
use plexity::evalmetrics::{cross_validate, render_cv_table, EvalReport, Setting};
use plexity::featurize::ensure_fingerprint;
use plexity::pipeline::{fit_archetypes, train_baseline, train_ensemble, train_pseudo_stage, CorpusContext, Pipeline, PipelineConfig};
use plexity::pseudolabel::{generate_pseudo_labels, render_stats_table, PseudoLabelSet};
use plexity::scorer::ScorerModel;
use plexity::simindex::{self, VectorIndex, INDEX_MAGIC, VECTORS_MAGIC};
use plexity::synth::{self, SynthConfig};

use crate::artifacts::{check_upstream, digest_path, sha256_hex, write_atomic, write_dir_atomic, Artifact, OutputLock, RunManifest, StageRecord};
use crate::config::{CorpusEntry, LoadedConfig, RunConfig};
use crate::error::{CliError, CliResult};

pub const STORE: Artifact = Artifact { name: "store.jsonl", stage: "ingest" };
pub const CORPUS_STATS: Artifact = Artifact { name: "corpus_stats.json", stage: "ingest" };
pub const FEATURE_STATS: Artifact = Artifact { name: "feature_stats.json", stage: "featurize" };
pub const VECTORS: Artifact = Artifact { name: "vectors.bin", stage: "featurize" };
pub const INDEX: Artifact = Artifact { name: "index.bin", stage: "index" };
pub const BASELINE: Artifact = Artifact { name: "baseline.json", stage: "train-baseline" };
pub const PSEUDO: Artifact = Artifact { name: "pseudo_labels.jsonl", stage: "pseudolabel" };
pub const BUNDLE: Artifact = Artifact { name: "bundle", stage: "train-ensemble" };

fn progress(msg: impl AsRef<str>) {
    eprintln!("[plexity] {}", msg.as_ref());
}

/// One command's bookkeeping: consumed and produced digests, wall time, lock.
struct Run<'a> {
    cfg: &'a LoadedConfig,
    stage: &'static str,
    force: bool,
    manifest: RunManifest,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
    _lock: OutputLock,
}

impl<'a> Run<'a> {
    fn start(cfg: &'a LoadedConfig, stage: &'static str, force: bool) -> CliResult<Self> {
        let lock = OutputLock::acquire(&cfg.config.output_dir)?;
        let manifest = RunManifest::load_or_default(&cfg.config.output_dir)?;
        progress(format!("{stage}: start"));
        Ok(Run {
            cfg,
            stage,
            force,
            manifest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
            _lock: lock,
        })
    }

    fn path(&self, a: Artifact) -> PathBuf {
        self.cfg.out(a.name)
    }

    fn consume(&mut self, artifacts: &[Artifact]) -> CliResult<()> {
        check_upstream(&self.cfg.config.output_dir, &self.manifest, artifacts, self.force)?;
        for a in artifacts {
            self.inputs.insert(a.name.to_string(), digest_path(&self.path(*a))?);
        }
        Ok(())
    }

    fn consume_external(&mut self, path: &Path) -> CliResult<()> {
        let d = digest_path(path).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), d);
        Ok(())
    }

    fn read(&self, a: Artifact) -> CliResult<Vec<u8>> {
        fs::read(self.path(a)).map_err(|e| CliError::Upstream(format!("cannot read {}: {e}; re-run `plexity {}`", a.name, a.stage)))
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.cfg.out(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn write_at(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_atomic(path, bytes)?;
        let key = match path.strip_prefix(&self.cfg.config.output_dir) {
            Ok(rel) => rel.to_string_lossy().into_owned(),
            Err(_) => path.display().to_string(),
        };
        self.outputs.insert(key, sha256_hex(bytes));
        Ok(())
    }

    fn write_dir(&mut self, name: &str, files: &[(String, Vec<u8>)]) -> CliResult<()> {
        let path = self.cfg.out(name);
        write_dir_atomic(&path, files)?;
        self.outputs.insert(name.to_string(), digest_path(&path)?);
        Ok(())
    }

    fn finish(mut self) -> CliResult<()> {
        let secs = self.started.elapsed().as_secs_f64();
        let config_sha256 = sha256_hex(&self.cfg.raw);
        self.manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        self.manifest.config_path = self.cfg.path.display().to_string();
        self.manifest.config_sha256 = config_sha256.clone();
        self.manifest.config = String::from_utf8_lossy(&self.cfg.raw).into_owned();
        self.manifest.stages.insert(
            self.stage.to_string(),
            StageRecord {
                inputs: std::mem::take(&mut self.inputs),
                outputs: std::mem::take(&mut self.outputs),
                config_sha256,
                wall_seconds: secs,
            },
        );
        self.manifest.save(&self.cfg.config.output_dir)?;
        progress(format!("{}: done in {secs:.2}s", self.stage));
        Ok(())
    }

    fn pipeline(&self) -> &'a PipelineConfig {
        &self.cfg.config.pipeline
    }

    fn load_store(&self) -> CliResult<SentenceStore> {
        SentenceStore::load_jsonl(&self.path(STORE)).map_err(|e| CliError::upstream(e, STORE.name, STORE.stage))
    }

    fn load_archetypes(&self) -> CliResult<Vec<FittedArchetype>> {
        let fitted: Vec<FittedArchetype> = serde_json::from_slice(&self.read(FEATURE_STATS)?)
            .map_err(|e| CliError::upstream(e.into(), FEATURE_STATS.name, FEATURE_STATS.stage))?;
        let configured = &self.pipeline().archetypes;
        if fitted.len() != configured.len() || fitted.iter().zip(configured).any(|(f, c)| f.archetype != *c) {
            return Err(CliError::Upstream("configured archetypes differ from feature_stats.json; re-run `plexity featurize`".into()));
        }
        Ok(fitted)
    }

    fn load_index(&self) -> CliResult<VectorIndex> {
        VectorIndex::from_bytes(&self.read(INDEX)?).map_err(|e| CliError::upstream(e, INDEX.name, INDEX.stage))
    }

    fn load_baseline(&self) -> CliResult<ScorerModel> {
        ScorerModel::from_json(&self.read(BASELINE)?).map_err(|e| CliError::upstream(e, BASELINE.name, BASELINE.stage))
    }

    fn load_bundle(&self) -> CliResult<EnsembleBundle> {
        EnsembleBundle::load(&self.path(BUNDLE)).map_err(|e| CliError::upstream(e, BUNDLE.name, BUNDLE.stage))
    }

    fn load_train(&mut self) -> CliResult<Vec<LabeledSentence>> {
        let path = self.cfg.config.train.clone();
        self.consume_external(&path)?;
        let rows = load_labeled(&path, self.cfg.config.default_rating_std)?;
        if rows.is_empty() {
            return Err(CliError::Validation(format!("{} has no labeled rows", path.display())));
        }
        Ok(rows)
    }

    fn load_test(&mut self) -> CliResult<Option<Vec<LabeledSentence>>> {
        match self.cfg.config.test.clone() {
            Some(path) => {
                self.consume_external(&path)?;
                Ok(Some(load_labeled(&path, self.cfg.config.default_rating_std)?))
            }
            None => Ok(None),
        }
    }
}

fn excluded_texts<'t>(train: &'t [LabeledSentence], test: &'t Option<Vec<LabeledSentence>>) -> Vec<&'t str> {
    train.iter().chain(test.iter().flatten()).map(|l| l.text.as_str()).collect()
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serialization cannot fail");
    v.push(b'\n');
    v
}

pub fn ingest(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "ingest", force)?;
    for c in &cfg.config.corpora {
        run.consume_external(&c.path)?;
    }
    let mut store = SentenceStore::new();
    store.ingest_all(&cfg.source_specs())?;
    let stats = store.deduplicate();
    progress(format!("ingest: {} sentences, {} distinct", stats.total_sentences, stats.distinct_sentences));
    run.write(STORE.name, &store.to_jsonl_bytes())?;
    run.write(CORPUS_STATS.name, &json_bytes(&stats))?;
    run.finish()
}

pub fn featurize(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "featurize", force)?;
    run.consume(&[STORE])?;
    let store = run.load_store()?;
    if store.is_empty() {
        return Err(CliError::Validation("the sentence store is empty; nothing to featurize".into()));
    }
    let fitted = fit_archetypes(&store, &run.pipeline().archetypes)?;
    let primary = fitted[0].featurizer()?;
    let texts: Vec<&str> = store.records().iter().map(|r| r.text.as_str()).collect();
    let x = primary.embed_matrix(&texts);
    let mut vectors = Vec::with_capacity(x.rows() * x.dim());
    for i in 0..x.rows() {
        vectors.extend(x.dense_row(i).into_iter().map(|v| v as f32));
    }
    let ids: Vec<u64> = store.records().iter().map(|r| r.id).collect();
    run.write(FEATURE_STATS.name, &json_bytes(&fitted))?;
    run.write(VECTORS.name, &simindex::encode(VECTORS_MAGIC, x.dim(), &ids, &vectors, primary.fingerprint()))?;
    run.finish()
}

pub fn index(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "index", force)?;
    run.consume(&[VECTORS, FEATURE_STATS])?;
    let fitted = run.load_archetypes()?;
    let (dim, ids, vectors, fp) = simindex::decode(&run.read(VECTORS)?, VECTORS_MAGIC).map_err(|e| CliError::upstream(e, VECTORS.name, VECTORS.stage))?;
    ensure_fingerprint(fitted[0].stats.fingerprint, fp).map_err(|e| CliError::upstream(e, VECTORS.name, VECTORS.stage))?;
    let index = VectorIndex::from_parts(dim, ids, vectors, fp)?;
    progress(format!("index: {} vectors of dimension {dim}", index.len()));
    let bytes = index.to_bytes();
    debug_assert_eq!(simindex::verify(&bytes).map(|h| h.magic).ok(), Some(INDEX_MAGIC));
    run.write(INDEX.name, &bytes)?;
    run.finish()
}

pub fn train_baseline_cmd(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "train-baseline", force)?;
    run.consume(&[FEATURE_STATS])?;
    let fitted = run.load_archetypes()?;
    let train = run.load_train()?;
    let model = train_baseline(&fitted[0].featurizer()?, &fitted[0].archetype, &train, &run.pipeline().baseline)?;
    run.write(BASELINE.name, &model.to_json())?;
    run.finish()
}

pub fn pseudolabel(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "pseudolabel", force)?;
    run.consume(&[STORE, FEATURE_STATS, INDEX, BASELINE])?;
    let store = run.load_store()?;
    let fitted = run.load_archetypes()?;
    let index = run.load_index()?;
    let baseline = run.load_baseline()?;
    let train = run.load_train()?;
    let test = run.load_test()?;
    let excluded = excluded_texts(&train, &test);
    let set = generate_pseudo_labels(&train, &index, &store, &fitted[0].featurizer()?, &baseline, &excluded, run.pipeline().pseudo_label_config())?;
    progress(format!("pseudolabel: admitted {} sentences from {} anchors", set.len(), train.len()));
    run.write(PSEUDO.name, &set.to_jsonl_bytes())?;
    run.write("pseudo_label_stats.json", &set.stats_json())?;
    run.write("pseudo_label_stats.txt", render_stats_table(&set.stats).as_bytes())?;
    run.finish()
}

fn pseudo_model_file(m: &ScorerModel) -> String {
    format!("pseudo/{}-s{}.json", m.archetype, m.seed)
}

pub fn train_ensemble_cmd(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "train-ensemble", force)?;
    run.consume(&[STORE, FEATURE_STATS, INDEX, PSEUDO])?;
    let ctx = CorpusContext::from_parts(run.load_store()?, run.load_archetypes()?, run.load_index()?)?;
    let pc = run.pipeline();
    let pseudo = PseudoLabelSet::from_jsonl(&run.read(PSEUDO)?, pc.pseudo_label_config()).map_err(|e| CliError::upstream(e, PSEUDO.name, PSEUDO.stage))?;
    let train = run.load_train()?;
    let pseudo_models = train_pseudo_stage(&ctx, pc, &pseudo)?;
    progress(format!("train-ensemble: {} pseudo-stage models on {} pseudo-labels", pseudo_models.len(), pseudo.len()));
    let stacker = cfg.config.setting == Setting::EnsembleStacker;
    let trained = train_ensemble(&ctx, pc, pseudo_models, &train, stacker, pc.fold_seed)?;
    progress(format!("train-ensemble: {} fine-tuned models", trained.members.len()));
    let mut files = trained.bundle.to_files(Some(&trained.oof));
    for m in &trained.pseudo_models {
        files.push((pseudo_model_file(m), m.to_json()));
    }
    run.write_dir(BUNDLE.name, &files)?;
    run.finish()
}

fn load_pseudo_models(bundle_dir: &Path, bundle: &EnsembleBundle) -> CliResult<Vec<ScorerModel>> {
    let mut out = Vec::new();
    for a in &bundle.archetypes {
        for &seed in &bundle.seeds {
            let p = bundle_dir.join(format!("pseudo/{}-s{seed}.json", a.archetype.name));
            let bytes = fs::read(&p).map_err(|e| CliError::Upstream(format!("cannot read {}: {e}; re-run `plexity train-ensemble`", p.display())))?;
            out.push(ScorerModel::from_json(&bytes).map_err(|e| CliError::upstream(e, BUNDLE.name, BUNDLE.stage))?);
        }
    }
    Ok(out)
}

fn mean_of_models(archetypes: &[FittedArchetype], models: &[ScorerModel], texts: &[&str]) -> CliResult<Vec<f64>> {
    let mut per_model = Vec::with_capacity(models.len());
    for m in models {
        let a = archetypes
            .iter()
            .find(|a| a.archetype.name == m.archetype)
            .ok_or_else(|| CliError::Upstream(format!("model archetype {:?} is not in the bundle; re-run `plexity train-ensemble`", m.archetype)))?;
        per_model.push(m.predict(&a.featurizer()?.embed_matrix(texts))?);
    }
    (0..texts.len())
        .map(|i| Ok(aggregate_mean(&per_model.iter().map(|p| p[i]).collect::<Vec<_>>())?))
        .collect()
}

/// Score `texts` under `setting` with the persisted models.
fn score_texts(run: &mut Run, setting: Setting, texts: &[&str]) -> CliResult<Vec<f64>> {
    match setting {
        Setting::Baseline => {
            run.consume(&[FEATURE_STATS, BASELINE])?;
            let fitted = run.load_archetypes()?;
            let baseline = run.load_baseline()?;
            Ok(baseline.predict(&fitted[0].featurizer()?.embed_matrix(texts))?)
        }
        Setting::PseudoOnly => {
            run.consume(&[BUNDLE])?;
            let bundle = run.load_bundle()?;
            let models = load_pseudo_models(&run.path(BUNDLE), &bundle)?;
            mean_of_models(&bundle.archetypes, &models, texts)
        }
        Setting::EnsembleMean => {
            run.consume(&[BUNDLE])?;
            let bundle = run.load_bundle()?;
            Ok(bundle.member_predictions(texts)?.iter().map(|r| aggregate_mean(r)).collect::<plexity::Result<_>>()?)
        }
        Setting::EnsembleStacker => {
            run.consume(&[BUNDLE])?;
            let bundle = run.load_bundle()?;
            if !matches!(bundle.aggregation, Aggregation::Stacker(_)) {
                return Err(CliError::Upstream(
                    "the bundle has no stacker; set \"setting\": \"ensemble_stacker\" and re-run `plexity train-ensemble`".into(),
                ));
            }
            Ok(bundle.predict_texts(texts)?)
        }
    }
}

pub fn evaluate(cfg: &LoadedConfig, force: bool) -> CliResult<()> {
    let mut run = Run::start(cfg, "evaluate", force)?;
    let setting = cfg.config.setting;
    run.consume(&[STORE, FEATURE_STATS, INDEX])?;
    let train = run.load_train()?;
    let test = run.load_test()?;
    let ctx = CorpusContext::from_parts(run.load_store()?, run.load_archetypes()?, run.load_index()?)?;
    let excluded = excluded_texts(&train, &test);
    let pc = run.pipeline().clone();
    let plan = make_fold_plan(train.len(), pc.n_folds, pc.fold_seed)?;
    let pipeline = Pipeline::new(&ctx, pc, &train, &excluded)?;
    let report = cross_validate(setting, &train, &plan, &pipeline)?;
    progress(format!("evaluate: {setting} fold mean RMSE {:.3}", report.fold_mean.unwrap_or(f64::NAN)));
    run.write(&format!("reports/cv_{setting}.json"), &json_bytes(&report))?;
    run.write(&format!("reports/cv_{setting}.txt"), render_cv_table(std::slice::from_ref(&report)).as_bytes())?;
    if let Some(test) = &test {
        if !test.is_empty() {
            let texts: Vec<&str> = test.iter().map(|l| l.text.as_str()).collect();
            let gold: Vec<f64> = test.iter().map(|l| l.mos).collect();
            let pred = score_texts(&mut run, setting, &texts)?;
            let report = EvalReport::from_pairs(setting.name(), &pred, &gold)?;
            progress(format!("evaluate: {setting} test RMSE {:.3} (mapped {:.3})", report.rmse_raw, report.rmse_mapped));
            run.write(&format!("reports/test_{setting}.json"), &json_bytes(&report))?;
        }
    }
    run.finish()
}

/// Non-empty lines of `input`, with 1-based line numbers as ids.
pub fn read_prediction_input(input: &Path) -> CliResult<Vec<(u64, String)>> {
    let content = fs::read_to_string(input).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", input.display())))?;
    Ok(content
        .lines()
        .enumerate()
        .map(|(i, l)| (i as u64 + 1, normalize_sentence(l)))
        .filter(|(_, t)| !t.is_empty())
        .collect())
}

pub fn predict(cfg: &LoadedConfig, force: bool, input: &Path, output: Option<&Path>) -> CliResult<()> {
    let mut run = Run::start(cfg, "predict", force)?;
    run.consume_external(input)?;
    let rows = read_prediction_input(input)?;
    let texts: Vec<&str> = rows.iter().map(|(_, t)| t.as_str()).collect();
    let scores = if texts.is_empty() { Vec::new() } else { score_texts(&mut run, cfg.config.setting, &texts)? };
    let mut out = String::new();
    for ((id, _), s) in rows.iter().zip(&scores) {
        writeln!(out, "{id}\t{s:.3}").unwrap();
    }
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("predictions.tsv"));
    run.write_at(&path, out.as_bytes())?;
    progress(format!("predict: scored {} sentences into {}", rows.len(), path.display()));
    run.finish()
}

/// Write a synthetic corpus, labeled files and a matching config into `dir`.
pub fn synth(dir: &Path, config: &SynthConfig) -> CliResult<()> {
    let data = synth::generate(config)?;
    let mut corpora = Vec::new();
    for (tag, lines) in &data.corpora {
        let rel = format!("corpus/{tag}.txt");
        let mut text = lines.join("\n");
        text.push('\n');
        write_atomic(&dir.join(&rel), text.as_bytes())?;
        corpora.push(CorpusEntry {
            path: rel.into(),
            source: tag.clone(),
            format: plexity::corpus::InputFormat::PlainLines,
        });
    }
    write_atomic(&dir.join("train.tsv"), labeled_to_tsv(&data.train).as_bytes())?;
    write_atomic(&dir.join("test.tsv"), labeled_to_tsv(&data.test).as_bytes())?;
    write_atomic(&dir.join("synth.json"), &json_bytes(config))?;
    let run = RunConfig {
        corpora,
        train: "train.tsv".into(),
        test: Some("test.tsv".into()),
        output_dir: "out".into(),
        default_rating_std: plexity::corpus::DEFAULT_RATING_STD,
        setting: Setting::EnsembleMean,
        pipeline: PipelineConfig::default(),
    };
    write_atomic(&dir.join("config.json"), &json_bytes(&run))?;
    progress(format!("synth: wrote fixture to {}", dir.display()));
    Ok(())
}
