//! Pseudo-label generation.
//!
//! Every labeled anchor retrieves its `k` nearest corpus sentences. The
//! baseline scores each candidate, and a candidate is admitted when
//! `|predicted − anchor_mos| ≤ anchor_std`. Anchors are processed in
//! ascending id order and a sentence admitted by an earlier anchor is skipped
//! by later ones. The stored target is the baseline's clamped prediction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSentence, SentenceStore, SourceTag};
use crate::error::{Error, Result};
use crate::featurize::{ensure_fingerprint, Featurizer};
use crate::matrix::FeatureMatrix;
use crate::scorer::{clamp_score, ScorerModel};
use crate::simindex::VectorIndex;

pub const DEFAULT_K: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub sentence_id: u64,
    pub text: String,
    pub source: SourceTag,
    pub predicted_score: f64,
    pub anchor_id: u64,
    pub anchor_mos: f64,
    pub anchor_std: f64,
}

impl PseudoLabel {
    pub fn satisfies_admission_rule(&self) -> bool {
        admits(self.predicted_score, self.anchor_mos, self.anchor_std)
    }
}

#[inline]
pub fn admits(predicted: f64, anchor_mos: f64, anchor_std: f64) -> bool {
    (predicted - anchor_mos).abs() <= anchor_std
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelConfig {
    pub k: usize,
    /// Drop corpus sentences whose text equals any labeled sentence's text.
    pub exclude_labeled: bool,
    pub baseline_seed: u64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        PseudoLabelConfig {
            k: DEFAULT_K,
            exclude_labeled: true,
            baseline_seed: 0,
        }
    }
}

/// One row of the per-source summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: SourceTag,
    pub count: usize,
    pub mean_char_len: f64,
    pub mean_predicted_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub labels: Vec<PseudoLabel>,
    pub config: PseudoLabelConfig,
    pub stats: Vec<SourceStats>,
}

impl PseudoLabelSet {
    pub fn new(labels: Vec<PseudoLabel>, config: PseudoLabelConfig) -> Result<Self> {
        let mut seen = HashSet::with_capacity(labels.len());
        for l in &labels {
            if !seen.insert(l.sentence_id) {
                return Err(Error::DuplicateId(l.sentence_id));
            }
        }
        let stats = pseudo_label_stats(&labels);
        Ok(PseudoLabelSet { labels, config, stats })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.text.as_str()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.predicted_score).collect()
    }

    pub fn anchor_ids(&self) -> HashSet<u64> {
        self.labels.iter().map(|l| l.anchor_id).collect()
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for l in &self.labels {
            serde_json::to_writer(&mut out, l).expect("label serialization cannot fail");
            out.write_all(b"\n").expect("writing to a Vec cannot fail");
        }
        out
    }

    pub fn from_jsonl(bytes: &[u8], config: PseudoLabelConfig) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Corrupt(format!("pseudo-label file is not UTF-8: {e}")))?;
        let mut labels = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let l: PseudoLabel = serde_json::from_str(line)
                .map_err(|e| Error::Corrupt(format!("pseudo-label line {}: {e}", i + 1)))?;
            labels.push(l);
        }
        Self::new(labels, config)
    }

    /// JSON sidecar: config plus the per-source table.
    pub fn stats_json(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Sidecar<'a> {
            config: &'a PseudoLabelConfig,
            total: usize,
            per_source: &'a [SourceStats],
        }
        serde_json::to_vec_pretty(&Sidecar {
            config: &self.config,
            total: self.labels.len(),
            per_source: &self.stats,
        })
        .expect("stats serialization cannot fail")
    }
}

/// Per-source count, mean character length and mean predicted score,
/// sorted by count descending (ties by source name).
pub fn pseudo_label_stats(labels: &[PseudoLabel]) -> Vec<SourceStats> {
    let mut acc: BTreeMap<&SourceTag, (usize, f64, f64)> = BTreeMap::new();
    for l in labels {
        let e = acc.entry(&l.source).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += l.text.chars().count() as f64;
        e.2 += l.predicted_score;
    }
    let mut rows: Vec<SourceStats> = acc
        .into_iter()
        .map(|(source, (count, len, score))| SourceStats {
            source: source.clone(),
            count,
            mean_char_len: len / count as f64,
            mean_predicted_score: score / count as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.source.cmp(&b.source)));
    rows
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Aligned text table with columns source, sentence count, mean length, mean score.
pub fn render_stats_table(rows: &[SourceStats]) -> String {
    let header = ["Data Source", "#Sentences", "Avg Length", "Avg MOS"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|r| {
            [
                r.source.to_string(),
                thousands(r.count),
                format!("{:.0}", r.mean_char_len),
                format!("{:.1}", r.mean_predicted_score),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &body {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: [&str; 4], out: &mut String| {
        out.push_str(&format!(
            "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}\n",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = width[0],
            w1 = width[1],
            w2 = width[2],
            w3 = width[3]
        ));
    };
    line(header, &mut out);
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 6));
    out.push('\n');
    for row in &body {
        line([&row[0], &row[1], &row[2], &row[3]], &mut out);
    }
    out
}

/// Retrieved candidate ids for one anchor, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorCandidates {
    pub anchor_id: u64,
    pub candidates: Vec<u64>,
}

/// Corpus-side state for pseudo-labeling: the store, its index, the index's
/// featurizer, and baseline-space features for every corpus sentence.
pub struct PseudoLabeler<'a> {
    store: &'a SentenceStore,
    index: &'a VectorIndex,
    featurizer: &'a Featurizer,
    features: FeatureMatrix,
    row_of: HashMap<u64, usize>,
    excluded: HashSet<u64>,
}

impl<'a> PseudoLabeler<'a> {
    /// `labeled_texts` should hold every labeled (train and test) text; with
    /// `exclude_labeled`, corpus sentences equal to any of them are never retrieved.
    pub fn new(
        store: &'a SentenceStore,
        index: &'a VectorIndex,
        featurizer: &'a Featurizer,
        labeled_texts: &[&str],
        exclude_labeled: bool,
    ) -> Result<Self> {
        ensure_fingerprint(index.fingerprint(), featurizer.fingerprint())?;
        let texts: Vec<&str> = store.records().iter().map(|r| r.text.as_str()).collect();
        let features = featurizer.embed_matrix(&texts);
        let row_of = store.records().iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let mut excluded = HashSet::new();
        if exclude_labeled {
            let by_text = store.text_index();
            for t in labeled_texts {
                if let Some(ids) = by_text.get(t) {
                    excluded.extend(ids.iter().copied());
                }
            }
        }
        Ok(PseudoLabeler {
            store,
            index,
            featurizer,
            features,
            row_of,
            excluded,
        })
    }

    pub fn excluded(&self) -> &HashSet<u64> {
        &self.excluded
    }

    /// Top-`k` candidates per anchor, in ascending anchor-id order.
    pub fn retrieve(&self, anchors: &[LabeledSentence], k: usize) -> Result<Vec<AnchorCandidates>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let mut sorted: Vec<&LabeledSentence> = anchors.iter().collect();
        sorted.sort_by_key(|a| a.id);
        let queries: Vec<Vec<f64>> = sorted.iter().map(|a| self.featurizer.embed(&a.text).values).collect();
        let exclude = (!self.excluded.is_empty()).then_some(&self.excluded);
        let hits = self.index.top_k_batch(&queries, k, exclude)?;
        Ok(sorted
            .iter()
            .zip(hits)
            .map(|(a, h)| AnchorCandidates {
                anchor_id: a.id,
                candidates: h.into_iter().map(|hit| hit.id).collect(),
            })
            .collect())
    }

    /// Score retrieved candidates with `baseline` and apply the admission rule.
    ///
    /// `candidates` entries whose anchor is not in `anchors` are ignored.
    pub fn admit(
        &self,
        anchors: &[LabeledSentence],
        candidates: &[AnchorCandidates],
        baseline: &ScorerModel,
        config: PseudoLabelConfig,
    ) -> Result<PseudoLabelSet> {
        ensure_fingerprint(self.index.fingerprint(), baseline.fingerprint)?;
        if anchors.is_empty() {
            return Err(Error::InvalidArgument("pseudo-labeling needs at least one anchor".into()));
        }
        if config.k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        let by_id: HashMap<u64, &LabeledSentence> = anchors.iter().map(|a| (a.id, a)).collect();
        let mut ordered: Vec<&AnchorCandidates> = candidates.iter().filter(|c| by_id.contains_key(&c.anchor_id)).collect();
        ordered.sort_by_key(|c| c.anchor_id);

        let mut taken: HashSet<u64> = HashSet::new();
        let mut labels = Vec::new();
        for cand in ordered {
            let anchor = by_id[&cand.anchor_id];
            for &sid in cand.candidates.iter().take(config.k) {
                if taken.contains(&sid) {
                    continue;
                }
                let row = *self
                    .row_of
                    .get(&sid)
                    .ok_or_else(|| Error::Validation(format!("index id {sid} is not in the sentence store")))?;
                let predicted = clamp_score(self.features.dot_row(row, &baseline.weights) + baseline.intercept);
                if admits(predicted, anchor.mos, anchor.rating_std) {
                    taken.insert(sid);
                    let rec = &self.store.records()[row];
                    labels.push(PseudoLabel {
                        sentence_id: sid,
                        text: rec.text.clone(),
                        source: rec.source.clone(),
                        predicted_score: predicted,
                        anchor_id: anchor.id,
                        anchor_mos: anchor.mos,
                        anchor_std: anchor.rating_std,
                    });
                }
            }
        }
        PseudoLabelSet::new(labels, config)
    }

    pub fn generate(&self, anchors: &[LabeledSentence], baseline: &ScorerModel, config: PseudoLabelConfig) -> Result<PseudoLabelSet> {
        ensure_fingerprint(self.index.fingerprint(), baseline.fingerprint)?;
        if anchors.is_empty() {
            return Err(Error::InvalidArgument("pseudo-labeling needs at least one anchor".into()));
        }
        let candidates = self.retrieve(anchors, config.k)?;
        self.admit(anchors, &candidates, baseline, config)
    }
}

/// One-shot pseudo-label generation over a store and its index.
pub fn generate_pseudo_labels(
    anchors: &[LabeledSentence],
    index: &VectorIndex,
    store: &SentenceStore,
    featurizer: &Featurizer,
    baseline: &ScorerModel,
    labeled_texts: &[&str],
    config: PseudoLabelConfig,
) -> Result<PseudoLabelSet> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    PseudoLabeler::new(store, index, featurizer, labeled_texts, config.exclude_labeled)?.generate(anchors, baseline, config)
}
