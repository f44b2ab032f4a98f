//! Unlabeled sentence ingestion and labeled-set loading.
//!
//! Inputs are expected to be pre-split, one sentence per line (plain text) or
//! per record (jsonl). Every text goes through [`normalize_sentence`] and the
//! store assigns ids in commit order, so two ingestion runs over the same files
//! produce identical stores.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Fallback per-sentence rating standard deviation for labeled files without
/// a `rating_std` column.
pub const DEFAULT_RATING_STD: f64 = 0.5;

pub const MOS_MIN: f64 = 1.0;
pub const MOS_MAX: f64 = 7.0;

/// NFC-normalize, trim, and collapse internal whitespace runs to one space.
pub fn normalize_sentence(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    for token in nfc.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(token);
    }
    out
}

/// Name of the collection a sentence came from (`wikipedia`, `news`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceTag(String);

impl SourceTag {
    pub fn new(tag: impl Into<String>) -> Result<Self> {
        let tag = tag.into();
        let valid = !tag.is_empty()
            && tag
                .chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_');
        if !valid {
            return Err(Error::Validation(format!(
                "source tag {tag:?} must be non-empty lowercase ascii, digits, '-' or '_'"
            )));
        }
        Ok(SourceTag(tag))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: u64,
    pub text: String,
    pub source: SourceTag,
    #[serde(skip)]
    pub char_len: usize,
}

impl SentenceRecord {
    pub fn new(id: u64, text: String, source: SourceTag) -> Self {
        let char_len = text.chars().count();
        SentenceRecord {
            id,
            text,
            source,
            char_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub id: u64,
    pub text: String,
    pub mos: f64,
    pub rating_std: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_sentences: usize,
    pub distinct_sentences: usize,
    pub per_source_counts: BTreeMap<SourceTag, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputFormat {
    PlainLines,
    Jsonl,
}

/// One corpus file to ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub path: PathBuf,
    pub source: SourceTag,
    pub format: InputFormat,
}

#[derive(Deserialize)]
struct JsonlLine {
    text: Option<String>,
    source: Option<String>,
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| {
        let offset = e.utf8_error().valid_up_to();
        let line = e.as_bytes()[..offset].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid UTF-8 at byte {offset}"),
        }
    })
}

/// Read one file into normalized `(text, source)` pairs without assigning ids.
pub fn read_source(path: &Path, source: &SourceTag, format: InputFormat) -> Result<Vec<(String, SourceTag)>> {
    let content = read_utf8(path)?;
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        match format {
            InputFormat::PlainLines => {
                let text = normalize_sentence(line);
                if !text.is_empty() {
                    out.push((text, source.clone()));
                }
            }
            InputFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let parse_err = |message: String| Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message,
                };
                let rec: JsonlLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
                let raw = rec.text.ok_or_else(|| parse_err("missing required key \"text\"".into()))?;
                let tag = match rec.source {
                    Some(s) => SourceTag::new(s).map_err(|e| parse_err(e.to_string()))?,
                    None => source.clone(),
                };
                let text = normalize_sentence(&raw);
                if !text.is_empty() {
                    out.push((text, tag));
                }
            }
        }
    }
    Ok(out)
}

/// Append-only collection of normalized sentences with sequential ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SentenceStore {
    records: Vec<SentenceRecord>,
}

impl SentenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<SentenceRecord>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id) {
                return Err(Error::DuplicateId(r.id));
            }
        }
        Ok(SentenceStore { records })
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id + 1).max().unwrap_or(0)
    }

    /// Assign ids to already-normalized texts and append them. Returns the new records.
    pub fn commit(&mut self, texts: Vec<(String, SourceTag)>) -> &[SentenceRecord] {
        let start = self.records.len();
        let mut id = self.next_id();
        for (text, source) in texts {
            self.records.push(SentenceRecord::new(id, text, source));
            id += 1;
        }
        &self.records[start..]
    }

    /// Ingest a single file, continuing ids from the current maximum.
    pub fn ingest(&mut self, path: &Path, source: &SourceTag, format: InputFormat) -> Result<&[SentenceRecord]> {
        let texts = read_source(path, source, format)?;
        Ok(self.commit(texts))
    }

    /// Read all files concurrently, then commit them in the order given.
    pub fn ingest_all(&mut self, specs: &[SourceSpec]) -> Result<()> {
        let batches: Vec<Result<Vec<(String, SourceTag)>>> = specs
            .par_iter()
            .map(|s| read_source(&s.path, &s.source, s.format))
            .collect();
        for batch in batches {
            self.commit(batch?);
        }
        Ok(())
    }

    /// Drop later exact-text duplicates in place and return the counts.
    pub fn deduplicate(&mut self) -> CorpusStats {
        let (kept, stats) = deduplicate(std::mem::take(&mut self.records));
        self.records = kept;
        stats
    }

    pub fn text_index(&self) -> HashMap<&str, Vec<u64>> {
        let mut map: HashMap<&str, Vec<u64>> = HashMap::new();
        for r in &self.records {
            map.entry(r.text.as_str()).or_default().push(r.id);
        }
        map
    }

    pub fn get(&self, id: u64) -> Option<&SentenceRecord> {
        // ids are ascending in commit order, but a loaded store may be arbitrary
        match self.records.binary_search_by_key(&id, |r| r.id) {
            Ok(pos) => Some(&self.records[pos]),
            Err(_) => self.records.iter().find(|r| r.id == id),
        }
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Load a store previously written by [`SentenceStore::write_jsonl`], keeping its ids.
    pub fn load_jsonl(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Stored {
            id: u64,
            text: String,
            source: SourceTag,
        }
        let content = read_utf8(path)?;
        let mut records = Vec::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Stored = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(SentenceRecord::new(s.id, s.text, s.source));
        }
        SentenceStore::from_records(records)
    }
}

/// Keep the first occurrence of each exact normalized text, preserving order.
pub fn deduplicate(records: Vec<SentenceRecord>) -> (Vec<SentenceRecord>, CorpusStats) {
    let total_sentences = records.len();
    let mut per_source_counts: BTreeMap<SourceTag, usize> = BTreeMap::new();
    for r in &records {
        *per_source_counts.entry(r.source.clone()).or_insert(0) += 1;
    }
    let mut seen: HashSet<String> = HashSet::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    for r in records {
        if seen.insert(r.text.clone()) {
            kept.push(r);
        }
    }
    let stats = CorpusStats {
        total_sentences,
        distinct_sentences: kept.len(),
        per_source_counts,
    };
    (kept, stats)
}

/// Load a tab-separated labeled file with header `id, text, mos[, rating_std]`.
pub fn load_labeled(path: &Path, default_rating_std: f64) -> Result<Vec<LabeledSentence>> {
    let content = read_utf8(path)?;
    parse_labeled(&content, path, default_rating_std)
}

pub fn parse_labeled(content: &str, path: &Path, default_rating_std: f64) -> Result<Vec<LabeledSentence>> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Ok(Vec::new());
    };
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| columns.iter().position(|c| *c == name);
    let (Some(id_col), Some(text_col), Some(mos_col)) = (col("id"), col("text"), col("mos")) else {
        return Err(err(1, format!("header must name id, text and mos columns, got {columns:?}")));
    };
    let std_col = col("rating_std");

    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(err(row, format!("expected {} fields, found {}", columns.len(), fields.len())));
        }
        let id: u64 = fields[id_col]
            .trim()
            .parse()
            .map_err(|_| err(row, format!("id {:?} is not a non-negative integer", fields[id_col])))?;
        let mos: f64 = fields[mos_col]
            .trim()
            .parse()
            .map_err(|_| err(row, format!("mos {:?} is not a number", fields[mos_col])))?;
        if !(MOS_MIN..=MOS_MAX).contains(&mos) {
            return Err(Error::Validation(format!(
                "{}:{row}: mos {mos} outside [{MOS_MIN}, {MOS_MAX}]",
                path.display()
            )));
        }
        let rating_std = match std_col {
            Some(c) => fields[c]
                .trim()
                .parse::<f64>()
                .map_err(|_| err(row, format!("rating_std {:?} is not a number", fields[c])))?,
            None => default_rating_std,
        };
        if !(rating_std.is_finite() && rating_std >= 0.0) {
            return Err(Error::Validation(format!(
                "{}:{row}: rating_std {rating_std} must be finite and >= 0",
                path.display()
            )));
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        out.push(LabeledSentence {
            id,
            text: normalize_sentence(fields[text_col]),
            mos,
            rating_std,
        });
    }
    Ok(out)
}

/// Render labeled sentences back into the tab-separated format.
pub fn labeled_to_tsv(rows: &[LabeledSentence]) -> String {
    let mut out = String::from("id\ttext\tmos\trating_std\n");
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.id, r.text, r.mos, r.rating_std));
    }
    out
}
