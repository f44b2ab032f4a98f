//! Deterministic sentence features: a feature-hashed character n-gram block
//! followed by a small block of z-scored surface statistics.
//!
//! The n-gram block hashes every character n-gram of `" " + text + " "` with
//! 64-bit FNV-1a. The bucket is `hash % hashed_dim` and the sign is taken from
//! the top bit of the hash (set means negative). The block is L2-normalized.
//! Surface features are z-scored with [`FeatureStats`] and divided by
//! `sqrt(surface_dim)` so their block has roughly unit norm as well.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::SentenceRecord;
use crate::error::{Error, Result};
use crate::matrix::{FeatureMatrix, SparseVector};
use rayon::prelude::*;

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Floor applied to fitted standard deviations.
pub const STD_FLOOR: f64 = 1e-9;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET_BASIS;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hash identifying a feature configuration. Rendered as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fingerprint(pub u64);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for Fingerprint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 {
            return Err(Error::Validation(format!("fingerprint {s:?} must be 16 hex digits")));
        }
        u64::from_str_radix(s, 16)
            .map(Fingerprint)
            .map_err(|_| Error::Validation(format!("fingerprint {s:?} is not hex")))
    }
}

impl Serialize for Fingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn ensure_fingerprint(expected: Fingerprint, got: Fingerprint) -> Result<()> {
    if expected != got {
        return Err(Error::FingerprintMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceFeature {
    CharCount,
    TokenCount,
    MeanTokenLength,
    CommaCount,
    DigitRatio,
    TypeTokenRatio,
}

impl SurfaceFeature {
    pub const ALL: [SurfaceFeature; 6] = [
        SurfaceFeature::CharCount,
        SurfaceFeature::TokenCount,
        SurfaceFeature::MeanTokenLength,
        SurfaceFeature::CommaCount,
        SurfaceFeature::DigitRatio,
        SurfaceFeature::TypeTokenRatio,
    ];

    fn name(self) -> &'static str {
        match self {
            SurfaceFeature::CharCount => "char_count",
            SurfaceFeature::TokenCount => "token_count",
            SurfaceFeature::MeanTokenLength => "mean_token_length",
            SurfaceFeature::CommaCount => "comma_count",
            SurfaceFeature::DigitRatio => "digit_ratio",
            SurfaceFeature::TypeTokenRatio => "type_token_ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub hashed_dim: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    /// Sentences are truncated to this many whitespace tokens before featurization.
    pub max_tokens: usize,
    pub surface: Vec<SurfaceFeature>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            hashed_dim: 2048,
            ngram_min: 3,
            ngram_max: 5,
            max_tokens: 128,
            surface: SurfaceFeature::ALL.to_vec(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hashed_dim == 0 || self.hashed_dim > u32::MAX as usize / 2 {
            return Err(Error::Validation(format!("hashed_dim {} out of range", self.hashed_dim)));
        }
        if self.ngram_min == 0 || self.ngram_min > self.ngram_max {
            return Err(Error::Validation(format!(
                "n-gram range {}..={} is empty",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Validation("max_tokens must be positive".into()));
        }
        let distinct: HashSet<_> = self.surface.iter().collect();
        if distinct.len() != self.surface.len() {
            return Err(Error::Validation("surface feature list has duplicates".into()));
        }
        Ok(())
    }

    pub fn surface_dim(&self) -> usize {
        self.surface.len()
    }

    pub fn dim(&self) -> usize {
        self.hashed_dim + self.surface_dim()
    }

    pub fn fingerprint(&self) -> Fingerprint {
        let surface: Vec<&str> = self.surface.iter().map(|f| f.name()).collect();
        let canonical = format!(
            "plexity-features/v1;hashed_dim={};ngram={}..={};max_tokens={};surface={}",
            self.hashed_dim,
            self.ngram_min,
            self.ngram_max,
            self.max_tokens,
            surface.join(",")
        );
        Fingerprint(fnv1a64(canonical.as_bytes()))
    }

    /// Keep at most `max_tokens` whitespace tokens.
    pub fn truncate<'a>(&self, text: &'a str) -> std::borrow::Cow<'a, str> {
        match text.split_whitespace().nth(self.max_tokens) {
            None => std::borrow::Cow::Borrowed(text),
            Some(_) => {
                let kept: Vec<&str> = text.split_whitespace().take(self.max_tokens).collect();
                std::borrow::Cow::Owned(kept.join(" "))
            }
        }
    }

    pub fn raw_surface(&self, text: &str) -> Vec<f64> {
        let text = self.truncate(text);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let chars = text.chars().count();
        self.surface
            .iter()
            .map(|f| match f {
                SurfaceFeature::CharCount => chars as f64,
                SurfaceFeature::TokenCount => tokens.len() as f64,
                SurfaceFeature::MeanTokenLength => {
                    if tokens.is_empty() {
                        0.0
                    } else {
                        tokens.iter().map(|t| t.chars().count()).sum::<usize>() as f64 / tokens.len() as f64
                    }
                }
                SurfaceFeature::CommaCount => text.chars().filter(|&c| c == ',').count() as f64,
                SurfaceFeature::DigitRatio => {
                    if chars == 0 {
                        0.0
                    } else {
                        text.chars().filter(|c| c.is_numeric()).count() as f64 / chars as f64
                    }
                }
                SurfaceFeature::TypeTokenRatio => {
                    if tokens.is_empty() {
                        0.0
                    } else {
                        tokens.iter().collect::<HashSet<_>>().len() as f64 / tokens.len() as f64
                    }
                }
            })
            .collect()
    }

    /// L2-normalized hashed n-gram block as `(bucket, value)` pairs in ascending bucket order.
    pub fn hashed_block(&self, text: &str) -> Vec<(u32, f64)> {
        let text = self.truncate(text);
        if text.is_empty() {
            return Vec::new();
        }
        let padded: Vec<char> = std::iter::once(' ').chain(text.chars()).chain(std::iter::once(' ')).collect();
        let mut buckets: BTreeMap<u32, f64> = BTreeMap::new();
        let mut buf = String::new();
        for n in self.ngram_min..=self.ngram_max {
            if n > padded.len() {
                break;
            }
            for window in padded.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = fnv1a64(buf.as_bytes());
                let bucket = (h % self.hashed_dim as u64) as u32;
                let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
                *buckets.entry(bucket).or_insert(0.0) += sign;
            }
        }
        let norm = buckets.values().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Vec::new();
        }
        buckets.into_iter().filter(|(_, v)| *v != 0.0).map(|(k, v)| (k, v / norm)).collect()
    }
}

/// Per-surface-feature mean and standard deviation fitted on a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub fingerprint: Fingerprint,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Fit surface statistics with a single-pass (Welford) reduction in corpus order.
pub fn fit_feature_stats(corpus: &[SentenceRecord], config: &FeatureConfig) -> Result<FeatureStats> {
    fit_feature_stats_texts(corpus.iter().map(|r| r.text.as_str()), config)
}

pub fn fit_feature_stats_texts<'a>(texts: impl IntoIterator<Item = &'a str>, config: &FeatureConfig) -> Result<FeatureStats> {
    config.validate()?;
    let d = config.surface_dim();
    let mut count = 0usize;
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for text in texts {
        count += 1;
        let x = config.raw_surface(text);
        for j in 0..d {
            let delta = x[j] - mean[j];
            mean[j] += delta / count as f64;
            m2[j] += delta * (x[j] - mean[j]);
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("cannot fit feature statistics on an empty corpus".into()));
    }
    let stds = m2.iter().map(|&s| (s / count as f64).max(0.0).sqrt().max(STD_FLOOR)).collect();
    Ok(FeatureStats {
        fingerprint: config.fingerprint(),
        means: mean,
        stds,
    })
}

/// Dense feature vector of dimension `hashed_dim + surface_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A feature configuration paired with statistics fitted for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    config: FeatureConfig,
    stats: FeatureStats,
}

impl Featurizer {
    pub fn new(config: FeatureConfig, stats: FeatureStats) -> Result<Self> {
        config.validate()?;
        ensure_fingerprint(config.fingerprint(), stats.fingerprint)?;
        let d = config.surface_dim();
        if stats.means.len() != d || stats.stds.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: stats.means.len().min(stats.stds.len()),
            });
        }
        if stats.stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Validation("feature stds must be finite and positive".into()));
        }
        Ok(Featurizer { config, stats })
    }

    pub fn fit(corpus: &[SentenceRecord], config: FeatureConfig) -> Result<Self> {
        let stats = fit_feature_stats(corpus, &config)?;
        Featurizer::new(config, stats)
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn stats(&self) -> &FeatureStats {
        &self.stats
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.stats.fingerprint
    }

    pub fn dim(&self) -> usize {
        self.config.dim()
    }

    pub fn embed_sparse(&self, text: &str) -> SparseVector {
        let hashed = self.config.hashed_block(text);
        let raw = self.config.raw_surface(text);
        let scale = (self.config.surface_dim() as f64).sqrt();
        let mut out = SparseVector {
            dim: self.dim(),
            indices: Vec::with_capacity(hashed.len() + raw.len()),
            values: Vec::with_capacity(hashed.len() + raw.len()),
        };
        for (i, v) in hashed {
            out.indices.push(i);
            out.values.push(v);
        }
        for (j, x) in raw.iter().enumerate() {
            let z = (x - self.stats.means[j]) / self.stats.stds[j] / scale;
            if z != 0.0 {
                out.indices.push((self.config.hashed_dim + j) as u32);
                out.values.push(z);
            }
        }
        out
    }

    /// Embed many texts (in parallel) into one matrix, rows in input order.
    pub fn embed_matrix<S: AsRef<str> + Sync>(&self, texts: &[S]) -> FeatureMatrix {
        let rows: Vec<SparseVector> = texts.par_iter().map(|t| self.embed_sparse(t.as_ref())).collect();
        FeatureMatrix::from_sparse(rows, self.dim(), self.fingerprint()).expect("rows share the featurizer dimension")
    }

    pub fn embed(&self, text: &str) -> FeatureVector {
        FeatureVector {
            values: self.embed_sparse(text).to_dense(),
        }
    }
}

/// Embed one sentence, checking that `stats` were fitted for `config`.
pub fn embed(text: &str, config: &FeatureConfig, stats: &FeatureStats) -> Result<FeatureVector> {
    Ok(Featurizer::new(config.clone(), stats.clone())?.embed(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceTag;

    fn rec(i: u64, t: &str) -> SentenceRecord {
        SentenceRecord::new(i, t.into(), SourceTag::new("news").unwrap())
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let mut dot = 0.0;
        let mut na = 0.0;
        let mut nb = 0.0;
        for i in 0..a.len() {
            dot += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        dot / (na.sqrt() * nb.sqrt())
    }

    fn small_featurizer() -> Featurizer {
        let corpus = vec![
            rec(0, "Der Hund läuft."),
            rec(1, "Die Katze schläft auf dem Sofa, und der Hund bellt laut."),
            rec(2, "Im Jahr 1990 wurde die Einheit vollzogen."),
        ];
        Featurizer::fit(&corpus, FeatureConfig::default()).unwrap()
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn empty_text_has_zero_hashed_block() {
        let f = small_featurizer();
        let v = f.embed("");
        assert!(v.values[..2048].iter().all(|&x| x == 0.0));
        let stats = f.stats();
        for j in 0..6 {
            let expected = (0.0 - stats.means[j]) / stats.stds[j] / 6f64.sqrt();
            assert_eq!(v.values[2048 + j], expected);
        }
    }

    #[test]
    fn hashed_block_is_unit_norm() {
        let f = small_featurizer();
        for t in ["a", "ab", "Der Hund läuft.", &"sehr ".repeat(400)] {
            let v = f.embed(t);
            let n: f64 = v.values[..2048].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12, "{t:?} -> {n}");
        }
    }

    #[test]
    fn self_cosine_is_one() {
        let f = small_featurizer();
        let a = f.embed("Die Katze schläft.");
        let b = f.embed("Die Katze schläft.");
        assert_eq!(a, b);
        assert!((cosine(&a.values, &b.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_of_identical_sentences_hit_floor() {
        let corpus = vec![rec(0, "gleich"), rec(1, "gleich"), rec(2, "gleich")];
        let stats = fit_feature_stats(&corpus, &FeatureConfig::default()).unwrap();
        assert!(stats.stds.iter().all(|&s| s == STD_FLOOR));
    }

    #[test]
    fn char_count_mean() {
        let corpus = vec![rec(0, &"a".repeat(10)), rec(1, &"b".repeat(30))];
        let stats = fit_feature_stats(&corpus, &FeatureConfig::default()).unwrap();
        assert_eq!(stats.means[0], 20.0);
        assert_eq!(stats.stds[0], 10.0);
    }

    #[test]
    fn empty_corpus_is_error() {
        assert!(matches!(fit_feature_stats(&[], &FeatureConfig::default()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn fingerprint_mismatch_detected() {
        let f = small_featurizer();
        let other = FeatureConfig {
            hashed_dim: 1024,
            ..FeatureConfig::default()
        };
        assert!(matches!(
            embed("x", &other, f.stats()),
            Err(Error::FingerprintMismatch { .. })
        ));
        let other = FeatureConfig {
            ngram_max: 4,
            ..FeatureConfig::default()
        };
        assert_ne!(other.fingerprint(), FeatureConfig::default().fingerprint());
        assert!(embed("x", &FeatureConfig::default(), f.stats()).is_ok());
    }

    #[test]
    fn fingerprint_text_round_trip() {
        let fp = FeatureConfig::default().fingerprint();
        assert_eq!(fp.to_string().parse::<Fingerprint>().unwrap(), fp);
        assert!("xyz".parse::<Fingerprint>().is_err());
    }

    #[test]
    fn truncation_to_max_tokens() {
        let cfg = FeatureConfig {
            max_tokens: 3,
            ..FeatureConfig::default()
        };
        assert_eq!(cfg.truncate("a b c d e"), "a b c");
        assert_eq!(cfg.truncate("a b"), "a b");
        assert_eq!(cfg.raw_surface("a b c d e")[1], 3.0);
    }

    #[test]
    fn surface_values() {
        let cfg = FeatureConfig::default();
        let s = cfg.raw_surface("Im Jahr 1990, im Jahr");
        assert_eq!(s[0], 21.0);
        assert_eq!(s[1], 5.0);
        assert_eq!(s[2], 17.0 / 5.0);
        assert_eq!(s[3], 1.0);
        assert_eq!(s[4], 4.0 / 21.0);
        assert_eq!(s[5], 4.0 / 5.0);
        assert_eq!(cfg.raw_surface(""), vec![0.0; 6]);
    }
}
