//! Deterministic synthetic German-like corpus and labeled sets whose scores
//! grow with sentence length: `mos = clamp(1 + 0.02·char_len + ε)`, `ε ~ N(0, σ)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_sentence, LabeledSentence, SourceTag};
use crate::error::{Error, Result};
use crate::scorer::clamp_score;

const FUNCTION_WORDS: &[&str] = &[
    "der", "die", "das", "und", "oder", "aber", "mit", "von", "zu", "im", "auf", "für", "nicht", "auch", "sich", "ein", "eine", "dem", "den", "nach",
    "bei", "aus", "wie", "noch", "nur", "schon", "sehr", "hier", "dort", "dann",
];

const SHORT_WORDS: &[&str] = &[
    "Haus", "Stadt", "Kind", "Zeit", "Tag", "Jahr", "Weg", "Frau", "Mann", "Hund", "Katze", "Buch", "Auto", "Geld", "Arbeit", "Schule", "Wetter",
    "geht", "kommt", "sagt", "macht", "sieht", "hat", "ist", "war", "gut", "neu", "alt", "groß", "klein", "schnell", "heute", "morgen", "gestern",
    "spielt", "liest", "fährt", "wohnt", "lernt", "kauft", "Regen", "Sonne", "Markt", "Brot", "Wasser", "Freund",
];

const LONG_WORDS: &[&str] = &[
    "Bundesregierung", "Gesetzesentwurf", "Verantwortung", "Wirtschaftspolitik", "Gesundheitssystem", "Rahmenbedingungen", "Verwaltungsgericht",
    "Infrastrukturprojekte", "Umweltverträglichkeit", "Klimaschutzmaßnahmen", "Bevölkerungsentwicklung", "Arbeitsmarktreform", "berücksichtigt",
    "verabschiedete", "grundsätzlich", "insbesondere", "wissenschaftlichen", "gesellschaftlichen", "Zusammenhang", "Entscheidungsträger",
    "Verhandlungen", "Digitalisierung", "Zuständigkeiten", "Voraussetzungen", "Haushaltsmittel", "Sachverständige", "Untersuchungsausschuss",
    "Finanzierungslücke", "beeinträchtigen", "nachvollziehbar",
];

/// One synthetic source: its tag and the word-count range of its sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSource {
    pub tag: String,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that a content word is drawn from the long-word list.
    pub long_word_rate: f64,
    /// Relative share of the corpus.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub corpus_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub noise_std: f64,
    /// Fraction of corpus lines that repeat an earlier line.
    pub duplicate_fraction: f64,
    pub sources: Vec<SynthSource>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let src = |tag: &str, min_words, max_words, long_word_rate, weight| SynthSource {
            tag: tag.into(),
            min_words,
            max_words,
            long_word_rate,
            weight,
        };
        SynthConfig {
            seed: 2022,
            corpus_size: 5000,
            train_size: 200,
            test_size: 60,
            noise_std: 0.3,
            duplicate_fraction: 0.03,
            sources: vec![
                src("news", 10, 28, 0.35, 0.35),
                src("wiki", 8, 36, 0.45, 0.25),
                src("simple", 4, 10, 0.05, 0.25),
                src("forum", 3, 18, 0.15, 0.15),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    /// Plain-text lines per source tag, in configuration order.
    pub corpora: Vec<(SourceTag, Vec<String>)>,
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

fn sentence(rng: &mut ChaCha8Rng, src: &SynthSource) -> String {
    let n = rng.gen_range(src.min_words..=src.max_words);
    let mut words: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        let w = if i % 3 == 1 {
            *FUNCTION_WORDS.choose(rng).unwrap()
        } else if rng.gen_bool(src.long_word_rate) {
            *LONG_WORDS.choose(rng).unwrap()
        } else {
            *SHORT_WORDS.choose(rng).unwrap()
        };
        let mut w = w.to_string();
        if i > 0 && i + 1 < n && rng.gen_bool(0.08) {
            w.push(',');
        }
        words.push(w);
    }
    if rng.gen_bool(0.1) {
        words.insert(rng.gen_range(0..=words.len()), rng.gen_range(1..=2030).to_string());
    }
    let mut s = words.join(" ");
    if let Some(first) = s.get(0..1) {
        let upper = first.to_uppercase();
        s.replace_range(0..1, &upper);
    }
    s.push('.');
    normalize_sentence(&s)
}

fn pick_source<'a>(rng: &mut ChaCha8Rng, sources: &'a [SynthSource]) -> &'a SynthSource {
    sources.choose_weighted(rng, |s| s.weight).expect("validated weights")
}

/// The noiseless score for a text.
pub fn true_score(text: &str) -> f64 {
    clamp_score(1.0 + 0.02 * text.chars().count() as f64)
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    if config.sources.is_empty() || config.sources.iter().any(|s| !(s.weight > 0.0) || s.min_words == 0 || s.min_words > s.max_words) {
        return Err(Error::InvalidArgument("every source needs a positive weight and 1 <= min_words <= max_words".into()));
    }
    if !(config.noise_std >= 0.0) || !(0.0..1.0).contains(&config.duplicate_fraction) {
        return Err(Error::InvalidArgument("noise_std must be >= 0 and duplicate_fraction in [0, 1)".into()));
    }
    let tags = config.sources.iter().map(|s| SourceTag::new(s.tag.clone())).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut corpora: Vec<Vec<String>> = vec![Vec::new(); config.sources.len()];
    let mut emitted: Vec<(usize, String)> = Vec::with_capacity(config.corpus_size);
    for _ in 0..config.corpus_size {
        if !emitted.is_empty() && rng.gen_bool(config.duplicate_fraction) {
            let (s, text) = emitted[rng.gen_range(0..emitted.len())].clone();
            corpora[s].push(text);
            continue;
        }
        let src = pick_source(&mut rng, &config.sources);
        let s = config.sources.iter().position(|x| std::ptr::eq(x, src)).unwrap();
        let text = sentence(&mut rng, src);
        corpora[s].push(text.clone());
        emitted.push((s, text));
    }

    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let label = |id: u64, rng: &mut ChaCha8Rng| {
        let src = pick_source(rng, &config.sources);
        let text = sentence(rng, src);
        let eps: f64 = if config.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
        let mos = (clamp_score(1.0 + 0.02 * text.chars().count() as f64 + eps) * 100.0).round() / 100.0;
        let rating_std = (rng.gen_range(0.3..0.8f64) * 100.0).round() / 100.0;
        LabeledSentence { id, text, mos, rating_std }
    };
    let train: Vec<LabeledSentence> = (0..config.train_size as u64).map(|i| label(i + 1, &mut rng)).collect();
    let test: Vec<LabeledSentence> = (0..config.test_size as u64).map(|i| label(10_000 + i + 1, &mut rng)).collect();

    Ok(SynthData {
        corpora: tags.into_iter().zip(corpora).collect(),
        train,
        test,
    })
}
