//! Lexicon and fixture data backing the offline providers.
//!
//! File formats:
//! - translation lexicon `<source>-<target>.tsv`: `source phrase<TAB>target phrase`
//! - emotion lexicon: `token<TAB>emotion<TAB>weight`, where emotion is one of
//!   `joy anger sadness fear disgust sentiment`
//! - emotion fixtures: JSON object mapping exact text to a score object
//!
//! Blank lines and lines starting with `#` are ignored in the TSV formats.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{EmotionLabel, EmotionScores, ProviderError};
use crate::language::LanguageTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Piece<'a> {
    Word(&'a str),
    Sep(&'a str),
}

/// Splits text into words and the separators between them. A word is a run of
/// alphanumerics, optionally joined by apostrophes (`don't`, `l'eau`).
pub(crate) fn pieces(text: &str) -> Vec<Piece<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let is_apostrophe = |c: char| c == '\'' || c == '\u{2019}';
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = chars[i].0;
        let word = chars[i].1.is_alphanumeric();
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            let continues = if word {
                c.is_alphanumeric()
                    || (is_apostrophe(c) && chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric()))
            } else {
                !c.is_alphanumeric()
            };
            if !continues {
                break;
            }
            j += 1;
        }
        let end = chars.get(j).map_or(text.len(), |c| c.0);
        let s = &text[start..end];
        out.push(if word { Piece::Word(s) } else { Piece::Sep(s) });
        i = j;
    }
    out
}

pub(crate) fn normalize_word(word: &str) -> String {
    word.to_lowercase().replace('\u{2019}', "'")
}

pub(crate) fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    pieces(text).into_iter().filter_map(|p| match p {
        Piece::Word(w) => Some(normalize_word(w)),
        Piece::Sep(_) => None,
    })
}

fn phrase_key(phrase: &str) -> String {
    words(phrase).collect::<Vec<_>>().join(" ")
}

fn tsv_lines(contents: &str) -> impl Iterator<Item = (usize, &str)> {
    contents
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

#[derive(Debug, Clone, Default)]
struct PhraseTable {
    entries: HashMap<String, String>,
    longest: usize,
}

impl PhraseTable {
    fn insert(&mut self, source: &str, target: &str, overwrite: bool) {
        let key = phrase_key(source);
        if key.is_empty() {
            return;
        }
        self.longest = self.longest.max(key.split(' ').count());
        if overwrite {
            self.entries.insert(key, target.to_string());
        } else {
            self.entries.entry(key).or_insert_with(|| target.to_string());
        }
    }

    /// Greedy longest-match phrase substitution. Unknown words and all
    /// separators pass through unchanged.
    fn apply(&self, text: &str) -> String {
        let parts = pieces(text);
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        'outer: while i < parts.len() {
            let Piece::Word(first) = parts[i] else {
                if let Piece::Sep(s) = parts[i] {
                    out.push_str(s);
                }
                i += 1;
                continue;
            };
            // Candidate spans: words joined only by whitespace or hyphens.
            let mut span = vec![(i, normalize_word(first))];
            let mut k = i;
            while span.len() < self.longest {
                match (parts.get(k + 1), parts.get(k + 2)) {
                    (Some(Piece::Sep(s)), Some(Piece::Word(w))) if s.chars().all(|c| c.is_whitespace() || c == '-') => {
                        span.push((k + 2, normalize_word(w)));
                        k += 2;
                    }
                    _ => break,
                }
            }
            for len in (1..=span.len()).rev() {
                let key = span[..len].iter().map(|(_, w)| w.as_str()).collect::<Vec<_>>().join(" ");
                if let Some(target) = self.entries.get(&key) {
                    out.push_str(target);
                    i = span[len - 1].0 + 1;
                    continue 'outer;
                }
            }
            out.push_str(first);
            i += 1;
        }
        out
    }
}

/// Bilingual phrase tables keyed by language pair. A pair without its own
/// table falls back to the inverse of the opposite pair.
#[derive(Debug, Clone, Default)]
pub struct TranslationLexicon {
    direct: HashMap<(LanguageTag, LanguageTag), PhraseTable>,
    inverse: HashMap<(LanguageTag, LanguageTag), PhraseTable>,
}

impl TranslationLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: &LanguageTag, target: &LanguageTag, from: &str, to: &str) {
        self.direct
            .entry((source.clone(), target.clone()))
            .or_default()
            .insert(from, to, true);
        self.inverse
            .entry((target.clone(), source.clone()))
            .or_default()
            .insert(to, from, false);
    }

    pub fn add_tsv(&mut self, source: &LanguageTag, target: &LanguageTag, contents: &str) -> Result<(), ProviderError> {
        for (n, line) in tsv_lines(contents) {
            let (from, to) = line.split_once('\t').ok_or_else(|| {
                ProviderError::Config(format!("lexicon {source}-{target} line {n}: expected source<TAB>target"))
            })?;
            self.insert(source, target, from.trim(), to.trim());
        }
        Ok(())
    }

    /// Loads every `<source>-<target>.tsv` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, ProviderError> {
        let mut lex = TranslationLexicon::new();
        let entries = fs::read_dir(dir)
            .map_err(|e| ProviderError::Config(format!("reading {}: {e}", dir.display())))?;
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("tsv") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some((s, t)) = stem.split_once('-') else {
                return Err(ProviderError::Config(format!(
                    "lexicon file {} is not named <source>-<target>.tsv",
                    path.display()
                )));
            };
            let (s, t) = (LanguageTag::parse(s)?, LanguageTag::parse(t)?);
            let contents = fs::read_to_string(&path)
                .map_err(|e| ProviderError::Config(format!("reading {}: {e}", path.display())))?;
            lex.add_tsv(&s, &t, &contents)?;
        }
        Ok(lex)
    }

    pub fn translate(&self, text: &str, source: &LanguageTag, target: &LanguageTag) -> String {
        if source == target {
            return text.to_string();
        }
        let key = (source.clone(), target.clone());
        match self.direct.get(&key).or_else(|| self.inverse.get(&key)) {
            Some(table) => table.apply(text),
            None => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    Emotion(EmotionLabel),
    Sentiment,
}

/// Keyword weights per emotion.
#[derive(Debug, Clone, Default)]
pub struct EmotionLexicon {
    weights: HashMap<String, Vec<(Axis, f64)>>,
}

impl EmotionLexicon {
    pub fn parse(contents: &str) -> Result<Self, ProviderError> {
        let mut lex = EmotionLexicon::default();
        for (n, line) in tsv_lines(contents) {
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let [token, emotion, weight] = cols[..] else {
                return Err(ProviderError::Config(format!(
                    "emotion lexicon line {n}: expected token<TAB>emotion<TAB>weight"
                )));
            };
            let weight: f64 = weight
                .parse()
                .map_err(|_| ProviderError::Config(format!("emotion lexicon line {n}: bad weight {weight:?}")))?;
            let axis = if emotion.eq_ignore_ascii_case("sentiment") {
                Axis::Sentiment
            } else {
                let label = EmotionLabel::from_name(emotion).ok_or_else(|| {
                    ProviderError::Config(format!("emotion lexicon line {n}: unknown emotion {emotion:?}"))
                })?;
                if !(weight >= 0.0 && weight.is_finite()) {
                    return Err(ProviderError::Config(format!(
                        "emotion lexicon line {n}: emotion weights must be non-negative"
                    )));
                }
                Axis::Emotion(label)
            };
            if !weight.is_finite() {
                return Err(ProviderError::Config(format!("emotion lexicon line {n}: bad weight")));
            }
            lex.weights.entry(normalize_word(token)).or_default().push((axis, weight));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let contents = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&contents)
    }

    /// Sums keyword weights; if the five emotion totals exceed 1 they are
    /// scaled to sum to 1. Sentiment is clamped to `[-1, 1]`.
    pub fn score(&self, text: &str) -> EmotionScores {
        let mut totals = [0.0f64; 5];
        let mut sentiment = 0.0;
        for word in words(text) {
            for (axis, w) in self.weights.get(&word).into_iter().flatten() {
                match axis {
                    Axis::Emotion(label) => totals[*label as usize] += w,
                    Axis::Sentiment => sentiment += w,
                }
            }
        }
        let sum: f64 = totals.iter().sum();
        if sum > 1.0 {
            totals.iter_mut().for_each(|t| *t /= sum);
        }
        EmotionScores {
            joy: totals[0],
            anger: totals[1],
            sadness: totals[2],
            fear: totals[3],
            disgust: totals[4],
            sentiment: sentiment.clamp(-1.0, 1.0),
        }
    }
}

/// Fixed score vectors for exact texts.
#[derive(Debug, Clone, Default)]
pub struct EmotionFixtures {
    by_text: BTreeMap<String, EmotionScores>,
}

impl EmotionFixtures {
    pub fn parse(json: &str) -> Result<Self, ProviderError> {
        let by_text: BTreeMap<String, EmotionScores> =
            serde_json::from_str(json).map_err(|e| ProviderError::Config(format!("emotion fixtures: {e}")))?;
        for (text, scores) in &by_text {
            scores
                .validate()
                .map_err(|e| ProviderError::Config(format!("fixture {text:?}: {e}")))?;
        }
        Ok(EmotionFixtures { by_text })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let contents = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading {}: {e}", path.display())))?;
        Self::parse(&contents)
    }

    pub fn insert(&mut self, text: impl Into<String>, scores: EmotionScores) {
        self.by_text.insert(text.into(), scores);
    }

    pub fn get(&self, text: &str) -> Option<EmotionScores> {
        self.by_text.get(text.trim()).copied()
    }

    pub fn len(&self) -> usize {
        self.by_text.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_text.is_empty()
    }
}
