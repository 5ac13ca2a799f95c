//! Model contracts.
//!
//! A [`Classifier`] maps a snippet to a class probability vector and may
//! expose per-layer attention over the snippet's tokens. A [`MaskPredictor`]
//! fills a masked identifier. Both are object safe so the pipeline can mix
//! the built-in toy models with external processes speaking the
//! line-delimited protocol in [`protocol`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::code::{CodeSnippet, Language, MaskedSnippet, TokenStream, Vocabulary};

pub mod mcip;
pub mod protocol;
pub mod scripted;
pub mod toy;

pub use mcip::{train_mcip, train_mip, McipConfig, McipModel, McipTraining};
pub use toy::{train_toy, ToyClassifier, ToyConfig};

/// Tolerance on the sum of a probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend transport failure: {0}")]
    Transport(String),
    #[error("backend protocol violation: {0}")]
    Protocol(String),
    #[error("backend does not support {0}")]
    Unsupported(String),
    #[error("no candidate identifier available")]
    NoCandidate,
    #[error("invalid training input: {0}")]
    Validation(String),
    #[error("{0}")]
    Structure(String),
}

/// Whether a backend may be called from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Concurrency {
    ConcurrentSafe,
    SerializeRequired,
}

/// A class probability vector and its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    probabilities: Vec<f64>,
    label: usize,
}

impl Prediction {
    /// Validates `probabilities`: nonempty, each in [0, 1], summing to one.
    pub fn new(probabilities: Vec<f64>) -> Result<Self, BackendError> {
        if probabilities.is_empty() {
            return Err(BackendError::Protocol("empty probability vector".into()));
        }
        if let Some(bad) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(BackendError::Protocol(format!("probability {bad} outside [0, 1]")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(BackendError::Protocol(format!("probabilities sum to {sum}, not 1")));
        }
        let label = argmax(&probabilities);
        Ok(Prediction { probabilities, label })
    }

    pub fn uniform(classes: usize) -> Self {
        Prediction { probabilities: vec![1.0 / classes as f64; classes], label: 0 }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn num_classes(&self) -> usize {
        self.probabilities.len()
    }

    /// Probability assigned to `class`, zero when out of range.
    pub fn confidence(&self, class: usize) -> f64 {
        self.probabilities.get(class).copied().unwrap_or(0.0)
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention weights `[layer][token]` aligned to a snippet's token stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    weights: Vec<Vec<f64>>,
    /// Backend position -> token index; `None` for special positions.
    alignment: Vec<Option<usize>>,
}

impl AttentionMap {
    /// Weights already expressed over the `token_count` tokens of a stream.
    pub fn new(weights: Vec<Vec<f64>>, token_count: usize) -> Result<Self, BackendError> {
        for (j, layer) in weights.iter().enumerate() {
            if layer.len() != token_count {
                return Err(BackendError::Structure(format!(
                    "layer {j} has {} weights for {token_count} tokens",
                    layer.len()
                )));
            }
        }
        check_nonnegative(&weights)?;
        Ok(AttentionMap { weights, alignment: (0..token_count).map(Some).collect() })
    }

    /// Aligns weights over backend sub-tokens to `stream`.
    ///
    /// Each backend position maps to the stream token it overlaps most
    /// (earliest on ties). A token's weight is the max over the positions
    /// mapped to it; positions overlapping no token are dropped and tokens
    /// no position maps to get weight zero.
    pub fn from_subtokens(
        layers: Vec<Vec<f64>>,
        spans: &[Range<usize>],
        stream: &TokenStream,
    ) -> Result<Self, BackendError> {
        for (j, layer) in layers.iter().enumerate() {
            if layer.len() != spans.len() {
                return Err(BackendError::Structure(format!(
                    "layer {j} has {} weights for {} token spans",
                    layer.len(),
                    spans.len()
                )));
            }
        }
        check_nonnegative(&layers)?;
        let alignment: Vec<Option<usize>> = spans.iter().map(|s| best_overlap(s, stream)).collect();
        let weights = layers
            .iter()
            .map(|layer| {
                let mut aligned = vec![0.0; stream.len()];
                for (w, slot) in layer.iter().zip(&alignment) {
                    if let Some(i) = *slot {
                        aligned[i] = f64::max(aligned[i], *w);
                    }
                }
                aligned
            })
            .collect();
        Ok(AttentionMap { weights, alignment })
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn tokens(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn alignment(&self) -> &[Option<usize>] {
        &self.alignment
    }
}

fn check_nonnegative(weights: &[Vec<f64>]) -> Result<(), BackendError> {
    match weights.iter().flatten().find(|w| !(w.is_finite() && **w >= 0.0)) {
        Some(w) => Err(BackendError::Structure(format!("attention weight {w} is not >= 0"))),
        None => Ok(()),
    }
}

fn best_overlap(span: &Range<usize>, stream: &TokenStream) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, token) in stream.iter().enumerate() {
        if token.span.start >= span.end {
            break;
        }
        let overlap = span.end.min(token.span.end).saturating_sub(span.start.max(token.span.start));
        if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
            best = Some((i, overlap));
        }
    }
    best.map(|(i, _)| i)
}

/// The model under repair.
pub trait Classifier: Send + Sync {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError>;

    fn attention_weights(&self, _snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        Err(BackendError::Unsupported("attention".into()))
    }

    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }
}

/// Fills a masked identifier with a single name (greedy top-1).
pub trait MaskPredictor: Send + Sync {
    fn mask_fill(&self, masked: &MaskedSnippet) -> Result<String, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::ConcurrentSafe
    }
}

impl<T: Classifier + ?Sized> Classifier for &T {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError> {
        (**self).classify(snippet)
    }

    fn attention_weights(&self, snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        (**self).attention_weights(snippet)
    }

    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
}

/// A snippet with its ground-truth class.
#[derive(Debug, Clone)]
pub struct LabeledSnippet {
    pub id: String,
    pub snippet: CodeSnippet,
    pub label: usize,
}

/// Result of [`build_vocabulary`].
#[derive(Debug, Clone)]
pub struct VocabularyBuild {
    pub vocabulary: Vocabulary,
    pub skipped: usize,
}

/// Union of the renamable identifiers over a corpus of raw sources.
/// Sources that do not parse are skipped and counted.
pub fn build_vocabulary<'a>(
    sources: impl IntoIterator<Item = &'a str>,
    language: Language,
    provenance: &str,
) -> VocabularyBuild {
    let mut skipped = 0;
    let snippets: Vec<CodeSnippet> = sources
        .into_iter()
        .filter_map(|src| match CodeSnippet::parse(src, language) {
            Ok(s) => Some(s),
            Err(_) => {
                skipped += 1;
                None
            }
        })
        .collect();
    let vocabulary = Vocabulary::from_snippets(&snippets, provenance);
    if vocabulary.is_empty() {
        log::warn!("vocabulary built from `{provenance}` is empty");
    }
    VocabularyBuild { vocabulary, skipped }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_validation() {
        let p = Prediction::new(vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(p.label(), 1);
        assert!(matches!(Prediction::new(vec![0.4, 0.4]), Err(BackendError::Protocol(_))));
        assert!(matches!(Prediction::new(vec![1.2, -0.2]), Err(BackendError::Protocol(_))));
        assert!(matches!(Prediction::new(vec![]), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
        assert_eq!(Prediction::uniform(4).label(), 0);
    }

    #[test]
    fn attention_map_checks_dimensions() {
        assert!(AttentionMap::new(vec![vec![0.2, 0.8], vec![0.6, 0.4]], 2).is_ok());
        assert!(AttentionMap::new(vec![vec![0.2, 0.8], vec![0.6]], 2).is_err());
        assert!(AttentionMap::new(vec![vec![-0.1, 1.1]], 2).is_err());
    }

    #[test]
    fn subtoken_alignment_takes_max_and_drops_specials() {
        let s = CodeSnippet::python("total_count = 1").unwrap();
        // <cls>, "total", "_count", " =", " 1", <sep>
        let spans = vec![0..0, 0..5, 5..11, 11..13, 13..15, 15..15];
        let layers = vec![vec![0.5, 0.1, 0.2, 0.05, 0.1, 0.05]];
        let map = AttentionMap::from_subtokens(layers, &spans, s.tokens()).unwrap();
        assert_eq!(map.alignment(), &[None, Some(0), Some(0), Some(1), Some(2), None]);
        assert_eq!(map.weights(), &[vec![0.2, 0.05, 0.1]]);
    }

    #[test]
    fn vocabulary_from_sources() {
        let build = build_vocabulary(["a=1", "b=a", "a = 2"], Language::Python, "t");
        assert_eq!(build.vocabulary.iter().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(build.skipped, 0);

        let literals = build_vocabulary(["1 + 2", "'x'"], Language::Python, "t");
        assert!(literals.vocabulary.is_empty());

        let broken = build_vocabulary(["a = (", "b = 1"], Language::Python, "t");
        assert_eq!(broken.skipped, 1);
        assert_eq!(broken.vocabulary.len(), 1);
    }
}
