//! Masked identifier prediction from local context counts.
//!
//! The context signature of a position is the `radius` tokens on each side,
//! with the masked identifier written as `<mask>` and every other
//! identifier abstracted to `<id>`. Training counts, for each identifier
//! occurrence, the identifier seen under its signature. Prediction looks up
//! the signature of the first sentinel and falls back to the global counts
//! when the signature was never seen.
//!
//! Trained on the snippets a classifier predicts correctly this is the
//! clean-identifier model; trained on everything it is the plain baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BackendError, Classifier, LabeledSnippet, MaskPredictor};
use crate::code::{is_legal_identifier, CodeSnippet, MaskedSnippet, TokenKind, TokenStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McipConfig {
    pub radius: usize,
    /// Weight of the global frequency when ranking names within a context.
    pub smoothing: f64,
}

impl Default for McipConfig {
    fn default() -> Self {
        McipConfig { radius: 3, smoothing: 0.5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McipModel {
    config: McipConfig,
    contexts: BTreeMap<String, BTreeMap<String, u64>>,
    global: BTreeMap<String, u64>,
    snippets: usize,
}

const SEP: char = '\u{1}';

fn signature(tokens: &TokenStream, center: usize, masked: &BTreeSet<usize>, radius: usize) -> String {
    let mut sig = String::new();
    let len = tokens.len() as isize;
    for offset in (-(radius as isize)..=radius as isize).filter(|o| *o != 0) {
        let pos = center as isize + offset;
        let piece = if pos < 0 {
            "<s>"
        } else if pos >= len {
            "</s>"
        } else if masked.contains(&(pos as usize)) {
            "<mask>"
        } else {
            let token = &tokens[pos as usize];
            if token.kind == TokenKind::Identifier {
                "<id>"
            } else {
                token.lexeme.as_str()
            }
        };
        sig.push_str(piece);
        sig.push(SEP);
    }
    sig
}

impl McipModel {
    pub fn new(config: McipConfig) -> Self {
        McipModel { config, ..McipModel::default() }
    }

    pub fn config(&self) -> McipConfig {
        self.config
    }

    /// Adds one count per identifier occurrence of `snippet`.
    pub fn observe(&mut self, snippet: &CodeSnippet) {
        let tokens = snippet.tokens();
        for entry in snippet.identifiers().entries() {
            if !is_legal_identifier(&entry.name, snippet.language()) {
                continue;
            }
            let positions: BTreeSet<usize> = entry.occurrences.iter().copied().collect();
            for &at in &entry.occurrences {
                let sig = signature(tokens, at, &positions, self.config.radius);
                *self.contexts.entry(sig).or_default().entry(entry.name.clone()).or_default() += 1;
                *self.global.entry(entry.name.clone()).or_default() += 1;
            }
        }
        self.snippets += 1;
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// Number of snippets that contributed counts.
    pub fn snippets(&self) -> usize {
        self.snippets
    }

    pub fn global_counts(&self) -> &BTreeMap<String, u64> {
        &self.global
    }

    pub fn context_count(&self, context: &str, name: &str) -> u64 {
        self.contexts.get(context).and_then(|c| c.get(name)).copied().unwrap_or(0)
    }

    /// Total number of (context, identifier) counts.
    pub fn total_counts(&self) -> u64 {
        self.contexts.values().flat_map(|c| c.values()).sum()
    }

    /// Signature of the first sentinel of `masked`.
    pub fn context_of(&self, masked: &MaskedSnippet) -> Option<String> {
        let positions: BTreeSet<usize> = masked.sentinel_positions().into_iter().collect();
        let first = *positions.iter().next()?;
        Some(signature(masked.masked().tokens(), first, &positions, self.config.radius))
    }

    fn best_global(&self) -> Option<&str> {
        let mut best: Option<(&str, u64)> = None;
        for (name, &count) in &self.global {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((name, count));
            }
        }
        best.map(|(n, _)| n)
    }

    /// Top-1 identifier for the masked position.
    pub fn predict(&self, masked: &MaskedSnippet) -> Result<String, BackendError> {
        let context =
            self.context_of(masked).ok_or_else(|| BackendError::Structure("masked snippet has no sentinel".into()))?;
        let total: u64 = self.global.values().sum();
        if let Some(counts) = self.contexts.get(&context) {
            let mut best: Option<(&str, f64)> = None;
            for (name, &count) in counts {
                let prior = self.global.get(name).copied().unwrap_or(0) as f64 / total as f64;
                let score = count as f64 + self.config.smoothing * prior;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((name, score));
                }
            }
            if let Some((name, _)) = best {
                return Ok(name.to_string());
            }
        }
        self.best_global().map(str::to_string).ok_or(BackendError::NoCandidate)
    }
}

impl MaskPredictor for McipModel {
    fn mask_fill(&self, masked: &MaskedSnippet) -> Result<String, BackendError> {
        self.predict(masked)
    }
}

/// A trained model plus which records fed it.
#[derive(Debug, Clone)]
pub struct McipTraining {
    pub model: McipModel,
    pub retained: Vec<String>,
    pub dropped: Vec<String>,
}

/// Trains only on records `classifier` predicts correctly.
pub fn train_mcip(
    corpus: &[LabeledSnippet],
    classifier: &dyn Classifier,
    config: McipConfig,
) -> Result<McipTraining, BackendError> {
    let mut model = McipModel::new(config);
    let mut retained = Vec::new();
    let mut dropped = Vec::new();
    for record in corpus {
        if classifier.classify(&record.snippet)?.label() == record.label {
            model.observe(&record.snippet);
            retained.push(record.id.clone());
        } else {
            dropped.push(record.id.clone());
        }
    }
    if retained.is_empty() {
        log::warn!("every training snippet is mispredicted; the clean model is empty");
    }
    Ok(McipTraining { model, retained, dropped })
}

/// Trains on every record, ignoring the classifier.
pub fn train_mip(corpus: &[LabeledSnippet], config: McipConfig) -> McipModel {
    let mut model = McipModel::new(config);
    for record in corpus {
        model.observe(&record.snippet);
    }
    model
}
