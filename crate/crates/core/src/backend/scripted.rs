//! Backends defined by closures, for fixtures and tests.

use std::sync::atomic::{AtomicUsize, Ordering};

use super::{AttentionMap, BackendError, Classifier, MaskPredictor, Prediction};
use crate::code::{CodeSnippet, MaskedSnippet};

type ProbFn = dyn Fn(&CodeSnippet) -> Vec<f64> + Send + Sync;
type AttnFn = dyn Fn(&CodeSnippet) -> Vec<Vec<f64>> + Send + Sync;
type FillFn = dyn Fn(&MaskedSnippet) -> Option<String> + Send + Sync;

/// Classifier whose output is a pure function of the snippet.
pub struct ScriptedClassifier {
    probabilities: Box<ProbFn>,
    attention: Option<Box<AttnFn>>,
    classify_calls: AtomicUsize,
}

impl ScriptedClassifier {
    pub fn new(probabilities: impl Fn(&CodeSnippet) -> Vec<f64> + Send + Sync + 'static) -> Self {
        ScriptedClassifier {
            probabilities: Box::new(probabilities),
            attention: None,
            classify_calls: AtomicUsize::new(0),
        }
    }

    /// Adds attention; the closure returns `[layer][token]` weights.
    pub fn with_attention(mut self, attention: impl Fn(&CodeSnippet) -> Vec<Vec<f64>> + Send + Sync + 'static) -> Self {
        self.attention = Some(Box::new(attention));
        self
    }

    pub fn classify_calls(&self) -> usize {
        self.classify_calls.load(Ordering::SeqCst)
    }
}

impl Classifier for ScriptedClassifier {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError> {
        self.classify_calls.fetch_add(1, Ordering::SeqCst);
        Prediction::new((self.probabilities)(snippet))
    }

    fn attention_weights(&self, snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        match &self.attention {
            Some(f) => AttentionMap::new(f(snippet), snippet.tokens().len()),
            None => Err(BackendError::Unsupported("attention".into())),
        }
    }
}

/// Mask predictor backed by a closure; `None` means no candidate.
pub struct ScriptedFiller {
    fill: Box<FillFn>,
}

impl ScriptedFiller {
    pub fn new(fill: impl Fn(&MaskedSnippet) -> Option<String> + Send + Sync + 'static) -> Self {
        ScriptedFiller { fill: Box::new(fill) }
    }
}

impl MaskPredictor for ScriptedFiller {
    fn mask_fill(&self, masked: &MaskedSnippet) -> Result<String, BackendError> {
        (self.fill)(masked).ok_or(BackendError::NoCandidate)
    }
}
