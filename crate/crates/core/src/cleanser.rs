//! Greedy noise cleansing.
//!
//! Walks the ranked identifiers once. Each identifier is masked and a
//! replacement is proposed; a replacement that flips the predicted label
//! ends the loop, one that lowers the confidence of the original label is
//! kept, and anything else is thrown away. The ranking is never recomputed,
//! but later masks apply to the snippet as modified by earlier accepted
//! replacements.

use std::fmt;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Classifier, MaskPredictor, Prediction};
use crate::code::{mask_identifier, rename_identifier, CodeSnippet, MaskedSnippet, RenameError, Vocabulary};
use crate::localizer::RankedNoiseList;

/// Where replacement names come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Context model trained on correctly predicted code.
    Mcip,
    /// Context model trained on all code.
    Mip,
    /// Uniform draw from the vocabulary.
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Mcip => "mcip",
            Strategy::Mip => "mip",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mcip" => Ok(Strategy::Mcip),
            "mip" => Ok(Strategy::Mip),
            "random" => Ok(Strategy::Random),
            other => Err(format!("unknown cleansing strategy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanseConfig {
    pub strategy: Strategy,
    pub seed: u64,
    /// Cap on visited identifiers; `None` visits the whole ranking.
    pub max_iterations: Option<usize>,
}

impl Default for CleanseConfig {
    fn default() -> Self {
        CleanseConfig { strategy: Strategy::Mcip, seed: 0, max_iterations: None }
    }
}

/// Replacement sources available to the cleanser.
#[derive(Clone, Copy)]
pub struct ReplacementModels<'a> {
    pub mcip: Option<&'a dyn MaskPredictor>,
    pub mip: Option<&'a dyn MaskPredictor>,
    pub vocabulary: &'a Vocabulary,
}

/// Proposes one replacement for the masked identifier.
pub fn propose_replacement(
    masked: &MaskedSnippet,
    config: &CleanseConfig,
    models: &ReplacementModels<'_>,
    rng: &mut impl Rng,
) -> Result<String, BackendError> {
    let model = match config.strategy {
        Strategy::Mcip => models.mcip,
        Strategy::Mip => models.mip,
        Strategy::Random => {
            let size = models.vocabulary.len();
            if size == 0 {
                return Err(BackendError::NoCandidate);
            }
            let pick = rng.gen_range(0..size);
            return Ok(models.vocabulary.iter().nth(pick).expect("index in range").to_string());
        }
    };
    let model = model
        .ok_or_else(|| BackendError::Unsupported(format!("no mask predictor for strategy {}", config.strategy)))?;
    model.mask_fill(masked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Flipped,
    KeptLowerConfidence,
    DiscardedCollision,
    DiscardedNoGain,
    NoCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub identifier: String,
    pub proposal: Option<String>,
    pub action: Action,
    /// Confidence of the original label before the step.
    pub confidence_before: f64,
    /// Confidence of the original label on the renamed snippet, if classified.
    pub confidence_after: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub original_label: usize,
    pub final_label: usize,
    pub denoised: CodeSnippet,
    pub trace: Vec<TraceStep>,
    pub elapsed: Duration,
}

impl DenoiseOutcome {
    pub fn changed_identifiers(&self) -> usize {
        self.trace.iter().filter(|s| matches!(s.action, Action::Flipped | Action::KeptLowerConfidence)).count()
    }

    pub fn flipped(&self) -> bool {
        self.final_label != self.original_label
    }
}

/// A backend failure part way through; the steps taken so far are kept.
#[derive(Debug, thiserror::Error)]
#[error("cleansing aborted after {} steps: {source}", partial.trace.len())]
pub struct CleanseError {
    #[source]
    pub source: BackendError,
    pub partial: DenoiseOutcome,
}

/// Runs the cleansing loop on a flagged snippet.
pub fn cleanse(
    snippet: &CodeSnippet,
    original: &Prediction,
    ranked: &RankedNoiseList,
    classifier: &dyn Classifier,
    models: &ReplacementModels<'_>,
    config: &CleanseConfig,
) -> Result<DenoiseOutcome, CleanseError> {
    let started = Instant::now();
    let label = original.label();
    let mut prob = original.confidence(label);
    let mut current = snippet.clone();
    let mut trace = Vec::new();
    let mut rng = crate::seed::rng(config.seed);
    let limit = config.max_iterations.unwrap_or(ranked.len()).min(ranked.len());

    macro_rules! abort {
        ($err:expr) => {
            return Err(CleanseError {
                source: $err,
                partial: DenoiseOutcome {
                    original_label: label,
                    final_label: label,
                    denoised: current,
                    trace,
                    elapsed: started.elapsed(),
                },
            })
        };
    }

    for identifier in ranked.names().take(limit) {
        let mut step = TraceStep {
            identifier: identifier.to_string(),
            proposal: None,
            action: Action::NoCandidate,
            confidence_before: prob,
            confidence_after: None,
        };
        let masked = match mask_identifier(&current, identifier) {
            Ok(m) => m,
            Err(err) => abort!(BackendError::Structure(format!("cannot mask `{identifier}`: {err}"))),
        };
        let proposal = match propose_replacement(&masked, config, models, &mut rng) {
            Ok(p) => p,
            Err(BackendError::NoCandidate) => {
                trace.push(step);
                continue;
            }
            Err(err) => abort!(err),
        };
        step.proposal = Some(proposal.clone());

        if current.identifiers().contains(&proposal) {
            step.action = Action::DiscardedCollision;
            trace.push(step);
            continue;
        }
        let renamed = match rename_identifier(&current, identifier, &proposal) {
            Ok(r) => r,
            // free or imported names are occupied too
            Err(RenameError::Collision { .. }) => {
                step.action = Action::DiscardedCollision;
                trace.push(step);
                continue;
            }
            Err(RenameError::IllegalLexeme(_)) => {
                trace.push(step);
                continue;
            }
            Err(err) => abort!(BackendError::Structure(format!("cannot rename `{identifier}`: {err}"))),
        };

        let prediction = match classifier.classify(&renamed) {
            Ok(p) => p,
            Err(err) => abort!(err),
        };
        if prediction.num_classes() != original.num_classes() {
            abort!(BackendError::Protocol(format!(
                "class count changed from {} to {}",
                original.num_classes(),
                prediction.num_classes()
            )));
        }
        let after = prediction.confidence(label);
        step.confidence_after = Some(after);
        if prediction.label() != label {
            step.action = Action::Flipped;
            trace.push(step);
            return Ok(DenoiseOutcome {
                original_label: label,
                final_label: prediction.label(),
                denoised: renamed,
                trace,
                elapsed: started.elapsed(),
            });
        }
        if after < prob {
            step.action = Action::KeptLowerConfidence;
            prob = after;
            current = renamed;
        } else {
            step.action = Action::DiscardedNoGain;
        }
        trace.push(step);
    }

    Ok(DenoiseOutcome {
        original_label: label,
        final_label: label,
        denoised: current,
        trace,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{ScriptedClassifier, ScriptedFiller};
    use crate::code::fixtures::NOISY_BUBBLE_SORT;
    use crate::code::Language;
    use crate::localizer::{random_ranking, rank_noisy_identifiers};

    const BUBBLE: usize = 0;
    const SELECTION: usize = 1;

    fn vocab(names: &[&str]) -> Vocabulary {
        Vocabulary::new(names.iter().copied(), Language::Python, "test")
    }

    fn models<'a>(filler: &'a ScriptedFiller, v: &'a Vocabulary) -> ReplacementModels<'a> {
        ReplacementModels { mcip: Some(filler), mip: None, vocabulary: v }
    }

    #[test]
    fn marker_replacement_flips_the_label() {
        let s = CodeSnippet::python(NOISY_BUBBLE_SORT).unwrap();
        let classifier =
            ScriptedClassifier::new(
                |s| {
                    if s.source().contains("a1_selection") {
                        vec![0.3, 0.7]
                    } else {
                        vec![0.8, 0.2]
                    }
                },
            )
            .with_attention(|s| {
                let marker = s.identifiers().get("a1_selection").map(|e| e.occurrences[0]);
                let w = (0..s.tokens().len()).map(|i| if Some(i) == marker { 0.5 } else { 0.01 }).collect();
                vec![w]
            });
        let filler = ScriptedFiller::new(|m| (m.target() == Some("a1_selection")).then(|| "count".to_string()));
        let v = vocab(&["count"]);
        let original = classifier.classify(&s).unwrap();
        assert_eq!(original.label(), SELECTION);
        let ranked = rank_noisy_identifiers(&s, &classifier).unwrap();
        let out =
            cleanse(&s, &original, &ranked, &classifier, &models(&filler, &v), &CleanseConfig::default()).unwrap();
        assert_eq!(out.final_label, BUBBLE);
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].action, Action::Flipped);
        assert!(out.denoised.source().contains("count"));
        assert!(!out.denoised.source().contains("a1_selection"));
        assert_eq!(out.denoised.digest(), s.digest());
    }

    #[test]
    fn no_gain_keeps_the_original() {
        let s = CodeSnippet::python("def f(a, b):\n    return a - b\n").unwrap();
        let classifier = ScriptedClassifier::new(|_| vec![0.4, 0.6]);
        let filler = ScriptedFiller::new(|m| Some(format!("{}_x", m.target().unwrap())));
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let ranked = random_ranking(&s, 0);
        let out =
            cleanse(&s, &original, &ranked, &classifier, &models(&filler, &v), &CleanseConfig::default()).unwrap();
        assert_eq!(out.final_label, 1);
        assert_eq!(out.changed_identifiers(), 0);
        assert_eq!(out.trace.len(), 3);
        assert!(out.trace.iter().all(|s| s.action == Action::DiscardedNoGain));
        assert_eq!(out.denoised, s);
    }

    #[test]
    fn collisions_are_skipped() {
        let s = CodeSnippet::python("a = 1\nb = a\n").unwrap();
        let classifier = ScriptedClassifier::new(|_| vec![0.4, 0.6]);
        let filler = ScriptedFiller::new(|_| Some("b".to_string()));
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let ranked = random_ranking(&s, 1);
        let out =
            cleanse(&s, &original, &ranked, &classifier, &models(&filler, &v), &CleanseConfig::default()).unwrap();
        assert!(out.trace.iter().all(|s| s.action == Action::DiscardedCollision));
        // collisions never reach the classifier
        assert_eq!(classifier.classify_calls(), 1);
    }

    #[test]
    fn accepted_steps_lower_confidence_strictly() {
        let s = CodeSnippet::python("def f(a, b, c):\n    return a + b + c\n").unwrap();
        // each renamed identifier lowers confidence of label 1 by 0.1
        let classifier = ScriptedClassifier::new(|s| {
            let renamed = s.identifiers().names().filter(|n| n.ends_with("_r")).count() as f64;
            let p = 0.9 - 0.1 * renamed;
            vec![1.0 - p, p]
        });
        let filler = ScriptedFiller::new(|m| Some(format!("{}_r", m.target().unwrap())));
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let ranked = random_ranking(&s, 2);
        let out =
            cleanse(&s, &original, &ranked, &classifier, &models(&filler, &v), &CleanseConfig::default()).unwrap();
        assert_eq!(out.changed_identifiers(), 4);
        let probs: Vec<f64> = out.trace.iter().map(|s| s.confidence_after.unwrap()).collect();
        assert!(probs.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(out.denoised.identifiers().len(), 4);
    }

    #[test]
    fn empty_ranking_returns_original() {
        let s = CodeSnippet::python("x = 1").unwrap();
        let classifier = ScriptedClassifier::new(|_| vec![0.5, 0.5]);
        let filler = ScriptedFiller::new(|_| None);
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let out = cleanse(
            &s,
            &original,
            &RankedNoiseList::default(),
            &classifier,
            &models(&filler, &v),
            &CleanseConfig::default(),
        )
        .unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.final_label, 0);
    }

    #[test]
    fn missing_candidates_are_recorded() {
        let s = CodeSnippet::python("x = 1").unwrap();
        let classifier = ScriptedClassifier::new(|_| vec![0.5, 0.5]);
        let filler = ScriptedFiller::new(|_| None);
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let out = cleanse(
            &s,
            &original,
            &random_ranking(&s, 0),
            &classifier,
            &models(&filler, &v),
            &CleanseConfig::default(),
        )
        .unwrap();
        assert_eq!(out.trace[0].action, Action::NoCandidate);
    }

    #[test]
    fn random_strategy_draws_from_vocabulary() {
        let s = CodeSnippet::python("x = 1").unwrap();
        let masked = mask_identifier(&s, "x").unwrap();
        let v = vocab(&["c", "d"]);
        let models = ReplacementModels { mcip: None, mip: None, vocabulary: &v };
        let config = CleanseConfig { strategy: Strategy::Random, seed: 3, max_iterations: None };
        let mut rng = crate::seed::rng(3);
        let first = propose_replacement(&masked, &config, &models, &mut rng).unwrap();
        assert!(first == "c" || first == "d");
        let mut rng = crate::seed::rng(3);
        assert_eq!(propose_replacement(&masked, &config, &models, &mut rng).unwrap(), first);

        let config = CleanseConfig { strategy: Strategy::Mcip, ..config };
        assert!(matches!(propose_replacement(&masked, &config, &models, &mut rng), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn backend_failure_keeps_partial_trace() {
        let s = CodeSnippet::python("a = 1\nb = a\n").unwrap();
        let classifier =
            ScriptedClassifier::new(|s| if s.source().contains("q") { vec![0.5, 0.3] } else { vec![0.4, 0.6] });
        let filler = ScriptedFiller::new(|m| match m.target() {
            Some("a") => Some("b".into()),
            _ => Some("q".into()),
        });
        let v = vocab(&[]);
        let original = classifier.classify(&s).unwrap();
        let ranked = rank_noisy_identifiers(
            &s,
            &ScriptedClassifier::new(|_| vec![1.0]).with_attention(|s| vec![vec![0.1; s.tokens().len()]]),
        )
        .unwrap();
        let err =
            cleanse(&s, &original, &ranked, &classifier, &models(&filler, &v), &CleanseConfig::default()).unwrap_err();
        assert_eq!(err.partial.trace.len(), 1);
        assert_eq!(err.partial.trace[0].action, Action::DiscardedCollision);
        assert!(matches!(err.source, BackendError::Protocol(_)));
    }
}
