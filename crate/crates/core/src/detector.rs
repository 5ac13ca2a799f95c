//! Misprediction detection.
//!
//! The default detector votes over `N` randomly renamed copies of the input:
//! each copy renames `δ ∈ {1..min(θ, |S(x)|)}` distinct identifiers to fresh
//! vocabulary names. The input is flagged when the majority label of the
//! copies differs from the label of the original. A tie that includes the
//! original label counts as agreement.
//!
//! The uncertainty variant flags inputs whose DeepGini score `1 − Σ p(c)²`
//! reaches a threshold ζ calibrated on training data.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{BackendError, Classifier, Concurrency, Prediction};
use crate::code::{candidate_pool, rename_identifier, CodeSnippet, RenameError, Vocabulary};

/// How many perturbed copies to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCount {
    Fixed(usize),
    /// A multiple of the input's identifier count.
    PerIdentifier(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub theta: usize,
    pub samples: SampleCount,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("theta must be at least 1")]
    Theta,
    #[error("sample count or multiplier must be at least 1")]
    Samples,
    #[error("zeta must lie in [0, 1), got {0}")]
    Zeta(f64),
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { theta: 1, samples: SampleCount::PerIdentifier(1), seed: 0 }
    }
}

impl SmoothingConfig {
    pub fn new(theta: usize, samples: SampleCount, seed: u64) -> Result<Self, ConfigError> {
        if theta == 0 {
            return Err(ConfigError::Theta);
        }
        if matches!(samples, SampleCount::Fixed(0) | SampleCount::PerIdentifier(0)) {
            return Err(ConfigError::Samples);
        }
        Ok(SmoothingConfig { theta, samples, seed })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SmoothingConfig { seed, ..self.clone() }
    }

    /// Number of perturbed copies for an input with `identifiers` names.
    pub fn resolve(&self, identifiers: usize) -> usize {
        match self.samples {
            SampleCount::Fixed(n) => n,
            SampleCount::PerIdentifier(m) => m * identifiers,
        }
    }
}

/// Why an input could not be perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CannotPerturb {
    NoIdentifiers,
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerturbError {
    #[error("cannot perturb: {0:?}")]
    Cannot(CannotPerturb),
    #[error(transparent)]
    Rename(#[from] RenameError),
}

/// One perturbed copy and the renames that produced it.
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub snippet: CodeSnippet,
    pub renames: Vec<(String, String)>,
}

/// Renames `δ` uniformly chosen distinct identifiers, `δ` uniform in
/// `1..=min(theta, |S(x)|)`. Each replacement is drawn uniformly from the
/// pool of the snippet as renamed so far.
pub fn sample_perturbation(
    snippet: &CodeSnippet,
    vocab: &Vocabulary,
    theta: usize,
    rng: &mut impl Rng,
) -> Result<Perturbation, PerturbError> {
    let names: Vec<&str> = snippet.identifiers().names().collect();
    if names.is_empty() {
        return Err(PerturbError::Cannot(CannotPerturb::NoIdentifiers));
    }
    let delta = rng.gen_range(1..=theta.max(1).min(names.len()));
    let chosen = rand::seq::index::sample(rng, names.len(), delta);

    let mut current = snippet.clone();
    let mut renames = Vec::with_capacity(delta);
    for index in chosen.iter() {
        let old = names[index];
        let pool: Vec<&str> = candidate_pool(vocab, current.identifiers()).into_iter().collect();
        if pool.is_empty() {
            return Err(PerturbError::Cannot(CannotPerturb::EmptyPool));
        }
        let new = pool[rng.gen_range(0..pool.len())];
        current = rename_identifier(&current, old, new)?;
        renames.push((old.to_string(), new.to_string()));
    }
    Ok(Perturbation { snippet: current, renames })
}

/// Mode of `labels`. When several labels tie for the mode and `original` is
/// among them, `original` wins; otherwise the lowest tied label. Empty input
/// yields `original`.
pub fn majority_vote(labels: &[usize], original: usize) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let Some(&top) = counts.values().max() else {
        return original;
    };
    if counts.get(&original) == Some(&top) {
        return original;
    }
    counts.into_iter().find(|&(_, c)| c == top).map_or(original, |(l, _)| l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub flagged: bool,
    pub original: Prediction,
    /// Labels of the perturbed copies, in sampling order.
    pub sample_labels: Vec<usize>,
    pub majority: usize,
    /// Uncertainty score, when the uncertainty detector decided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<CannotPerturb>,
}

impl DetectionVerdict {
    fn unflagged(original: Prediction, skipped: Option<CannotPerturb>) -> Self {
        let majority = original.label();
        DetectionVerdict { flagged: false, original, sample_labels: Vec::new(), majority, uncertainty: None, skipped }
    }
}

fn classify_all(classifier: &dyn Classifier, snippets: &[CodeSnippet]) -> Result<Vec<Prediction>, BackendError> {
    match classifier.concurrency() {
        Concurrency::ConcurrentSafe => snippets.par_iter().map(|s| classifier.classify(s)).collect(),
        Concurrency::SerializeRequired => snippets.iter().map(|s| classifier.classify(s)).collect(),
    }
}

/// Votes over perturbed copies of `snippet`. Deterministic given the seed.
pub fn identify_mispredicted(
    snippet: &CodeSnippet,
    classifier: &dyn Classifier,
    vocab: &Vocabulary,
    config: &SmoothingConfig,
) -> Result<DetectionVerdict, BackendError> {
    let original = classifier.classify(snippet)?;
    identify_with_prediction(snippet, original, classifier, vocab, config)
}

/// As [`identify_mispredicted`], reusing an already computed prediction.
pub fn identify_with_prediction(
    snippet: &CodeSnippet,
    original: Prediction,
    classifier: &dyn Classifier,
    vocab: &Vocabulary,
    config: &SmoothingConfig,
) -> Result<DetectionVerdict, BackendError> {
    let identifiers = snippet.identifiers().len();
    if identifiers == 0 {
        log::debug!("not perturbing a snippet without identifiers");
        return Ok(DetectionVerdict::unflagged(original, Some(CannotPerturb::NoIdentifiers)));
    }
    let mut rng = crate::seed::rng(config.seed);
    let n = config.resolve(identifiers);
    let mut copies = Vec::with_capacity(n);
    for _ in 0..n {
        match sample_perturbation(snippet, vocab, config.theta, &mut rng) {
            Ok(p) => copies.push(p.snippet),
            Err(PerturbError::Cannot(reason)) => {
                return Ok(DetectionVerdict::unflagged(original, Some(reason)));
            }
            Err(PerturbError::Rename(err)) => {
                return Err(BackendError::Structure(format!("perturbation failed: {err}")));
            }
        }
    }
    let sample_labels: Vec<usize> = classify_all(classifier, &copies)?.iter().map(Prediction::label).collect();
    let majority = majority_vote(&sample_labels, original.label());
    Ok(DetectionVerdict {
        flagged: majority != original.label(),
        original,
        sample_labels,
        majority,
        uncertainty: None,
        skipped: None,
    })
}

/// `1 − Σ p(c)²`. The squares are summed with error compensation so that
/// the uniform distribution scores `1 − 1/C` to the last bit.
pub fn deepgini_uncertainty(prediction: &Prediction) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for &p in prediction.probabilities() {
        let square = p * p;
        let square_error = p.mul_add(p, -square);
        let total = sum + square;
        let back = total - sum;
        carry += (sum - (total - back)) + (square - back) + square_error;
        sum = total;
    }
    1.0 - (sum + carry)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GiniConfig {
    zeta: f64,
}

impl GiniConfig {
    pub fn new(zeta: f64) -> Result<Self, ConfigError> {
        if (0.0..1.0).contains(&zeta) {
            Ok(GiniConfig { zeta })
        } else {
            Err(ConfigError::Zeta(zeta))
        }
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Inputs scoring at or above ζ are flagged.
    pub fn flags(&self, score: f64) -> bool {
        score >= self.zeta
    }
}

pub fn gini_verdict(original: Prediction, config: &GiniConfig) -> DetectionVerdict {
    let score = deepgini_uncertainty(&original);
    let mut verdict = DetectionVerdict::unflagged(original, None);
    verdict.flagged = config.flags(score);
    verdict.uncertainty = Some(score);
    verdict
}

/// Largest false positive rate a calibrated threshold may have.
pub const MAX_CALIBRATION_FPR: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: GiniConfig,
    pub tpr: f64,
    pub fpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CalibrationError {
    #[error("calibration needs at least one mispredicted and one correct example")]
    OneSided,
    #[error("score {0} outside [0, 1)")]
    Score(f64),
}

/// Picks ζ among the observed scores: best true positive rate with false
/// positive rate at most 5%, smallest ζ among ties. When no observed score
/// meets the bound, the one with the lowest false positive rate is returned
/// with a warning.
pub fn calibrate_zeta(scored: &[(f64, bool)]) -> Result<Calibration, CalibrationError> {
    if let Some(&(s, _)) = scored.iter().find(|(s, _)| !(0.0..1.0).contains(s)) {
        return Err(CalibrationError::Score(s));
    }
    let positives = scored.iter().filter(|(_, m)| *m).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(CalibrationError::OneSided);
    }

    let mut candidates: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let rates = |t: f64| {
        let tp = scored.iter().filter(|(s, m)| *m && *s >= t).count();
        let fp = scored.iter().filter(|(s, m)| !*m && *s >= t).count();
        (tp as f64 / positives as f64, fp as f64 / negatives as f64)
    };

    let mut within: Option<(f64, f64, f64)> = None;
    let mut fallback: Option<(f64, f64, f64)> = None;
    for &t in &candidates {
        let (tpr, fpr) = rates(t);
        if fpr <= MAX_CALIBRATION_FPR && within.is_none_or(|(_, best, _)| tpr > best) {
            within = Some((t, tpr, fpr));
        }
        let better = fallback.is_none_or(|(_, btpr, bfpr)| fpr < bfpr || (fpr == bfpr && tpr > btpr));
        if better {
            fallback = Some((t, tpr, fpr));
        }
    }

    let (warning, (zeta, tpr, fpr)) = match within {
        Some(best) => (None, best),
        None => {
            let best = fallback.expect("at least two scored items");
            log::warn!("no threshold keeps the false positive rate within 5%");
            (Some(format!("no threshold reaches FPR <= 5%; lowest FPR is {:.4}", best.2)), best)
        }
    };
    let config = GiniConfig::new(zeta).expect("observed scores are in [0, 1)");
    Ok(Calibration { config, tpr, fpr, warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::ScriptedClassifier;
    use crate::code::Language;

    fn vocab(names: &[&str]) -> Vocabulary {
        Vocabulary::new(names.iter().copied(), Language::Python, "test")
    }

    #[test]
    fn majority_examples() {
        let (a, b, c) = (0, 1, 2);
        let labels = [a, a, b, a, c];
        assert_eq!(majority_vote(&labels, b), a);
        assert_eq!(majority_vote(&labels, a), a);
        // tie that includes the original label
        assert_eq!(majority_vote(&[a, b, b, a], b), b);
        assert_eq!(majority_vote(&[a, b, b, a], a), a);
        // tie without the original picks the lowest label
        assert_eq!(majority_vote(&[c, b, c, b], a), b);
        assert_eq!(majority_vote(&[], c), c);
    }

    #[test]
    fn theta_one_renames_exactly_one() {
        let s = CodeSnippet::python("def f(a, b):\n    c = a + b\n    return c\n").unwrap();
        let v = vocab(&["p", "q", "r", "t"]);
        let mut rng = crate::seed::rng(1);
        for _ in 0..200 {
            let p = sample_perturbation(&s, &v, 1, &mut rng).unwrap();
            assert_eq!(p.renames.len(), 1);
            assert_eq!(p.snippet.digest(), s.digest());
        }
    }

    #[test]
    fn delta_is_clamped_to_identifier_count() {
        let s = CodeSnippet::python("a = 1\nb = a\n").unwrap();
        let v = vocab(&["p", "q", "r", "t", "u"]);
        let mut rng = crate::seed::rng(2);
        let mut seen = [false; 3];
        for _ in 0..300 {
            let p = sample_perturbation(&s, &v, 5, &mut rng).unwrap();
            assert!((1..=2).contains(&p.renames.len()));
            seen[p.renames.len()] = true;
            let news: Vec<_> = p.renames.iter().map(|(_, n)| n).collect();
            assert!(news.len() < 2 || news[0] != news[1]);
        }
        assert!(seen[1] && seen[2]);
    }

    #[test]
    fn no_identifiers_cannot_be_perturbed() {
        let s = CodeSnippet::python("1 + 2").unwrap();
        let mut rng = crate::seed::rng(3);
        let err = sample_perturbation(&s, &vocab(&["x"]), 1, &mut rng).unwrap_err();
        assert_eq!(err, PerturbError::Cannot(CannotPerturb::NoIdentifiers));

        let s = CodeSnippet::python("x = 1").unwrap();
        let err = sample_perturbation(&s, &vocab(&["x"]), 1, &mut rng).unwrap_err();
        assert_eq!(err, PerturbError::Cannot(CannotPerturb::EmptyPool));
    }

    #[test]
    fn zero_identifier_input_is_not_flagged() {
        let model = ScriptedClassifier::new(|_| vec![0.3, 0.7]);
        let s = CodeSnippet::python("print(1 + 2)").unwrap();
        let verdict = identify_mispredicted(&s, &model, &vocab(&["x"]), &SmoothingConfig::default()).unwrap();
        assert!(!verdict.flagged);
        assert_eq!(verdict.skipped, Some(CannotPerturb::NoIdentifiers));
        assert_eq!(verdict.majority, 1);
    }

    #[test]
    fn detection_is_deterministic() {
        let model =
            ScriptedClassifier::new(|s| if s.source().contains("zz") { vec![0.9, 0.1] } else { vec![0.2, 0.8] });
        let s = CodeSnippet::python("def f(a, b, c):\n    return a * b - c\n").unwrap();
        let v = vocab(&["zz", "yy", "xx", "ww"]);
        let config = SmoothingConfig::new(2, SampleCount::PerIdentifier(3), 99).unwrap();
        let first = identify_mispredicted(&s, &model, &v, &config).unwrap();
        let second = identify_mispredicted(&s, &model, &v, &config).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.sample_labels.len(), 12);
    }

    #[test]
    fn config_validation() {
        assert_eq!(SmoothingConfig::new(0, SampleCount::Fixed(3), 0), Err(ConfigError::Theta));
        assert_eq!(SmoothingConfig::new(1, SampleCount::PerIdentifier(0), 0), Err(ConfigError::Samples));
        assert!(GiniConfig::new(1.0).is_err());
        assert!(GiniConfig::new(-0.1).is_err());
        assert!(GiniConfig::new(0.0).is_ok());
    }

    #[test]
    fn deepgini_examples() {
        let p = |v: Vec<f64>| Prediction::new(v).unwrap();
        assert!((deepgini_uncertainty(&p(vec![0.25; 4])) - 0.75).abs() < 1e-12);
        assert_eq!(deepgini_uncertainty(&p(vec![1.0, 0.0, 0.0])), 0.0);
        assert!((deepgini_uncertainty(&p(vec![0.7, 0.2, 0.1])) - 0.46).abs() < 1e-12);
    }

    #[test]
    fn separable_calibration_picks_smallest_valid_observed_score() {
        let mut scored = vec![(0.9, true); 10];
        scored.extend(vec![(0.1, false); 10]);
        let cal = calibrate_zeta(&scored).unwrap();
        assert_eq!(cal.config.zeta(), 0.9);
        assert_eq!((cal.tpr, cal.fpr), (1.0, 0.0));
        assert!(cal.warning.is_none());
    }

    #[test]
    fn identical_scores_fall_back_with_warning() {
        let scored = vec![(0.4, true), (0.4, false), (0.4, true), (0.4, false)];
        let cal = calibrate_zeta(&scored).unwrap();
        assert_eq!(cal.config.zeta(), 0.4);
        assert_eq!(cal.fpr, 1.0);
        assert!(cal.warning.is_some());
    }

    #[test]
    fn one_sided_calibration_is_rejected() {
        assert_eq!(calibrate_zeta(&[(0.2, true)]), Err(CalibrationError::OneSided));
    }
}
