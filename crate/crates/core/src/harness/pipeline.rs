//! Detection, localization and cleansing of a single input.

use std::time::{Duration, Instant};

use super::{DetectorSetting, HarnessError, LocalizerKind, Models, PipelineConfig};
use crate::cleanser::{cleanse, CleanseConfig, DenoiseOutcome, ReplacementModels};
use crate::code::CodeSnippet;
use crate::detector::{gini_verdict, identify_with_prediction, DetectionVerdict};
use crate::localizer::{random_ranking, rank_noisy_identifiers};
use crate::seed::derive_str;

#[derive(Debug, Clone)]
pub struct DenoiseResult {
    pub verdict: DetectionVerdict,
    /// Present only when the input was flagged.
    pub outcome: Option<DenoiseOutcome>,
    pub final_label: usize,
    pub elapsed: Duration,
}

impl DenoiseResult {
    pub fn passed_through(&self) -> bool {
        self.outcome.is_none()
    }
}

/// Classifies `snippet` and decides whether it is likely mispredicted.
pub fn detect(
    id: &str,
    snippet: &CodeSnippet,
    detector: &DetectorSetting,
    models: &Models<'_>,
    seed: u64,
) -> Result<DetectionVerdict, HarnessError> {
    let backend = |source| HarnessError::Backend { id: id.to_string(), source };
    let original = models.classifier.classify(snippet).map_err(backend)?;
    Ok(match detector {
        DetectorSetting::Smoothing { .. } => {
            let smoothing = detector.smoothing(derive_str(seed, "detect")).expect("smoothing setting");
            identify_with_prediction(snippet, original, models.classifier, models.vocabulary, &smoothing)
                .map_err(backend)?
        }
        DetectorSetting::DeepGini(Some(gini)) => gini_verdict(original, gini),
        DetectorSetting::DeepGini(None) => {
            return Err(HarnessError::Usage("the uncertainty detector needs a threshold".into()))
        }
        DetectorSetting::Never => DetectionVerdict {
            flagged: false,
            majority: original.label(),
            original,
            sample_labels: Vec::new(),
            uncertainty: None,
            skipped: None,
        },
    })
}

/// Runs the pipeline on one input. Unflagged inputs keep the model's label.
///
/// Randomness is drawn from streams derived from `seed` by purpose, so the
/// detector makes the same decisions whatever localizer or strategy is
/// configured.
pub fn denoise_input(
    id: &str,
    snippet: &CodeSnippet,
    config: &PipelineConfig,
    models: &Models<'_>,
    seed: u64,
) -> Result<DenoiseResult, HarnessError> {
    let started = Instant::now();
    let verdict = detect(id, snippet, &config.detector, models, seed)?;
    if !verdict.flagged {
        let final_label = verdict.original.label();
        return Ok(DenoiseResult { verdict, outcome: None, final_label, elapsed: started.elapsed() });
    }

    let backend = |source| HarnessError::Backend { id: id.to_string(), source };
    let ranked = match config.localizer {
        LocalizerKind::Attention => rank_noisy_identifiers(snippet, models.classifier).map_err(backend)?,
        LocalizerKind::Random => random_ranking(snippet, derive_str(seed, "rank")),
    };
    let cleanse_config =
        CleanseConfig { strategy: config.strategy, seed: derive_str(seed, "cleanse"), max_iterations: None };
    let replacements = ReplacementModels { mcip: models.mcip, mip: models.mip, vocabulary: models.vocabulary };
    let outcome = cleanse(snippet, &verdict.original, &ranked, models.classifier, &replacements, &cleanse_config)
        .map_err(|source| HarnessError::Cleanse { id: id.to_string(), source: Box::new(source) })?;
    let final_label = outcome.final_label;
    Ok(DenoiseResult { verdict, outcome: Some(outcome), final_label, elapsed: started.elapsed() })
}
