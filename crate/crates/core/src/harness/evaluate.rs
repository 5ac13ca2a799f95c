//! Repeated evaluation over a labeled test set.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::metrics::{summarize, InputOutcome, MetricsReport};
use super::pipeline::{denoise_input, DenoiseResult};
use super::{HarnessError, Models, PipelineConfig};
use crate::backend::{Concurrency, LabeledSnippet};
use crate::seed::{derive, derive_str};

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Ordered by repetition, then by position in the test set.
    pub outcomes: Vec<InputOutcome>,
}

/// Seed of repetition `index` under the global seed.
pub fn repetition_seed(global: u64, index: usize) -> u64 {
    derive(global, index as u64)
}

/// Seed of input `id` within a repetition.
pub fn input_seed(rep_seed: u64, id: &str) -> u64 {
    derive_str(rep_seed, id)
}

fn to_outcome(record: &LabeledSnippet, repetition: usize, result: DenoiseResult) -> InputOutcome {
    let (changed, trace, denoised_code) = match result.outcome {
        Some(outcome) => {
            let changed = outcome.changed_identifiers();
            let code = (changed > 0).then(|| outcome.denoised.source().to_string());
            (changed, outcome.trace, code)
        }
        None => (0, Vec::new(), None),
    };
    InputOutcome {
        id: record.id.clone(),
        repetition,
        label: record.label,
        original_label: result.verdict.original.label(),
        final_label: result.final_label,
        flagged: result.verdict.flagged,
        skipped: result.verdict.skipped,
        uncertainty: result.verdict.uncertainty,
        changed_identifiers: changed,
        trace,
        denoised_code,
        error: None,
        elapsed_seconds: result.elapsed.as_secs_f64(),
    }
}

/// Records a failed input as passed through with its original label.
fn failed_outcome(
    record: &LabeledSnippet,
    repetition: usize,
    err: HarnessError,
    models: &Models<'_>,
) -> Result<InputOutcome, HarnessError> {
    let (original, trace) = match &err {
        HarnessError::Cleanse { source, .. } => (source.partial.original_label, source.partial.trace.clone()),
        _ => {
            let label = models
                .classifier
                .classify(&record.snippet)
                .map_err(|source| HarnessError::Backend { id: record.id.clone(), source })?
                .label();
            (label, Vec::new())
        }
    };
    log::warn!("{err}");
    Ok(InputOutcome {
        id: record.id.clone(),
        repetition,
        label: record.label,
        original_label: original,
        final_label: original,
        flagged: matches!(err, HarnessError::Cleanse { .. }),
        skipped: None,
        uncertainty: None,
        changed_identifiers: 0,
        trace,
        denoised_code: None,
        error: Some(err.to_string()),
        elapsed_seconds: 0.0,
    })
}

fn run_one(
    record: &LabeledSnippet,
    repetition: usize,
    rep_seed: u64,
    config: &PipelineConfig,
    models: &Models<'_>,
) -> Result<InputOutcome, HarnessError> {
    let seed = input_seed(rep_seed, &record.id);
    match denoise_input(&record.id, &record.snippet, config, models, seed) {
        Ok(result) => Ok(to_outcome(record, repetition, result)),
        Err(err @ HarnessError::Usage(_)) => Err(err),
        Err(err) => failed_outcome(record, repetition, err, models),
    }
}

/// Runs the pipeline over `test` once per repetition. A failing input is
/// recorded and the run continues; the run stops only when the backend
/// cannot classify at all.
pub fn evaluate(
    test: &[LabeledSnippet],
    config: &PipelineConfig,
    models: &Models<'_>,
) -> Result<Evaluation, HarnessError> {
    config.validate()?;
    let parallel = config.workers > 1 && models.classifier.concurrency() == Concurrency::ConcurrentSafe;
    let pool = if parallel {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| HarnessError::Usage(format!("cannot start workers: {e}")))?,
        )
    } else {
        None
    };

    let mut outcomes = Vec::with_capacity(test.len() * config.repetitions);
    let mut repetitions = Vec::with_capacity(config.repetitions);
    for repetition in 0..config.repetitions {
        let rep_seed = repetition_seed(config.seed, repetition);
        let batch: Vec<InputOutcome> = match &pool {
            Some(pool) => pool.install(|| {
                test.par_iter().map(|r| run_one(r, repetition, rep_seed, config, models)).collect::<Result<_, _>>()
            })?,
            None => test.iter().map(|r| run_one(r, repetition, rep_seed, config, models)).collect::<Result<_, _>>()?,
        };
        let metrics = summarize(repetition, rep_seed, &batch);
        log::info!(
            "repetition {repetition}: {} inputs, {} flagged, corrected {} of {}, broke {} of {}",
            metrics.inputs,
            metrics.flagged,
            metrics.corrected,
            metrics.mispredicted,
            metrics.broken,
            metrics.correct
        );
        repetitions.push(metrics);
        outcomes.extend(batch);
    }
    Ok(Evaluation { report: MetricsReport::from_repetitions(repetitions), outcomes })
}

/// Writes `report.json` and `outcomes.ndjson` into `dir`.
pub fn write_evaluation(dir: &Path, evaluation: &Evaluation) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let report_path = dir.join("report.json");
    let report = serde_json::to_string_pretty(&evaluation.report).expect("report serializes");
    fs::write(&report_path, report + "\n").map_err(|e| HarnessError::io(&report_path, e))?;

    let outcomes_path = dir.join("outcomes.ndjson");
    let file = fs::File::create(&outcomes_path).map_err(|e| HarnessError::io(&outcomes_path, e))?;
    let mut out = BufWriter::new(file);
    for outcome in &evaluation.outcomes {
        let line = serde_json::to_string(outcome).expect("outcomes serialize");
        writeln!(out, "{line}").map_err(|e| HarnessError::io(&outcomes_path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(&outcomes_path, e))
}
