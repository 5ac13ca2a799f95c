//! Per-input outcome records and the rates computed from them.
//!
//! An input is *corrected* when the model got it wrong and the pipeline's
//! final label is right, and *broken* when the model got it right and the
//! final label is wrong. The correction success rate is corrected over
//! mispredicted inputs and the mis-correction rate is broken over correctly
//! predicted inputs; either is absent when its denominator is zero.

use serde::{Deserialize, Serialize};

use crate::cleanser::TraceStep;
use crate::detector::CannotPerturb;

/// One line of `outcomes.ndjson`. Timing is kept out of the serialized
/// form so that repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputOutcome {
    pub id: String,
    pub repetition: usize,
    /// Ground truth.
    pub label: usize,
    pub original_label: usize,
    pub final_label: usize,
    pub flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<CannotPerturb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
    pub changed_identifiers: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
    /// Source after cleansing, when any identifier changed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denoised_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

impl InputOutcome {
    pub fn corrected(&self) -> bool {
        self.original_label != self.label && self.final_label == self.label
    }

    pub fn broken(&self) -> bool {
        self.original_label == self.label && self.final_label != self.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionMetrics {
    pub repetition: usize,
    pub seed: u64,
    pub inputs: usize,
    pub mispredicted: usize,
    pub correct: usize,
    pub corrected: usize,
    pub broken: usize,
    pub flagged: usize,
    pub failures: usize,
    pub csr: Option<f64>,
    pub mcr: Option<f64>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub mean_denoise_seconds: f64,
    /// Mean over flagged inputs.
    pub mean_changed_identifiers: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Rates for the outcomes of one repetition.
pub fn summarize(repetition: usize, seed: u64, outcomes: &[InputOutcome]) -> RepetitionMetrics {
    let inputs = outcomes.len();
    let correct = outcomes.iter().filter(|o| o.original_label == o.label).count();
    let mispredicted = inputs - correct;
    let corrected = outcomes.iter().filter(|o| o.corrected()).count();
    let broken = outcomes.iter().filter(|o| o.broken()).count();
    let flagged: Vec<&InputOutcome> = outcomes.iter().filter(|o| o.flagged).collect();
    let changed: usize = flagged.iter().map(|o| o.changed_identifiers).sum();
    let denominator = inputs.max(1) as f64;
    RepetitionMetrics {
        repetition,
        seed,
        inputs,
        mispredicted,
        correct,
        corrected,
        broken,
        flagged: flagged.len(),
        failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
        csr: ratio(corrected, mispredicted),
        mcr: ratio(broken, correct),
        accuracy_before: correct as f64 / denominator,
        // count first, divide once, so the identity with the rates is exact
        accuracy_after: (correct + corrected - broken) as f64 / denominator,
        mean_denoise_seconds: outcomes.iter().map(|o| o.elapsed_seconds).sum::<f64>() / denominator,
        mean_changed_identifiers: ratio(changed, flagged.len()),
    }
}

/// Per-repetition metrics and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub csr: Option<f64>,
    pub mcr: Option<f64>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub mean_denoise_seconds: f64,
    pub mean_changed_identifiers: Option<f64>,
    pub repetitions: Vec<RepetitionMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn summary_line(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.2}%", v * 100.0));
        format!(
            "flagged {}  CSR {}  MCR {}  accuracy {:.2}% -> {:.2}%  changed {}  {:.1} ms/input",
            self.repetitions.iter().map(|r| r.flagged).sum::<usize>(),
            pct(self.csr),
            pct(self.mcr),
            self.accuracy_before * 100.0,
            self.accuracy_after * 100.0,
            self.mean_changed_identifiers.map_or("n/a".to_string(), |c| format!("{c:.2}")),
            self.mean_denoise_seconds * 1000.0
        )
    }

    pub fn from_repetitions(repetitions: Vec<RepetitionMetrics>) -> Self {
        let reps = &repetitions;
        MetricsReport {
            csr: mean(reps.iter().filter_map(|r| r.csr)),
            mcr: mean(reps.iter().filter_map(|r| r.mcr)),
            accuracy_before: mean(reps.iter().map(|r| r.accuracy_before)).unwrap_or(0.0),
            accuracy_after: mean(reps.iter().map(|r| r.accuracy_after)).unwrap_or(0.0),
            mean_denoise_seconds: mean(reps.iter().map(|r| r.mean_denoise_seconds)).unwrap_or(0.0),
            mean_changed_identifiers: mean(reps.iter().filter_map(|r| r.mean_changed_identifiers)),
            repetitions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(label: usize, original: usize, final_label: usize) -> InputOutcome {
        InputOutcome {
            id: String::new(),
            repetition: 0,
            label,
            original_label: original,
            final_label,
            flagged: original != final_label,
            skipped: None,
            uncertainty: None,
            changed_identifiers: usize::from(original != final_label),
            trace: Vec::new(),
            denoised_code: None,
            error: None,
            elapsed_seconds: 0.5,
        }
    }

    #[test]
    fn ten_input_scenario() {
        let mut outcomes =
            vec![outcome(0, 1, 0), outcome(0, 1, 0), outcome(0, 1, 1), outcome(0, 1, 1), outcome(0, 0, 1)];
        outcomes.extend((0..5).map(|_| outcome(0, 0, 0)));
        let m = summarize(0, 0, &outcomes);
        assert_eq!((m.mispredicted, m.corrected, m.correct, m.broken), (4, 2, 6, 1));
        assert_eq!(m.csr, Some(0.5));
        assert_eq!(format!("{:.2}", m.mcr.unwrap() * 100.0), "16.67");
        assert_eq!(m.accuracy_before, 0.6);
        assert_eq!(m.accuracy_after, 0.7);
    }

    #[test]
    fn identity_pipeline_changes_nothing() {
        let outcomes: Vec<_> = (0..8).map(|i| outcome(i % 2, 0, 0)).collect();
        let m = summarize(0, 0, &outcomes);
        assert_eq!((m.csr, m.mcr), (Some(0.0), Some(0.0)));
        assert_eq!(m.accuracy_before, m.accuracy_after);
        assert_eq!(m.mean_changed_identifiers, None);
    }

    #[test]
    fn empty_denominators_are_absent() {
        let m = summarize(0, 0, &[outcome(1, 1, 1)]);
        assert_eq!(m.csr, None);
        assert_eq!(m.mcr, Some(0.0));
    }

    #[test]
    fn report_averages_defined_values() {
        let a = summarize(0, 0, &[outcome(0, 1, 0), outcome(0, 0, 0)]);
        let b = summarize(1, 0, &[outcome(0, 0, 0)]);
        let report = MetricsReport::from_repetitions(vec![a, b]);
        assert_eq!(report.csr, Some(1.0));
        assert_eq!(report.accuracy_before, 0.75);
    }

    #[test]
    fn timing_is_not_serialized() {
        let line = serde_json::to_string(&outcome(0, 0, 0)).unwrap();
        assert!(!line.contains("elapsed"));
        let back: InputOutcome = serde_json::from_str(&line).unwrap();
        assert_eq!(back.elapsed_seconds, 0.0);
    }
}
