//! The desk-scale ablation: synthesize a corpus, train the toy models,
//! inject misleading names into the test split and compare the full
//! pipeline against random localization and random cleansing.

use std::time::{Duration, Instant};

use serde::Serialize;

use super::synth::split;
use super::{
    evaluate, inject_noise, synthesize, Corpus, DetectorSetting, HarnessError, LocalizerKind, MarkerPools,
    MetricsReport, Models, PipelineConfig, SynthConfig,
};
use crate::backend::{train_mcip, train_toy, Classifier, LabeledSnippet, McipConfig, ToyConfig};
use crate::cleanser::Strategy;
use crate::code::Vocabulary;

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub synth: SynthConfig,
    pub toy: ToyConfig,
    pub mcip: McipConfig,
    pub test_fraction: f64,
    pub noise_rate: f64,
    pub noise_seed: u64,
    pub repetitions: usize,
    pub seed: u64,
    pub workers: usize,
    pub marker_support: usize,
    pub marker_purity: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            synth: SynthConfig::default(),
            toy: ToyConfig::default(),
            mcip: McipConfig::default(),
            test_fraction: 0.2,
            noise_rate: 0.3,
            noise_seed: 1,
            repetitions: 5,
            seed: 0,
            workers: 1,
            marker_support: 5,
            marker_purity: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variant {
    /// Attention ranking with clean-identifier replacement.
    Full,
    /// Random ranking.
    RandomLocalization,
    /// Random replacement names.
    RandomCleansing,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::RandomLocalization, Variant::RandomCleansing];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::RandomLocalization => "randL",
            Variant::RandomCleansing => "randC",
        }
    }

    pub fn pipeline(self, repetitions: usize, seed: u64, workers: usize) -> PipelineConfig {
        let (localizer, strategy) = match self {
            Variant::Full => (LocalizerKind::Attention, Strategy::Mcip),
            Variant::RandomLocalization => (LocalizerKind::Random, Strategy::Mcip),
            Variant::RandomCleansing => (LocalizerKind::Attention, Strategy::Random),
        };
        PipelineConfig { localizer, strategy, repetitions, seed, workers, ..PipelineConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub clean_accuracy: f64,
    pub noisy_accuracy: f64,
    pub injected: usize,
    pub test_inputs: usize,
    pub variants: Vec<(Variant, MetricsReport)>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl AblationReport {
    pub fn variant(&self, variant: Variant) -> &MetricsReport {
        &self.variants.iter().find(|(v, _)| *v == variant).expect("every variant is run").1
    }
}

fn accuracy(classifier: &dyn Classifier, records: &[LabeledSnippet]) -> Result<f64, HarnessError> {
    let mut hits = 0;
    for r in records {
        let label = classifier
            .classify(&r.snippet)
            .map_err(|source| HarnessError::Backend { id: r.id.clone(), source })?
            .label();
        hits += usize::from(label == r.label);
    }
    Ok(hits as f64 / records.len().max(1) as f64)
}

pub fn run_ablation(config: &AblationConfig) -> Result<AblationReport, HarnessError> {
    let started = Instant::now();
    let classes = config.toy.classes;
    let (train, test) = split(synthesize(&config.synth), config.test_fraction);
    let train = Corpus::from_records(None, train, Some(classes))?.records;
    let test = Corpus::from_records(None, test, Some(classes))?.records;

    let (toy, _) = train_toy(&train, config.toy.clone())?;
    let mcip = train_mcip(&train, &toy, config.mcip)?.model;
    let vocabulary = Vocabulary::from_snippets(train.iter().map(|r| &r.snippet), "synthetic train split");
    let markers = MarkerPools::derive(&train, classes, &vocabulary, config.marker_support, config.marker_purity);
    let injection = inject_noise(&test, &markers, config.noise_rate, config.noise_seed)?;

    let models = Models { classifier: &toy, vocabulary: &vocabulary, mcip: Some(&mcip), mip: None };
    let mut variants = Vec::new();
    for variant in Variant::ALL {
        let pipeline = variant.pipeline(config.repetitions, config.seed, config.workers);
        debug_assert!(matches!(pipeline.detector, DetectorSetting::Smoothing { .. }));
        let evaluation = evaluate(&injection.records, &pipeline, &models)?;
        variants.push((variant, evaluation.report));
    }
    Ok(AblationReport {
        clean_accuracy: accuracy(&toy, &test)?,
        noisy_accuracy: accuracy(&toy, &injection.records)?,
        injected: injection.manifest.len(),
        test_inputs: test.len(),
        variants,
        elapsed: started.elapsed(),
    })
}
