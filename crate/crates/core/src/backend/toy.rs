//! A small attention-pooling classifier trained from scratch.
//!
//! Tokens are embedded through a hashed lookup table, pooled with a single
//! softmax attention over a learned query vector and classified by a
//! linear softmax head:
//!
//! ```text
//! e_i = E[hash(token_i)]      s_i = q . e_i       a = softmax(s)
//! h   = sum_i a_i e_i         z   = W h + b       p = softmax(z)
//! ```
//!
//! Trained with per-example gradient descent on cross entropy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, AttentionMap, BackendError, Classifier, LabeledSnippet, Prediction};
use crate::code::{fnv1a, CodeSnippet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub classes: usize,
    pub dim: usize,
    pub buckets: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { classes: 4, dim: 16, buckets: 4096, learning_rate: 0.1, epochs: 8, seed: 7, init_scale: 0.1 }
    }
}

/// One scalar parameter of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Param {
    Embedding { bucket: usize, dim: usize },
    Query(usize),
    Output { class: usize, dim: usize },
    Bias(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyClassifier {
    config: ToyConfig,
    embeddings: Vec<f64>,
    query: Vec<f64>,
    output: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient of the loss for one example. Embedding rows are sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub query: Vec<f64>,
    pub output: Vec<f64>,
    pub bias: Vec<f64>,
    dim: usize,
}

impl Gradient {
    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::Embedding { bucket, dim } => self.embeddings.get(&bucket).map_or(0.0, |row| row[dim]),
            Param::Query(d) => self.query[d],
            Param::Output { class, dim } => self.output[class * self.dim + dim],
            Param::Bias(c) => self.bias[c],
        }
    }
}

struct Forward {
    buckets: Vec<usize>,
    attention: Vec<f64>,
    pooled: Vec<f64>,
    probabilities: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ToyClassifier {
    /// All parameters zero: every input gets the uniform distribution.
    pub fn zeroed(config: ToyConfig) -> Self {
        ToyClassifier {
            embeddings: vec![0.0; config.buckets * config.dim],
            query: vec![0.0; config.dim],
            output: vec![0.0; config.classes * config.dim],
            bias: vec![0.0; config.classes],
            config,
        }
    }

    pub fn random(config: ToyConfig) -> Self {
        let mut rng = crate::seed::rng(config.seed);
        let scale = config.init_scale;
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..=scale)).collect() };
        let embeddings = draw(config.buckets * config.dim);
        let query = draw(config.dim);
        let output = draw(config.classes * config.dim);
        ToyClassifier { embeddings, query, output, bias: vec![0.0; config.classes], config }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn bucket(&self, lexeme: &str) -> usize {
        (fnv1a(lexeme.as_bytes()) % self.config.buckets as u64) as usize
    }

    pub fn param(&self, param: Param) -> f64 {
        match param {
            Param::Embedding { bucket, dim } => self.embeddings[bucket * self.config.dim + dim],
            Param::Query(d) => self.query[d],
            Param::Output { class, dim } => self.output[class * self.config.dim + dim],
            Param::Bias(c) => self.bias[c],
        }
    }

    pub fn set_param(&mut self, param: Param, value: f64) {
        let dim = self.config.dim;
        let slot = match param {
            Param::Embedding { bucket, dim: d } => &mut self.embeddings[bucket * dim + d],
            Param::Query(d) => &mut self.query[d],
            Param::Output { class, dim: d } => &mut self.output[class * dim + d],
            Param::Bias(c) => &mut self.bias[c],
        };
        *slot = value;
    }

    fn embedding(&self, bucket: usize) -> &[f64] {
        let d = self.config.dim;
        &self.embeddings[bucket * d..(bucket + 1) * d]
    }

    fn forward<'a>(&self, lexemes: impl IntoIterator<Item = &'a str>) -> Forward {
        let d = self.config.dim;
        let buckets: Vec<usize> = lexemes.into_iter().map(|l| self.bucket(l)).collect();
        let scores: Vec<f64> = buckets.iter().map(|&b| dot(&self.query, self.embedding(b))).collect();
        let attention = if scores.is_empty() { Vec::new() } else { softmax(&scores) };
        let mut pooled = vec![0.0; d];
        for (&b, &a) in buckets.iter().zip(&attention) {
            for (h, e) in pooled.iter_mut().zip(self.embedding(b)) {
                *h += a * e;
            }
        }
        let logits: Vec<f64> =
            (0..self.config.classes).map(|c| dot(&self.output[c * d..(c + 1) * d], &pooled) + self.bias[c]).collect();
        Forward { buckets, attention, pooled, probabilities: softmax(&logits) }
    }

    fn lexemes(snippet: &CodeSnippet) -> impl Iterator<Item = &str> {
        snippet.tokens().iter().map(|t| t.lexeme.as_str())
    }

    pub fn probabilities(&self, snippet: &CodeSnippet) -> Vec<f64> {
        self.forward(Self::lexemes(snippet)).probabilities
    }

    /// Cross-entropy loss on one example and its exact gradient.
    pub fn loss_and_gradient<'a>(&self, lexemes: impl IntoIterator<Item = &'a str>, label: usize) -> (f64, Gradient) {
        let d = self.config.dim;
        let c = self.config.classes;
        let fwd = self.forward(lexemes);
        let loss = -fwd.probabilities[label].max(f64::MIN_POSITIVE).ln();

        // dL/dz = p - onehot(label)
        let mut dz = fwd.probabilities.clone();
        dz[label] -= 1.0;

        let mut output = vec![0.0; c * d];
        let mut dh = vec![0.0; d];
        for k in 0..c {
            for j in 0..d {
                output[k * d + j] = dz[k] * fwd.pooled[j];
                dh[j] += self.output[k * d + j] * dz[k];
            }
        }

        // through the pooling: h = sum a_i e_i, a = softmax(q . e)
        let da: Vec<f64> = fwd.buckets.iter().map(|&b| dot(&dh, self.embedding(b))).collect();
        let mean_da: f64 = fwd.attention.iter().zip(&da).map(|(a, g)| a * g).sum();
        let ds: Vec<f64> = fwd.attention.iter().zip(&da).map(|(a, g)| a * (g - mean_da)).collect();

        let mut query = vec![0.0; d];
        let mut embeddings: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for ((&b, &a), &s) in fwd.buckets.iter().zip(&fwd.attention).zip(&ds) {
            let e = self.embedding(b);
            let row = embeddings.entry(b).or_insert_with(|| vec![0.0; d]);
            for j in 0..d {
                query[j] += s * e[j];
                row[j] += a * dh[j] + s * self.query[j];
            }
        }

        (loss, Gradient { embeddings, query, output, bias: dz, dim: d })
    }

    fn apply(&mut self, grad: &Gradient, lr: f64) {
        let d = self.config.dim;
        for (&b, row) in &grad.embeddings {
            for (p, g) in self.embeddings[b * d..(b + 1) * d].iter_mut().zip(row) {
                *p -= lr * g;
            }
        }
        for (p, g) in self.query.iter_mut().zip(&grad.query) {
            *p -= lr * g;
        }
        for (p, g) in self.output.iter_mut().zip(&grad.output) {
            *p -= lr * g;
        }
        for (p, g) in self.bias.iter_mut().zip(&grad.bias) {
            *p -= lr * g;
        }
    }

    /// Mean cross-entropy over `corpus`.
    pub fn mean_loss(&self, corpus: &[LabeledSnippet]) -> f64 {
        let total: f64 =
            corpus.iter().map(|r| -self.probabilities(&r.snippet)[r.label].max(f64::MIN_POSITIVE).ln()).sum();
        total / corpus.len().max(1) as f64
    }
}

impl Classifier for ToyClassifier {
    fn classify(&self, snippet: &CodeSnippet) -> Result<Prediction, BackendError> {
        Prediction::new(self.probabilities(snippet))
    }

    fn attention_weights(&self, snippet: &CodeSnippet) -> Result<AttentionMap, BackendError> {
        let fwd = self.forward(Self::lexemes(snippet));
        AttentionMap::new(vec![fwd.attention], snippet.tokens().len())
    }
}

/// Mean training loss before training and after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
}

pub fn train_toy(corpus: &[LabeledSnippet], config: ToyConfig) -> Result<(ToyClassifier, TrainingLog), BackendError> {
    if corpus.is_empty() {
        return Err(BackendError::Validation("training corpus is empty".into()));
    }
    if config.classes == 0 || config.dim == 0 || config.buckets == 0 {
        return Err(BackendError::Validation("classes, dim and buckets must be positive".into()));
    }
    if let Some(bad) = corpus.iter().find(|r| r.label >= config.classes) {
        return Err(BackendError::Validation(format!(
            "record `{}` has label {} but the model has {} classes",
            bad.id, bad.label, config.classes
        )));
    }

    let mut model = ToyClassifier::random(config.clone());
    let mut rng = crate::seed::rng(crate::seed::derive(config.seed, 0x5eed));
    let initial_loss = model.mean_loss(corpus);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let record = &corpus[i];
            let lexemes = record.snippet.tokens().iter().map(|t| t.lexeme.as_str());
            let (_, grad) = model.loss_and_gradient(lexemes, record.label);
            model.apply(&grad, config.learning_rate);
        }
        epoch_losses.push(model.mean_loss(corpus));
    }
    Ok((model, TrainingLog { initial_loss, epoch_losses }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, src: &str, label: usize) -> LabeledSnippet {
        LabeledSnippet { id: id.into(), snippet: CodeSnippet::python(src).unwrap(), label }
    }

    fn marker_corpus() -> Vec<LabeledSnippet> {
        let mut out = Vec::new();
        for i in 0..20 {
            out.push(record(&format!("a{i}"), &format!("alpha_{} = {i}\nx = alpha_{}\n", i % 3, i % 3), 0));
            out.push(record(&format!("b{i}"), &format!("beta_{} = {i}\nx = beta_{}\n", i % 3, i % 3), 1));
        }
        out
    }

    fn small_config() -> ToyConfig {
        ToyConfig { classes: 2, dim: 8, buckets: 256, epochs: 10, ..ToyConfig::default() }
    }

    #[test]
    fn zeroed_model_is_uniform() {
        let model = ToyClassifier::zeroed(ToyConfig { classes: 4, ..ToyConfig::default() });
        let p = model.classify(&CodeSnippet::python("def f(a): return a").unwrap()).unwrap();
        assert_eq!(p.probabilities(), &[0.25; 4]);
        assert_eq!(p.label(), 0);
    }

    #[test]
    fn attention_is_a_distribution_over_tokens() {
        let model = ToyClassifier::random(small_config());
        let s = CodeSnippet::python("x = y + 1").unwrap();
        let map = model.attention_weights(&s).unwrap();
        assert_eq!(map.layers(), 1);
        assert_eq!(map.tokens(), 5);
        let sum: f64 = map.weights()[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);

        let three = CodeSnippet::python("a = b").unwrap();
        let map = model.attention_weights(&three).unwrap();
        assert_eq!(map.tokens(), 3);
    }

    #[test]
    fn separable_corpus_is_learned() {
        let corpus = marker_corpus();
        let (model, log) = train_toy(&corpus, small_config()).unwrap();
        assert!(log.epoch_losses[0] < log.initial_loss);
        let correct = corpus.iter().filter(|r| model.classify(&r.snippet).unwrap().label() == r.label).count();
        assert!(correct as f64 / corpus.len() as f64 >= 0.95);
    }

    #[test]
    fn single_example_is_overfit() {
        let corpus = vec![record("only", "value = 3\n", 2)];
        let config = ToyConfig { classes: 3, ..small_config() };
        let (model, _) = train_toy(&corpus, config).unwrap();
        let p = model.classify(&corpus[0].snippet).unwrap();
        assert!(p.confidence(2) > 1.0 / 3.0);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let corpus = vec![record("bad", "x = 1\n", 2)];
        let err = train_toy(&corpus, small_config()).unwrap_err();
        assert!(matches!(err, BackendError::Validation(_)));
        assert!(train_toy(&[], small_config()).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = marker_corpus();
        let (a, _) = train_toy(&corpus, small_config()).unwrap();
        let (b, _) = train_toy(&corpus, small_config()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeded_training_is_pinned() {
        let (model, _) = train_toy(&marker_corpus(), small_config()).unwrap();
        let held_out = CodeSnippet::python("beta_7 = 40\ny = alpha_2\n").unwrap();
        let p = model.probabilities(&held_out);
        // `beta_7` was never seen; the known `alpha_2` pulls towards class 0
        let golden = [0.7758144579046772, 0.2241855420953228];
        for (a, b) in p.iter().zip(golden) {
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
    }
}
