//! Ranking identifiers by how much they drive the prediction.
//!
//! A token's contribution is its attention weight averaged over layers. An
//! identifier scores the maximum contribution over its occurrences, and the
//! ranked list puts the highest scorer first, breaking ties by earliest
//! first occurrence.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backend::{AttentionMap, BackendError, Classifier};
use crate::code::CodeSnippet;

/// Mean weight of each token across layers.
pub fn token_contributions(map: &AttentionMap) -> Result<Vec<f64>, BackendError> {
    let layers = map.layers();
    if layers == 0 {
        return Err(BackendError::Structure("attention map has no layers".into()));
    }
    let mut totals = vec![0.0; map.tokens()];
    for layer in map.weights() {
        for (t, w) in totals.iter_mut().zip(layer) {
            *t += w;
        }
    }
    Ok(totals.into_iter().map(|t| t / layers as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIdentifier {
    pub name: String,
    pub score: f64,
    pub first_occurrence: usize,
}

/// Identifiers of a snippet in the order the cleanser should visit them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedNoiseList {
    entries: Vec<RankedIdentifier>,
}

impl RankedNoiseList {
    pub fn entries(&self) -> &[RankedIdentifier] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Max contribution over each identifier's occurrences, in identifier order.
pub fn identifier_contributions(
    snippet: &CodeSnippet,
    contributions: &[f64],
) -> Result<Vec<RankedIdentifier>, BackendError> {
    if contributions.len() != snippet.tokens().len() {
        return Err(BackendError::Structure(format!(
            "{} contributions for {} tokens",
            contributions.len(),
            snippet.tokens().len()
        )));
    }
    Ok(snippet
        .identifiers()
        .entries()
        .iter()
        .map(|entry| RankedIdentifier {
            name: entry.name.clone(),
            score: entry.occurrences.iter().map(|&i| contributions[i]).fold(f64::NEG_INFINITY, f64::max),
            first_occurrence: entry.first_occurrence(),
        })
        .collect())
}

fn sort_ranked(mut entries: Vec<RankedIdentifier>) -> RankedNoiseList {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.first_occurrence.cmp(&b.first_occurrence)));
    RankedNoiseList { entries }
}

/// Ranks from an attention map already aligned to `snippet`.
pub fn rank_from_attention(snippet: &CodeSnippet, map: &AttentionMap) -> Result<RankedNoiseList, BackendError> {
    let contributions = token_contributions(map)?;
    Ok(sort_ranked(identifier_contributions(snippet, &contributions)?))
}

/// Attention-guided ranking. Fails when the classifier exposes no attention.
pub fn rank_noisy_identifiers(
    snippet: &CodeSnippet,
    classifier: &dyn Classifier,
) -> Result<RankedNoiseList, BackendError> {
    let map = classifier.attention_weights(snippet)?;
    rank_from_attention(snippet, &map)
}

/// A uniformly random order; every score is zero.
pub fn random_ranking(snippet: &CodeSnippet, seed: u64) -> RankedNoiseList {
    let mut entries: Vec<RankedIdentifier> = snippet
        .identifiers()
        .entries()
        .iter()
        .map(|e| RankedIdentifier { name: e.name.clone(), score: 0.0, first_occurrence: e.first_occurrence() })
        .collect();
    entries.shuffle(&mut crate::seed::rng(seed));
    RankedNoiseList { entries }
}
