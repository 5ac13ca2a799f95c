//! Misleading-name injection.
//!
//! A class marker is a name that, in the training data, almost only occurs
//! in code of one class. Injection renames one identifier of a record to a
//! marker of some other class, which is a semantics-preserving change that
//! tends to pull a name-sensitive model toward the wrong answer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::LabeledSnippet;
use crate::code::{rename_identifier, Vocabulary};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPools {
    pools: Vec<Vec<String>>,
}

impl MarkerPools {
    pub fn from_pools(pools: Vec<Vec<String>>) -> Self {
        MarkerPools { pools }
    }

    /// Names found in at least `min_support` training records, at least
    /// `min_purity` of which belong to a single class. Only names in
    /// `vocabulary` are considered.
    pub fn derive(
        train: &[LabeledSnippet],
        classes: usize,
        vocabulary: &Vocabulary,
        min_support: usize,
        min_purity: f64,
    ) -> Self {
        let mut frequency: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for record in train {
            for name in record.snippet.identifiers().names() {
                let counts = frequency.entry(name).or_insert_with(|| vec![0; classes]);
                if record.label < classes {
                    counts[record.label] += 1;
                }
            }
        }
        let mut pools = vec![Vec::new(); classes];
        for (name, counts) in frequency {
            let total: usize = counts.iter().sum();
            if total < min_support.max(1) || !vocabulary.contains(name) {
                continue;
            }
            let (class, &top) = counts.iter().enumerate().max_by_key(|&(c, n)| (*n, std::cmp::Reverse(c))).unwrap();
            if top as f64 / total as f64 >= min_purity {
                pools[class].push(name.to_string());
            }
        }
        MarkerPools { pools }
    }

    pub fn classes(&self) -> usize {
        self.pools.len()
    }

    pub fn pool(&self, class: usize) -> &[String] {
        self.pools.get(class).map_or(&[], Vec::as_slice)
    }
}

/// One injected rename.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectionEntry {
    pub id: String,
    pub label: usize,
    pub identifier: String,
    pub replacement: String,
    /// Class the replacement is a marker of.
    pub marker_class: usize,
}

#[derive(Debug, Clone)]
pub struct Injection {
    pub records: Vec<LabeledSnippet>,
    pub manifest: Vec<InjectionEntry>,
    /// Selected records that could not be renamed.
    pub skipped: usize,
}

/// Renames one identifier in `round(rate · n)` uniformly chosen records to a
/// marker of a uniformly chosen wrong class. Records without identifiers,
/// or without a usable marker, are left alone and counted as skipped.
pub fn inject_noise(
    corpus: &[LabeledSnippet],
    markers: &MarkerPools,
    rate: f64,
    seed: u64,
) -> Result<Injection, HarnessError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(HarnessError::Usage(format!("noise rate {rate} outside [0, 1]")));
    }
    let mut rng = crate::seed::rng(seed);
    let count = (rate * corpus.len() as f64).round() as usize;
    let mut chosen = rand::seq::index::sample(&mut rng, corpus.len(), count).into_vec();
    chosen.sort_unstable();

    let mut records = corpus.to_vec();
    let mut manifest = Vec::new();
    let mut skipped = 0;
    for index in chosen {
        let record = &mut records[index];
        let snippet = &record.snippet;
        let names: Vec<&str> = snippet.identifiers().names().collect();
        if names.is_empty() {
            skipped += 1;
            continue;
        }
        let identifier = names[rng.gen_range(0..names.len())].to_string();
        let options: Vec<(usize, Vec<&str>)> = (0..markers.classes())
            .filter(|&c| c != record.label)
            .map(|c| {
                let free = markers
                    .pool(c)
                    .iter()
                    .map(String::as_str)
                    .filter(|m| !snippet.identifiers().occupies(m))
                    .collect::<Vec<_>>();
                (c, free)
            })
            .filter(|(_, free)| !free.is_empty())
            .collect();
        if options.is_empty() {
            skipped += 1;
            continue;
        }
        let (marker_class, free) = &options[rng.gen_range(0..options.len())];
        let replacement = free[rng.gen_range(0..free.len())];
        match rename_identifier(snippet, &identifier, replacement) {
            Ok(renamed) => {
                manifest.push(InjectionEntry {
                    id: record.id.clone(),
                    label: record.label,
                    identifier,
                    replacement: replacement.to_string(),
                    marker_class: *marker_class,
                });
                record.snippet = renamed;
            }
            Err(err) => {
                log::debug!("skipping `{}`: {err}", record.id);
                skipped += 1;
            }
        }
    }
    Ok(Injection { records, manifest, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::CodeSnippet;

    fn rec(id: &str, src: &str, label: usize) -> LabeledSnippet {
        LabeledSnippet { id: id.into(), snippet: CodeSnippet::python(src).unwrap(), label }
    }

    fn corpus() -> Vec<LabeledSnippet> {
        let mut out = Vec::new();
        for i in 0..6 {
            out.push(rec(&format!("s{i}"), &format!("def sort_it(xs):\n    tmp = xs[{i}]\n    return tmp\n"), 0));
            out.push(rec(&format!("f{i}"), &format!("def find_it(xs):\n    hit = xs[{i}]\n    return hit\n"), 1));
        }
        out.push(rec("bare", "print(1)", 0));
        out
    }

    fn pools() -> MarkerPools {
        let c = corpus();
        let vocab = Vocabulary::from_snippets(c.iter().map(|r| &r.snippet), "t");
        MarkerPools::derive(&c, 2, &vocab, 3, 0.9)
    }

    #[test]
    fn markers_are_class_pure_names() {
        let p = pools();
        assert_eq!(p.pool(0), ["sort_it", "tmp"]);
        assert_eq!(p.pool(1), ["find_it", "hit"]);
    }

    #[test]
    fn zero_rate_is_identity() {
        let c = corpus();
        let out = inject_noise(&c, &pools(), 0.0, 1).unwrap();
        assert!(out.manifest.is_empty());
        for (a, b) in c.iter().zip(&out.records) {
            assert_eq!(a.snippet.source(), b.snippet.source());
        }
    }

    #[test]
    fn full_rate_renames_every_identifier_bearing_record_once() {
        let c = corpus();
        let out = inject_noise(&c, &pools(), 1.0, 2).unwrap();
        assert_eq!(out.manifest.len(), 12);
        assert_eq!(out.skipped, 1);
        for entry in &out.manifest {
            assert_ne!(entry.marker_class, entry.label);
            let before = c.iter().find(|r| r.id == entry.id).unwrap();
            let after = out.records.iter().find(|r| r.id == entry.id).unwrap();
            assert!(after.snippet.identifiers().contains(&entry.replacement));
            assert!(!after.snippet.identifiers().contains(&entry.identifier));
            assert_eq!(after.snippet.digest(), before.snippet.digest());
        }
    }

    #[test]
    fn rate_is_validated() {
        assert_eq!(inject_noise(&corpus(), &pools(), 1.5, 0).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn injection_is_seeded() {
        let c = corpus();
        let a = inject_noise(&c, &pools(), 0.5, 9).unwrap();
        let b = inject_noise(&c, &pools(), 0.5, 9).unwrap();
        assert_eq!(a.manifest, b.manifest);
    }
}
