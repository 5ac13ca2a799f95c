//! A small synthetic corpus: four families of list algorithms written with
//! a mix of descriptive, class-specific names and everyday generic ones.
//!
//! | label | family    |
//! |-------|-----------|
//! | 0     | sorting   |
//! | 1     | searching |
//! | 2     | summing   |
//! | 3     | counting  |
//!
//! All four families write the same statements around one of three shared
//! loops; a family shows only in the order of those statements. A bag of
//! tokens therefore cannot tell the families apart without the names, while
//! a model that reads the context around a name can.
//!
//! The function, its sequence parameter and its accumulator get a
//! descriptive name with a configurable chance and a generic one otherwise.
//! Generic names lean slightly towards one family each. Loop variables are
//! always generic and appear in the same context in every family.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::CorpusRecord;
use crate::code::Language;

pub const CLASS_NAMES: [&str; 4] = ["sort", "search", "sum", "count"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Chance that a function gets a descriptive name.
    pub function_rate: f64,
    /// Chance that the sequence parameter and the accumulator each get a
    /// descriptive name.
    pub local_rate: f64,
    /// Relative weight a family gives to its favoured generic names.
    pub generic_skew: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { per_class: 500, seed: 0, function_rate: 0.6, local_rate: 0.6, generic_skew: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Func,
    Seq,
    Index,
    Elem,
    /// The accumulator: descriptive name or a generic fallback.
    Local,
}

fn generic(role: Role) -> &'static [&'static str] {
    match role {
        Role::Func => &["solve", "run", "process", "helper", "compute", "handle", "apply", "execute", "step", "func"],
        Role::Seq => &["items", "data", "values", "arr", "xs", "seq", "nums", "lst", "elems", "rows"],
        Role::Index => &["i", "j", "k", "idx", "p", "q", "m", "pos", "ix", "jj"],
        Role::Elem => &["x", "item", "value", "elem", "v", "e", "y", "cell", "entry", "obj"],
        Role::Local => &["tmp", "res", "out", "cur", "r", "acc", "val", "state", "aux", "z"],
    }
}

fn descriptive(class: usize, role: Role) -> &'static [&'static str] {
    match (class, role) {
        (0, Role::Func) => &["bubble_sort", "sort_items", "insertion_sort"],
        (1, Role::Func) => &["binary_search", "find_index", "search_item"],
        (2, Role::Func) => &["total_sum", "accumulate", "sum_values"],
        (3, Role::Func) => &["count_items", "tally", "count_matches"],
        (0, Role::Local) => &["smallest", "swapped", "ordered"],
        (1, Role::Local) => &["found", "target", "located"],
        (2, Role::Local) => &["total", "running_sum", "subtotal"],
        (3, Role::Local) => &["counts", "tallies", "occurrences"],
        (0, Role::Seq) => &["unsorted", "to_sort", "jumbled"],
        (1, Role::Seq) => &["haystack", "candidates", "sorted_keys"],
        (2, Role::Seq) => &["addends", "amounts", "summands"],
        (3, Role::Seq) => &["population", "samples", "observations"],
        _ => &[],
    }
}

const HEADER: &str = "def {f}({s}):\n";

/// Module-level statements around the function: (before, after). Every
/// family writes the same two, so only the context of the function name
/// tells the families apart.
const LAYOUT: [(&str, &str); 4] =
    [("pass\nNone\n", ""), ("None\npass\n", ""), ("pass\n", "None\n"), ("None\n", "pass\n")];

/// Set-up statements. Every family uses all five, in its own order.
const SETUP: [&str; 5] =
    ["{a} = 0", "assert {s} is not None", "{s} = list({s})", "if not {s}:\n        return 0", "del {s}[len({s}):]"];

/// Statement order of each family's set-up. The first statement and the one
/// before the accumulator differ between families, so the first occurrence
/// of the function, the sequence and the accumulator sits in a context only
/// its family uses. All end alike: loop variables carry no family.
const ORDER: [[usize; 5]; 4] = [[0, 1, 2, 3, 4], [1, 0, 3, 2, 4], [2, 3, 0, 1, 4], [3, 2, 0, 1, 4]];

/// Loop bodies shared by every family.
const CORES: [&str; 3] = [
    "    for {i} in range(len({s})):\n        {a} = {a} + {s}[{i}]\n",
    "    for {x} in {s}:\n        if {x} not in ({a},):\n            {a} += 1\n",
    "    {i} = 0\n    while {i} < len({s}):\n        {a} = max({a}, {s}[{i}])\n        {i} += 1\n",
];

const SLOTS: &[(&str, Role)] =
    &[("f", Role::Func), ("s", Role::Seq), ("a", Role::Local), ("i", Role::Index), ("x", Role::Elem)];

fn render(class: usize, config: &SynthConfig, rng: &mut impl Rng) -> String {
    let (before, after) = LAYOUT[class];
    let mut text = format!("{before}{HEADER}");
    for &statement in &ORDER[class] {
        text.push_str("    ");
        text.push_str(SETUP[statement]);
        text.push('\n');
    }
    text.push_str(CORES.choose(rng).expect("cores are nonempty"));
    text.push_str("    return {a}\n");
    text.push_str(after);

    let mut used: Vec<&str> = Vec::new();
    for &(slot, role) in SLOTS {
        let placeholder = format!("{{{slot}}}");
        if !text.contains(&placeholder) {
            continue;
        }
        let rate = match role {
            Role::Func => config.function_rate,
            Role::Local | Role::Seq => config.local_rate,
            _ => 0.0,
        };
        let name = if rng.gen_bool(rate) {
            let free: Vec<&str> = descriptive(class, role).iter().copied().filter(|o| !used.contains(o)).collect();
            *free.choose(rng).expect("name lists outnumber slots")
        } else {
            // Every family draws from the same generic names, favouring every
            // fourth one, so generic names hint at the family without deciding it.
            let free: Vec<(usize, &str)> =
                generic(role).iter().copied().enumerate().filter(|(_, o)| !used.contains(o)).collect();
            let weight = |k: usize| if k % CLASS_NAMES.len() == class { config.generic_skew } else { 1.0 };
            free.choose_weighted(rng, |&(k, _)| weight(k)).expect("name lists outnumber slots").1
        };
        used.push(name);
        text = text.replace(&placeholder, name);
    }
    text
}

/// `per_class` records of each family, shuffled. Ids are `<family>-<n>`.
pub fn synthesize(config: &SynthConfig) -> Vec<CorpusRecord> {
    let mut rng = crate::seed::rng(config.seed);
    let mut records = Vec::with_capacity(config.per_class * CLASS_NAMES.len());
    for (class, family) in CLASS_NAMES.iter().enumerate() {
        for n in 0..config.per_class {
            records.push(CorpusRecord {
                id: format!("{family}-{n}"),
                code: render(class, config, &mut rng),
                label: class,
                language: Language::Python,
            });
        }
    }
    records.shuffle(&mut rng);
    records
}

/// Splits off the last `test_fraction` of the records as a test set.
pub fn split(mut records: Vec<CorpusRecord>, test_fraction: f64) -> (Vec<CorpusRecord>, Vec<CorpusRecord>) {
    let test_len = (records.len() as f64 * test_fraction).round() as usize;
    let test = records.split_off(records.len() - test_len.min(records.len()));
    (records, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::CodeSnippet;

    fn nonidentifier_lexemes(s: &CodeSnippet) -> Vec<String> {
        let mut lexemes: Vec<String> = s
            .tokens()
            .iter()
            .filter(|t| t.kind != crate::code::TokenKind::Identifier)
            .map(|t| t.lexeme.clone())
            .collect();
        lexemes.sort();
        lexemes
    }

    #[test]
    fn every_record_parses_with_four_names() {
        let records = synthesize(&SynthConfig { per_class: 40, seed: 1, ..SynthConfig::default() });
        assert_eq!(records.len(), 160);
        for r in &records {
            let s = CodeSnippet::parse(r.code.clone(), r.language).unwrap();
            assert_eq!(s.identifiers().len(), 4, "{}", r.code);
        }
    }

    #[test]
    fn families_share_every_token_but_names() {
        let config = SynthConfig { per_class: 30, seed: 2, ..SynthConfig::default() };
        let mut bags: Vec<Vec<Vec<String>>> = vec![Vec::new(); CLASS_NAMES.len()];
        for r in synthesize(&config) {
            let bag = nonidentifier_lexemes(&CodeSnippet::parse(r.code, r.language).unwrap());
            if !bags[r.label].contains(&bag) {
                bags[r.label].push(bag);
            }
        }
        for bag in &mut bags {
            bag.sort();
        }
        assert!(bags.iter().all(|b| b == &bags[0]), "{bags:?}");
    }

    #[test]
    fn first_occurrence_context_names_the_family() {
        use crate::backend::{McipConfig, McipModel};
        use crate::code::mask_identifier;
        let model = McipModel::new(McipConfig::default());
        let records = synthesize(&SynthConfig { per_class: 30, seed: 3, ..SynthConfig::default() });
        // slot -> context -> families seen there
        let mut seen: std::collections::BTreeMap<(usize, String), std::collections::BTreeSet<usize>> =
            Default::default();
        for r in &records {
            let s = CodeSnippet::parse(r.code.clone(), r.language).unwrap();
            // identifiers in first-occurrence order: function, sequence, accumulator, loop variable
            for (slot, entry) in s.identifiers().entries().iter().enumerate() {
                let masked = mask_identifier(&s, &entry.name).unwrap();
                let context = model.context_of(&masked).unwrap();
                seen.entry((slot.min(3), context)).or_default().insert(r.label);
            }
        }
        for ((slot, context), families) in &seen {
            if *slot < 3 {
                assert_eq!(families.len(), 1, "slot {slot} context {context:?}");
            }
        }
        assert!(seen.iter().any(|((slot, _), f)| *slot == 3 && f.len() == CLASS_NAMES.len()));
    }

    #[test]
    fn generation_is_seeded() {
        let config = SynthConfig { per_class: 5, ..SynthConfig::default() };
        assert_eq!(synthesize(&config), synthesize(&config));
        assert_ne!(synthesize(&config), synthesize(&SynthConfig { seed: 1, ..config }));
    }

    #[test]
    fn split_sizes() {
        let records = synthesize(&SynthConfig { per_class: 10, ..SynthConfig::default() });
        let (train, test) = split(records, 0.2);
        assert_eq!((train.len(), test.len()), (32, 8));
    }
}
