//! Line-delimited JSON corpora, one `<split>.ndjson` file per split.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::LabeledSnippet;
use crate::code::{CodeSnippet, Language};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ndjson", self.name())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validate" => Ok(Split::Validate),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub code: String,
    pub label: usize,
    pub language: Language,
}

impl CorpusRecord {
    pub fn from_labeled(record: &LabeledSnippet) -> Self {
        CorpusRecord {
            id: record.id.clone(),
            code: record.snippet.source().to_string(),
            label: record.label,
            language: record.snippet.language(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub split: Option<Split>,
    pub records: Vec<LabeledSnippet>,
}

impl Corpus {
    /// Parses every record, rejecting duplicate ids and, when `classes` is
    /// given, out-of-range labels.
    pub fn from_records(
        split: Option<Split>,
        records: Vec<CorpusRecord>,
        classes: Option<usize>,
    ) -> Result<Self, HarnessError> {
        let mut seen = BTreeSet::new();
        let mut parsed = Vec::with_capacity(records.len());
        for record in records {
            if !seen.insert(record.id.clone()) {
                return Err(HarnessError::Usage(format!("duplicate record id `{}`", record.id)));
            }
            if let Some(c) = classes {
                if record.label >= c {
                    return Err(HarnessError::Usage(format!(
                        "record `{}` has label {} outside [0, {c})",
                        record.id, record.label
                    )));
                }
            }
            let snippet = CodeSnippet::parse(record.code, record.language)
                .map_err(|source| HarnessError::Syntax { id: record.id.clone(), source })?;
            parsed.push(LabeledSnippet { id: record.id, snippet, label: record.label });
        }
        Ok(Corpus { split, records: parsed })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Smallest class count consistent with the labels.
    pub fn classes(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }

    pub fn to_records(&self) -> Vec<CorpusRecord> {
        self.records.iter().map(CorpusRecord::from_labeled).collect()
    }
}

pub fn read_records(path: &Path) -> Result<Vec<CorpusRecord>, HarnessError> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Reads a corpus file; the split is taken from the file stem when it
/// names one.
pub fn read_corpus(path: &Path, classes: Option<usize>) -> Result<Corpus, HarnessError> {
    let split = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok());
    Corpus::from_records(split, read_records(path)?, classes)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<(), HarnessError> {
    let file = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("records serialize");
        writeln!(out, "{line}").map_err(|e| HarnessError::io(path, e))?;
    }
    out.flush().map_err(|e| HarnessError::io(path, e))
}
