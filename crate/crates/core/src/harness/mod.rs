//! Pipeline orchestration, corpora, noise injection and evaluation.

use std::io;
use std::path::PathBuf;

use crate::backend::{BackendError, Classifier, MaskPredictor};
use crate::cleanser::CleanseError;
use crate::code::{SyntaxError, Vocabulary};

pub mod ablation;
pub mod config;
pub mod corpus;
pub mod evaluate;
pub mod inject;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use ablation::{run_ablation, AblationConfig, AblationReport, Variant};
pub use config::{BackendKind, DetectorSetting, LocalizerKind, PipelineConfig};
pub use corpus::{read_corpus, write_corpus, Corpus, CorpusRecord, Split};
pub use evaluate::{evaluate, write_evaluation, Evaluation};
pub use inject::{inject_noise, Injection, InjectionEntry, MarkerPools};
pub use metrics::{summarize, InputOutcome, MetricsReport, RepetitionMetrics};
pub use pipeline::{denoise_input, DenoiseResult};
pub use synth::{synthesize, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Usage(String),
    #[error("input `{id}`: {source}")]
    Backend {
        id: String,
        #[source]
        source: BackendError,
    },
    #[error("input `{id}`: {source}")]
    Cleanse {
        id: String,
        #[source]
        source: Box<CleanseError>,
    },
    #[error("{0}")]
    BackendSetup(#[from] BackendError),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("record `{id}` does not parse: {source}")]
    Syntax {
        id: String,
        #[source]
        source: SyntaxError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl HarnessError {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 1,
            HarnessError::Backend { .. } | HarnessError::Cleanse { .. } | HarnessError::BackendSetup(_) => 2,
            HarnessError::Parse { .. } | HarnessError::Syntax { .. } => 3,
            HarnessError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}

/// Everything the pipeline reads; nothing in here is modified by it.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub classifier: &'a dyn Classifier,
    pub vocabulary: &'a Vocabulary,
    pub mcip: Option<&'a dyn MaskPredictor>,
    pub mip: Option<&'a dyn MaskPredictor>,
}
