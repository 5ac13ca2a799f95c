//! Pipeline configuration and its flat `key = value` file form.
//!
//! ```text
//! # full pipeline with the built-in toy backend
//! detector.kind = smoothing
//! detector.theta = 1
//! detector.n_multiplier = 1
//! localizer.kind = attention
//! cleanser.strategy = mcip
//! backend.kind = toy
//! repetitions = 5
//! seed = 0
//! workers = 4
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::cleanser::Strategy;
use crate::detector::{GiniConfig, SampleCount, SmoothingConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetectorSetting {
    Smoothing {
        theta: usize,
        samples: SampleCount,
    },
    /// ζ may be left open and filled from a calibration later.
    DeepGini(Option<GiniConfig>),
    /// Flags nothing; the pipeline becomes the identity.
    Never,
}

impl DetectorSetting {
    pub fn smoothing(&self, seed: u64) -> Option<SmoothingConfig> {
        match *self {
            DetectorSetting::Smoothing { theta, samples } => Some(SmoothingConfig { theta, samples, seed }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizerKind {
    Attention,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// The built-in trained classifier and context models.
    Toy,
    /// A child process speaking the line protocol.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub detector: DetectorSetting,
    pub localizer: LocalizerKind,
    pub strategy: Strategy,
    pub backend: BackendKind,
    pub backend_command: Option<String>,
    pub repetitions: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: DetectorSetting::Smoothing { theta: 1, samples: SampleCount::PerIdentifier(1) },
            localizer: LocalizerKind::Attention,
            strategy: Strategy::Mcip,
            backend: BackendKind::Toy,
            backend_command: None,
            repetitions: 5,
            seed: 0,
            workers: 1,
        }
    }
}

const KEYS: [&str; 11] = [
    "detector.kind",
    "detector.theta",
    "detector.n_multiplier",
    "detector.zeta",
    "localizer.kind",
    "cleanser.strategy",
    "backend.kind",
    "backend.command",
    "repetitions",
    "seed",
    "workers",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, HarnessError> {
    raw.parse().map_err(|_| HarnessError::Usage(format!("invalid value `{raw}` for `{key}`")))
}

impl PipelineConfig {
    /// Parses the flat config format. Unset keys keep their defaults;
    /// unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut kind = "smoothing".to_string();
        let mut theta = 1usize;
        let mut multiplier = 1usize;
        let mut zeta: Option<f64> = None;
        let mut config = PipelineConfig::default();

        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| HarnessError::Usage(format!("line {}: expected `key = value`", n + 1)))?;
            match key {
                "detector.kind" => kind = raw.to_string(),
                "detector.theta" => theta = value(key, raw)?,
                "detector.n_multiplier" => multiplier = value(key, raw)?,
                "detector.zeta" => zeta = Some(value(key, raw)?),
                "localizer.kind" => {
                    config.localizer = match raw {
                        "attention" => LocalizerKind::Attention,
                        "random" => LocalizerKind::Random,
                        _ => return Err(HarnessError::Usage(format!("unknown localizer `{raw}`"))),
                    }
                }
                "cleanser.strategy" => config.strategy = raw.parse().map_err(HarnessError::Usage)?,
                "backend.kind" => {
                    config.backend = match raw {
                        "toy" => BackendKind::Toy,
                        "external" => BackendKind::External,
                        _ => return Err(HarnessError::Usage(format!("unknown backend `{raw}`"))),
                    }
                }
                "backend.command" => config.backend_command = Some(raw.to_string()),
                "repetitions" => config.repetitions = value(key, raw)?,
                "seed" => config.seed = value(key, raw)?,
                "workers" => config.workers = value(key, raw)?,
                other => {
                    return Err(HarnessError::Usage(format!(
                        "unknown config key `{other}`; expected one of {}",
                        KEYS.join(", ")
                    )))
                }
            }
        }

        config.detector = match kind.as_str() {
            "smoothing" => {
                SmoothingConfig::new(theta, SampleCount::PerIdentifier(multiplier), 0)
                    .map_err(|e| HarnessError::Usage(e.to_string()))?;
                DetectorSetting::Smoothing { theta, samples: SampleCount::PerIdentifier(multiplier) }
            }
            "deepgini" => DetectorSetting::DeepGini(
                zeta.map(GiniConfig::new).transpose().map_err(|e| HarnessError::Usage(e.to_string()))?,
            ),
            "none" => DetectorSetting::Never,
            other => return Err(HarnessError::Usage(format!("unknown detector `{other}`"))),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.repetitions == 0 {
            return Err(HarnessError::Usage("repetitions must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Usage("workers must be at least 1".into()));
        }
        if self.backend == BackendKind::External && self.backend_command.is_none() {
            return Err(HarnessError::Usage("backend.kind = external needs backend.command".into()));
        }
        Ok(())
    }

    /// The flat file form; parsing it gives back `self`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        match &self.detector {
            DetectorSetting::Smoothing { theta, samples } => {
                let _ = writeln!(out, "detector.kind = smoothing");
                let _ = writeln!(out, "detector.theta = {theta}");
                match samples {
                    SampleCount::PerIdentifier(m) => {
                        let _ = writeln!(out, "detector.n_multiplier = {m}");
                    }
                    SampleCount::Fixed(n) => {
                        let _ = writeln!(out, "# fixed sample count {n} has no file form");
                    }
                }
            }
            DetectorSetting::DeepGini(zeta) => {
                let _ = writeln!(out, "detector.kind = deepgini");
                if let Some(z) = zeta {
                    let _ = writeln!(out, "detector.zeta = {}", z.zeta());
                }
            }
            DetectorSetting::Never => {
                let _ = writeln!(out, "detector.kind = none");
            }
        }
        let localizer = match self.localizer {
            LocalizerKind::Attention => "attention",
            LocalizerKind::Random => "random",
        };
        let _ = writeln!(out, "localizer.kind = {localizer}");
        let _ = writeln!(out, "cleanser.strategy = {}", self.strategy);
        let backend = match self.backend {
            BackendKind::Toy => "toy",
            BackendKind::External => "external",
        };
        let _ = writeln!(out, "backend.kind = {backend}");
        if let Some(cmd) = &self.backend_command {
            let _ = writeln!(out, "backend.command = {cmd}");
        }
        let _ = writeln!(out, "repetitions = {}", self.repetitions);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "workers = {}", self.workers);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::parse("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn all_keys_parse() {
        let text = "detector.kind = deepgini\ndetector.zeta = 0.25\nlocalizer.kind = random\n\
                    cleanser.strategy = mip\nbackend.kind = external\nbackend.command = ./serve --flag\n\
                    repetitions = 3\nseed = 42\nworkers = 8\n";
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.detector, DetectorSetting::DeepGini(Some(GiniConfig::new(0.25).unwrap())));
        assert_eq!(c.localizer, LocalizerKind::Random);
        assert_eq!(c.strategy, Strategy::Mip);
        assert_eq!(c.backend_command.as_deref(), Some("./serve --flag"));
        assert_eq!((c.repetitions, c.seed, c.workers), (3, 42, 8));
        assert_eq!(PipelineConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn smoothing_round_trip() {
        let text = "detector.theta = 3\ndetector.n_multiplier = 2\n";
        let c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.detector, DetectorSetting::Smoothing { theta: 3, samples: SampleCount::PerIdentifier(2) });
        assert_eq!(PipelineConfig::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn bad_input_is_a_usage_error() {
        for text in [
            "detector.thetta = 1",
            "repetitions = 0",
            "detector.theta = 0",
            "detector.zeta = 1.5\ndetector.kind = deepgini",
            "seed = -1",
            "no equals sign",
            "backend.kind = external",
            "cleanser.strategy = beam",
        ] {
            let err = PipelineConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 1, "{text}");
        }
    }
}
