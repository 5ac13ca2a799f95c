use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use denoise_core::backend::protocol::{serve, ExternalBackend, OP_MASK_FILL};
use denoise_core::backend::{
    build_vocabulary, train_mcip, train_mip, train_toy, Classifier, MaskPredictor, McipConfig, McipModel,
    ToyClassifier, ToyConfig,
};
use denoise_core::code::{CodeSnippet, Language, Vocabulary};
use denoise_core::detector::{calibrate_zeta, deepgini_uncertainty, Calibration};
use denoise_core::harness::corpus::read_records;
use denoise_core::harness::evaluate::{input_seed as derive_input_seed, repetition_seed};
use denoise_core::harness::pipeline::detect;
use denoise_core::harness::synth::{split, CLASS_NAMES};
use denoise_core::harness::{
    denoise_input, evaluate, inject_noise, read_corpus, run_ablation, synthesize, write_corpus, write_evaluation,
    AblationConfig, BackendKind, Corpus, CorpusRecord, DetectorSetting, HarnessError, MarkerPools, Models,
    PipelineConfig, SynthConfig,
};

#[derive(Parser)]
#[command(name = "denoise", version, about = "Repair mispredictions of code classifiers by renaming identifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic four-class corpus as train/validate/test splits.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy classifier and the identifier models from `<data>/train.ndjson`.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 8)]
        epochs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Build the identifier vocabulary of a corpus file.
    Vocab {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rename identifiers of a corpus to misleading class markers.
    Inject {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the injection manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Print a detection verdict per record.
    Detect {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Denoise one snippet from a file or standard input.
    Denoise {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "python")]
        language: Language,
        /// Source file; `-` or absent reads standard input.
        input: Option<PathBuf>,
    },
    /// Run the pipeline over a labeled corpus and write report.json and outcomes.ndjson.
    Evaluate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the desk-scale ablation end to end on a synthetic corpus.
    Ablation {
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        corpus_seed: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        function_rate: Option<f64>,
        #[arg(long)]
        local_rate: Option<f64>,
        #[arg(long)]
        generic_skew: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        init_scale: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Serve the trained models over the line protocol on stdin/stdout.
    Serve {
        #[arg(long)]
        models: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string(value).expect("artifacts serialize");
    fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, HarnessError> {
    match path {
        Some(p) => PipelineConfig::parse(&fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?),
        None => Ok(PipelineConfig::default()),
    }
}

/// Trained artifacts of `train`.
struct Artifacts {
    toy: Option<ToyClassifier>,
    mcip: Option<McipModel>,
    mip: Option<McipModel>,
    vocabulary: Vocabulary,
    calibration: Option<Calibration>,
}

fn load_artifacts(dir: &Path) -> Result<Artifacts, HarnessError> {
    let optional = |name: &str| {
        let path = dir.join(name);
        path.exists().then_some(path)
    };
    Ok(Artifacts {
        toy: optional("toy.json").map(|p| read_json(&p)).transpose()?,
        mcip: optional("mcip.json").map(|p| read_json(&p)).transpose()?,
        mip: optional("mip.json").map(|p| read_json(&p)).transpose()?,
        vocabulary: read_json(&dir.join("vocab.json"))?,
        calibration: optional("gini.json").map(|p| read_json(&p)).transpose()?,
    })
}

/// The configured backend and the artifacts, wired together.
struct Runtime {
    artifacts: Artifacts,
    external: Option<ExternalBackend>,
    config: PipelineConfig,
}

impl Runtime {
    fn start(models: &Path, config: PipelineConfig) -> Result<Self, HarnessError> {
        let artifacts = load_artifacts(models)?;
        let mut config = config;
        if let DetectorSetting::DeepGini(None) = config.detector {
            let calibration = artifacts.calibration.as_ref().ok_or_else(|| {
                HarnessError::Usage("detector.kind = deepgini needs detector.zeta or a calibrated gini.json".into())
            })?;
            config.detector = DetectorSetting::DeepGini(Some(calibration.config));
        }
        let external = match config.backend {
            BackendKind::External => {
                let command = config.backend_command.as_deref().expect("validated");
                Some(ExternalBackend::spawn(command)?)
            }
            BackendKind::Toy => {
                if artifacts.toy.is_none() {
                    return Err(HarnessError::Usage(format!("{} has no toy.json", models.display())));
                }
                None
            }
        };
        Ok(Runtime { artifacts, external, config })
    }

    fn models(&self) -> Models<'_> {
        let classifier: &dyn Classifier = match &self.external {
            Some(ext) => ext.client(),
            None => self.artifacts.toy.as_ref().expect("checked at start"),
        };
        let local_mcip = self.artifacts.mcip.as_ref().map(|m| m as &dyn MaskPredictor);
        let mcip = match &self.external {
            Some(ext) if ext.client().supports(OP_MASK_FILL) => Some(ext.client() as &dyn MaskPredictor),
            _ => local_mcip,
        };
        Models {
            classifier,
            vocabulary: &self.artifacts.vocabulary,
            mcip,
            mip: self.artifacts.mip.as_ref().map(|m| m as &dyn MaskPredictor),
        }
    }
}

fn run(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Synth { out, per_class, seed } => {
            fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
            let records = synthesize(&SynthConfig { per_class, seed, ..SynthConfig::default() });
            let (rest, test) = split(records, 0.2);
            let (train, validate) = split(rest, 0.125);
            write_corpus(&out.join("train.ndjson"), &train)?;
            write_corpus(&out.join("validate.ndjson"), &validate)?;
            write_corpus(&out.join("test.ndjson"), &test)?;
            println!(
                "wrote {} train, {} validate, {} test records ({})",
                train.len(),
                validate.len(),
                test.len(),
                CLASS_NAMES.join(", ")
            );
            Ok(())
        }
        Command::Train { data, out, classes, epochs, seed } => train(&data, &out, classes, epochs, seed),
        Command::Vocab { corpus, out } => {
            let records = read_records(&corpus)?;
            let language = records.first().map_or(Language::Python, |r| r.language);
            let build =
                build_vocabulary(records.iter().map(|r| r.code.as_str()), language, &corpus.display().to_string());
            write_json(&out, &build.vocabulary)?;
            println!("{} names, {} unparsable records skipped", build.vocabulary.len(), build.skipped);
            Ok(())
        }
        Command::Inject { corpus, models, out, rate, seed, manifest } => {
            let clean = read_corpus(&corpus, None)?;
            let markers: MarkerPools = read_json(&models.join("markers.json"))?;
            let injection = inject_noise(&clean.records, &markers, rate, seed)?;
            let records: Vec<CorpusRecord> = injection.records.iter().map(CorpusRecord::from_labeled).collect();
            write_corpus(&out, &records)?;
            if let Some(path) = manifest {
                write_json(&path, &injection.manifest)?;
            }
            println!("renamed {} records, skipped {}", injection.manifest.len(), injection.skipped);
            Ok(())
        }
        Command::Detect { models, corpus, config } => {
            let runtime = Runtime::start(&models, load_config(config.as_deref())?)?;
            let corpus = read_corpus(&corpus, None)?;
            let models = runtime.models();
            let seed = repetition_seed(runtime.config.seed, 0);
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for record in &corpus.records {
                let input_seed = derive_input_seed(seed, &record.id);
                let verdict = detect(&record.id, &record.snippet, &runtime.config.detector, &models, input_seed)?;
                let _ = writeln!(out, "{}", serde_json::json!({ "id": record.id, "verdict": verdict }));
            }
            Ok(())
        }
        Command::Denoise { models, config, language, input } => {
            let runtime = Runtime::start(&models, load_config(config.as_deref())?)?;
            let source = match input.as_deref() {
                Some(p) if p != Path::new("-") => fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?,
                _ => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s).map_err(|e| HarnessError::io("<stdin>", e))?;
                    s
                }
            };
            let snippet = CodeSnippet::parse(source, language)
                .map_err(|source| HarnessError::Syntax { id: "input".into(), source })?;
            let seed = derive_input_seed(repetition_seed(runtime.config.seed, 0), "input");
            let result = denoise_input("input", &snippet, &runtime.config, &runtime.models(), seed)?;
            println!("label {}", result.final_label);
            if let Some(outcome) = &result.outcome {
                for step in &outcome.trace {
                    println!("{}", serde_json::to_string(step).expect("steps serialize"));
                }
                if outcome.changed_identifiers() > 0 {
                    print!("{}", outcome.denoised.source());
                }
            }
            Ok(())
        }
        Command::Evaluate { models, corpus, out, config } => {
            let runtime = Runtime::start(&models, load_config(config.as_deref())?)?;
            let corpus = read_corpus(&corpus, None)?;
            let evaluation = evaluate(&corpus.records, &runtime.config, &runtime.models())?;
            write_evaluation(&out, &evaluation)?;
            println!("{}", evaluation.report.summary_line());
            Ok(())
        }
        Command::Ablation {
            per_class,
            corpus_seed,
            seed,
            repetitions,
            workers,
            function_rate,
            local_rate,
            generic_skew,
            epochs,
            learning_rate,
            init_scale,
            dim,
            json,
        } => {
            let mut config = AblationConfig { seed, repetitions, workers, ..AblationConfig::default() };
            config.synth.per_class = per_class;
            config.synth.seed = corpus_seed;
            config.synth.function_rate = function_rate.unwrap_or(config.synth.function_rate);
            config.synth.local_rate = local_rate.unwrap_or(config.synth.local_rate);
            config.synth.generic_skew = generic_skew.unwrap_or(config.synth.generic_skew);
            config.toy.epochs = epochs.unwrap_or(config.toy.epochs);
            config.toy.learning_rate = learning_rate.unwrap_or(config.toy.learning_rate);
            config.toy.init_scale = init_scale.unwrap_or(config.toy.init_scale);
            config.toy.dim = dim.unwrap_or(config.toy.dim);
            let report = run_ablation(&config)?;
            if json {
                println!("{}", serde_json::to_string(&report).expect("report serializes"));
                return Ok(());
            }
            println!(
                "clean accuracy {:.2}%, injected {} of {}, noisy accuracy {:.2}%",
                report.clean_accuracy * 100.0,
                report.injected,
                report.test_inputs,
                report.noisy_accuracy * 100.0
            );
            for (variant, r) in &report.variants {
                println!("{:<6} {}", variant.name(), r.summary_line());
            }
            println!("{:.1} s", report.elapsed.as_secs_f64());
            Ok(())
        }
        Command::Serve { models } => {
            let artifacts = load_artifacts(&models)?;
            let classifier = artifacts.toy.as_ref().map(|t| t as &dyn Classifier);
            let predictor = artifacts.mcip.as_ref().map(|m| m as &dyn MaskPredictor);
            serve(io::stdin().lock(), io::stdout().lock(), classifier, predictor)
                .map_err(|e| HarnessError::io("<stdio>", e))
        }
    }
}

fn train(data: &Path, out: &Path, classes: Option<usize>, epochs: usize, seed: u64) -> Result<(), HarnessError> {
    let train = read_corpus(&data.join("train.ndjson"), classes)?;
    if train.is_empty() {
        return Err(HarnessError::Usage("training split is empty".into()));
    }
    let classes = classes.unwrap_or_else(|| train.classes());
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;

    let config = ToyConfig { classes, epochs, seed, ..ToyConfig::default() };
    let (toy, log) = train_toy(&train.records, config)?;
    let accuracy = accuracy(&toy, &train)?;
    println!(
        "toy classifier: loss {:.4} -> {:.4}, train accuracy {:.2}%",
        log.initial_loss,
        log.epoch_losses.last().copied().unwrap_or(log.initial_loss),
        accuracy * 100.0
    );

    let mcip = train_mcip(&train.records, &toy, McipConfig::default())?;
    println!("clean identifier model: {} records kept, {} dropped", mcip.retained.len(), mcip.dropped.len());
    let mip = train_mip(&train.records, McipConfig::default());
    let vocabulary = Vocabulary::from_snippets(
        train.records.iter().map(|r| &r.snippet),
        data.join("train.ndjson").display().to_string(),
    );
    let markers = MarkerPools::derive(&train.records, classes, &vocabulary, 5, 0.9);

    write_json(&out.join("toy.json"), &toy)?;
    write_json(&out.join("mcip.json"), &mcip.model)?;
    write_json(&out.join("mip.json"), &mip)?;
    write_json(&out.join("vocab.json"), &vocabulary)?;
    write_json(&out.join("markers.json"), &markers)?;

    let validate_path = data.join("validate.ndjson");
    let calibration_set = if validate_path.exists() { read_corpus(&validate_path, Some(classes))? } else { train };
    let scored = calibration_set
        .records
        .iter()
        .map(|r| toy.classify(&r.snippet).map(|p| (deepgini_uncertainty(&p), p.label() != r.label)))
        .collect::<Result<Vec<_>, _>>()?;
    match calibrate_zeta(&scored) {
        Ok(calibration) => {
            if let Some(w) = &calibration.warning {
                log::warn!("{w}");
            }
            println!(
                "uncertainty threshold {:.4} (TPR {:.3}, FPR {:.3})",
                calibration.config.zeta(),
                calibration.tpr,
                calibration.fpr
            );
            write_json(&out.join("gini.json"), &calibration)?;
        }
        Err(e) => log::warn!("uncertainty threshold not calibrated: {e}"),
    }
    Ok(())
}

fn accuracy(model: &dyn Classifier, corpus: &Corpus) -> Result<f64, HarnessError> {
    let mut hits = 0;
    for r in &corpus.records {
        if model.classify(&r.snippet)?.label() == r.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / corpus.len().max(1) as f64)
}
