//! Command-line front end. Command results go to stdout as JSON, progress goes
//! to stderr as one JSON record per line. The first record of every command
//! embeds the fully resolved config and seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::corpus::{Dataset, SplitTag};
use crate::evaluation::evaluate_datasets;
use crate::experiment::{Experiment, ExperimentConfig};
use crate::pipeline::{CauseVariant, EmotionVariant, Stage};
use crate::selfcheck;

#[derive(Debug, Parser)]
#[command(
    name = "ecpe",
    version,
    about = "Three-stage emotion-cause pair extraction for conversations"
)]
pub struct Cli {
    /// JSON experiment config. Missing fields take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Override one config field, e.g. `--set emotion.epochs=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split the corpus into train/val and compute class weights.
    Prepare,
    /// Train one stage and keep its best-validation checkpoint.
    Train {
        /// emotion, cause or pairing.
        #[arg(long)]
        stage: Stage,
        /// dense, bilstm or bilstm_crf for emotion; dense or bilstm for cause.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Continue from the stage's saved trainer state.
        #[arg(long)]
        resume: bool,
        /// End this invocation after N epochs; `--resume` continues later.
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Label a dataset with the three trained stages.
    Predict {
        /// Dataset to label. Defaults to the prepared validation split.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Defaults to `<output_dir>/predictions.json`.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Score a prediction file against gold annotations.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        gold: PathBuf,
        #[arg(long, value_name = "PATH")]
        predictions: PathBuf,
        /// Also write the report here.
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
    /// Run the built-in correctness checks; exits nonzero on any failure.
    Selfcheck,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Selfcheck => "selfcheck",
        }
    }
}

/// Line-delimited JSON records.
pub struct JsonLog<W: Write> {
    out: W,
}

impl<W: Write> JsonLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    /// Writes `{"event": event, ...fields}`. Non-object `fields` go under `"data"`.
    pub fn emit(&mut self, event: &str, fields: impl Serialize) {
        let mut record = serde_json::Map::new();
        record.insert("event".into(), event.into());
        match serde_json::to_value(fields) {
            Ok(Value::Object(map)) => record.extend(map),
            Ok(Value::Null) => {}
            Ok(other) => {
                record.insert("data".into(), other);
            }
            Err(e) => {
                record.insert("serialization_error".into(), e.to_string().into());
            }
        }
        // Logging must never abort a command.
        let _ = writeln!(self.out, "{}", Value::Object(record));
        let _ = self.out.flush();
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut log = JsonLog::new(std::io::stderr().lock());
    match run(&cli, &mut log) {
        Ok(code) => code,
        Err(e) => {
            log.emit("error", json!({ "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}

/// Config file, then `--set` overrides, then the dedicated flags.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for assignment in &cli.overrides {
        config.set(assignment)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    if let Command::Train {
        stage,
        variant,
        epochs,
        learning_rate,
        ..
    } = &cli.command
    {
        if let Some(v) = variant {
            apply_variant(&mut config, *stage, v);
        }
        let settings = match stage {
            Stage::Emotion => &mut config.emotion,
            Stage::Cause => &mut config.cause,
            Stage::Pairing => &mut config.pairing,
        };
        if let Some(n) = epochs {
            settings.epochs = *n;
        }
        if let Some(lr) = learning_rate {
            settings.learning_rate = *lr;
        }
    }
    Ok(config)
}

fn usage_error(message: String) -> ! {
    Cli::command().error(ErrorKind::InvalidValue, message).exit()
}

fn apply_variant(config: &mut ExperimentConfig, stage: Stage, variant: &str) {
    match stage {
        Stage::Emotion => match variant.parse::<EmotionVariant>() {
            Ok(v) => config.emotion_variant = v,
            Err(_) => usage_error(format!(
                "invalid emotion variant `{variant}` (expected dense, bilstm or bilstm_crf)"
            )),
        },
        Stage::Cause => match variant.parse::<CauseVariant>() {
            Ok(v) => config.cause_variant = v,
            Err(_) => usage_error(format!("invalid cause variant `{variant}` (expected dense or bilstm)")),
        },
        Stage::Pairing => usage_error("the pairing stage has no variants".into()),
    }
}

fn print_json(value: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn run<W: Write>(cli: &Cli, log: &mut JsonLog<W>) -> anyhow::Result<ExitCode> {
    let config = resolve_config(cli)?;
    log.emit(
        "start",
        json!({
            "command": cli.command.name(),
            "seed": config.seed,
            "config": &config,
        }),
    );

    match &cli.command {
        Command::Prepare => {
            let report = Experiment::new(config)?.prepare()?;
            log.emit("prepared", &report);
            print_json(&report)?;
        }
        Command::Train {
            stage,
            resume,
            stop_after,
            ..
        } => {
            let experiment = Experiment::new(config)?;
            let summary = experiment.train_stage_for(*stage, *resume, *stop_after, &mut |epoch| {
                log.emit("epoch", json!({ "stage": stage, "log": epoch }));
            })?;
            log.emit("trained", &summary);
            print_json(&summary)?;
        }
        Command::Predict { input, output } => {
            let experiment = Experiment::new(config)?;
            let input = match input {
                Some(path) => Dataset::load(path, SplitTag::Test)?,
                None => experiment.load_splits()?.1,
            };
            let pipeline = experiment.load_pipeline()?;
            let predictions = experiment.predict(&pipeline, &input)?;
            let output = output
                .clone()
                .unwrap_or_else(|| experiment.output_dir().join("predictions.json"));
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            predictions.save(&output)?;
            let summary = json!({
                "output": output,
                "conversations": predictions.len(),
                "utterances": predictions.num_utterances(),
                "pairs": predictions.conversations.iter().map(|c| c.pairs().len()).sum::<usize>(),
            });
            log.emit("predicted", &summary);
            print_json(&summary)?;
        }
        Command::Evaluate {
            gold,
            predictions,
            output,
        } => {
            let gold = Dataset::load(gold, SplitTag::Test)?;
            let predictions = Dataset::load(predictions, SplitTag::Test)?;
            let report = evaluate_datasets(&gold, &predictions)?;
            log.emit(
                "evaluated",
                json!({
                    "pair_weighted_f1": report.pairs.weighted_f1,
                    "pair_macro_f1": report.pairs.macro_f1,
                }),
            );
            if let Some(path) = output {
                write_json(path, &report)?;
            }
            print_json(&report)?;
        }
        Command::Selfcheck => {
            let report = selfcheck::run();
            for check in &report.checks {
                log.emit("check", check);
            }
            print_json(&report)?;
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("ecpe").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_in_order() {
        let cli = parse(&[
            "--set",
            "seed=3",
            "--set",
            "emotion.epochs=7",
            "--seed",
            "11",
            "train",
            "--stage",
            "emotion",
            "--variant",
            "dense",
            "--epochs",
            "2",
        ]);
        let c = resolve_config(&cli).unwrap();
        assert_eq!(c.seed, 11);
        assert_eq!(c.emotion.epochs, 2);
        assert_eq!(c.emotion_variant, EmotionVariant::Dense);
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = parse(&["prepare", "--seed", "5", "--output-dir", "/tmp/out"]);
        let c = resolve_config(&cli).unwrap();
        assert_eq!((c.seed, c.output_dir), (5, PathBuf::from("/tmp/out")));
    }

    #[test]
    fn unknown_stage_is_a_usage_error() {
        let err = Cli::try_parse_from(["ecpe", "train", "--stage", "decoding"]).unwrap_err();
        assert_eq!(err.kind(), ErrorKind::ValueValidation);
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn log_records_are_single_json_lines() {
        let mut buf = Vec::new();
        let mut log = JsonLog::new(&mut buf);
        log.emit("start", json!({"seed": 1, "config": {"a": [1, 2]}}));
        log.emit("note", 3);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["event"], "start");
        assert_eq!(lines[0]["config"]["a"][1], 2);
        assert_eq!(lines[1]["data"], 3);
    }
}
