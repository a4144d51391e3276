//! The `spandec` command line.
//!
//! Every command writes its outputs and a `config.json` echo into the output
//! directory (`--out`, or `SPANDEC_OUT`). The echo holds the invocation and
//! the fully resolved configuration; `spandec replay <config.json>` re-runs
//! it.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{
    generate_synthetic, load_conll, scan_entity_types, write_conll, Corpus, LabelSet,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{
    benchmark_throughput, entities_of, micro_f1, prf_table, sweep_threshold, text_table,
    threshold_grid, BenchConfig,
};
use crate::flops::{
    default_blocks, default_markers, flops_csv, flops_text_table, strategy_gflops, FlopsOptions,
    FlopsRow, MarkerConvention, Preset,
};
use crate::infer::{predict, PredictionRecord};
use crate::models::{ModelConfig, Strategy, Tagger};
use crate::nnet::EncoderConfig;
use crate::train::{train_with_progress, TrainConfig};

const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Parser)]
#[command(name = "spandec", version, about = "Span-based NER: training, inference, evaluation and cost model")]
pub struct Cli {
    /// Output directory for reports, checkpoints and the config echo.
    #[arg(long, global = true, env = "SPANDEC_OUT", default_value = "spandec-out")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train a model on CoNLL files and keep the best-dev checkpoint.
    Train(TrainArgs),
    /// Strict entity-level precision, recall and F1 of a checkpoint.
    Eval(EvalArgs),
    /// Write predictions as JSON lines.
    Predict(PredictArgs),
    /// Measure inference throughput.
    Bench(BenchArgs),
    /// Analytical FLOPs per sentence for a named encoder shape.
    Flops(FlopsArgs),
    /// Generate a seeded synthetic corpus in CoNLL format.
    Synth(SynthArgs),
    /// Retention, gold-span survival and F1 over a range of filter thresholds.
    SweepTau(SweepArgs),
    /// Re-run the invocation recorded in a config echo.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training split (CoNLL).
    #[arg(long)]
    pub train: PathBuf,
    /// Development split (CoNLL), used for model selection.
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long, default_value = "spandec")]
    pub strategy: Strategy,
    /// Encoder shape as JSON; defaults to the small desk configuration.
    #[arg(long)]
    pub encoder_config: Option<PathBuf>,
    /// Training hyperparameters as JSON; defaults to the desk settings.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop once dev F1 reaches this value.
    #[arg(long)]
    pub target_f1: Option<f64>,
    /// Span-filter threshold stored in the model (sf_spandec only).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Encoder blocks feeding the decoder (decoder strategies only).
    #[arg(long)]
    pub encoder_blocks: Option<usize>,
    #[arg(long)]
    pub decoder_blocks: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gold data (CoNLL).
    #[arg(long)]
    pub data: PathBuf,
    /// Filter threshold; defaults to the one stored in the checkpoint.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// One whitespace-tokenized sentence per line.
    #[default]
    Text,
    /// CoNLL columns; the tag column is ignored.
    Conll,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = InputFormat::Text)]
    pub format: InputFormat,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Defaults to `predictions.jsonl` in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sentences to time (CoNLL); without it a seeded synthetic corpus of
    /// long sentences is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 160)]
    pub sentences: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FlopsArgs {
    #[arg(long, default_value = "minilm")]
    pub preset: Preset,
    /// A strategy name or `all`.
    #[arg(long, default_value = "all")]
    pub strategy: String,
    #[arg(long, default_value_t = 44)]
    pub seq_len: u64,
    /// Marker count; defaults to the candidate count for `seq_len` and
    /// spans of up to 8 words.
    #[arg(long)]
    pub markers: Option<u64>,
    #[arg(long, default_value = "tokens")]
    pub marker_convention: MarkerConvention,
    /// Share of markers kept by the span filter (sf_spandec only).
    #[arg(long, default_value_t = 0.15)]
    pub retention: f64,
    #[arg(long)]
    pub encoder_blocks: Option<u64>,
    #[arg(long)]
    pub decoder_blocks: Option<u64>,
    /// Add layer-norm, activation and softmax estimates.
    #[arg(long)]
    pub overhead: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Generator spec as JSON; defaults to the built-in spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Use the long-sentence spec (mean 44 words) as the base.
    #[arg(long)]
    pub long: bool,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Defaults to `synthetic.conll` in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub from: f64,
    #[arg(long, default_value_t = 1.0)]
    pub to: f64,
    #[arg(long, default_value_t = 21)]
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `config.json` written by an earlier run.
    pub config: PathBuf,
}

/// The config echo written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub out: PathBuf,
    pub invocation: Command,
    pub resolved: Value,
}

/// Parse `argv` and run; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command, &cli.out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

pub fn execute(command: &Command, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::file(out, e))?;
    let resolved = match command {
        Command::Train(a) => cmd_train(a, out)?,
        Command::Eval(a) => cmd_eval(a, out)?,
        Command::Predict(a) => cmd_predict(a, out)?,
        Command::Bench(a) => cmd_bench(a, out)?,
        Command::Flops(a) => cmd_flops(a, out)?,
        Command::Synth(a) => cmd_synth(a, out)?,
        Command::SweepTau(a) => cmd_sweep(a, out)?,
        Command::Replay(a) => {
            let echo: RunConfig = read_json(&a.config)?;
            if matches!(echo.invocation, Command::Replay(_)) {
                return Err(Error::Config("a config echo cannot replay a replay".into()));
            }
            return execute(&echo.invocation, out);
        }
    };
    let echo = RunConfig {
        version: env!("CARGO_PKG_VERSION").to_string(),
        out: out.to_path_buf(),
        invocation: command.clone(),
        resolved,
    };
    write_json(&out.join(CONFIG_ECHO), &echo)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Fields present in the file replace those of `base`.
fn read_over<T: Serialize + serde::de::DeserializeOwned>(path: &Path, base: &T) -> Result<T> {
    let overrides: Value = read_json(path)?;
    let Value::Object(overrides) = overrides else {
        return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(base)?;
    if let Value::Object(fields) = &mut merged {
        fields.extend(overrides);
    }
    serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn load_tagger(path: &Path) -> Result<Tagger> {
    if !path.exists() {
        return Err(Error::file(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found"),
        ));
    }
    Tagger::load(path)
}

fn check_threshold(t: Option<f64>) -> Result<()> {
    match t {
        Some(t) if !t.is_finite() => Err(Error::Config(format!("threshold {t} is not finite"))),
        _ => Ok(()),
    }
}

fn cmd_train(a: &TrainArgs, out: &Path) -> Result<serde_json::Value> {
    check_threshold(a.threshold)?;
    let types = scan_entity_types(&[&a.train, &a.dev])?;
    let labels = LabelSet::new(&types)?;
    let train_set = load_conll(&a.train, &labels)?;
    let dev_set = load_conll(&a.dev, &labels)?;

    let encoder = match &a.encoder_config {
        Some(p) => read_json(p)?,
        None => EncoderConfig::desk(),
    };
    let mut model = ModelConfig::new(a.strategy, encoder, labels);
    if let Some(n) = a.encoder_blocks {
        model.encoder_blocks_used = n;
    }
    if let Some(n) = a.decoder_blocks {
        model.decoder_blocks = n;
    }
    if let Some(t) = a.threshold {
        model.sf_threshold = t;
    }

    let mut cfg = match &a.train_config {
        Some(p) => read_over(p, &TrainConfig::desk())?,
        None => TrainConfig::desk(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.target_f1.is_some() {
        cfg.target_dev_f1 = a.target_f1;
    }

    let checkpoint = out.join("model.ckpt");
    let epochs = cfg.epochs;
    let (tagger, report) = train_with_progress(
        model,
        &cfg,
        &train_set,
        &dev_set,
        Some(&checkpoint),
        |e| {
            eprintln!(
                "epoch {}/{epochs} loss {:.4} sf {:.4} dev_f1 {:.4} ({:.1}s)",
                e.epoch + 1,
                e.loss,
                e.sf_loss,
                e.dev_f1,
                e.seconds
            );
        },
    )?;
    write_json(&out.join("train_report.json"), &report)?;
    println!(
        "{}: best dev F1 {:.4} at epoch {}, {} steps, checkpoint {}",
        tagger.model.strategy(),
        report.best_dev_f1,
        report.best_epoch.map_or(0, |e| e + 1),
        report.steps,
        checkpoint.display()
    );
    Ok(json!({
        "model": tagger.model.config,
        "train": cfg,
        "vocab_size": tagger.vocab.len(),
        "train_sentences": train_set.len(),
        "dev_sentences": dev_set.len(),
    }))
}

fn cmd_eval(a: &EvalArgs, out: &Path) -> Result<serde_json::Value> {
    check_threshold(a.threshold)?;
    let tagger = load_tagger(&a.checkpoint)?;
    let data = load_conll(&a.data, tagger.model.labels())?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let threshold = a.threshold.unwrap_or(tagger.model.config.sf_threshold);
    let predictions = data
        .iter()
        .map(|s| predict(&tagger.model, &tagger.encode(&s.words), Some(threshold)))
        .collect::<Result<Vec<_>>>()?;
    let prf = micro_f1(&data.gold_spans(), &entities_of(&predictions))?;
    let retained =
        predictions.iter().map(|p| p.retained_fraction).sum::<f64>() / predictions.len() as f64;
    let threshold_used = (tagger.model.strategy() == Strategy::SfSpandec).then_some(threshold);
    write_json(
        &out.join("eval.json"),
        &json!({
            "strategy": tagger.model.strategy(),
            "threshold": threshold_used,
            "sentences": data.len(),
            "mean_retained_fraction": retained,
            "scores": prf,
        }),
    )?;
    print!("{}", prf_table(&prf));
    Ok(json!({ "threshold": threshold_used, "strategy": tagger.model.strategy() }))
}

fn read_sentences(path: &Path, format: InputFormat, labels: &LabelSet) -> Result<Vec<Vec<String>>> {
    match format {
        InputFormat::Conll => {
            Ok(load_conll(path, labels)?.sentences.into_iter().map(|s| s.words).collect())
        }
        InputFormat::Text => {
            let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
            Ok(text
                .lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .filter(|w| !w.is_empty())
                .collect())
        }
    }
}

fn cmd_predict(a: &PredictArgs, out: &Path) -> Result<serde_json::Value> {
    check_threshold(a.threshold)?;
    let tagger = load_tagger(&a.checkpoint)?;
    let sentences = read_sentences(&a.input, a.format, tagger.model.labels())?;
    let threshold = a.threshold.unwrap_or(tagger.model.config.sf_threshold);
    let mut lines = String::new();
    let mut entities = 0;
    for words in sentences.iter() {
        let p = predict(&tagger.model, &tagger.encode(words), Some(threshold))?;
        entities += p.entities.len();
        lines.push_str(&serde_json::to_string(&PredictionRecord::new(words.clone(), &p))?);
        lines.push('\n');
    }
    let output = a.output.clone().unwrap_or_else(|| out.join("predictions.jsonl"));
    write_text(&output, &lines)?;
    println!("{} sentences, {entities} entities -> {}", sentences.len(), output.display());
    Ok(json!({ "threshold": threshold, "output": output, "sentences": sentences.len() }))
}

fn cmd_bench(a: &BenchArgs, out: &Path) -> Result<serde_json::Value> {
    check_threshold(a.threshold)?;
    let tagger = load_tagger(&a.checkpoint)?;
    let (sentences, source) = match &a.data {
        Some(p) => (
            read_sentences(p, InputFormat::Conll, tagger.model.labels())?,
            json!({ "data": p }),
        ),
        None => {
            let spec = SyntheticSpec {
                sentences: a.sentences,
                ..SyntheticSpec::long_sentences()
            };
            let corpus = generate_synthetic(&spec, a.seed)?;
            (
                corpus.sentences.into_iter().map(|s| s.words).collect(),
                json!({ "synthetic": spec, "seed": a.seed }),
            )
        }
    };
    let config = BenchConfig {
        batch_size: a.batch_size,
        warmup_batches: a.warmup,
        repeats: a.repeats,
        threshold: Some(a.threshold.unwrap_or(tagger.model.config.sf_threshold)),
    };
    let report = benchmark_throughput(&tagger, &sentences, &config)?;
    write_json(&out.join("bench.json"), &report)?;
    let mean_len = sentences.iter().map(Vec::len).sum::<usize>() as f64 / sentences.len() as f64;
    let runs: Vec<String> = report.runs.iter().map(|r| format!("{r:.1}")).collect();
    print!(
        "{}",
        text_table(
            &["strategy", "samples/s", "runs", "batch", "sentences", "mean_len", "retained"],
            &[vec![
                report.strategy.to_string(),
                format!("{:.1}", report.samples_per_second),
                runs.join(" "),
                report.batch_size.to_string(),
                report.sentences.to_string(),
                format!("{mean_len:.1}"),
                format!("{:.3}", report.mean_retained_fraction),
            ]],
        )
    );
    println!("{}", report.hardware);
    Ok(json!({ "bench": config, "source": source }))
}

fn cmd_flops(a: &FlopsArgs, out: &Path) -> Result<serde_json::Value> {
    let strategies: Vec<Strategy> = if a.strategy == "all" {
        Strategy::ALL.to_vec()
    } else {
        vec![a.strategy.parse()?]
    };
    let markers = a
        .marker_convention
        .tokens(a.markers.unwrap_or_else(|| default_markers(a.seq_len, 8)));
    let p = a.preset.params(a.seq_len, markers);
    let options = FlopsOptions {
        include_overhead: a.overhead,
    };
    let mut rows = Vec::new();
    for s in strategies {
        let (mut enc, mut dec) = default_blocks(s, p.blocks);
        if s.uses_decoder() {
            enc = a.encoder_blocks.unwrap_or(enc);
            dec = a.decoder_blocks.unwrap_or(dec);
        }
        let r = if s == Strategy::SfSpandec { a.retention } else { 1.0 };
        rows.push(FlopsRow {
            config: a.preset.to_string(),
            cost: strategy_gflops(s, &p, enc, dec, r, options)?,
        });
    }
    write_text(&out.join("flops.csv"), &flops_csv(&rows)?)?;
    write_json(&out.join("flops.json"), &rows)?;
    print!("{}", flops_text_table(&rows));
    Ok(json!({ "params": p, "options": options }))
}

fn cmd_synth(a: &SynthArgs, out: &Path) -> Result<serde_json::Value> {
    let mut spec = match (&a.spec, a.long) {
        (Some(p), _) => read_json(p)?,
        (None, true) => SyntheticSpec::long_sentences(),
        (None, false) => SyntheticSpec::default(),
    };
    if let Some(n) = a.sentences {
        spec.sentences = n;
    }
    let corpus = generate_synthetic(&spec, a.seed)?;
    let output = a.output.clone().unwrap_or_else(|| out.join("synthetic.conll"));
    write_conll_file(&corpus, &output)?;
    println!(
        "{} sentences, mean length {:.1} -> {}",
        corpus.len(),
        corpus.mean_length(),
        output.display()
    );
    Ok(json!({ "spec": spec, "seed": a.seed, "output": output }))
}

fn write_conll_file(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    write_conll(corpus, file)
}

fn cmd_sweep(a: &SweepArgs, out: &Path) -> Result<serde_json::Value> {
    let grid = threshold_grid(a.from, a.to, a.steps)?;
    let tagger = load_tagger(&a.checkpoint)?;
    let data = load_conll(&a.data, tagger.model.labels())?;
    let rows = sweep_threshold(&tagger, &data, &grid)?;
    write_json(&out.join("sweep.json"), &rows)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{:.4}", r.threshold),
                format!("{:.4}", r.retained_fraction),
                format!("{:.4}", r.survival),
                format!("{:.4}", r.f1),
            ]
        })
        .collect();
    let header = ["tau", "retention", "survival", "f1"];
    let csv_err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in &body {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_text(&out.join("sweep.csv"), &String::from_utf8_lossy(&bytes))?;
    print!("{}", text_table(&header, &body));
    Ok(json!({ "thresholds": grid }))
}
