//! Command implementations behind the `ragat` binary.
//!
//! Exit codes: 0 success, 1 configuration or checkpoint problem, 2 data
//! problem, 3 numeric failure during training.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ragat::classifier::{self, checkpoint, Model, ModelConfig};
use ragat::config::RunConfig;
use ragat::error::Error;
use ragat::evaluation::{self, CLASS_NAMES};
use ragat::textdata::{self, Vocabulary};
use ragat::training::{self, TrainConfig};
use ragat::{cograph, corpus, pipeline};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.tsv";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Parser, Debug)]
#[command(name = "ragat", version, about = "Dual-path rumor classifier: train, evaluate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a labelled dataset, train, and write model artifacts.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Classify one piece of text.
    Predict(PredictArgs),
    /// Print the co-occurrence edges built for a piece of text.
    InspectGraph(InspectArgs),
    /// Write a seeded synthetic dataset with disjoint keyword pools.
    GenCorpus(GenArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Machine-readable tab-separated report.
    #[arg(long)]
    tsv: bool,
    /// Also write the report to this file.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    text: String,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    text: String,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_per_class: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Checkpoint(_) | Error::Dimension(_) | Error::State(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn data_error(msg: String) -> Failure {
    Failure { code: 2, message: msg }
}

fn write_out(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes())
        .map_err(|e| data_error(format!("writing output: {e}")))
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if code == 0 {
                write!(out, "{e}")
            } else {
                write!(err, "{e}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::InspectGraph(a) => inspect_graph(a, out),
        Command::GenCorpus(a) => gen_corpus(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let data = a
        .data
        .or_else(|| cfg.data_path.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::from(Error::Config("data: no --data flag and no data_path in config".into())))?;
    let out_dir = a
        .out
        .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Failure::from(Error::Config("out: no --out flag and no out_dir in config".into())))?;
    cfg.data_path = Some(data.display().to_string());
    cfg.out_dir = Some(out_dir.display().to_string());
    cfg.validate()?;

    let raw = textdata::load_dataset(&data)?;
    let (train_raw, test_raw) = textdata::split(&raw, cfg.train_ratio, cfg.seed)?;
    let vocab = pipeline::vocabulary(&train_raw, &cfg)?;
    let train_set = pipeline::samples(&train_raw, &vocab, &cfg)?;
    let test_set = pipeline::samples(&test_raw, &vocab, &cfg)?;
    let model = Model::new(ModelConfig::from_run(&cfg, vocab.len()), cfg.seed)?;
    let fitted = training::fit(model, &train_set, &test_set, &TrainConfig::from_run(&cfg))?;
    let report = training::evaluate_samples(&fitted.model, &test_set, cfg.parallel)?;
    let text = evaluation::format_report(&report);

    fs::create_dir_all(&out_dir).map_err(|e| Failure::from(Error::io(&out_dir, e)))?;
    // paths stay out of the checkpoint so identical runs produce identical bytes
    let stored = RunConfig {
        data_path: None,
        out_dir: None,
        ..cfg.clone()
    };
    checkpoint::save(&out_dir.join(CHECKPOINT_FILE), &stored, VOCAB_FILE, &fitted.model)?;
    vocab.save(&out_dir.join(VOCAB_FILE))?;
    cfg.save(&out_dir.join(CONFIG_FILE))?;
    fitted.log.save(&out_dir.join(LOG_FILE))?;
    let report_path = out_dir.join(REPORT_FILE);
    fs::write(&report_path, &text).map_err(|e| Failure::from(Error::io(&report_path, e)))?;

    write_out(
        out,
        &format!(
            "trained on {} examples, tested on {}; best epoch {} of {}{}\n{}",
            train_set.len(),
            test_set.len(),
            fitted.best_epoch,
            fitted.log.records.len(),
            if fitted.stopped_early { " (stopped early)" } else { "" },
            text
        ),
    )
}

struct Loaded {
    run: RunConfig,
    vocab: Vocabulary,
    model: Model,
}

fn load_checkpoint(path: &Path) -> Result<Loaded, Failure> {
    let ck = checkpoint::load(path)?;
    let vocab_path = path.parent().unwrap_or(Path::new(".")).join(&ck.vocab_path);
    let vocab = Vocabulary::load(&vocab_path).map_err(|e| Failure::from(Error::Checkpoint(e.to_string())))?;
    if vocab.len() != ck.model.config.vocab_size {
        return Err(Error::Dimension(format!(
            "vocabulary {} has {} entries, checkpoint embeds {}",
            vocab_path.display(),
            vocab.len(),
            ck.model.config.vocab_size
        ))
        .into());
    }
    Ok(Loaded {
        run: ck.run,
        vocab,
        model: ck.model,
    })
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    let loaded = load_checkpoint(&a.checkpoint)?;
    let raw = textdata::load_dataset(&a.data)?;
    if raw.is_empty() {
        return Err(data_error(format!("{}: no examples", a.data.display())));
    }
    let samples = pipeline::samples(&raw, &loaded.vocab, &loaded.run)?;
    let report = training::evaluate_samples(&loaded.model, &samples, loaded.run.parallel)?;
    let text = if a.tsv {
        evaluation::format_report_tsv(&report)
    } else {
        evaluation::format_report(&report)
    };
    if let Some(p) = &a.report_out {
        fs::write(p, &text).map_err(|e| Failure::from(Error::io(p, e)))?;
    }
    write_out(out, &text)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> CmdResult {
    let loaded = load_checkpoint(&a.checkpoint)?;
    let sample = pipeline::sample_from_text(&a.text, None, &loaded.vocab, &loaded.run)?;
    let p = classifier::predict(&loaded.model, &sample)?;
    write_out(
        out,
        &format!(
            "label\t{}\t{}\np({})\t{:.4}\np({})\t{:.4}\n",
            p.pred, CLASS_NAMES[p.pred as usize], CLASS_NAMES[0], p.probs[0], CLASS_NAMES[1], p.probs[1]
        ),
    )
}

fn inspect_graph(a: InspectArgs, out: &mut dyn Write) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?;
    let tokens = textdata::tokenize(&a.text, cfg.tokenizer)?;
    let kept = &tokens[..tokens.len().min(cfg.max_len)];
    let mask: Vec<bool> = vec![true; kept.len()];
    let adj = cograph::normalize(&cograph::build_from_mask(&mask, cfg.window)?, cfg.adjacency_mode);
    let edges: Vec<(usize, usize)> = adj.edges().into_iter().filter(|(i, j)| i != j).collect();
    let mut text = String::new();
    if edges.is_empty() {
        text.push_str("no edges\n");
    }
    for (i, j) in edges {
        text.push_str(&format!("{i}({}) -> {j}({})\n", kept[i], kept[j]));
    }
    write_out(out, &text)
}

fn gen_corpus(a: GenArgs, out: &mut dyn Write) -> CmdResult {
    let examples = corpus::generate(a.n_per_class, a.seed)?;
    fs::write(&a.out, textdata::format_dataset(&examples)).map_err(|e| Failure::from(Error::io(&a.out, e)))?;
    write_out(
        out,
        &format!("wrote {} examples to {}\n", examples.len(), a.out.display()),
    )
}
