use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use biasprompt::corpus::{self, CorpusError, FilterRule};
use biasprompt::decoding::DecodeError;
use biasprompt::model::{self, ModelError, ServeOptions};
use biasprompt::runner::{self, ExperimentConfig, RunRecord, RunnerError};
use biasprompt::templating::{self, Task, TemplateClass};
use biasprompt::tokenization::{load_tokenizer, TokenizerError};
use biasprompt::{Dimension, Error};
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_BACKEND: u8 = 3;

/// Prompt-based bias diagnosis, identification, extraction and rephrasing.
#[derive(Parser)]
#[command(name = "biasprompt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every task description of a (task, class) as JSON lines.
    ExpandTemplates {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        class: TemplateClass,
        /// Rephrasing only: target this dimension.
        #[arg(long)]
        targeting: Option<Dimension>,
    },
    /// Apply the dataset filtering rules and write the kept records.
    FilterData {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rephrases: Option<PathBuf>,
        /// Kept records, one JSON object per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "BIASPROMPT_OUT")]
        out: Option<PathBuf>,
        #[arg(long, env = "BIASPROMPT_PROVIDER_URL")]
        provider: Option<String>,
        /// Force single-threaded execution.
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Re-render report.csv and report.md from a saved record.json.
    Report {
        #[arg(long)]
        record: PathBuf,
        /// Defaults to the record's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a local model over the logits HTTP protocol.
    ServeMock {
        /// `mock:<file.json>`, `hashed:<salt>` or `ngram:<corpus.txt>`.
        #[arg(long)]
        provider: String,
        /// `word:<vocab>` or `bpe:<vocab>:<merges>`.
        #[arg(long)]
        tokenizer: String,
        #[arg(long, default_value = "127.0.0.1:0")]
        addr: SocketAddr,
        #[arg(long)]
        max_inflight: Option<usize>,
    },
}

fn expand_templates(task: Task, class: TemplateClass, targeting: Option<Dimension>) -> Result<()> {
    let descs = match targeting {
        Some(dim) => templating::targeted_rephrase_descriptions(class, dim.name())?,
        None => templating::expand_descriptions(task, class)?,
    };
    let mut out = BufWriter::new(io::stdout().lock());
    for d in descs {
        writeln!(out, "{}", serde_json::to_string(&d)?)?;
    }
    out.flush()?;
    Ok(())
}

fn filter_data(data: &Path, rephrases: Option<&Path>, out: &Path) -> Result<()> {
    let mut docs = corpus::load_records(data)?;
    let total = docs.len();
    if let Some(p) = rephrases {
        let r = corpus::load_rephrases(p, &mut docs)?;
        eprintln!(
            "rephrases: {} attached, {} empty dropped, {} unmatched",
            r.attached,
            r.empty_dropped.len(),
            r.unmatched.len()
        );
    }
    let pools: Vec<_> = Task::ALL.iter().map(|&t| (t, corpus::task_data(t, &docs))).collect();
    let (kept, report) = corpus::filter_cad(docs);

    let mut w = BufWriter::new(
        std::fs::File::create(out).with_context(|| format!("creating {}", out.display()))?,
    );
    for d in &kept {
        writeln!(w, "{}", corpus::to_record_line(d))?;
    }
    w.flush()?;

    eprintln!("{total} records read, {} kept", report.kept);
    for rule in [
        FilterRule::MissingRationale,
        FilterRule::RationaleNotInText,
        FilterRule::NotTargetDimension,
        FilterRule::TrainTooLong,
    ] {
        eprintln!("  dropped by {rule:?}: {}", report.count(rule));
    }
    for (task, pool) in pools {
        eprintln!("  {task}: eval {} / train {}", pool.eval.len(), pool.train.len());
    }
    Ok(())
}

fn run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    provider: Option<String>,
    serial: bool,
    limit: Option<usize>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = std::path::absolute(&o).unwrap_or(o);
    }
    if let Some(p) = provider {
        cfg.provider = p;
    }
    if serial {
        cfg.parallel = false;
    }
    if limit.is_some() {
        cfg.limit = limit;
    }
    let out_dir = cfg.out_dir();
    let (record, stats) = runner::run_config(cfg)?;
    eprintln!(
        "{} examples ({} resumed), {} provider calls, {:.2}s",
        stats.examples_total, stats.examples_resumed, stats.provider_calls, stats.wall_clock_secs
    );
    eprintln!("config hash {}", record.config_hash);
    println!("{}", out_dir.display());
    Ok(())
}

fn report(record_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(record_path)
        .map_err(|e| RunnerError::Io(format!("{}: {e}", record_path.display())))?;
    let record = RunRecord::from_json(&text)?;
    if record.recompute_aggregates()? != record.aggregates {
        bail!(RunnerError::Record("aggregates do not match the per-cell scores".into()));
    }
    let dir = out.unwrap_or_else(|| record_path.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let rendered = runner::write_report(&record, &dir)?;
    print!("{}", rendered.markdown);
    Ok(())
}

fn serve_mock(provider: &str, tokenizer: &str, addr: SocketAddr, max_inflight: Option<usize>) -> Result<()> {
    let cwd = std::env::current_dir()?;
    let tok = load_tokenizer(tokenizer, &cwd)?;
    let provider = model::load_provider(provider, tok.as_ref(), &cwd)?;
    let opts = ServeOptions { max_inflight, ..Default::default() };
    model::serve(provider, tok.vocab(), addr, opts, |bound| {
        println!("http://{bound}");
        let _ = io::stdout().flush();
    })?;
    Ok(())
}

fn classify(e: &Error) -> u8 {
    if e.is_backend() {
        return EXIT_BACKEND;
    }
    match e {
        Error::Corpus(_) | Error::Sampling(_) => EXIT_DATA,
        Error::Tokenizer(TokenizerError::UnknownSpec(_)) => EXIT_USAGE,
        Error::Tokenizer(_) => EXIT_DATA,
        Error::Decode(DecodeError::VerbalizerNotAtomic(_)) => EXIT_DATA,
        Error::Runner(RunnerError::NoEvalData(_) | RunnerError::Checkpoint(_) | RunnerError::Record(_)) => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<Error>() {
        classify(e)
    } else if let Some(e) = err.downcast_ref::<RunnerError>() {
        classify(&Error::Runner(e.clone()))
    } else if let Some(e) = err.downcast_ref::<ModelError>() {
        classify(&Error::Model(e.clone()))
    } else if let Some(e) = err.downcast_ref::<TokenizerError>() {
        classify(&Error::Tokenizer(e.clone()))
    } else if err.downcast_ref::<CorpusError>().is_some() {
        EXIT_DATA
    } else {
        EXIT_USAGE
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::ExpandTemplates { task, class, targeting } => expand_templates(task, class, targeting),
        Command::FilterData { data, rephrases, out } => filter_data(&data, rephrases.as_deref(), &out),
        Command::Run { config, seed, out, provider, serial, limit } => {
            run(&config, seed, out, provider, serial, limit)
        }
        Command::Report { record, out } => report(&record, out),
        Command::ServeMock { provider, tokenizer, addr, max_inflight } => {
            serve_mock(&provider, &tokenizer, addr, max_inflight)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
