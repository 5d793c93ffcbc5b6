//! Experiment orchestration.
//!
//! A run evaluates every selected (description class, variant, shot count,
//! resample, decoder) cell on every eval document. Each example's few-shot
//! set and decoding RNG are derived from the config seed and the example's
//! coordinates, so results do not depend on scheduling. Finished examples
//! are appended to a checkpoint so an interrupted run resumes where it
//! stopped.
//!
//! Output files in the run directory:
//!
//! * `record.json`: per-example outputs, per-cell scores and aggregates
//!   (byte-stable for a given config and inputs);
//! * `run_stats.json`: wall clock, provider calls, provider description;
//! * `report.csv`, `report.md`: see [`report`];
//! * `checkpoint-<key>.jsonl`: the append-only example log.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Dimension, Document, TaskData};
use crate::decoding::{self, Decoder, IdentifyOutcome, LabelTrie, SamplerParams};
use crate::error::{Error, Result};
use crate::hashing::{sha256_hex, stream_rng};
use crate::metrics::{self, Aggregate, StdKind};
use crate::model::{load_provider, CountingProvider, LogitProvider};
use crate::sampling::{self, FewShotConfig, Strategy};
use crate::templating::{self, Task, TaskDescription, TemplateClass};
use crate::tokenization::{load_tokenizer, TokenId, Tokenizer};

mod checkpoint;
mod config;
pub mod report;

pub use checkpoint::Checkpoint;
pub use config::{BleuMode, ExperimentConfig, VariantSelection};
pub use report::{emit_report, write_report, Report};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunnerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),
    #[error("no evaluation documents for the {0} task")]
    NoEvalData(Task),
    #[error("record has no aggregates to report")]
    EmptyAggregate,
    #[error("invalid run record: {0}")]
    Record(String),
}

/// Coordinates of one evaluated example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExampleKey {
    pub class: TemplateClass,
    pub variant: usize,
    pub shots: usize,
    pub resample: u32,
    pub decoder: Option<Decoder>,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub class: TemplateClass,
    pub variant: usize,
    pub shots: usize,
    pub resample: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<Decoder>,
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    pub fewshot_ids: Vec<String>,
    pub prompt_hash: String,
    pub prediction: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_bias: Option<f64>,
    /// Identification: whether a full label was generated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complete: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<Vec<TokenId>>,
    pub scores: BTreeMap<String, f64>,
}

impl ExampleResult {
    pub fn key(&self) -> ExampleKey {
        ExampleKey {
            class: self.class,
            variant: self.variant,
            shots: self.shots,
            resample: self.resample,
            decoder: self.decoder,
            doc_id: self.doc_id.clone(),
        }
    }
}

/// One metric over one (variant, resample) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub class: TemplateClass,
    pub variant: usize,
    pub shots: usize,
    pub resample: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<Decoder>,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    pub value: f64,
    pub n_examples: usize,
}

/// Mean and standard deviation of a metric across the cells of a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub class: TemplateClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<Decoder>,
    pub shots: usize,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub task: Task,
    pub strategy: Strategy,
    pub tokenizer: String,
    pub std: StdKind,
    pub examples: Vec<ExampleResult>,
    pub cells: Vec<CellScore>,
    pub aggregates: Vec<AggregateRow>,
}

impl RunRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<RunRecord, RunnerError> {
        serde_json::from_str(text).map_err(|e| RunnerError::Record(e.to_string()))
    }

    /// Recompute the aggregates from the stored cells.
    pub fn recompute_aggregates(&self) -> Result<Vec<AggregateRow>, RunnerError> {
        aggregate_cells(&self.cells, self.std)
    }
}

/// Facts about one execution that are not part of the reproducible record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub wall_clock_secs: f64,
    pub provider_calls: u64,
    pub provider: String,
    pub examples_total: usize,
    pub examples_resumed: usize,
    pub parallel: bool,
    pub checkpoint: String,
}

/// Everything a run needs, loaded and validated.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub tokenizer: Box<dyn Tokenizer>,
    pub provider: Arc<dyn LogitProvider>,
    pub data: TaskData,
    pub config_hash: String,
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Experiment {
    /// Load tokenizer, data and the provider named in the config.
    pub fn prepare(config: ExperimentConfig) -> Result<Experiment> {
        let tokenizer = load_tokenizer(&config.tokenizer, &config.base_dir)?;
        let provider = load_provider(&config.provider, tokenizer.as_ref(), &config.base_dir)?;
        Self::with_provider(config, tokenizer, provider)
    }

    /// Like [`Experiment::prepare`] with an explicit provider.
    pub fn with_provider(
        config: ExperimentConfig,
        tokenizer: Box<dyn Tokenizer>,
        provider: Arc<dyn LogitProvider>,
    ) -> Result<Experiment> {
        config.validate()?;
        if provider.vocab_size() != tokenizer.vocab().size() {
            return Err(RunnerError::Config(format!(
                "provider vocabulary size {} differs from tokenizer size {}",
                provider.vocab_size(),
                tokenizer.vocab().size()
            ))
            .into());
        }
        let data_path = config.resolve(&config.data);
        let mut docs = corpus::load_records(&data_path)?;
        let rephrase_hash = match &config.rephrases {
            Some(p) => {
                let p = config.resolve(p);
                let report = corpus::load_rephrases(&p, &mut docs)?;
                log::info!(
                    "attached {} rephrases ({} empty dropped, {} unmatched)",
                    report.attached,
                    report.empty_dropped.len(),
                    report.unmatched.len()
                );
                Some(file_hash(&p)?)
            }
            None => None,
        };
        let mut data = corpus::task_data(config.task, &docs);
        if let Some(limit) = config.limit {
            data.eval.truncate(limit);
        }
        if data.eval.is_empty() {
            return Err(RunnerError::NoEvalData(config.task).into());
        }
        let config_hash =
            config.config_hash(&tokenizer.identity(), &file_hash(&data_path)?, rephrase_hash.as_deref());
        Ok(Experiment { config, tokenizer, provider, data, config_hash })
    }

    /// Name of the checkpoint file; covers the config hash and the provider
    /// spec so that resuming never mixes models.
    pub fn checkpoint_name(&self) -> String {
        let key = sha256_hex(format!("{}\n{}", self.config_hash, self.config.provider).as_bytes());
        format!("checkpoint-{}.jsonl", &key[..16])
    }
}

struct Unit<'a> {
    key: ExampleKey,
    desc: &'a TaskDescription,
    doc: &'a Document,
}

/// Per-run constants shared by every unit.
struct Ctx<'a> {
    exp: &'a Experiment,
    provider: &'a dyn LogitProvider,
    trie: Option<LabelTrie>,
    verbalizers: Option<(TokenId, TokenId)>,
}

fn decode_seed(cfg: &ExperimentConfig, key: &ExampleKey) -> u64 {
    let decoder = key.decoder.map_or("", Decoder::as_str);
    stream_rng(&[
        b"decode",
        &cfg.seed.to_le_bytes(),
        key.class.as_str().as_bytes(),
        &(key.variant as u64).to_le_bytes(),
        &(key.shots as u64).to_le_bytes(),
        &key.resample.to_le_bytes(),
        decoder.as_bytes(),
        key.doc_id.as_bytes(),
    ])
    .next_u64()
}

fn text_scores(pred: &str, gold: &str) -> BTreeMap<String, f64> {
    BTreeMap::from([
        ("token_f1".to_string(), metrics::token_f1(pred, gold)),
        ("bleu4".to_string(), metrics::bleu4(pred, gold)),
        ("meteor".to_string(), metrics::meteor(pred, gold)),
    ])
}

fn run_unit(ctx: &Ctx<'_>, unit: &Unit<'_>) -> Result<ExampleResult> {
    let cfg = &ctx.exp.config;
    let tok = ctx.exp.tokenizer.as_ref();
    let eos = tok.vocab().eos_id();
    let task = cfg.task;
    let key = &unit.key;
    let doc = unit.doc;
    let shots = FewShotConfig { n: key.shots, strategy: cfg.strategy, seed: cfg.seed, resample_index: key.resample };
    let fewshot = sampling::sample(&ctx.exp.data.train, &shots, doc)?;
    let prompt = templating::render_prompt(doc, unit.desc, &fewshot)?;
    let context = tok.tokenize(&prompt.full_text)?;
    let gold = templating::gold_answer(task, doc).ok_or_else(|| templating::TemplateError::MissingInput(doc.id.clone()))?;
    let params = SamplerParams { temperature: cfg.temperature, top_k: cfg.top_k, rng_seed: decode_seed(cfg, key) };
    let mut result = ExampleResult {
        class: key.class,
        variant: key.variant,
        shots: key.shots,
        resample: key.resample,
        decoder: key.decoder,
        doc_id: doc.id.clone(),
        dimension: doc.dimension,
        fewshot_ids: fewshot.iter().map(|d| d.id.clone()).collect(),
        prompt_hash: sha256_hex(prompt.full_text.as_bytes()),
        prediction: String::new(),
        gold: gold.clone(),
        p_bias: None,
        complete: None,
        output_tokens: None,
        scores: BTreeMap::new(),
    };
    match task {
        Task::Diagnosis => {
            let verbalizers = ctx.verbalizers.expect("verbalizers resolved for diagnosis");
            let r = decoding::diagnose(ctx.provider, &context, verbalizers)?;
            result.prediction = if r.predicted { "Yes" } else { "No" }.to_string();
            result.p_bias = Some(r.p_bias);
            result.scores.insert("correct".into(), f64::from(u8::from(result.prediction == gold)));
        }
        Task::Identification => {
            let trie = ctx.trie.as_ref().expect("trie built for identification");
            let (outcome, _) = decoding::identify(ctx.provider, &context, trie, eos, cfg.eos_only_at_terminals)?;
            result.prediction = match &outcome {
                IdentifyOutcome::Label(d) => d.name().to_string(),
                IdentifyOutcome::IncompletePrefix(p) => tok.detokenize(p)?.trim_start().to_string(),
            };
            result.complete = Some(outcome.label().is_some());
            let gold_dim = doc.dimension.expect("identification documents carry a dimension");
            result.scores.insert("exact_match".into(), metrics::exact_match(outcome.label(), gold_dim));
        }
        Task::Extraction => {
            let decoder = key.decoder.expect("extraction units carry a decoder");
            let doc_tokens = tok.tokenize(&doc.text)?;
            let generation = decoding::extract(decoder, ctx.provider, &context, eos, &params, &doc_tokens)?;
            result.prediction = tok.detokenize(&generation.tokens)?;
            result.output_tokens = Some(generation.tokens.into_inner());
            result.scores = text_scores(&result.prediction, &gold);
        }
        Task::Rephrasing => {
            let rationale = doc.rationale.as_deref().ok_or_else(|| templating::TemplateError::MissingInput(doc.id.clone()))?;
            let max_len = decoding::rephrase_max_len(tok.tokenize(rationale)?.len());
            let (text, _) = decoding::rephrase(ctx.provider, tok, &context, &params, max_len)?;
            result.prediction = text;
            result.scores = text_scores(&result.prediction, &gold);
        }
    }
    Ok(result)
}

/// Scores of every (class, variant, shots, resample, decoder) cell.
pub fn cell_scores(task: Task, examples: &[ExampleResult], bleu: BleuMode) -> Result<Vec<CellScore>> {
    type CellKey = (TemplateClass, usize, usize, u32, Option<Decoder>);
    let mut groups: BTreeMap<CellKey, Vec<&ExampleResult>> = BTreeMap::new();
    for e in examples {
        groups.entry((e.class, e.variant, e.shots, e.resample, e.decoder)).or_default().push(e);
    }
    let mut cells = Vec::new();
    for ((class, variant, shots, resample, decoder), members) in groups {
        let mut push = |metric: &str, dimension: Option<Dimension>, value: f64, n: usize| {
            cells.push(CellScore { class, variant, shots, resample, decoder, metric: metric.into(), dimension, value, n_examples: n });
        };
        let n = members.len();
        let mean_of = |name: &str, subset: &[&ExampleResult]| -> Result<f64> {
            Ok(metrics::mean(&subset.iter().map(|e| e.scores.get(name).copied().unwrap_or(0.0)).collect::<Vec<_>>())?)
        };
        match task {
            Task::Diagnosis => {
                let preds: Vec<bool> = members.iter().map(|e| e.prediction == "Yes").collect();
                let golds: Vec<bool> = members.iter().map(|e| e.gold == "Yes").collect();
                push("accuracy", None, metrics::accuracy(&preds, &golds)?, n);
                push("f1", None, metrics::f1_binary(&preds, &golds)?, n);
            }
            Task::Identification => {
                push("exact_match", None, mean_of("exact_match", &members)?, n);
                for dim in Dimension::ALL {
                    let subset: Vec<&ExampleResult> = members.iter().copied().filter(|e| e.dimension == Some(dim)).collect();
                    if !subset.is_empty() {
                        push("exact_match", Some(dim), mean_of("exact_match", &subset)?, subset.len());
                    }
                }
            }
            Task::Extraction | Task::Rephrasing => {
                push("token_f1", None, mean_of("token_f1", &members)?, n);
                let bleu_value = match bleu {
                    BleuMode::Sentence => mean_of("bleu4", &members)?,
                    BleuMode::Corpus => {
                        let pairs: Vec<(&str, &str)> =
                            members.iter().map(|e| (e.prediction.as_str(), e.gold.as_str())).collect();
                        metrics::corpus_bleu4(&pairs)
                    }
                };
                push("bleu4", None, bleu_value, n);
                push("meteor", None, mean_of("meteor", &members)?, n);
            }
        }
    }
    Ok(cells)
}

/// Group cells by (class, decoder, shots, metric, dimension) and aggregate
/// over variants and resamples.
pub fn aggregate_cells(cells: &[CellScore], std: StdKind) -> Result<Vec<AggregateRow>, RunnerError> {
    type AggKey = (TemplateClass, Option<Decoder>, usize, String, Option<Dimension>);
    let mut groups: BTreeMap<AggKey, Vec<f64>> = BTreeMap::new();
    for c in cells {
        groups.entry((c.class, c.decoder, c.shots, c.metric.clone(), c.dimension)).or_default().push(c.value);
    }
    groups
        .into_iter()
        .map(|((class, decoder, shots, metric, dimension), values)| {
            let aggregate = metrics::aggregate(&values, std).map_err(|_| RunnerError::EmptyAggregate)?;
            Ok(AggregateRow { class, decoder, shots, metric, dimension, aggregate })
        })
        .collect()
}

/// Execute a prepared experiment, checkpointing into `out_dir`.
pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<(RunRecord, RunStats)> {
    let start = Instant::now();
    let cfg = &exp.config;
    std::fs::create_dir_all(out_dir).map_err(|e| RunnerError::Io(format!("{}: {e}", out_dir.display())))?;

    let counting = CountingProvider::new(exp.provider.clone());
    let tok = exp.tokenizer.as_ref();
    let ctx = Ctx {
        exp,
        provider: &counting,
        trie: match cfg.task {
            Task::Identification => Some(LabelTrie::build(tok, cfg.label_leading_space)?),
            _ => None,
        },
        verbalizers: match cfg.task {
            Task::Diagnosis => Some(decoding::verbalizers(tok, cfg.label_leading_space)?),
            _ => None,
        },
    };

    let mut descriptions: BTreeMap<TemplateClass, Vec<TaskDescription>> = BTreeMap::new();
    let mut targeted: HashMap<(TemplateClass, Dimension), Vec<TaskDescription>> = HashMap::new();
    for &class in &cfg.classes {
        descriptions.insert(class, templating::expand_descriptions(cfg.task, class)?);
        if cfg.targeted {
            for dim in Dimension::ALL {
                targeted.insert((class, dim), templating::targeted_rephrase_descriptions(class, dim.name())?);
            }
        }
    }

    let mut units = Vec::new();
    for &class in &cfg.classes {
        let descs = &descriptions[&class];
        let picks = if class == TemplateClass::Null { vec![0] } else { cfg.variants.pick(descs.len())? };
        for variant in picks {
            for &shots in &cfg.shots {
                for resample in 0..cfg.resamples_for(shots) {
                    for decoder in cfg.decoder_list() {
                        for doc in &exp.data.eval {
                            let desc = match (cfg.targeted, doc.dimension) {
                                (true, Some(dim)) => &targeted[&(class, dim)][variant],
                                _ => &descs[variant],
                            };
                            let key = ExampleKey { class, variant, shots, resample, decoder, doc_id: doc.id.clone() };
                            units.push(Unit { key, desc, doc });
                        }
                    }
                }
            }
        }
    }

    let checkpoint_path = out_dir.join(exp.checkpoint_name());
    let (checkpoint, done) = Checkpoint::open(&checkpoint_path)?;
    let resumed = units.iter().filter(|u| done.contains_key(&u.key)).count();
    if resumed > 0 {
        log::info!("resuming: {resumed} of {} examples already in {}", units.len(), checkpoint_path.display());
    }
    let pending: Vec<&Unit> = units.iter().filter(|u| !done.contains_key(&u.key)).collect();
    let parallel = cfg.parallel && exp.provider.concurrent();
    let work = |u: &&Unit| -> Result<ExampleResult> {
        let r = run_unit(&ctx, u)?;
        checkpoint.append(&r)?;
        Ok(r)
    };
    let fresh: Vec<ExampleResult> = if parallel {
        pending.par_iter().map(work).collect::<Result<_>>()?
    } else {
        pending.iter().map(work).collect::<Result<_>>()?
    };

    let mut examples: Vec<ExampleResult> =
        units.iter().filter_map(|u| done.get(&u.key).cloned()).chain(fresh).collect();
    examples.sort_by_key(ExampleResult::key);
    let cells = cell_scores(cfg.task, &examples, cfg.bleu)?;
    let aggregates = aggregate_cells(&cells, cfg.std)?;
    let record = RunRecord {
        config_hash: exp.config_hash.clone(),
        task: cfg.task,
        strategy: cfg.strategy,
        tokenizer: tok.identity(),
        std: cfg.std,
        examples,
        cells,
        aggregates,
    };
    let stats = RunStats {
        wall_clock_secs: start.elapsed().as_secs_f64(),
        provider_calls: counting.calls(),
        provider: exp.provider.describe(),
        examples_total: units.len(),
        examples_resumed: resumed,
        parallel,
        checkpoint: checkpoint.path().display().to_string(),
    };
    Ok((record, stats))
}

/// Write `record.json`, `run_stats.json`, `report.csv` and `report.md`.
pub fn write_outputs(record: &RunRecord, stats: &RunStats, out_dir: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::from(RunnerError::Io(format!("{}: {e}", out_dir.display())));
    std::fs::create_dir_all(out_dir).map_err(io)?;
    std::fs::write(out_dir.join("record.json"), record.to_json()).map_err(io)?;
    let mut stats_json = serde_json::to_string_pretty(stats).expect("stats serialise");
    stats_json.push('\n');
    std::fs::write(out_dir.join("run_stats.json"), stats_json).map_err(io)?;
    write_report(record, out_dir)?;
    Ok(())
}

/// Load, run and write everything for a config.
pub fn run_config(config: ExperimentConfig) -> Result<(RunRecord, RunStats)> {
    let out_dir = config.out_dir();
    let exp = Experiment::prepare(config)?;
    let (record, stats) = run_experiment(&exp, &out_dir)?;
    write_outputs(&record, &stats, &out_dir)?;
    Ok((record, stats))
}
