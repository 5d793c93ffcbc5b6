use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::json;

use super::RunnerError;
use crate::decoding::Decoder;
use crate::metrics::StdKind;
use crate::sampling::Strategy;
use crate::templating::{Task, TemplateClass};

/// Which descriptions of each class to evaluate.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(untagged)]
pub enum VariantSelection {
    #[default]
    All,
    Indices(Vec<usize>),
}

impl<'de> Deserialize<'de> for VariantSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            List(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "all" => Ok(VariantSelection::All),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("variants must be \"all\" or a list of indices, got `{w}`"))),
            Raw::List(v) => Ok(VariantSelection::Indices(v)),
        }
    }
}

impl VariantSelection {
    /// Selected indices among `count` descriptions.
    pub fn pick(&self, count: usize) -> Result<Vec<usize>, RunnerError> {
        match self {
            VariantSelection::All => Ok((0..count).collect()),
            VariantSelection::Indices(idx) => {
                let picked: Vec<usize> = idx.iter().copied().filter(|&i| i < count).collect();
                if picked.is_empty() {
                    return Err(RunnerError::Config(format!("no selected variant index is below {count}")));
                }
                Ok(picked)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuMode {
    #[default]
    Sentence,
    Corpus,
}

fn default_classes() -> Vec<TemplateClass> {
    TemplateClass::ALL.to_vec()
}
fn default_shots() -> Vec<usize> {
    vec![0]
}
fn default_strategy() -> Strategy {
    Strategy::Random
}
fn default_resamples() -> u32 {
    3
}
fn default_temperature() -> f64 {
    0.7
}
fn default_top_k() -> usize {
    50
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}

/// Experiment description, read from a flat TOML file. Relative paths are
/// resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    #[serde(default = "default_classes")]
    pub classes: Vec<TemplateClass>,
    #[serde(default)]
    pub variants: VariantSelection,
    #[serde(default = "default_shots")]
    pub shots: Vec<usize>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Few-shot example sets per cell; zero-shot cells always use one.
    #[serde(default = "default_resamples")]
    pub resamples: u32,
    #[serde(default)]
    pub decoders: Vec<Decoder>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    pub provider: String,
    pub tokenizer: String,
    #[serde(default)]
    pub seed: u64,
    pub data: PathBuf,
    #[serde(default)]
    pub rephrases: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "yes")]
    pub label_leading_space: bool,
    #[serde(default)]
    pub eos_only_at_terminals: bool,
    /// Rephrasing only: ask to remove bias targeting the document's gold
    /// dimension.
    #[serde(default)]
    pub targeted: bool,
    #[serde(default)]
    pub std: StdKind,
    #[serde(default)]
    pub bleu: BleuMode,
    #[serde(default = "yes")]
    pub parallel: bool,
    /// Evaluate only the first `limit` eval documents.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, RunnerError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    /// Resamples used at `shots`.
    pub fn resamples_for(&self, shots: usize) -> u32 {
        if shots == 0 {
            1
        } else {
            self.resamples
        }
    }

    /// Decoders to run; a single `None` for tasks without a decoder choice.
    pub fn decoder_list(&self) -> Vec<Option<Decoder>> {
        if self.task == Task::Extraction {
            self.decoders.iter().copied().map(Some).collect()
        } else {
            vec![None]
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Config(m));
        if self.classes.is_empty() {
            return bad("classes must not be empty".into());
        }
        for c in &self.classes {
            if !self.task.classes().contains(c) {
                return bad(format!("the {} task has no {c} descriptions", self.task));
            }
        }
        if self.shots.is_empty() {
            return bad("shots must not be empty".into());
        }
        for &n in &self.shots {
            if !crate::sampling::FewShotConfig::STANDARD_SHOTS.contains(&n) {
                log::warn!("shot count {n} is outside the reference settings 0, 5, 10, 20");
            }
        }
        if self.resamples == 0 {
            return bad("resamples must be at least 1".into());
        }
        match (self.task == Task::Extraction, self.decoders.is_empty()) {
            (true, true) => return bad("extraction needs at least one decoder".into()),
            (false, false) => return bad("decoders apply only to extraction".into()),
            _ => {}
        }
        if self.strategy == Strategy::Oracle && self.task != Task::Identification {
            return bad("oracle sampling is defined only for identification".into());
        }
        if self.targeted && self.task != Task::Rephrasing {
            return bad("targeted descriptions apply only to rephrasing".into());
        }
        crate::decoding::SamplerParams { temperature: self.temperature, top_k: self.top_k, rng_seed: 0 }
            .validate()
            .map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// Hash of every field that affects results, plus the tokenizer and
    /// input file contents. The provider location is left out so that the
    /// same model served remotely or in-process gives the same hash.
    pub fn config_hash(&self, tokenizer_fingerprint: &str, data_hash: &str, rephrase_hash: Option<&str>) -> String {
        let canonical = json!({
            "format": 1,
            "task": self.task,
            "classes": self.classes,
            "variants": self.variants,
            "shots": self.shots,
            "strategy": self.strategy,
            "resamples": self.resamples,
            "decoders": self.decoders,
            "temperature": self.temperature,
            "top_k": self.top_k,
            "seed": self.seed,
            "label_leading_space": self.label_leading_space,
            "eos_only_at_terminals": self.eos_only_at_terminals,
            "targeted": self.targeted,
            "std": self.std,
            "bleu": self.bleu,
            "limit": self.limit,
            "tokenizer": tokenizer_fingerprint,
            "data": data_hash,
            "rephrases": rephrase_hash,
        });
        crate::hashing::sha256_hex(canonical.to_string().as_bytes())
    }
}
