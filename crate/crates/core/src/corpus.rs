//! Dataset ingestion, validation and filtering.
//!
//! Dataset JSONL, one object per line:
//!
//! ```text
//! {"id": "...", "text": "...", "label": "Neutral" | <dimension> | <other>, "rationale": "..."?, "split": "train" | "eval"}
//! ```
//!
//! Labels are matched case-insensitively, ignoring spaces, `_` and `-`.
//! `<other>` must be one of the remaining CAD primary categories
//! (`PersonDirectedAbuse`, `CounterSpeech`, `NonHatefulSlurs`); anything
//! else is rejected as an unknown dimension.
//!
//! Rephrase JSONL: `{"id": "...", "rephrase": "..."}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, MetricError};

/// Training documents longer than this many whitespace-separated words are
/// dropped.
pub const MAX_TRAIN_WORDS: usize = 150;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: unknown dimension `{label}`")]
    UnknownDimension { line: usize, label: String },
    #[error("duplicate rephrase for document `{0}`")]
    DuplicateRephrase(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Coarse abuse category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoarseCategory {
    IdentityDirected,
    AffiliationDirected,
}

impl CoarseCategory {
    /// Member dimensions in canonical order.
    pub fn dimensions(self) -> impl Iterator<Item = Dimension> {
        Dimension::ALL.into_iter().filter(move |d| d.coarse() == self)
    }
}

/// Fine-grained bias dimension. Declaration order is the canonical order
/// used for round-robin sampling and report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Dimension {
    Sexuality,
    Gender,
    Race,
    Religion,
    Age,
    Nationality,
    Ethnicity,
    Disability,
    Profession,
    PoliticalAffiliation,
    PerceivedNegativeGroups,
}

impl Dimension {
    pub const ALL: [Dimension; 11] = [
        Dimension::Sexuality,
        Dimension::Gender,
        Dimension::Race,
        Dimension::Religion,
        Dimension::Age,
        Dimension::Nationality,
        Dimension::Ethnicity,
        Dimension::Disability,
        Dimension::Profession,
        Dimension::PoliticalAffiliation,
        Dimension::PerceivedNegativeGroups,
    ];

    /// Lowercase label text, as generated by the model and used in prompts.
    pub fn name(self) -> &'static str {
        match self {
            Dimension::Sexuality => "sexuality",
            Dimension::Gender => "gender",
            Dimension::Race => "race",
            Dimension::Religion => "religion",
            Dimension::Age => "age",
            Dimension::Nationality => "nationality",
            Dimension::Ethnicity => "ethnicity",
            Dimension::Disability => "disability",
            Dimension::Profession => "profession",
            Dimension::PoliticalAffiliation => "political affiliation",
            Dimension::PerceivedNegativeGroups => "perceived negative groups",
        }
    }

    pub fn coarse(self) -> CoarseCategory {
        match self {
            Dimension::Profession | Dimension::PoliticalAffiliation | Dimension::PerceivedNegativeGroups => {
                CoarseCategory::AffiliationDirected
            }
            _ => CoarseCategory::IdentityDirected,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_label(s: &str) -> String {
    s.chars().filter(|c| !matches!(c, ' ' | '_' | '-')).flat_map(char::to_lowercase).collect()
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_label(s);
        Dimension::ALL
            .into_iter()
            .find(|d| normalize_label(d.name()) == key)
            .ok_or_else(|| format!("unknown dimension `{s}`"))
    }
}

impl From<Dimension> for String {
    fn from(d: Dimension) -> String {
        d.name().to_string()
    }
}

impl TryFrom<String> for Dimension {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosisLabel {
    Yes,
    No,
}

impl DiagnosisLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosisLabel::Yes => "Yes",
            DiagnosisLabel::No => "No",
        }
    }
}

/// Non-dimension CAD primary categories accepted as labels.
const OTHER_LABELS: [&str; 3] = ["PersonDirectedAbuse", "CounterSpeech", "NonHatefulSlurs"];

/// One dataset instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_rephrase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnosis_label: Option<DiagnosisLabel>,
    /// The raw label when it is neither `Neutral` nor a dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub other_label: Option<String>,
}

impl Document {
    pub fn coarse(&self) -> Option<CoarseCategory> {
        self.dimension.map(Dimension::coarse)
    }

    pub fn is_neutral(&self) -> bool {
        self.diagnosis_label == Some(DiagnosisLabel::No)
    }

    pub fn word_count(&self) -> usize {
        self.text.split_ascii_whitespace().count()
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if let Some(r) = &self.rationale {
            if r.is_empty() {
                return Err("empty rationale".into());
            }
            if !self.text.contains(r.as_str()) {
                return Err("rationale is not a substring of text".into());
            }
        }
        if self.dimension.is_some() && self.diagnosis_label != Some(DiagnosisLabel::Yes) {
            return Err("dimension-labelled document must carry diagnosis label Yes".into());
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    text: String,
    label: String,
    #[serde(default)]
    rationale: Option<String>,
    split: Split,
}

fn parse_record(line_no: usize, line: &str) -> Result<Document, CorpusError> {
    let raw: RawRecord = serde_json::from_str(line)
        .map_err(|e| CorpusError::MalformedRecord { line: line_no, reason: e.to_string() })?;
    let mut doc = Document {
        id: raw.id,
        text: raw.text,
        rationale: raw.rationale,
        dimension: None,
        split: raw.split,
        gold_rephrase: None,
        diagnosis_label: None,
        other_label: None,
    };
    let key = normalize_label(&raw.label);
    if key == "neutral" {
        doc.diagnosis_label = Some(DiagnosisLabel::No);
    } else if let Ok(d) = raw.label.parse::<Dimension>() {
        doc.dimension = Some(d);
        doc.diagnosis_label = Some(DiagnosisLabel::Yes);
    } else if let Some(other) = OTHER_LABELS.iter().find(|o| normalize_label(o) == key) {
        doc.other_label = Some((*other).to_string());
    } else {
        return Err(CorpusError::UnknownDimension { line: line_no, label: raw.label });
    }
    Ok(doc)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Parse dataset JSONL without enforcing the document invariants, so that
/// [`filter_cad`] can report what it drops.
pub fn parse_records(text: &str) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(i + 1, line)?;
        if !ids.insert(doc.id.clone()) {
            return Err(CorpusError::MalformedRecord { line: i + 1, reason: format!("duplicate id `{}`", doc.id) });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Parse and validate dataset JSONL. Any invariant violation is a hard
/// error naming the line.
pub fn parse_dataset(text: &str) -> Result<Vec<Document>, CorpusError> {
    let mut line_of = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if !line.trim().is_empty() {
            line_of.push(i + 1);
        }
    }
    let docs = parse_records(text)?;
    for (doc, line) in docs.iter().zip(line_of) {
        doc.validate().map_err(|reason| CorpusError::MalformedRecord { line, reason })?;
    }
    Ok(docs)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    parse_dataset(&read(path.as_ref())?)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    parse_records(&read(path.as_ref())?)
}

/// Which filtering rule dropped a document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterRule {
    MissingRationale,
    RationaleNotInText,
    NotTargetDimension,
    TrainTooLong,
}

/// Per-rule drop counts and ids.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DropReport {
    pub kept: usize,
    pub dropped: BTreeMap<FilterRule, Vec<String>>,
}

impl DropReport {
    pub fn count(&self, rule: FilterRule) -> usize {
        self.dropped.get(&rule).map_or(0, Vec::len)
    }
}

/// The rule that rejects `doc`, checked in order, if any.
pub fn violated_rule(doc: &Document) -> Option<FilterRule> {
    let Some(rationale) = doc.rationale.as_deref().filter(|r| !r.is_empty()) else {
        return Some(FilterRule::MissingRationale);
    };
    if !doc.text.contains(rationale) {
        return Some(FilterRule::RationaleNotInText);
    }
    if doc.dimension.is_none() {
        return Some(FilterRule::NotTargetDimension);
    }
    if doc.split == Split::Train && doc.word_count() > MAX_TRAIN_WORDS {
        return Some(FilterRule::TrainTooLong);
    }
    None
}

/// Keep documents with a rationale that occurs verbatim in the text and a
/// target dimension; training documents must also be at most
/// [`MAX_TRAIN_WORDS`] words long.
pub fn filter_cad(docs: Vec<Document>) -> (Vec<Document>, DropReport) {
    let mut report = DropReport::default();
    let mut kept = Vec::with_capacity(docs.len());
    for doc in docs {
        match violated_rule(&doc) {
            None => kept.push(doc),
            Some(rule) => report.dropped.entry(rule).or_default().push(doc.id),
        }
    }
    report.kept = kept.len();
    (kept, report)
}

/// Keep documents that map to a diagnosis label: any dimension is `Yes`,
/// `Neutral` is `No`, everything else is excluded.
pub fn map_diagnosis_labels(docs: Vec<Document>) -> Vec<Document> {
    docs.into_iter()
        .filter_map(|mut d| {
            d.diagnosis_label = if d.dimension.is_some() {
                Some(DiagnosisLabel::Yes)
            } else if d.diagnosis_label == Some(DiagnosisLabel::No) {
                Some(DiagnosisLabel::No)
            } else {
                None
            };
            d.diagnosis_label.map(|_| d)
        })
        .collect()
}

/// Outcome of attaching rephrases.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RephraseReport {
    pub attached: usize,
    pub empty_dropped: Vec<String>,
    pub unmatched: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRephrase {
    id: String,
    rephrase: String,
}

/// Attach gold rephrases by document id. Empty (or whitespace-only)
/// rephrases are dropped; ids without a document are reported and skipped.
pub fn attach_rephrases(text: &str, docs: &mut [Document]) -> Result<RephraseReport, CorpusError> {
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, d) in docs.iter().enumerate() {
        by_id.insert(d.id.clone(), i);
    }
    let mut seen = HashSet::new();
    let mut report = RephraseReport::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRephrase = serde_json::from_str(line)
            .map_err(|e| CorpusError::MalformedRecord { line: i + 1, reason: e.to_string() })?;
        if !seen.insert(raw.id.clone()) {
            return Err(CorpusError::DuplicateRephrase(raw.id));
        }
        if raw.rephrase.trim().is_empty() {
            report.empty_dropped.push(raw.id);
            continue;
        }
        match by_id.get(&raw.id) {
            Some(&idx) => {
                docs[idx].gold_rephrase = Some(raw.rephrase);
                report.attached += 1;
            }
            None => {
                log::warn!("rephrase for unknown document `{}` skipped", raw.id);
                report.unmatched.push(raw.id);
            }
        }
    }
    Ok(report)
}

pub fn load_rephrases(path: impl AsRef<Path>, docs: &mut [Document]) -> Result<RephraseReport, CorpusError> {
    attach_rephrases(&read(path.as_ref())?, docs)
}

/// Mean overlap between each rationale and its gold rephrase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapReport {
    pub token_f1: f64,
    pub bleu4: f64,
    pub meteor: f64,
    pub documents: usize,
}

pub fn rationale_overlap_report(docs: &[Document]) -> Result<OverlapReport, CorpusError> {
    let pairs: Vec<(&str, &str)> = docs
        .iter()
        .filter_map(|d| Some((d.rationale.as_deref()?, d.gold_rephrase.as_deref()?)))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::EmptyAggregate.into());
    }
    let n = pairs.len() as f64;
    let mean = |f: fn(&str, &str) -> f64| pairs.iter().map(|(r, g)| f(r, g)).sum::<f64>() / n;
    Ok(OverlapReport {
        token_f1: mean(metrics::token_f1),
        bleu4: mean(metrics::bleu4),
        meteor: mean(metrics::meteor),
        documents: pairs.len(),
    })
}

/// The dataset label of a document: a dimension name, `Neutral`, or the
/// other CAD category it was loaded with.
pub fn record_label(doc: &Document) -> &str {
    match (&doc.dimension, &doc.other_label) {
        (Some(d), _) => d.name(),
        (None, Some(other)) => other,
        (None, None) => "Neutral",
    }
}

/// Serialise a document back to one dataset JSONL line.
pub fn to_record_line(doc: &Document) -> String {
    let mut v = serde_json::json!({
        "id": doc.id,
        "text": doc.text,
        "label": record_label(doc),
        "split": doc.split,
    });
    if let Some(r) = &doc.rationale {
        v["rationale"] = r.clone().into();
    }
    v.to_string()
}

/// Evaluation and in-context pools for one task.
#[derive(Debug, Clone, Default)]
pub struct TaskData {
    pub eval: Vec<Document>,
    pub train: Vec<Document>,
}

/// Assemble the evaluation and training pools for `task` from loaded
/// documents (with rephrases already attached).
///
/// Diagnosis uses every dimension-labelled or `Neutral` document (it needs
/// no rationale), with the length rule on training documents.
/// Identification and extraction use the filtered documents. Rephrasing
/// additionally requires a gold rephrase.
pub fn task_data(task: crate::templating::Task, docs: &[Document]) -> TaskData {
    use crate::templating::Task;
    let pool: Vec<Document> = match task {
        Task::Diagnosis => map_diagnosis_labels(
            docs.iter()
                .filter(|d| d.split == Split::Eval || d.word_count() <= MAX_TRAIN_WORDS)
                .cloned()
                .collect(),
        ),
        Task::Identification | Task::Extraction => filter_cad(docs.to_vec()).0,
        Task::Rephrasing => filter_cad(docs.to_vec()).0.into_iter().filter(|d| d.gold_rephrase.is_some()).collect(),
    };
    let (eval, train) = pool.into_iter().partition(|d| d.split == Split::Eval);
    TaskData { eval, train }
}

/// Label histogram of a pool, for comparison with published splits.
pub fn dimension_counts(docs: &[Document]) -> BTreeMap<Dimension, usize> {
    let mut counts = BTreeMap::new();
    for d in docs {
        if let Some(dim) = d.dimension {
            *counts.entry(dim).or_insert(0) += 1;
        }
    }
    counts
}

pub fn diagnosis_counts(docs: &[Document]) -> (usize, usize) {
    let yes = docs.iter().filter(|d| d.diagnosis_label == Some(DiagnosisLabel::Yes)).count();
    let no = docs.iter().filter(|d| d.diagnosis_label == Some(DiagnosisLabel::No)).count();
    (yes, no)
}
