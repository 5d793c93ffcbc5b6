//! Task descriptions and prompt assembly.
//!
//! Each task has a slot table (slot name → ordered lexical variants) and a
//! set of shapes per description class. Expanding a class renders every
//! shape with the cross product of its slots' variants, shape-major, with
//! the first slot of the table varying slowest.
//!
//! A prompt places the document before its description:
//!
//! ```text
//! <doc>\n<description>\n<answer prefix> <gold>\n\n ... <eval doc>\n<description>\n<answer prefix>
//! ```
//!
//! Empty parts (null description, completion-class prefix) are omitted
//! together with their newline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dimension, Document};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("no {class} descriptions exist for the {task} task")]
    UnknownTemplateClass { task: Task, class: TemplateClass },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("unknown description class `{0}`")]
    UnknownClass(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("targeted descriptions exist only for rephrasing")]
    TargetingUnsupported,
    #[error("few-shot example `{0}` lacks a gold answer")]
    IncompleteExample(String),
    #[error("document `{0}` lacks the input this task needs")]
    MissingInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Diagnosis,
    Identification,
    Extraction,
    Rephrasing,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Diagnosis, Task::Identification, Task::Extraction, Task::Rephrasing];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Diagnosis => "diagnosis",
            Task::Identification => "identification",
            Task::Extraction => "extraction",
            Task::Rephrasing => "rephrasing",
        }
    }

    /// Classes with at least one description for this task.
    pub fn classes(self) -> &'static [TemplateClass] {
        match self {
            Task::Diagnosis => &[TemplateClass::Question, TemplateClass::Null],
            _ => &TemplateClass::ALL,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TemplateError::UnknownTask(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateClass {
    Statement,
    Question,
    Completion,
    Null,
}

impl TemplateClass {
    pub const ALL: [TemplateClass; 4] =
        [TemplateClass::Statement, TemplateClass::Question, TemplateClass::Completion, TemplateClass::Null];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateClass::Statement => "statement",
            TemplateClass::Question => "question",
            TemplateClass::Completion => "completion",
            TemplateClass::Null => "null",
        }
    }

    /// Text placed after the description, before the answer.
    pub fn answer_prefix(self) -> &'static str {
        match self {
            TemplateClass::Completion => "",
            _ => "Answer:",
        }
    }
}

impl fmt::Display for TemplateClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateClass {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateClass::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| TemplateError::UnknownClass(s.to_string()))
    }
}

/// Ordered lexical variants for each slot of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTable {
    pub task: Task,
    pub slots: Vec<(&'static str, Vec<&'static str>)>,
}

impl SlotTable {
    pub fn builtin(task: Task) -> SlotTable {
        if task == Task::Diagnosis {
            return SlotTable { task, slots: Vec::new() };
        }
        let text_reference = match task {
            Task::Rephrasing => vec!["the aforementioned text", "the previous text"],
            _ => vec!["aforementioned text", "previous text", "text"],
        };
        let mut slots = vec![
            (
                "stmt_task",
                match task {
                    Task::Identification => vec!["identify", "generate"],
                    Task::Extraction => vec!["extract", "generate"],
                    _ => vec!["rephrase", "convert"],
                },
            ),
            ("text_reference", text_reference),
            (
                "target",
                match task {
                    Task::Identification => vec!["bias", "toxicity"],
                    Task::Extraction => vec!["biased", "toxic"],
                    _ => vec!["toxicity", "bias"],
                },
            ),
            ("comp_task", vec!["complete", "finish"]),
            ("seq", vec!["sentence", "statement", "sequence"]),
        ];
        match task {
            Task::Identification => slots.push(("bias_description", vec!["type", "dimension"])),
            Task::Extraction => slots.push(("seq_type", vec!["subsequence", "span", "sentence"])),
            _ => {}
        }
        SlotTable { task, slots }
    }

    pub fn variants(&self, slot: &str) -> Option<&[&'static str]> {
        self.slots.iter().find(|(name, _)| *name == slot).map(|(_, v)| v.as_slice())
    }
}

/// One description template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub id: &'static str,
    pub class: TemplateClass,
    /// `{slot}` placeholders; `{Slot}` capitalises the substituted variant.
    pub pattern: &'static str,
}

const fn shape(id: &'static str, class: TemplateClass, pattern: &'static str) -> Shape {
    Shape { id, class, pattern }
}

use TemplateClass::{Completion, Question, Statement};

const DIAGNOSIS: &[Shape] = &[
    shape("Question1", Question, "Question: Is there bias in the previous text?"),
    shape("Question2", Question, "Question: Does the above text contain bias?"),
];

const IDENTIFICATION: &[Shape] = &[
    shape("Statement", Statement, "Task: {Stmt_task} the {bias_description} of {target} in the {text_reference}."),
    shape("Question", Question, "Question: What {bias_description} of {target} is present in the {text_reference}?"),
    shape(
        "Completion",
        Completion,
        "Prompt: {Comp_task} the following {seq} about the {text_reference}. The {bias_description} of {target} in this text is",
    ),
];

const EXTRACTION: &[Shape] = &[
    shape("Statement", Statement, "Task: {Stmt_task} the most {target} {seq_type} from the {text_reference}"),
    shape("Question", Question, "Question: What is the most {target} {seq_type} in the {text_reference}?"),
    shape(
        "Completion",
        Completion,
        "Prompt: {Comp_task} the following {seq} about the {text_reference}. The most {target} {seq_type} in this text is",
    ),
];

const REPHRASING: &[Shape] = &[
    shape("Statement1", Statement, "Task: {Stmt_task} {text_reference} to remove {target}"),
    shape("Statement2", Statement, "Task: {Stmt_task} to remove {target}"),
    shape("Question1", Question, "Question: What is the rephrase of {text_reference} that removes {target}?"),
    shape("Question2", Question, "Question: What is the rephrase that removes {target}?"),
    shape(
        "Completion1",
        Completion,
        "Prompt: {Comp_task} the following {seq} about {text_reference}. A rephrase that removes {target} is",
    ),
    shape("Completion2", Completion, "Prompt: {Comp_task} the following {seq}. A rephrase that removes {target} is"),
];

pub fn shapes(task: Task) -> &'static [Shape] {
    match task {
        Task::Diagnosis => DIAGNOSIS,
        Task::Identification => IDENTIFICATION,
        Task::Extraction => EXTRACTION,
        Task::Rephrasing => REPHRASING,
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot { name: String, capitalise: bool },
}

fn parse_pattern(pattern: &str) -> Vec<Piece<'_>> {
    let mut pieces = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let close = open + rest[open..].find('}').expect("unterminated placeholder in built-in shape");
        if open > 0 {
            pieces.push(Piece::Text(&rest[..open]));
        }
        let raw = &rest[open + 1..close];
        let capitalise = raw.starts_with(|c: char| c.is_ascii_uppercase());
        pieces.push(Piece::Slot { name: raw.to_ascii_lowercase(), capitalise });
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Text(rest));
    }
    pieces
}

fn capitalise(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl Shape {
    /// Slots used by this shape, in slot-table order.
    pub fn slots(&self, table: &SlotTable) -> Vec<&'static str> {
        let used: Vec<String> = parse_pattern(self.pattern)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot { name, .. } => Some(name),
                Piece::Text(_) => None,
            })
            .collect();
        table.slots.iter().map(|(n, _)| *n).filter(|n| used.iter().any(|u| u == n)).collect()
    }

    fn render(&self, assignment: &BTreeMap<String, String>, targeting: Option<Dimension>) -> String {
        let mut out = String::new();
        for piece in parse_pattern(self.pattern) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot { name, capitalise: cap } => {
                    let value = &assignment[&name];
                    if cap {
                        out.push_str(&capitalise(value));
                    } else {
                        out.push_str(value);
                    }
                    if let (Some(dim), "target") = (targeting, name.as_str()) {
                        out.push_str(" targeting ");
                        out.push_str(dim.name());
                    }
                }
            }
        }
        out
    }
}

/// One rendered task description.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task: Task,
    pub class: TemplateClass,
    pub shape_id: String,
    pub variant_index: usize,
    pub slots: BTreeMap<String, String>,
    pub rendered: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targeting: Option<Dimension>,
}

impl TaskDescription {
    pub fn null(task: Task) -> TaskDescription {
        TaskDescription {
            task,
            class: TemplateClass::Null,
            shape_id: "Null".into(),
            variant_index: 0,
            slots: BTreeMap::new(),
            rendered: String::new(),
            targeting: None,
        }
    }

    pub fn answer_prefix(&self) -> &'static str {
        self.class.answer_prefix()
    }
}

fn expand(task: Task, class: TemplateClass, targeting: Option<Dimension>) -> Result<Vec<TaskDescription>, TemplateError> {
    if !task.classes().contains(&class) {
        return Err(TemplateError::UnknownTemplateClass { task, class });
    }
    if class == TemplateClass::Null {
        let mut d = TaskDescription::null(task);
        d.targeting = targeting;
        return Ok(vec![d]);
    }
    let table = SlotTable::builtin(task);
    let mut out = Vec::new();
    for shape in shapes(task).iter().filter(|s| s.class == class) {
        let slots = shape.slots(&table);
        let lists: Vec<&[&str]> = slots.iter().map(|s| table.variants(s).expect("shape slot in table")).collect();
        let total: usize = lists.iter().map(|l| l.len()).product();
        for combo in 0..total {
            let mut assignment = BTreeMap::new();
            let mut rem = combo;
            for (i, list) in lists.iter().enumerate().rev() {
                assignment.insert(slots[i].to_string(), list[rem % list.len()].to_string());
                rem /= list.len();
            }
            out.push(TaskDescription {
                task,
                class,
                shape_id: shape.id.to_string(),
                variant_index: out.len(),
                rendered: shape.render(&assignment, targeting),
                slots: assignment,
                targeting,
            });
        }
    }
    Ok(out)
}

/// Every description of `class` for `task`, in deterministic order.
pub fn expand_descriptions(task: Task, class: TemplateClass) -> Result<Vec<TaskDescription>, TemplateError> {
    expand(task, class, None)
}

/// Rephrasing descriptions of `class` asking to remove bias targeting
/// `dimension`; one per base description.
pub fn targeted_rephrase_descriptions(
    class: TemplateClass,
    dimension: &str,
) -> Result<Vec<TaskDescription>, TemplateError> {
    let dim: Dimension = dimension.parse().map_err(|_| TemplateError::UnknownDimension(dimension.to_string()))?;
    expand(Task::Rephrasing, class, Some(dim))
}

/// An assembled prompt.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prompt {
    pub fewshot_block: String,
    pub document_text: String,
    pub description: TaskDescription,
    pub answer_prefix: String,
    pub full_text: String,
}

fn block(document: &str, desc: &TaskDescription) -> String {
    let mut parts = vec![document];
    if !desc.rendered.is_empty() {
        parts.push(&desc.rendered);
    }
    if !desc.answer_prefix().is_empty() {
        parts.push(desc.answer_prefix());
    }
    parts.join("\n")
}

/// Assemble a prompt from the evaluation input and `(input, gold answer)`
/// pairs, all rendered with `desc`.
pub fn assemble(document: &str, desc: &TaskDescription, examples: &[(&str, &str)]) -> Prompt {
    let mut fewshot_block = String::new();
    for (text, gold) in examples {
        fewshot_block.push_str(&block(text, desc));
        fewshot_block.push(' ');
        fewshot_block.push_str(gold);
        fewshot_block.push_str("\n\n");
    }
    let full_text = format!("{fewshot_block}{}", block(document, desc));
    Prompt {
        fewshot_block,
        document_text: document.to_string(),
        description: desc.clone(),
        answer_prefix: desc.answer_prefix().to_string(),
        full_text,
    }
}

/// Text placed in the document slot: the rationale for rephrasing, the full
/// text otherwise.
pub fn task_input(task: Task, doc: &Document) -> Option<&str> {
    match task {
        Task::Rephrasing => doc.rationale.as_deref(),
        _ => Some(&doc.text),
    }
}

/// Gold answer for a document under `task`.
pub fn gold_answer(task: Task, doc: &Document) -> Option<String> {
    match task {
        Task::Diagnosis => doc.diagnosis_label.map(|l| l.as_str().to_string()),
        Task::Identification => doc.dimension.map(|d| d.name().to_string()),
        Task::Extraction => doc.rationale.clone(),
        Task::Rephrasing => doc.gold_rephrase.clone(),
    }
}

/// Render `doc` with `desc`, preceded by the few-shot documents and their
/// gold answers.
pub fn render_prompt(doc: &Document, desc: &TaskDescription, fewshot: &[&Document]) -> Result<Prompt, TemplateError> {
    let task = desc.task;
    let input = task_input(task, doc).ok_or_else(|| TemplateError::MissingInput(doc.id.clone()))?;
    let mut examples = Vec::with_capacity(fewshot.len());
    for ex in fewshot {
        let gold = gold_answer(task, ex).ok_or_else(|| TemplateError::IncompleteExample(ex.id.clone()))?;
        let text = task_input(task, ex).ok_or_else(|| TemplateError::IncompleteExample(ex.id.clone()))?;
        examples.push((text, gold));
    }
    let pairs: Vec<(&str, &str)> = examples.iter().map(|(t, g)| (*t, g.as_str())).collect();
    Ok(assemble(input, desc, &pairs))
}
