//! Prompt-based bias diagnosis, identification, extraction and rephrasing
//! with autoregressive language models.
//!
//! The crate is organised bottom-up:
//!
//! * [`tokenization`] turns text into stable token ids (greedy word
//!   tokenizer with byte fallback, or a byte-level BPE with a merges file).
//! * [`model`] is the next-token logit provider boundary: deterministic
//!   [`model::MockModel`] and [`model::NGramModel`] implementations, an HTTP
//!   client ([`model::RemoteModel`]) and the matching server.
//! * [`templating`] enumerates every task description (statement, question,
//!   completion and null classes with all lexical variants) and assembles
//!   few-shot prompts.
//! * [`sampling`] picks in-context examples, either uniformly at random or
//!   with the coarse-category round-robin weak oracle.
//! * [`decoding`] runs the four inference procedures: two-way verbalizer
//!   scoring, label-trie constrained argmax decoding, and the unconstrained,
//!   vocabulary-constrained and span-constrained samplers.
//! * [`metrics`] scores predictions (accuracy, F1, exact match, token F1,
//!   BLEU-4, exact-match METEOR) and aggregates them.
//! * [`corpus`] loads, validates and filters JSONL datasets.
//! * [`runner`] drives full experiments with checkpointing and writes
//!   CSV/Markdown reports.

pub mod corpus;
pub mod decoding;
pub mod metrics;
pub mod model;
pub mod runner;
pub mod sampling;
pub mod templating;
pub mod tokenization;

mod error;
pub(crate) mod hashing;

pub use corpus::{CoarseCategory, DiagnosisLabel, Dimension, Document, Split};
pub use error::{Error, Result};
pub use model::{LogitProvider, LogitRequest, LogitResponse};
pub use templating::{Prompt, Task, TaskDescription, TemplateClass};
pub use tokenization::{TokenId, TokenSequence, Tokenizer, Vocabulary};
