//! Inference procedures for the four tasks.
//!
//! All generation goes through [`generate`], which repeatedly asks a
//! [`Constraint`] for the allowed next tokens, requests logits restricted to
//! that set, and picks a token with a [`Selector`]. Steps whose allowed set
//! has a single member are taken without calling the provider.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dimension;
use crate::model::{softmax_normalize, LogitProvider, LogitRequest, ModelError};
use crate::tokenization::{TokenId, TokenSequence, Tokenizer, TokenizerError};

mod span;
mod trie;

pub use span::SpanState;
pub use trie::{label_tokens, LabelTrie};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("verbalizer `{0}` is not a single token")]
    VerbalizerNotAtomic(String),
    #[error("label set is empty")]
    EmptyLabelSet,
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("span decoding needs a non-empty document")]
    EmptyDocument,
    #[error("invalid sampler parameters: {0}")]
    InvalidParams(String),
    #[error("unknown decoder `{0}`")]
    UnknownDecoder(String),
}

/// Restricts the next token at each step.
pub trait Constraint {
    /// Allowed next tokens; `None` means the whole vocabulary.
    fn allowed(&self) -> Option<BTreeSet<TokenId>>;

    /// Record that `token` (never EOS) was emitted.
    fn advance(&mut self, token: TokenId);
}

/// No restriction.
#[derive(Debug, Clone, Copy, Default)]
pub struct Unconstrained;

impl Constraint for Unconstrained {
    fn allowed(&self) -> Option<BTreeSet<TokenId>> {
        None
    }

    fn advance(&mut self, _: TokenId) {}
}

/// A fixed token set, used for the document vocabulary `V_x ∪ {EOS}`.
#[derive(Debug, Clone)]
pub struct VocabConstraint {
    allowed: BTreeSet<TokenId>,
}

impl VocabConstraint {
    pub fn from_document(doc: &[TokenId], eos: TokenId) -> Self {
        let mut allowed: BTreeSet<TokenId> = doc.iter().copied().collect();
        allowed.insert(eos);
        Self { allowed }
    }
}

impl Constraint for VocabConstraint {
    fn allowed(&self) -> Option<BTreeSet<TokenId>> {
        Some(self.allowed.clone())
    }

    fn advance(&mut self, _: TokenId) {}
}

/// Position in a [`LabelTrie`] during identification.
#[derive(Debug, Clone)]
pub struct TrieCursor<'a> {
    trie: &'a LabelTrie,
    node: usize,
    path: Vec<TokenId>,
    eos: TokenId,
    eos_only_at_terminals: bool,
}

impl<'a> TrieCursor<'a> {
    pub fn new(trie: &'a LabelTrie, eos: TokenId, eos_only_at_terminals: bool) -> Self {
        Self { trie, node: trie.root(), path: Vec::new(), eos, eos_only_at_terminals }
    }

    pub fn node(&self) -> usize {
        self.node
    }

    pub fn path(&self) -> &[TokenId] {
        &self.path
    }
}

impl Constraint for TrieCursor<'_> {
    fn allowed(&self) -> Option<BTreeSet<TokenId>> {
        let mut set: BTreeSet<TokenId> = self.trie.children(self.node).collect();
        if !self.path.is_empty() && (!self.eos_only_at_terminals || self.trie.terminal(self.node).is_some() || set.is_empty()) {
            set.insert(self.eos);
        }
        Some(set)
    }

    fn advance(&mut self, token: TokenId) {
        self.node = self.trie.child(self.node, token).expect("advanced with a token outside the trie");
        self.path.push(token);
    }
}

/// Temperature, top-k and the seed of the per-decode RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerParams {
    pub temperature: f64,
    pub top_k: usize,
    pub rng_seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_k: 50, rng_seed: 0 }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(DecodeError::InvalidParams(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.top_k == 0 {
            return Err(DecodeError::InvalidParams("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a token is chosen from the allowed logits.
#[derive(Debug, Clone)]
pub enum Selector {
    /// Highest logit; ties go to the lowest token id.
    Argmax,
    /// Temperature scaling, top-k filtering, softmax, multinomial draw.
    Sample { temperature: f64, top_k: usize, rng: ChaCha8Rng },
}

impl Selector {
    pub fn sampler(params: &SamplerParams) -> Result<Selector, DecodeError> {
        params.validate()?;
        Ok(Selector::Sample {
            temperature: params.temperature,
            top_k: params.top_k,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
        })
    }
}

/// One decoding step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub token: TokenId,
    /// 1-based rank of `token` by logit within the allowed set.
    pub rank: usize,
    /// Probability of `token` renormalised over the allowed set.
    pub prob: f64,
    /// Size of the allowed set (vocabulary size when unconstrained).
    pub allowed: usize,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    /// Emitted tokens, EOS excluded.
    pub tokens: TokenSequence,
    pub steps: Vec<Step>,
    pub ended_with_eos: bool,
    pub provider_calls: usize,
}

fn by_rank(a: &(TokenId, f64), b: &(TokenId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best entries in rank order (descending logit, then ascending id).
fn top_ranked(scores: &BTreeMap<TokenId, f64>, k: usize) -> Vec<(TokenId, f64)> {
    let mut v: Vec<(TokenId, f64)> = scores.iter().map(|(&t, &s)| (t, s)).collect();
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, by_rank);
        v.truncate(k);
    }
    v.sort_by(by_rank);
    v
}

/// Softmax probability of `token` over all of `scores`.
fn softmax_at(scores: &BTreeMap<TokenId, f64>, token: TokenId) -> Result<f64, ModelError> {
    if scores.values().any(|v| !v.is_finite()) {
        return Err(ModelError::MalformedResponse("non-finite logit".into()));
    }
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = scores.values().map(|&v| (v - max).exp()).sum();
    Ok((scores[&token] - max).exp() / total)
}

/// Run a decode loop of at most `max_len` emitted tokens after `prompt`.
pub fn generate<C: Constraint>(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    eos: TokenId,
    constraint: &mut C,
    selector: &mut Selector,
    max_len: usize,
) -> Result<Generation, DecodeError> {
    let mut context: Vec<TokenId> = prompt.to_vec();
    let mut out = Generation { tokens: TokenSequence::default(), steps: Vec::new(), ended_with_eos: false, provider_calls: 0 };
    while out.tokens.len() < max_len {
        let allowed = constraint.allowed();
        let step = match &allowed {
            Some(set) if set.len() == 1 => {
                let token = *set.iter().next().expect("singleton");
                Step { token, rank: 1, prob: 1.0, allowed: 1, forced: true }
            }
            Some(set) if set.is_empty() => {
                return Err(ModelError::InvalidRequest("constraint allows no tokens".into()).into());
            }
            _ => {
                let req = LogitRequest { context: context.clone().into(), restrict: allowed.clone() };
                let resp = provider.next_logits(&req)?;
                out.provider_calls += 1;
                if let Some(set) = &allowed {
                    if !resp.scores.keys().eq(set.iter()) {
                        return Err(ModelError::MalformedResponse("scores keys differ from restrict set".into()).into());
                    }
                }
                if resp.scores.is_empty() {
                    return Err(ModelError::EmptyDistribution.into());
                }
                let (token, rank) = match selector {
                    Selector::Argmax => {
                        let best = resp.scores.iter().map(|(&t, &s)| (t, s)).min_by(by_rank).expect("non-empty");
                        (best.0, 1)
                    }
                    Selector::Sample { temperature, top_k, rng } => {
                        let kept = top_ranked(&resp.scores, (*top_k).min(resp.scores.len()));
                        let max = kept[0].1 / *temperature;
                        let weights: Vec<f64> = kept.iter().map(|(_, s)| (s / *temperature - max).exp()).collect();
                        let total: f64 = weights.iter().sum();
                        let u: f64 = rng.gen::<f64>() * total;
                        let mut acc = 0.0;
                        let mut pick = kept.len() - 1;
                        for (i, w) in weights.iter().enumerate() {
                            acc += w;
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        (kept[pick].0, pick + 1)
                    }
                };
                let prob = softmax_at(&resp.scores, token)?;
                Step { token, rank, prob, allowed: resp.scores.len(), forced: false }
            }
        };
        let token = step.token;
        out.steps.push(step);
        if token == eos {
            out.ended_with_eos = true;
            break;
        }
        out.tokens.push(token);
        context.push(token);
        constraint.advance(token);
    }
    Ok(out)
}

/// Verbalizer scoring result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagnosisResult {
    pub p_bias: f64,
    pub predicted: bool,
}

/// Token ids of the `Yes` and `No` verbalizers.
pub fn verbalizers(tokenizer: &dyn Tokenizer, leading_space: bool) -> Result<(TokenId, TokenId), DecodeError> {
    let one = |word: &str| -> Result<TokenId, DecodeError> {
        let text = if leading_space { format!(" {word}") } else { word.to_string() };
        match tokenizer.tokenize(&text)?.ids() {
            [id] => Ok(*id),
            _ => Err(DecodeError::VerbalizerNotAtomic(text)),
        }
    };
    Ok((one("Yes")?, one("No")?))
}

/// Probability of `Yes` from a two-way softmax over the verbalizer logits
/// after `prompt`; predicts bias when strictly above one half.
pub fn diagnose(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    (yes, no): (TokenId, TokenId),
) -> Result<DiagnosisResult, DecodeError> {
    if yes == no {
        return Err(DecodeError::InvalidParams("verbalizers must differ".into()));
    }
    let resp = provider.next_logits(&LogitRequest::restricted(prompt.to_vec().into(), BTreeSet::from([yes, no])))?;
    let (Some(&y), Some(&n)) = (resp.scores.get(&yes), resp.scores.get(&no)) else {
        return Err(ModelError::MalformedResponse("verbalizer logits missing".into()).into());
    };
    Ok(p_bias_from_logits(y, n)?)
}

/// Two-way softmax and threshold.
pub fn p_bias_from_logits(yes: f64, no: f64) -> Result<DiagnosisResult, ModelError> {
    let probs = softmax_normalize(&[(0, yes), (1, no)].into_iter().collect())?;
    let p_bias = probs[&0];
    Ok(DiagnosisResult { p_bias, predicted: p_bias > 0.5 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentifyOutcome {
    Label(Dimension),
    IncompletePrefix(TokenSequence),
}

impl IdentifyOutcome {
    pub fn label(&self) -> Option<Dimension> {
        match self {
            IdentifyOutcome::Label(d) => Some(*d),
            IdentifyOutcome::IncompletePrefix(_) => None,
        }
    }
}

/// Greedy label-trie decoding. The first step allows the labels' first
/// tokens; later steps allow the current node's children plus EOS (only at
/// terminal nodes when `eos_only_at_terminals`). Stopping at a non-terminal
/// node yields the incomplete prefix.
pub fn identify(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    trie: &LabelTrie,
    eos: TokenId,
    eos_only_at_terminals: bool,
) -> Result<(IdentifyOutcome, Generation), DecodeError> {
    let mut cursor = TrieCursor::new(trie, eos, eos_only_at_terminals);
    let generation = generate(provider, prompt, eos, &mut cursor, &mut Selector::Argmax, trie.depth() + 1)?;
    let outcome = match (generation.ended_with_eos, trie.terminal(cursor.node())) {
        (true, Some(d)) => IdentifyOutcome::Label(d),
        _ => IdentifyOutcome::IncompletePrefix(cursor.path().to_vec().into()),
    };
    Ok((outcome, generation))
}

/// Extraction decoder choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoder {
    Unconstrained,
    Constrained,
    Span,
}

impl Decoder {
    pub const ALL: [Decoder; 3] = [Decoder::Unconstrained, Decoder::Constrained, Decoder::Span];

    pub fn as_str(self) -> &'static str {
        match self {
            Decoder::Unconstrained => "unconstrained",
            Decoder::Constrained => "constrained",
            Decoder::Span => "span",
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decoder {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Decoder::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| DecodeError::UnknownDecoder(s.to_string()))
    }
}

/// Free sampling for at most `max_len` tokens.
pub fn extract_unconstrained(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    eos: TokenId,
    params: &SamplerParams,
    max_len: usize,
) -> Result<Generation, DecodeError> {
    generate(provider, prompt, eos, &mut Unconstrained, &mut Selector::sampler(params)?, max_len)
}

/// Sampling restricted to the document's token set plus EOS.
pub fn extract_constrained(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    eos: TokenId,
    params: &SamplerParams,
    doc: &[TokenId],
) -> Result<Generation, DecodeError> {
    let mut c = VocabConstraint::from_document(doc, eos);
    generate(provider, prompt, eos, &mut c, &mut Selector::sampler(params)?, doc.len())
}

/// Sampling that can only produce a contiguous token span of `doc`.
pub fn extract_span(
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    eos: TokenId,
    params: &SamplerParams,
    doc: &[TokenId],
) -> Result<Generation, DecodeError> {
    let mut c = SpanState::new(doc, eos)?;
    generate(provider, prompt, eos, &mut c, &mut Selector::sampler(params)?, doc.len())
}

pub fn extract(
    decoder: Decoder,
    provider: &dyn LogitProvider,
    prompt: &[TokenId],
    eos: TokenId,
    params: &SamplerParams,
    doc: &[TokenId],
) -> Result<Generation, DecodeError> {
    match decoder {
        Decoder::Unconstrained => extract_unconstrained(provider, prompt, eos, params, doc.len()),
        Decoder::Constrained => extract_constrained(provider, prompt, eos, params, doc),
        Decoder::Span => extract_span(provider, prompt, eos, params, doc),
    }
}

/// Generation budget for a rephrase of a rationale of `rationale_len`
/// tokens.
pub fn rephrase_max_len(rationale_len: usize) -> usize {
    (2 * rationale_len).min(128)
}

/// Free sampling after a prompt whose document slot holds the rationale.
pub fn rephrase(
    provider: &dyn LogitProvider,
    tokenizer: &dyn Tokenizer,
    prompt: &[TokenId],
    params: &SamplerParams,
    max_len: usize,
) -> Result<(String, Generation), DecodeError> {
    let eos = tokenizer.vocab().eos_id();
    let generation = extract_unconstrained(provider, prompt, eos, params, max_len)?;
    Ok((tokenizer.detokenize(&generation.tokens)?, generation))
}
