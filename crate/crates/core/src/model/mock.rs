use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{score_tokens, LogitProvider, LogitRequest, LogitResponse, ModelError};
use crate::hashing::{mix64, unit_interval};
use crate::tokenization::TokenId;

/// What a [`MockModel`] returns when no rule matches the context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockFallback {
    /// Every token gets the floor logit.
    Floor,
    /// Pseudo-random logits in `[-4, 4)` derived from a hash of the salt,
    /// the last `window` context tokens and the candidate token. EOS gets
    /// `eos_bias` added.
    Hashed { salt: u64, window: usize, eos_bias: f64 },
}

/// Context-suffix → logit row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub suffix: Vec<TokenId>,
    pub logits: BTreeMap<TokenId, f64>,
}

/// Table-driven logit provider.
///
/// The rule whose `suffix` is the longest suffix of the request context
/// wins; tokens absent from its row get `floor`. With no matching rule the
/// fallback applies. Only exact arithmetic on the stored values is involved,
/// so responses are bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockModel {
    pub vocab_size: usize,
    pub eos: TokenId,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "default_limit")]
    pub context_limit: usize,
    #[serde(default = "default_fallback")]
    pub fallback: MockFallback,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

fn default_floor() -> f64 {
    -1.0e4
}

fn default_limit() -> usize {
    usize::MAX
}

fn default_fallback() -> MockFallback {
    MockFallback::Floor
}

impl MockModel {
    pub fn new(vocab_size: usize, eos: TokenId) -> Self {
        Self {
            vocab_size,
            eos,
            floor: default_floor(),
            context_limit: default_limit(),
            fallback: MockFallback::Floor,
            rules: Vec::new(),
        }
    }

    /// A rule-free model with hashed fallback logits over a two-token
    /// window and a mild EOS preference.
    pub fn hashed(vocab_size: usize, eos: TokenId, salt: u64) -> Self {
        Self::new(vocab_size, eos).with_fallback(MockFallback::Hashed { salt, window: 2, eos_bias: 2.0 })
    }

    pub fn with_fallback(mut self, fallback: MockFallback) -> Self {
        self.fallback = fallback;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn with_context_limit(mut self, limit: usize) -> Self {
        self.context_limit = limit;
        self
    }

    pub fn with_rule(mut self, suffix: Vec<TokenId>, logits: impl IntoIterator<Item = (TokenId, f64)>) -> Self {
        self.rules.push(MockRule { suffix, logits: logits.into_iter().collect() });
        self
    }

    /// Make the model emit `tokens` and then EOS after `context`: one rule
    /// per step, each a one-hot row keyed on the full context so far.
    pub fn with_script(mut self, context: &[TokenId], tokens: &[TokenId]) -> Self {
        let mut ctx = context.to_vec();
        for &next in tokens.iter().chain(std::iter::once(&self.eos)) {
            self.rules.push(MockRule { suffix: ctx.clone(), logits: [(next, 10.0)].into_iter().collect() });
            ctx.push(next);
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let model: Self = serde_json::from_str(text).map_err(|e| ModelError::Setup(format!("mock model: {e}")))?;
        if model.eos as usize >= model.vocab_size {
            return Err(ModelError::Setup("mock eos outside vocabulary".into()));
        }
        if !model.floor.is_finite() || model.rules.iter().flat_map(|r| r.logits.values()).any(|v| !v.is_finite()) {
            return Err(ModelError::Setup("mock logits must be finite".into()));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mock model serialises")
    }

    fn matching_rule(&self, context: &[TokenId]) -> Option<&MockRule> {
        self.rules
            .iter()
            .filter(|r| context.ends_with(&r.suffix))
            .max_by_key(|r| r.suffix.len())
    }
}

fn hashed_logit(salt: u64, window: &[TokenId], token: TokenId) -> f64 {
    let mut h = mix64(salt);
    for &t in window {
        h = mix64(h ^ u64::from(t));
    }
    h = mix64(h ^ (u64::from(token) << 32) ^ 0xA5A5);
    unit_interval(h) * 8.0 - 4.0
}

impl LogitProvider for MockModel {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError> {
        let ctx = req.context.ids();
        match self.matching_rule(ctx) {
            Some(rule) => score_tokens(req, self.vocab_size, self.context_limit, |t| {
                rule.logits.get(&t).copied().unwrap_or(self.floor)
            }),
            None => match &self.fallback {
                MockFallback::Floor => score_tokens(req, self.vocab_size, self.context_limit, |_| self.floor),
                MockFallback::Hashed { salt, window, eos_bias } => {
                    let w = &ctx[ctx.len().saturating_sub(*window)..];
                    score_tokens(req, self.vocab_size, self.context_limit, |t| {
                        let v = hashed_logit(*salt, w, t);
                        if t == self.eos {
                            v + eos_bias
                        } else {
                            v
                        }
                    })
                }
            },
        }
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn context_limit(&self) -> usize {
        self.context_limit
    }

    fn describe(&self) -> String {
        format!("mock(vocab={}, rules={})", self.vocab_size, self.rules.len())
    }
}
