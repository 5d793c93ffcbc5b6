//! Next-token logit providers.
//!
//! Providers return raw logits; all normalisation (including renormalising
//! over a restricted token set) happens in [`softmax_normalize`] so that it
//! is implemented once.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenization::{TokenId, TokenSequence, Tokenizer};

mod mock;
mod ngram;
mod remote;
mod server;

pub use mock::{MockFallback, MockModel, MockRule};
pub use ngram::NGramModel;
pub use remote::{RemoteModel, RetryPolicy};
pub use server::{serve, spawn_server, ServeOptions, ServerHandle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("context of {len} tokens exceeds the provider limit of {limit}")]
    ContextOverflow { len: usize, limit: usize },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("cannot normalise an empty distribution")]
    EmptyDistribution,
    #[error("invalid logit request: {0}")]
    InvalidRequest(String),
    #[error("provider returned a malformed response: {0}")]
    MalformedResponse(String),
    #[error("provider setup failed: {0}")]
    Setup(String),
}

impl ModelError {
    pub fn is_backend(&self) -> bool {
        matches!(self, ModelError::BackendUnavailable(_) | ModelError::MalformedResponse(_))
    }
}

/// Conditioning context plus an optional restriction of the returned tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRequest {
    pub context: TokenSequence,
    pub restrict: Option<BTreeSet<TokenId>>,
}

impl LogitRequest {
    pub fn full(context: TokenSequence) -> Self {
        Self { context, restrict: None }
    }

    pub fn restricted(context: TokenSequence, restrict: BTreeSet<TokenId>) -> Self {
        Self { context, restrict: Some(restrict) }
    }

    /// Check ids against the vocabulary size and the restrict set against
    /// emptiness.
    pub fn validate(&self, vocab_size: usize) -> Result<(), ModelError> {
        if let Some(bad) = self.context.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(ModelError::InvalidRequest(format!("context token {bad} outside vocabulary")));
        }
        if let Some(restrict) = &self.restrict {
            if restrict.is_empty() {
                return Err(ModelError::InvalidRequest("empty restrict set".into()));
            }
            if let Some(bad) = restrict.iter().find(|&&id| id as usize >= vocab_size) {
                return Err(ModelError::InvalidRequest(format!("restrict token {bad} outside vocabulary")));
            }
        }
        Ok(())
    }
}

/// Raw logits keyed by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitResponse {
    pub scores: BTreeMap<TokenId, f64>,
}

/// A next-token distribution provider.
///
/// Implementations must be deterministic for equal requests. Restricted
/// responses must equal the unrestricted response filtered to the restrict
/// set.
pub trait LogitProvider: Send + Sync {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError>;

    fn vocab_size(&self) -> usize;

    fn context_limit(&self) -> usize {
        usize::MAX
    }

    /// Whether concurrent `next_logits` calls are allowed. The runner
    /// serialises work for providers that return false.
    fn concurrent(&self) -> bool {
        true
    }

    fn describe(&self) -> String;
}

impl<P: LogitProvider + ?Sized> LogitProvider for Arc<P> {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError> {
        (**self).next_logits(req)
    }
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn context_limit(&self) -> usize {
        (**self).context_limit()
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Shared validation and dispatch for local providers that can score any
/// single token independently.
pub(crate) fn score_tokens(
    req: &LogitRequest,
    vocab_size: usize,
    limit: usize,
    mut logit: impl FnMut(TokenId) -> f64,
) -> Result<LogitResponse, ModelError> {
    req.validate(vocab_size)?;
    if req.context.len() > limit {
        return Err(ModelError::ContextOverflow { len: req.context.len(), limit });
    }
    let scores = match &req.restrict {
        Some(set) => set.iter().map(|&t| (t, logit(t))).collect(),
        None => (0..vocab_size as TokenId).map(|t| (t, logit(t))).collect(),
    };
    Ok(LogitResponse { scores })
}

/// Softmax over a logit map, max-subtracted.
pub fn softmax_normalize(scores: &BTreeMap<TokenId, f64>) -> Result<BTreeMap<TokenId, f64>, ModelError> {
    if scores.is_empty() {
        return Err(ModelError::EmptyDistribution);
    }
    if scores.values().any(|v| !v.is_finite()) {
        return Err(ModelError::MalformedResponse("non-finite logit".into()));
    }
    let max = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<(TokenId, f64)> = scores.iter().map(|(&t, &v)| (t, (v - max).exp())).collect();
    let total: f64 = exps.iter().map(|(_, e)| e).sum();
    Ok(exps.into_iter().map(|(t, e)| (t, e / total)).collect())
}

/// Wraps a provider and counts calls.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicU64,
}

impl<P: LogitProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<P: LogitProvider> LogitProvider for CountingProvider<P> {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.next_logits(req)
    }
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn context_limit(&self) -> usize {
        self.inner.context_limit()
    }
    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Build a provider from a spec string:
///
/// * `mock:<file.json>`: a [`MockModel`] description file;
/// * `hashed:<salt>`: a [`MockModel`] with only the hashed fallback;
/// * `ngram:<corpus.txt>`: a bigram [`NGramModel`] trained on the corpus;
/// * `http://…`: a [`RemoteModel`].
///
/// Relative paths resolve against `base`.
pub fn load_provider(
    spec: &str,
    tokenizer: &dyn Tokenizer,
    base: &Path,
) -> Result<Arc<dyn LogitProvider>, ModelError> {
    let vocab = tokenizer.vocab();
    if let Some(path) = spec.strip_prefix("mock:") {
        let text = std::fs::read_to_string(base.join(path))
            .map_err(|e| ModelError::Setup(format!("reading {path}: {e}")))?;
        let model = MockModel::from_json(&text)?;
        if model.vocab_size() != vocab.size() {
            return Err(ModelError::Setup(format!(
                "mock vocabulary size {} differs from tokenizer size {}",
                model.vocab_size(),
                vocab.size()
            )));
        }
        return Ok(Arc::new(model));
    }
    if let Some(salt) = spec.strip_prefix("hashed:") {
        let salt: u64 = salt.parse().map_err(|_| ModelError::Setup(format!("bad salt `{salt}`")))?;
        return Ok(Arc::new(MockModel::hashed(vocab.size(), vocab.eos_id(), salt)));
    }
    if let Some(path) = spec.strip_prefix("ngram:") {
        let text = std::fs::read_to_string(base.join(path))
            .map_err(|e| ModelError::Setup(format!("reading {path}: {e}")))?;
        return Ok(Arc::new(NGramModel::from_corpus(&text, tokenizer, 1.0)?));
    }
    if spec.starts_with("http://") || spec.starts_with("https://") {
        let remote = RemoteModel::connect(spec, RetryPolicy::default())?;
        if remote.vocabulary().fingerprint() != vocab.fingerprint() {
            return Err(ModelError::Setup(
                "remote vocabulary differs from the run's tokenizer vocabulary".into(),
            ));
        }
        return Ok(Arc::new(remote));
    }
    Err(ModelError::Setup(format!("unknown provider spec `{spec}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(entries: &[(TokenId, f64)]) -> BTreeMap<TokenId, f64> {
        entries.iter().copied().collect()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax_normalize(&map(&[(0, 0.0), (1, 0.0)])).unwrap();
        assert_eq!(p, map(&[(0, 0.5), (1, 0.5)]));
        let p = softmax_normalize(&map(&[(0, 0.0)])).unwrap();
        assert_eq!(p, map(&[(0, 1.0)]));
        let p = softmax_normalize(&map(&[(0, 3f64.ln()), (1, 0.0)])).unwrap();
        assert!((p[&0] - 0.75).abs() < 1e-12);
        assert!((p[&1] - 0.25).abs() < 1e-12);
        assert_eq!(softmax_normalize(&BTreeMap::new()), Err(ModelError::EmptyDistribution));
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let p = softmax_normalize(&map(&[(0, 1000.0), (1, 999.0)])).unwrap();
        assert!(p[&0].is_finite() && p[&0] > p[&1]);
    }

    #[test]
    fn request_validation() {
        let req = LogitRequest::restricted(vec![0].into(), BTreeSet::new());
        assert!(req.validate(4).is_err());
        let req = LogitRequest::full(vec![7].into());
        assert!(req.validate(4).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_monotone(logits in proptest::collection::vec(-50.0f64..50.0, 1..30)) {
            let scores: BTreeMap<TokenId, f64> = logits.iter().enumerate().map(|(i, &v)| (i as TokenId, v)).collect();
            let p = softmax_normalize(&scores).unwrap();
            let total: f64 = p.values().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for (a, b) in scores.iter().zip(scores.iter().skip(1)) {
                if a.1 < b.1 { prop_assert!(p[a.0] <= p[b.0]); }
            }
        }

        #[test]
        fn restriction_commutes_with_softmax(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..20),
            mask in proptest::collection::vec(any::<bool>(), 20),
        ) {
            let full: BTreeMap<TokenId, f64> = logits.iter().enumerate().map(|(i, &v)| (i as TokenId, v)).collect();
            let subset: BTreeSet<TokenId> = full.keys().copied().filter(|&t| mask[t as usize]).collect();
            prop_assume!(!subset.is_empty());
            let p_full = softmax_normalize(&full).unwrap();
            let mass: f64 = subset.iter().map(|t| p_full[t]).sum();
            let filtered: BTreeMap<TokenId, f64> = full.iter().filter(|(t, _)| subset.contains(t)).map(|(&t, &v)| (t, v)).collect();
            let p_sub = softmax_normalize(&filtered).unwrap();
            for t in &subset {
                prop_assert!((p_full[t] / mass - p_sub[t]).abs() < 1e-9);
            }
        }
    }
}
