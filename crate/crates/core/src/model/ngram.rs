use std::collections::HashMap;

use super::{score_tokens, LogitProvider, LogitRequest, LogitResponse, ModelError};
use crate::tokenization::{TokenId, Tokenizer};

/// Order-2 (bigram) language model with additive smoothing.
///
/// With history token `a` the logit of `w` is
/// `ln((c(a, w) + α) / (c(a, ·) + α·V))`; with an empty context the unigram
/// estimate `ln((c(w) + α) / (N + α·V))` is used. Every training sequence is
/// terminated by EOS, so `c(last, EOS)` is counted.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab_size: usize,
    alpha: f64,
    unigrams: Vec<u64>,
    total: u64,
    bigrams: HashMap<(TokenId, TokenId), u64>,
    history: HashMap<TokenId, u64>,
}

impl NGramModel {
    pub fn train(sequences: &[Vec<TokenId>], vocab_size: usize, eos: TokenId, alpha: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0) {
            return Err(ModelError::Setup("smoothing alpha must be positive".into()));
        }
        let mut unigrams = vec![0u64; vocab_size];
        let mut total = 0;
        let mut bigrams = HashMap::new();
        let mut history = HashMap::new();
        for seq in sequences {
            let mut prev: Option<TokenId> = None;
            for &t in seq.iter().chain(std::iter::once(&eos)) {
                if t as usize >= vocab_size {
                    return Err(ModelError::Setup(format!("training token {t} outside vocabulary")));
                }
                unigrams[t as usize] += 1;
                total += 1;
                if let Some(p) = prev {
                    *bigrams.entry((p, t)).or_insert(0) += 1;
                    *history.entry(p).or_insert(0) += 1;
                }
                prev = Some(t);
            }
        }
        Ok(Self { vocab_size, alpha, unigrams, total, bigrams, history })
    }

    /// Train on every non-empty line of `corpus`.
    pub fn from_corpus(corpus: &str, tokenizer: &dyn Tokenizer, alpha: f64) -> Result<Self, ModelError> {
        let mut sequences = Vec::new();
        for line in corpus.lines().filter(|l| !l.trim().is_empty()) {
            let seq = tokenizer.tokenize(line).map_err(|e| ModelError::Setup(e.to_string()))?;
            sequences.push(seq.into_inner());
        }
        let vocab = tokenizer.vocab();
        Self::train(&sequences, vocab.size(), vocab.eos_id(), alpha)
    }

    fn logit(&self, context: &[TokenId], token: TokenId) -> f64 {
        let v = self.vocab_size as f64;
        match context.last() {
            None => ((self.unigrams[token as usize] as f64 + self.alpha) / (self.total as f64 + self.alpha * v)).ln(),
            Some(&a) => {
                let pair = self.bigrams.get(&(a, token)).copied().unwrap_or(0) as f64;
                let hist = self.history.get(&a).copied().unwrap_or(0) as f64;
                ((pair + self.alpha) / (hist + self.alpha * v)).ln()
            }
        }
    }
}

impl LogitProvider for NGramModel {
    fn next_logits(&self, req: &LogitRequest) -> Result<LogitResponse, ModelError> {
        let ctx = req.context.ids();
        score_tokens(req, self.vocab_size, usize::MAX, |t| self.logit(ctx, t))
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn describe(&self) -> String {
        format!("ngram(order=2, alpha={}, vocab={})", self.alpha, self.vocab_size)
    }
}
