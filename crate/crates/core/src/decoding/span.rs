use std::collections::BTreeSet;

use super::{Constraint, DecodeError};
use crate::tokenization::TokenId;

/// Span automaton over a document's tokens.
///
/// `candidates` holds every position `p` such that the decoded prefix ends
/// at `p`, i.e. `doc[p - L + 1..=p] == decoded`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanState {
    doc: Vec<TokenId>,
    candidates: Vec<usize>,
    decoded: Vec<TokenId>,
    eos: TokenId,
}

impl SpanState {
    pub fn new(doc: &[TokenId], eos: TokenId) -> Result<SpanState, DecodeError> {
        if doc.is_empty() {
            return Err(DecodeError::EmptyDocument);
        }
        Ok(SpanState { doc: doc.to_vec(), candidates: Vec::new(), decoded: Vec::new(), eos })
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn decoded(&self) -> &[TokenId] {
        &self.decoded
    }
}

impl Constraint for SpanState {
    fn allowed(&self) -> Option<BTreeSet<TokenId>> {
        if self.decoded.is_empty() {
            return Some(self.doc.iter().copied().collect());
        }
        let mut set: BTreeSet<TokenId> =
            self.candidates.iter().filter_map(|&p| self.doc.get(p + 1).copied()).collect();
        set.insert(self.eos);
        Some(set)
    }

    fn advance(&mut self, token: TokenId) {
        self.candidates = if self.decoded.is_empty() {
            (0..self.doc.len()).filter(|&p| self.doc[p] == token).collect()
        } else {
            self.candidates
                .iter()
                .map(|&p| p + 1)
                .filter(|&q| q < self.doc.len() && self.doc[q] == token)
                .collect()
        };
        self.decoded.push(token);
        debug_assert!(!self.candidates.is_empty(), "advanced with a token outside the allowed set");
    }
}
