use std::collections::{BTreeMap, BTreeSet};

use super::DecodeError;
use crate::corpus::Dimension;
use crate::tokenization::{TokenId, TokenSequence, Tokenizer};

#[derive(Debug, Clone, Default, PartialEq)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<Dimension>,
}

/// Trie over the tokenizations of the label set. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrie {
    nodes: Vec<Node>,
    depth: usize,
}

/// Tokenize every dimension name, optionally with a leading space.
pub fn label_tokens(tokenizer: &dyn Tokenizer, leading_space: bool) -> Result<Vec<(Dimension, TokenSequence)>, DecodeError> {
    Dimension::ALL
        .iter()
        .map(|&d| {
            let text = if leading_space { format!(" {}", d.name()) } else { d.name().to_string() };
            Ok((d, tokenizer.tokenize(&text)?))
        })
        .collect()
}

impl LabelTrie {
    pub fn from_labels(labels: &[(Dimension, TokenSequence)]) -> Result<LabelTrie, DecodeError> {
        if labels.is_empty() {
            return Err(DecodeError::EmptyLabelSet);
        }
        let mut trie = LabelTrie { nodes: vec![Node::default()], depth: 0 };
        for (dim, tokens) in labels {
            if tokens.is_empty() {
                return Err(DecodeError::InvalidLabel(format!("`{dim}` tokenizes to nothing")));
            }
            let mut node = 0;
            for &t in tokens.iter() {
                node = match trie.nodes[node].children.get(&t) {
                    Some(&child) => child,
                    None => {
                        trie.nodes.push(Node::default());
                        let child = trie.nodes.len() - 1;
                        trie.nodes[node].children.insert(t, child);
                        child
                    }
                };
            }
            if let Some(other) = trie.nodes[node].terminal {
                return Err(DecodeError::InvalidLabel(format!("`{dim}` and `{other}` tokenize identically")));
            }
            trie.nodes[node].terminal = Some(*dim);
            trie.depth = trie.depth.max(tokens.len());
        }
        Ok(trie)
    }

    pub fn build(tokenizer: &dyn Tokenizer, leading_space: bool) -> Result<LabelTrie, DecodeError> {
        Self::from_labels(&label_tokens(tokenizer, leading_space)?)
    }

    pub fn root(&self) -> usize {
        0
    }

    /// Longest label in tokens.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn children(&self, node: usize) -> impl Iterator<Item = TokenId> + '_ {
        self.nodes[node].children.keys().copied()
    }

    pub fn child(&self, node: usize, token: TokenId) -> Option<usize> {
        self.nodes[node].children.get(&token).copied()
    }

    pub fn terminal(&self, node: usize) -> Option<Dimension> {
        self.nodes[node].terminal
    }

    /// First tokens of all labels.
    pub fn first_tokens(&self) -> BTreeSet<TokenId> {
        self.children(0).collect()
    }

    /// Follow `path` from the root.
    pub fn walk(&self, path: &[TokenId]) -> Option<usize> {
        path.iter().try_fold(0, |node, &t| self.child(node, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(ids: &[TokenId]) -> TokenSequence {
        ids.to_vec().into()
    }

    #[test]
    fn shares_prefixes_and_marks_terminals() {
        let trie = LabelTrie::from_labels(&[
            (Dimension::PoliticalAffiliation, seq(&[5, 6])),
            (Dimension::Profession, seq(&[5, 7])),
            (Dimension::Age, seq(&[9])),
        ])
        .unwrap();
        assert_eq!(trie.first_tokens(), BTreeSet::from([5, 9]));
        assert_eq!(trie.node_count(), 5);
        assert_eq!(trie.depth(), 2);
        assert_eq!(trie.terminal(trie.walk(&[5, 6]).unwrap()), Some(Dimension::PoliticalAffiliation));
        assert_eq!(trie.terminal(trie.walk(&[5]).unwrap()), None);
        assert_eq!(trie.terminal(trie.walk(&[9]).unwrap()), Some(Dimension::Age));
        assert!(trie.walk(&[6]).is_none());
    }

    #[test]
    fn prefix_labels_are_terminal_internal_nodes() {
        let trie = LabelTrie::from_labels(&[(Dimension::Race, seq(&[1])), (Dimension::Religion, seq(&[1, 2]))]).unwrap();
        let n = trie.walk(&[1]).unwrap();
        assert_eq!(trie.terminal(n), Some(Dimension::Race));
        assert_eq!(trie.children(n).collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn rejects_empty_and_colliding_labels() {
        assert!(matches!(LabelTrie::from_labels(&[]), Err(DecodeError::EmptyLabelSet)));
        assert!(LabelTrie::from_labels(&[(Dimension::Race, seq(&[1])), (Dimension::Age, seq(&[1]))]).is_err());
    }
}
