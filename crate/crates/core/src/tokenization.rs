//! Subword tokenizers over an explicit vocabulary file.
//!
//! Two tokenizers share one [`Vocabulary`]:
//!
//! * [`WordTokenizer`] splits text into whitespace-led chunks and covers each
//!   chunk by greedy longest match over the vocabulary surfaces. When the
//!   vocabulary contains all 256 single-byte surfaces every input is
//!   coverable.
//! * [`BpeTokenizer`] starts each chunk from single bytes and applies an
//!   explicit ranked merges list.
//!
//! Chunking: a single space attaches to the non-whitespace run that follows
//! it (`" word"`); every other whitespace character is a chunk of its own.
//!
//! # File formats
//!
//! Vocabulary: one entry per line, `<id>\t<escaped surface>`. Ids must be
//! dense from 0. The entry whose surface is [`EOS_SURFACE`] is the
//! end-of-sequence token; it is never produced by `tokenize`.
//!
//! Merges: one pair per line, `<escaped left>\t<escaped right>`, highest
//! priority first. Blank lines and lines starting with `#` are ignored.
//!
//! Escapes: `\t` (tab), `\n` (newline), `\\` (backslash) and `\xHH` for any
//! other byte, which is how non-UTF-8 single-byte surfaces are written.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256_hex;

pub type TokenId = u32;

/// Surface text of the end-of-sequence entry in vocabulary files.
pub const EOS_SURFACE: &str = "<|endoftext|>";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("input byte {byte:#04x} at offset {offset} is not coverable by the vocabulary")]
    UncoverableInput { offset: usize, byte: u8 },
    #[error("token id {0} is not in the vocabulary")]
    InvalidToken(TokenId),
    #[error("vocabulary line {line}: {reason}")]
    MalformedVocabulary { line: usize, reason: String },
    #[error("merges line {line}: {reason}")]
    MalformedMerges { line: usize, reason: String },
    #[error("i/o error reading {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown tokenizer spec `{0}`")]
    UnknownSpec(String),
}

/// A sequence of token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: TokenId) {
        self.0.push(id);
    }

    pub fn extend_from(&mut self, other: &TokenSequence) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Self(ids)
    }
}

impl std::ops::Deref for TokenSequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

/// Token id ↔ byte-surface table.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    surfaces: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, TokenId>,
    eos_id: TokenId,
    max_surface_len: usize,
}

impl Vocabulary {
    /// Build from surfaces listed in id order.
    pub fn new(surfaces: Vec<Vec<u8>>, eos_id: TokenId) -> Result<Self, TokenizerError> {
        if eos_id as usize >= surfaces.len() {
            return Err(TokenizerError::MalformedVocabulary {
                line: 0,
                reason: format!("eos id {eos_id} outside vocabulary of {}", surfaces.len()),
            });
        }
        let mut index = HashMap::with_capacity(surfaces.len());
        for (id, s) in surfaces.iter().enumerate() {
            if s.is_empty() {
                return Err(TokenizerError::MalformedVocabulary {
                    line: id + 1,
                    reason: "empty surface".into(),
                });
            }
            if index.insert(s.clone(), id as TokenId).is_some() {
                return Err(TokenizerError::MalformedVocabulary {
                    line: id + 1,
                    reason: format!("duplicate surface {:?}", String::from_utf8_lossy(s)),
                });
            }
        }
        let max_surface_len = surfaces
            .iter()
            .enumerate()
            .filter(|(id, _)| *id as TokenId != eos_id)
            .map(|(_, s)| s.len())
            .max()
            .unwrap_or(0);
        Ok(Self { surfaces, index, eos_id, max_surface_len })
    }

    /// Convenience constructor for tests and small fixtures: EOS is placed
    /// at id 0 followed by `words` in order.
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self, TokenizerError> {
        let mut surfaces = vec![EOS_SURFACE.as_bytes().to_vec()];
        surfaces.extend(words.iter().map(|w| w.as_ref().as_bytes().to_vec()));
        Self::new(surfaces, 0)
    }

    /// Like [`Vocabulary::from_words`] but with all 256 single bytes after
    /// EOS, so every input is coverable.
    pub fn with_byte_fallback<S: AsRef<str>>(words: &[S]) -> Result<Self, TokenizerError> {
        let mut surfaces = vec![EOS_SURFACE.as_bytes().to_vec()];
        surfaces.extend((0u8..=255).map(|b| vec![b]));
        for w in words {
            let w = w.as_ref().as_bytes();
            if w.len() > 1 {
                surfaces.push(w.to_vec());
            }
        }
        surfaces.dedup();
        Self::new(surfaces, 0)
    }

    /// Parse the line-oriented vocabulary format.
    pub fn parse(text: &str) -> Result<Self, TokenizerError> {
        let mut surfaces = Vec::new();
        let mut eos = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.is_empty() {
                continue;
            }
            let (id, raw) = line.split_once('\t').ok_or_else(|| TokenizerError::MalformedVocabulary {
                line: line_no,
                reason: "missing tab separator".into(),
            })?;
            let id: usize = id.parse().map_err(|_| TokenizerError::MalformedVocabulary {
                line: line_no,
                reason: format!("bad id `{id}`"),
            })?;
            if id != surfaces.len() {
                return Err(TokenizerError::MalformedVocabulary {
                    line: line_no,
                    reason: format!("ids must be dense; expected {}, found {id}", surfaces.len()),
                });
            }
            let surface = unescape(raw).map_err(|reason| TokenizerError::MalformedVocabulary { line: line_no, reason })?;
            if surface == EOS_SURFACE.as_bytes() {
                eos = Some(id as TokenId);
            }
            surfaces.push(surface);
        }
        let eos = eos.ok_or_else(|| TokenizerError::MalformedVocabulary {
            line: 0,
            reason: format!("no `{EOS_SURFACE}` entry"),
        })?;
        Self::new(surfaces, eos)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Self::parse(&read_to_string(path.as_ref())?)
    }

    /// Serialise to the vocabulary file format.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, s) in self.surfaces.iter().enumerate() {
            let _ = writeln!(out, "{id}\t{}", escape(s));
        }
        out
    }

    pub fn size(&self) -> usize {
        self.surfaces.len()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn surface(&self, id: TokenId) -> Option<&[u8]> {
        self.surfaces.get(id as usize).map(Vec::as_slice)
    }

    pub fn id_of(&self, surface: &[u8]) -> Option<TokenId> {
        self.index.get(surface).copied().filter(|&id| id != self.eos_id)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        (id as usize) < self.surfaces.len()
    }

    pub fn has_byte_fallback(&self) -> bool {
        (0u8..=255).all(|b| self.index.contains_key(&[b][..]))
    }

    /// Content hash of the serialised vocabulary.
    pub fn fingerprint(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }

    fn max_surface_len(&self) -> usize {
        self.max_surface_len
    }
}

/// Text ↔ token id conversion.
pub trait Tokenizer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn tokenize(&self, text: &str) -> Result<TokenSequence, TokenizerError>;

    /// Raw concatenation of surfaces. EOS contributes nothing.
    fn detokenize_bytes(&self, seq: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let vocab = self.vocab();
        let mut out = Vec::new();
        for &id in seq {
            if id == vocab.eos_id() {
                continue;
            }
            let s = vocab.surface(id).ok_or(TokenizerError::InvalidToken(id))?;
            out.extend_from_slice(s);
        }
        Ok(out)
    }

    /// Concatenation of surfaces as text. Byte sequences that split a UTF-8
    /// character are replaced lossily.
    fn detokenize(&self, seq: &[TokenId]) -> Result<String, TokenizerError> {
        let bytes = self.detokenize_bytes(seq)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }

    /// Stable identity of this tokenizer (kind plus content hash).
    fn identity(&self) -> String;
}

/// Split into chunks: a single space joins the following non-whitespace run;
/// any other whitespace character is its own chunk.
pub(crate) fn chunks(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let is_ws = |b: u8| b.is_ascii_whitespace();
    while i < bytes.len() {
        let start = i;
        if bytes[i] == b' ' && i + 1 < bytes.len() && !is_ws(bytes[i + 1]) {
            i += 1;
            while i < bytes.len() && !is_ws(bytes[i]) {
                i += 1;
            }
        } else if is_ws(bytes[i]) {
            i += 1;
        } else {
            while i < bytes.len() && !is_ws(bytes[i]) {
                i += 1;
            }
        }
        out.push(&text[start..i]);
    }
    out
}

/// Greedy longest-match tokenizer.
#[derive(Debug, Clone)]
pub struct WordTokenizer {
    vocab: Vocabulary,
}

impl WordTokenizer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        Ok(Self::new(Vocabulary::load(path)?))
    }

    fn cover_chunk(&self, chunk: &[u8], base: usize, out: &mut Vec<TokenId>) -> Result<(), TokenizerError> {
        if let Some(id) = self.vocab.id_of(chunk) {
            out.push(id);
            return Ok(());
        }
        let mut pos = 0;
        while pos < chunk.len() {
            let longest = self.vocab.max_surface_len().min(chunk.len() - pos);
            let found = (1..=longest)
                .rev()
                .find_map(|len| self.vocab.id_of(&chunk[pos..pos + len]).map(|id| (id, len)));
            match found {
                Some((id, len)) => {
                    out.push(id);
                    pos += len;
                }
                None => {
                    return Err(TokenizerError::UncoverableInput { offset: base + pos, byte: chunk[pos] });
                }
            }
        }
        Ok(())
    }
}

impl Tokenizer for WordTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, TokenizerError> {
        let mut ids = Vec::with_capacity(text.len() / 4);
        let mut offset = 0;
        for chunk in chunks(text) {
            self.cover_chunk(chunk.as_bytes(), offset, &mut ids)?;
            offset += chunk.len();
        }
        Ok(TokenSequence(ids))
    }

    fn identity(&self) -> String {
        format!("word:{}", self.vocab.fingerprint())
    }
}

/// Byte-level BPE with an explicit ranked merges list.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    byte_ids: Vec<TokenId>,
    ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    merges_text: String,
}

impl BpeTokenizer {
    /// `merges` are surface pairs in priority order. Every single byte and
    /// every merge result must be a vocabulary surface.
    pub fn new(vocab: Vocabulary, merges: &[(Vec<u8>, Vec<u8>)]) -> Result<Self, TokenizerError> {
        let mut byte_ids = Vec::with_capacity(256);
        for b in 0u8..=255 {
            let id = vocab.id_of(&[b]).ok_or_else(|| TokenizerError::MalformedVocabulary {
                line: 0,
                reason: format!("byte-level BPE needs single-byte surface {b:#04x}"),
            })?;
            byte_ids.push(id);
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        let mut merges_text = String::new();
        for (rank, (left, right)) in merges.iter().enumerate() {
            let line = rank + 1;
            let lookup = |s: &[u8]| {
                vocab.id_of(s).ok_or_else(|| TokenizerError::MalformedMerges {
                    line,
                    reason: format!("surface {:?} not in vocabulary", String::from_utf8_lossy(s)),
                })
            };
            let l = lookup(left)?;
            let r = lookup(right)?;
            let mut joined = left.clone();
            joined.extend_from_slice(right);
            let merged = lookup(&joined)?;
            ranks.entry((l, r)).or_insert((rank, merged));
            let _ = writeln!(merges_text, "{}\t{}", escape(left), escape(right));
        }
        Ok(Self { vocab, byte_ids, ranks, merges_text })
    }

    pub fn parse_merges(text: &str) -> Result<Vec<(Vec<u8>, Vec<u8>)>, TokenizerError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |reason: String| TokenizerError::MalformedMerges { line: i + 1, reason };
            let (l, r) = line.split_once('\t').ok_or_else(|| malformed("missing tab separator".into()))?;
            merges.push((unescape(l).map_err(malformed)?, unescape(r).map_err(malformed)?));
        }
        Ok(merges)
    }

    pub fn load(vocab_path: impl AsRef<Path>, merges_path: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let vocab = Vocabulary::load(vocab_path)?;
        let merges = Self::parse_merges(&read_to_string(merges_path.as_ref())?)?;
        Self::new(vocab, &merges)
    }

    fn encode_chunk(&self, chunk: &[u8], out: &mut Vec<TokenId>) {
        let mut parts: Vec<TokenId> = chunk.iter().map(|&b| self.byte_ids[b as usize]).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0], w[1])).map(|&(rank, merged)| (rank, i, merged)))
                .min();
            let Some((_, i, merged)) = best else { break };
            parts[i] = merged;
            parts.remove(i + 1);
        }
        out.extend(parts);
    }
}

impl Tokenizer for BpeTokenizer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, TokenizerError> {
        let mut ids = Vec::with_capacity(text.len() / 3);
        for chunk in chunks(text) {
            self.encode_chunk(chunk.as_bytes(), &mut ids);
        }
        Ok(TokenSequence(ids))
    }

    fn identity(&self) -> String {
        let mut h = self.vocab.to_file_string();
        h.push_str("\0merges\0");
        h.push_str(&self.merges_text);
        format!("bpe:{}", sha256_hex(h.as_bytes()))
    }
}

/// Load a tokenizer from a spec string: `word:<vocab>` or
/// `bpe:<vocab>:<merges>`. Relative paths resolve against `base`.
pub fn load_tokenizer(spec: &str, base: &Path) -> Result<Box<dyn Tokenizer>, TokenizerError> {
    let resolve = |p: &str| base.join(p);
    if let Some(path) = spec.strip_prefix("word:") {
        return Ok(Box::new(WordTokenizer::load(resolve(path))?));
    }
    if let Some(rest) = spec.strip_prefix("bpe:") {
        if let Some((v, m)) = rest.split_once(':') {
            return Ok(Box::new(BpeTokenizer::load(resolve(v), resolve(m))?));
        }
    }
    Err(TokenizerError::UnknownSpec(spec.to_string()))
}

fn read_to_string(path: &Path) -> Result<String, TokenizerError> {
    std::fs::read_to_string(path).map_err(|e| TokenizerError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn escape(surface: &[u8]) -> String {
    let mut out = String::with_capacity(surface.len());
    match std::str::from_utf8(surface) {
        Ok(s) => {
            for c in s.chars() {
                match c {
                    '\t' => out.push_str("\\t"),
                    '\n' => out.push_str("\\n"),
                    '\\' => out.push_str("\\\\"),
                    c if c.is_control() && (c as u32) < 0x80 => {
                        let _ = write!(out, "\\x{:02x}", c as u32);
                    }
                    c => out.push(c),
                }
            }
        }
        Err(_) => {
            for &b in surface {
                match b {
                    b'\t' => out.push_str("\\t"),
                    b'\n' => out.push_str("\\n"),
                    b'\\' => out.push_str("\\\\"),
                    0x20..=0x7e => out.push(b as char),
                    _ => {
                        let _ = write!(out, "\\x{b:02x}");
                    }
                }
            }
        }
    }
    out
}

pub fn unescape(raw: &str) -> Result<Vec<u8>, String> {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'\\' {
            out.push(bytes[i]);
            i += 1;
            continue;
        }
        match bytes.get(i + 1) {
            Some(b't') => out.push(b'\t'),
            Some(b'n') => out.push(b'\n'),
            Some(b'\\') => out.push(b'\\'),
            Some(b'x') => {
                let hex = raw.get(i + 2..i + 4).ok_or("truncated \\x escape")?;
                let b = u8::from_str_radix(hex, 16).map_err(|_| format!("bad \\x escape `{hex}`"))?;
                out.push(b);
                i += 4;
                continue;
            }
            Some(&c) => return Err(format!("unknown escape `\\{}`", c as char)),
            None => return Err("trailing backslash".into()),
        }
        i += 2;
    }
    Ok(out)
}
