//! In-context example selection.
//!
//! Every eval example gets its own RNG stream derived from
//! `(seed, resample_index, eval id)`, so sampled sets do not depend on
//! evaluation order or thread scheduling.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dimension, Document};
use crate::hashing::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("need {needed} in-context examples but only {available} are available")]
    NotEnoughExamples { needed: usize, available: usize },
    #[error("weak-oracle sampling needs a gold dimension on `{0}`")]
    MissingDimension(String),
    #[error("unknown sampling strategy `{0}`")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Oracle,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "oracle" | "weak-oracle" | "weak_oracle" => Ok(Strategy::Oracle),
            _ => Err(SamplingError::UnknownStrategy(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotConfig {
    pub n: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub resample_index: u32,
}

impl FewShotConfig {
    /// Shot counts evaluated in the reference setting; anything else is
    /// allowed but flagged.
    pub const STANDARD_SHOTS: [usize; 4] = [0, 5, 10, 20];

    pub fn is_standard_setting(&self) -> bool {
        Self::STANDARD_SHOTS.contains(&self.n)
    }
}

fn rng_for(cfg: &FewShotConfig, eval_doc: &Document) -> ChaCha8Rng {
    stream_rng(&[
        b"fewshot",
        cfg.strategy.as_str().as_bytes(),
        &cfg.seed.to_le_bytes(),
        &cfg.resample_index.to_le_bytes(),
        eval_doc.id.as_bytes(),
    ])
}

/// `n` distinct training documents chosen uniformly without replacement.
pub fn sample_random<'a>(
    train: &'a [Document],
    cfg: &FewShotConfig,
    eval_doc: &Document,
) -> Result<Vec<&'a Document>, SamplingError> {
    if cfg.n > train.len() {
        return Err(SamplingError::NotEnoughExamples { needed: cfg.n, available: train.len() });
    }
    if cfg.n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_for(cfg, eval_doc);
    Ok(index::sample(&mut rng, train.len(), cfg.n).into_iter().map(|i| &train[i]).collect())
}

/// Weak-oracle sampling: restrict to the eval document's coarse category
/// and take one random unused example per dimension per pass, dimensions in
/// canonical order, until `n` are collected. Exhausted dimensions are
/// skipped.
pub fn sample_oracle<'a>(
    train: &'a [Document],
    cfg: &FewShotConfig,
    eval_doc: &Document,
) -> Result<Vec<&'a Document>, SamplingError> {
    let dim = eval_doc.dimension.ok_or_else(|| SamplingError::MissingDimension(eval_doc.id.clone()))?;
    if cfg.n == 0 {
        return Ok(Vec::new());
    }
    let mut pools: Vec<(Dimension, Vec<&Document>)> = dim
        .coarse()
        .dimensions()
        .map(|d| (d, train.iter().filter(|doc| doc.dimension == Some(d)).collect()))
        .collect();
    let available: usize = pools.iter().map(|(_, p)| p.len()).sum();
    if available < cfg.n {
        return Err(SamplingError::NotEnoughExamples { needed: cfg.n, available });
    }
    let mut rng = rng_for(cfg, eval_doc);
    let mut out = Vec::with_capacity(cfg.n);
    while out.len() < cfg.n {
        let before = out.len();
        for (_, pool) in pools.iter_mut() {
            if out.len() == cfg.n {
                break;
            }
            if pool.is_empty() {
                continue;
            }
            let i = rng.gen_range(0..pool.len());
            out.push(pool.swap_remove(i));
        }
        if out.len() == before {
            return Err(SamplingError::NotEnoughExamples { needed: cfg.n, available: out.len() });
        }
    }
    Ok(out)
}

pub fn sample<'a>(
    train: &'a [Document],
    cfg: &FewShotConfig,
    eval_doc: &Document,
) -> Result<Vec<&'a Document>, SamplingError> {
    match cfg.strategy {
        Strategy::Random => sample_random(train, cfg, eval_doc),
        Strategy::Oracle => sample_oracle(train, cfg, eval_doc),
    }
}
