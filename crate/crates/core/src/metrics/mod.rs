//! Evaluation metrics and aggregation.
//!
//! Text metrics lowercase both sides and split on whitespace. METEOR uses
//! exact unigram matching only (no stemming or synonyms), so its values are
//! not comparable with the stemming/WordNet variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dimension;

mod bleu;
mod meteor;

pub use bleu::{bleu4, corpus_bleu4, ngram_stats, NgramStats};
pub use meteor::{meteor, meteor_alignment, Alignment, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {preds} predictions vs {golds} gold labels")]
    ShapeError { preds: usize, golds: usize },
    #[error("nothing to score")]
    EmptyInput,
    #[error("cannot aggregate zero cells")]
    EmptyAggregate,
}

/// Lowercased whitespace tokens.
pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn check(preds: usize, golds: usize) -> Result<(), MetricError> {
    if preds != golds {
        return Err(MetricError::ShapeError { preds, golds });
    }
    if preds == 0 {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

pub fn accuracy(preds: &[bool], golds: &[bool]) -> Result<f64, MetricError> {
    check(preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// F1 of the positive class; 0 when precision and recall are both 0.
pub fn f1_binary(preds: &[bool], golds: &[bool]) -> Result<f64, MetricError> {
    check(preds.len(), golds.len())?;
    let tp = preds.iter().zip(golds).filter(|(p, g)| **p && **g).count() as f64;
    let fp = preds.iter().zip(golds).filter(|(p, g)| **p && !**g).count() as f64;
    let fn_ = preds.iter().zip(golds).filter(|(p, g)| !**p && **g).count() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// 1 iff a complete label was produced and equals the gold one.
pub fn exact_match(pred: Option<Dimension>, gold: Dimension) -> f64 {
    if pred == Some(gold) {
        1.0
    } else {
        0.0
    }
}

/// Multiset-overlap F1 over lowercased whitespace tokens.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = words(pred);
    let g = words(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: std::collections::HashMap<&str, isize> = std::collections::HashMap::new();
    for w in &g {
        *counts.entry(w).or_default() += 1;
    }
    let mut overlap = 0usize;
    for w in &p {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

/// Mean and standard deviation over cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n_cells: usize,
}

pub fn aggregate(cells: &[f64], kind: StdKind) -> Result<Aggregate, MetricError> {
    if cells.is_empty() {
        return Err(MetricError::EmptyAggregate);
    }
    let n = cells.len() as f64;
    let mean = cells.iter().sum::<f64>() / n;
    let ss: f64 = cells.iter().map(|c| (c - mean) * (c - mean)).sum();
    let denom = match kind {
        StdKind::Population => n,
        StdKind::Sample if cells.len() > 1 => n - 1.0,
        StdKind::Sample => 1.0,
    };
    Ok(Aggregate { mean, std: (ss / denom).sqrt(), n_cells: cells.len() })
}

pub fn mean(values: &[f64]) -> Result<f64, MetricError> {
    if values.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
