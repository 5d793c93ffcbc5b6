use std::collections::HashMap;

use super::words;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

/// Search nodes explored before settling for the best alignment found.
const NODE_BUDGET: usize = 200_000;

/// A unigram alignment: `(pred position, ref position)` pairs sorted by
/// prediction position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub chunks: usize,
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count()
}

struct Search<'a> {
    pred: &'a [String],
    positions: HashMap<&'a str, Vec<usize>>,
    needed: HashMap<&'a str, usize>,
    /// Unmatched prediction tokens still allowed, per word.
    skips: HashMap<&'a str, usize>,
    used: Vec<bool>,
    current: Vec<(usize, usize)>,
    best: Alignment,
    nodes: usize,
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best.chunks || self.nodes > NODE_BUDGET {
            return;
        }
        if i == self.pred.len() {
            self.best = Alignment { pairs: self.current.clone(), chunks };
            return;
        }
        let w = self.pred[i].as_str();
        if self.needed.get(w).copied().unwrap_or(0) > 0 {
            let prev = self.current.last().copied();
            let mut refs = self.positions[w].clone();
            if let Some((pi, pj)) = prev {
                if pi + 1 == i {
                    if let Some(k) = refs.iter().position(|&j| j == pj + 1) {
                        let j = refs.remove(k);
                        refs.insert(0, j);
                    }
                }
            }
            for j in refs {
                if self.used[j] {
                    continue;
                }
                let extends = matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j);
                self.used[j] = true;
                self.current.push((i, j));
                *self.needed.get_mut(w).unwrap() -= 1;
                self.dfs(i + 1, chunks + usize::from(!extends));
                *self.needed.get_mut(w).unwrap() += 1;
                self.current.pop();
                self.used[j] = false;
            }
        }
        if self.skips.get(w).copied().unwrap_or(0) > 0 {
            *self.skips.get_mut(w).unwrap() -= 1;
            self.dfs(i + 1, chunks);
            *self.skips.get_mut(w).unwrap() += 1;
        }
    }
}

fn greedy(pred: &[String], positions: &HashMap<&str, Vec<usize>>, needed: &HashMap<&str, usize>, ref_len: usize) -> Vec<(usize, usize)> {
    let mut used = vec![false; ref_len];
    let mut left = needed.clone();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for (i, w) in pred.iter().enumerate() {
        let w = w.as_str();
        if left.get(w).copied().unwrap_or(0) == 0 {
            continue;
        }
        let refs = &positions[w];
        let next = pairs.last().filter(|(pi, _)| pi + 1 == i).map(|(_, pj)| pj + 1);
        let j = next
            .filter(|j| refs.contains(j) && !used[*j])
            .or_else(|| refs.iter().copied().find(|&j| !used[j]))
            .expect("needed count bounds available positions");
        used[j] = true;
        *left.get_mut(w).unwrap() -= 1;
        pairs.push((i, j));
    }
    pairs
}

/// Maximum-cardinality exact-match alignment with the fewest chunks.
pub fn meteor_alignment(pred: &[String], reference: &[String]) -> Alignment {
    let mut positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        positions.entry(w.as_str()).or_default().push(j);
    }
    let mut pred_counts: HashMap<&str, usize> = HashMap::new();
    for w in pred {
        *pred_counts.entry(w.as_str()).or_default() += 1;
    }
    let mut needed = HashMap::new();
    let mut skips = HashMap::new();
    for (&w, &c) in &pred_counts {
        let avail = positions.get(w).map_or(0, Vec::len);
        needed.insert(w, c.min(avail));
        skips.insert(w, c - c.min(avail));
    }
    let incumbent = greedy(pred, &positions, &needed, reference.len());
    let best = Alignment { chunks: count_chunks(&incumbent), pairs: incumbent };
    if best.chunks <= 1 {
        return best;
    }
    let mut search = Search {
        pred,
        positions,
        needed,
        skips,
        used: vec![false; reference.len()],
        current: Vec::new(),
        best,
        nodes: 0,
    };
    search.dfs(0, 0);
    search.best
}

/// Exact-match METEOR of `pred` against `gold`.
pub fn meteor(pred: &str, gold: &str) -> f64 {
    let p = words(pred);
    let g = words(gold);
    let alignment = meteor_alignment(&p, &g);
    let m = alignment.pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let precision = m / p.len() as f64;
    let recall = m / g.len() as f64;
    let fmean = precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall);
    let penalty = METEOR_GAMMA * (alignment.chunks as f64 / m).powf(METEOR_BETA);
    fmean * (1.0 - penalty)
}
