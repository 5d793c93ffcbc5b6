use std::collections::HashMap;

use super::words;

const SMOOTHING_EPSILON: f64 = 1e-9;
const MAX_ORDER: usize = 4;

/// Clipped n-gram matches and totals for orders 1 to 4, plus lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NgramStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub pred_len: usize,
    pub ref_len: usize,
}

impl NgramStats {
    fn add(&mut self, other: &NgramStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.pred_len += other.pred_len;
        self.ref_len += other.ref_len;
    }

    /// Geometric mean of smoothed precisions times the brevity penalty.
    pub fn score(&self) -> f64 {
        if self.pred_len == 0 {
            return 0.0;
        }
        let log_sum: f64 = (0..MAX_ORDER)
            .map(|n| {
                let num = if self.matches[n] > 0 { self.matches[n] as f64 } else { SMOOTHING_EPSILON };
                (num / self.totals[n].max(1) as f64).ln()
            })
            .sum();
        let bp = if self.pred_len < self.ref_len {
            (1.0 - self.ref_len as f64 / self.pred_len as f64).exp()
        } else {
            1.0
        };
        bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

fn counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], usize> {
    let mut map = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *map.entry(gram).or_insert(0) += 1;
        }
    }
    map
}

pub fn ngram_stats(pred: &str, gold: &str) -> NgramStats {
    let p = words(pred);
    let g = words(gold);
    let mut stats = NgramStats { pred_len: p.len(), ref_len: g.len(), ..Default::default() };
    for n in 1..=MAX_ORDER {
        let pc = counts(&p, n);
        let gc = counts(&g, n);
        stats.matches[n - 1] = pc.iter().map(|(gram, c)| (*c).min(gc.get(gram).copied().unwrap_or(0))).sum();
        stats.totals[n - 1] = p.len().saturating_sub(n - 1);
    }
    stats
}

/// Sentence-level BLEU-4 with uniform weights.
pub fn bleu4(pred: &str, gold: &str) -> f64 {
    ngram_stats(pred, gold).score()
}

/// Corpus-level BLEU-4: statistics summed over pairs before scoring.
pub fn corpus_bleu4(pairs: &[(&str, &str)]) -> f64 {
    let mut total = NgramStats::default();
    for (p, g) in pairs {
        total.add(&ngram_stats(p, g));
    }
    total.score()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_one() {
        assert!((bleu4("the cat sat on the mat", "the cat sat on the mat") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_is_tiny() {
        assert!(bleu4("a b c d", "e f g h") <= 1e-2);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        assert_eq!(bleu4("", "a b"), 0.0);
    }

    #[test]
    fn one_word_substitution() {
        // clipped matches 5/6, 3/5, 2/4, 1/3 with equal lengths
        let expected = (5.0f64 / 6.0 * 3.0 / 5.0 * 2.0 / 4.0 * 1.0 / 3.0).powf(0.25);
        let got = bleu4("the cat sat on the mat", "the cat sat on a mat");
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn brevity_penalty_applies() {
        let s = ngram_stats("a b c d", "a b c d e f g h");
        assert!((s.score() - (1.0f64 - 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn not_symmetric() {
        assert_ne!(bleu4("a b c d e", "a b c d"), bleu4("a b c d", "a b c d e"));
    }

    #[test]
    fn corpus_of_one_is_sentence() {
        assert_eq!(corpus_bleu4(&[("a b c d x", "a b c d e")]), bleu4("a b c d x", "a b c d e"));
    }
}
