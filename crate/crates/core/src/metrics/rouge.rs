use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::metric_tokens;

/// Precision, recall and F1. ROUGE reports these as percentages,
/// BERTScore as fractions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    pub fn scaled(self, by: f64) -> Self {
        Self {
            precision: self.precision * by,
            recall: self.recall * by,
            f1: self.f1 * by,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> Prf {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    if ref_total == 0 {
        log::warn!("ROUGE-{n}: reference has no {n}-grams, scoring 0");
        return Prf::default();
    }
    if cand_total == 0 {
        return Prf::default();
    }
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    Prf::from_pr(overlap as f64 / cand_total as f64, overlap as f64 / ref_total as f64)
}

/// Longest common subsequence length, O(n·m) time and O(m) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

fn rouge_l(candidate: &[String], reference: &[String]) -> Prf {
    if reference.is_empty() {
        log::warn!("ROUGE-L: empty reference, scoring 0");
        return Prf::default();
    }
    if candidate.is_empty() {
        return Prf::default();
    }
    let lcs = lcs_len(candidate, reference) as f64;
    Prf::from_pr(lcs / candidate.len() as f64, lcs / reference.len() as f64)
}

/// ROUGE over already-normalised tokens, as fractions in [0, 1].
pub fn rouge_tokens(candidate: &[String], reference: &[String], variant: RougeVariant) -> Prf {
    match variant {
        RougeVariant::One => rouge_n(candidate, reference, 1),
        RougeVariant::Two => rouge_n(candidate, reference, 2),
        RougeVariant::L => rouge_l(candidate, reference),
    }
}

/// ROUGE as percentages in [0, 100].
pub fn rouge(candidate: &str, reference: &str, variant: RougeVariant) -> Prf {
    rouge_tokens(&metric_tokens(candidate), &metric_tokens(reference), variant).scaled(100.0)
}
