use std::collections::HashMap;
use std::io::BufRead;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{metric_tokens, window_texts};
use crate::modelgate::ModelGate;
use crate::{Error, Result};

const BUNDLED_SUBJECTIVITY: &str = include_str!("../../data/subjectivity_en.tsv");

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvancedScores {
    pub pseudo_perplexity: Option<f64>,
    pub entropy_bits: f64,
    pub subjectivity: f64,
}

/// Shannon entropy in bits of the word distribution, punctuation excluded.
pub fn entropy_bits(text: &str) -> f64 {
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    for token in metric_tokens(text) {
        if token.chars().any(char::is_alphanumeric) {
            *counts.entry(token).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Word-level subjectivity scores in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct SubjectivityLexicon {
    scores: HashMap<String, f64>,
}

impl SubjectivityLexicon {
    pub fn bundled() -> &'static SubjectivityLexicon {
        static LEXICON: OnceLock<SubjectivityLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| {
            Self::from_reader(BUNDLED_SUBJECTIVITY.as_bytes()).expect("bundled lexicon parses")
        })
    }

    /// Tab-separated `word<TAB>score` lines; `#` starts a comment.
    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut scores = HashMap::new();
        for (n, line) in std::io::BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |detail: String| Error::Parse {
                row: n as u64 + 1,
                detail,
            };
            let (word, score) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>score".into()))?;
            let score: f64 = score
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad score: {e}")))?;
            if !(0.0..=1.0).contains(&score) {
                return Err(parse_err(format!("score {score} outside [0, 1]")));
            }
            scores.insert(word.to_lowercase(), score);
        }
        Ok(Self { scores })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.scores.get(word).copied()
    }

    /// Mean score of the lexicon words present in `text`; 0 when none are.
    pub fn score(&self, text: &str) -> f64 {
        let hits: Vec<f64> = metric_tokens(text).iter().filter_map(|t| self.get(t)).collect();
        if hits.is_empty() {
            0.0
        } else {
            hits.iter().sum::<f64>() / hits.len() as f64
        }
    }
}

/// exp of the mean per-token negative log-likelihood. Long texts are scored
/// in word windows whose means are combined weighted by word count.
pub fn pseudo_perplexity(text: &str, gate: &ModelGate, window: usize) -> Result<f64> {
    let mut weighted = 0.0;
    let mut words = 0usize;
    for (piece, count) in window_texts(text, window) {
        weighted += gate.pseudo_log_likelihood(&piece)? * count as f64;
        words += count;
    }
    if words == 0 {
        return Err(Error::InvalidArgument("cannot score empty text".into()));
    }
    Ok((weighted / words as f64).exp())
}
