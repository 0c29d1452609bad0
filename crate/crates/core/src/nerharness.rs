//! Downstream NER comparison: silver-label letters with the backend, train
//! on original or synthetic text, score both on the same held-out letters.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::modelgate::{LabeledSpan, Layer, ModelGate, NerExample};
use crate::{Error, Result};

/// Entity types kept from the backend's NER layer.
pub const SILVER_LABELS: &[&str] = &["CHEMICAL", "DISEASE"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SilverDocument {
    pub note_id: String,
    pub text: String,
    pub spans: Vec<LabeledSpan>,
}

impl SilverDocument {
    fn example(&self) -> NerExample {
        NerExample {
            text: self.text.clone(),
            spans: self.spans.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NerScores {
    #[serde(rename = "p")]
    pub precision: f64,
    #[serde(rename = "r")]
    pub recall: f64,
    pub f1: f64,
}

impl NerScores {
    fn from_pr(precision: f64, recall: f64) -> Self {
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
}

/// Keep the longest of overlapping spans; on equal length the earlier one.
pub fn resolve_overlaps(mut spans: Vec<LabeledSpan>) -> Vec<LabeledSpan> {
    spans.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.label.cmp(&b.label))
    });
    let mut kept: Vec<LabeledSpan> = Vec::new();
    for s in spans {
        if kept.iter().all(|k| s.end <= k.start || k.end <= s.start) {
            kept.push(s);
        }
    }
    kept.sort();
    kept
}

/// Silver-annotate each letter with the backend's NER layer.
pub fn build_silver_dataset(letters: &[(String, String)], gate: &ModelGate) -> Result<Vec<SilverDocument>> {
    if !gate.has_layer(Layer::Ner)? {
        return Err(Error::Capability("the ner annotation layer".into()));
    }
    letters
        .par_iter()
        .map(|(note_id, text)| {
            let result = gate.annotate(text, &[Layer::Ner])?;
            let spans = result
                .layer(Layer::Ner)
                .filter(|s| SILVER_LABELS.contains(&s.label.as_str()))
                .map(|s| LabeledSpan::new(s.start, s.end, s.label.clone()))
                .collect();
            Ok(SilverDocument {
                note_id: note_id.clone(),
                text: text.clone(),
                spans: resolve_overlaps(spans),
            })
        })
        .collect()
}

/// Note ids of the train and test parts. Ids are sorted, shuffled with
/// `seed`, and the first `floor(n * (1 - test_fraction))` go to training.
pub fn split_ids(ids: &[String], test_fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut sorted: Vec<String> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::InvalidArgument("duplicate note ids in NER dataset".into()));
    }
    let n = sorted.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 documents to split, got {n}")));
    }
    let train_len = (n as f64 * (1.0 - test_fraction) + 1e-9).floor() as usize;
    if train_len == 0 || train_len == n {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} leaves an empty split for {n} documents"
        )));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = sorted.split_off(train_len);
    Ok((sorted, test))
}

pub fn split_dataset(
    docs: &[SilverDocument],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<SilverDocument>, Vec<SilverDocument>)> {
    let ids: Vec<String> = docs.iter().map(|d| d.note_id.clone()).collect();
    let (train_ids, test_ids) = split_ids(&ids, test_fraction, seed)?;
    Ok((select(docs, &train_ids)?, select(docs, &test_ids)?))
}

fn select(docs: &[SilverDocument], ids: &[String]) -> Result<Vec<SilverDocument>> {
    let by_id: HashMap<&str, &SilverDocument> = docs.iter().map(|d| (d.note_id.as_str(), d)).collect();
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|d| (*d).clone())
                .ok_or_else(|| Error::Validation(format!("no NER document for note_id `{id}`")))
        })
        .collect()
}

/// Exact (start, end, label) matching over span sets.
pub fn span_prf(gold: &[LabeledSpan], predicted: &[LabeledSpan]) -> NerScores {
    let gold: BTreeSet<&LabeledSpan> = gold.iter().collect();
    let predicted: BTreeSet<&LabeledSpan> = predicted.iter().collect();
    if gold.is_empty() && predicted.is_empty() {
        return NerScores::from_pr(1.0, 1.0);
    }
    let hits = gold.intersection(&predicted).count() as f64;
    let ratio = |n: usize| if n == 0 { 0.0 } else { hits / n as f64 };
    NerScores::from_pr(ratio(predicted.len()), ratio(gold.len()))
}

/// Micro-averaged scores over documents: spans are keyed by document so a
/// span only matches within its own letter.
pub fn corpus_prf(gold: &[Vec<LabeledSpan>], predicted: &[Vec<LabeledSpan>]) -> NerScores {
    let tag = |sets: &[Vec<LabeledSpan>]| -> Vec<LabeledSpan> {
        sets.iter()
            .enumerate()
            .flat_map(|(doc, spans)| {
                spans
                    .iter()
                    .map(move |s| LabeledSpan::new(s.start, s.end, format!("{doc}\u{1f}{}", s.label)))
            })
            .collect()
    };
    span_prf(&tag(gold), &tag(predicted))
}

/// Train on `train`, predict the `test` texts, score against their silver
/// spans.
pub fn run_downstream(
    train: &[SilverDocument],
    test: &[SilverDocument],
    gate: &ModelGate,
    seed: u64,
    epochs: u32,
) -> Result<NerScores> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("NER test set is empty".into()));
    }
    let examples: Vec<NerExample> = train.iter().map(SilverDocument::example).collect();
    let handle = gate.ner_train(&examples, seed, epochs)?;
    let texts: Vec<String> = test.iter().map(|d| d.text.clone()).collect();
    let predicted = gate.ner_predict(&handle, &texts)?;
    let gold: Vec<Vec<LabeledSpan>> = test.iter().map(|d| d.spans.clone()).collect();
    Ok(corpus_prf(&gold, &predicted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NerConfig {
    pub test_fraction: f64,
    pub split_seed: u64,
    pub epochs: u32,
}

impl Default for NerConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            split_seed: 13,
            epochs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub original: NerScores,
    pub synthetic: NerScores,
    pub delta_f1: f64,
    pub split_seed: u64,
    pub epochs: u32,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Train once on original and once on synthetic letters with the same
/// split, and score both on the held-out original letters.
pub fn compare_downstream(
    original: &[SilverDocument],
    synthetic: &[SilverDocument],
    gate: &ModelGate,
    config: &NerConfig,
) -> Result<NerReport> {
    let (train, test) = split_dataset(original, config.test_fraction, config.split_seed)?;
    let train_ids: Vec<String> = train.iter().map(|d| d.note_id.clone()).collect();
    let test_ids: Vec<String> = test.iter().map(|d| d.note_id.clone()).collect();
    let synthetic_train = select(synthetic, &train_ids)?;

    let original_scores = run_downstream(&train, &test, gate, config.split_seed, config.epochs)?;
    let synthetic_scores = run_downstream(&synthetic_train, &test, gate, config.split_seed, config.epochs)?;
    Ok(NerReport {
        original: original_scores,
        synthetic: synthetic_scores,
        delta_f1: synthetic_scores.f1 - original_scores.f1,
        split_seed: config.split_seed,
        epochs: config.epochs,
        train_ids,
        test_ids,
    })
}
