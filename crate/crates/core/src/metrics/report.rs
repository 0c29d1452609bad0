use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::advanced::{entropy_bits, pseudo_perplexity, AdvancedScores, SubjectivityLexicon};
use super::bertscore::{embed_tokens, score_embeddings};
use super::meteor::meteor_tokens;
use super::readability::{readability, ReadabilityScores};
use super::rouge::{rouge_tokens, Prf, RougeVariant};
use super::{metric_tokens, window_for};
use crate::modelgate::ModelGate;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub meteor: f64,
    pub bertscore: Option<Prf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub bertscore: bool,
    pub perplexity: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            bertscore: true,
            perplexity: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationInput {
    pub note_id: String,
    pub original: String,
    pub masked: String,
    pub synthetic: String,
    pub invalid_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterEvaluation {
    pub note_id: String,
    pub synthetic: SimilarityScores,
    pub baseline: SimilarityScores,
    pub readability_original: ReadabilityScores,
    pub readability_masked: ReadabilityScores,
    pub readability_synthetic: ReadabilityScores,
    pub advanced_original: AdvancedScores,
    pub advanced_synthetic: AdvancedScores,
    pub invalid_rate: Option<f64>,
}

fn window(gate: &ModelGate) -> Option<usize> {
    match gate.capabilities() {
        Ok(caps) => Some(window_for(caps.max_input_tokens)),
        Err(e) => {
            log::warn!("backend capabilities unavailable: {e}");
            None
        }
    }
}

fn degrade<T>(what: &str, note_id: &str, r: Result<T>) -> Option<T> {
    r.map_err(|e| log::warn!("{note_id}: {what} unavailable: {e}")).ok()
}

/// Similarity of `candidate` to `reference`. ROUGE in percent, METEOR as
/// a fraction; BERTScore is computed by the caller.
pub fn similarity(candidate: &str, reference: &str, bertscore: Option<Prf>) -> SimilarityScores {
    let cand = metric_tokens(candidate);
    let refs = metric_tokens(reference);
    SimilarityScores {
        rouge1: rouge_tokens(&cand, &refs, RougeVariant::One).scaled(100.0),
        rouge2: rouge_tokens(&cand, &refs, RougeVariant::Two).scaled(100.0),
        rouge_l: rouge_tokens(&cand, &refs, RougeVariant::L).scaled(100.0),
        meteor: meteor_tokens(&cand, &refs).score,
        bertscore,
    }
}

fn advanced(note_id: &str, text: &str, gate: Option<&ModelGate>, options: &MetricOptions) -> AdvancedScores {
    let pseudo_perplexity = match gate {
        Some(g) if options.perplexity => window(g).and_then(|w| {
            degrade("perplexity", note_id, pseudo_perplexity(text, g, w))
        }),
        _ => None,
    };
    AdvancedScores {
        pseudo_perplexity,
        entropy_bits: entropy_bits(text),
        subjectivity: SubjectivityLexicon::bundled().score(text),
    }
}

/// Score one letter. The baseline compares the masked text, sentinels
/// included as literal tokens, against the original.
pub fn evaluate_letter(
    input: &EvaluationInput,
    gate: Option<&ModelGate>,
    options: &MetricOptions,
) -> LetterEvaluation {
    let id = input.note_id.as_str();
    let embedder = gate
        .filter(|_| options.bertscore)
        .and_then(|g| window(g).map(|w| (g, w)));
    let reference = embedder.and_then(|(g, w)| degrade("bertscore", id, embed_tokens(g, &input.original, w)));
    let bert = |text: &str| -> Option<Prf> {
        let (g, w) = embedder?;
        let refs = reference.as_ref()?;
        let cand = degrade("bertscore", id, embed_tokens(g, text, w))?;
        degrade("bertscore", id, score_embeddings(&cand, refs))
    };
    LetterEvaluation {
        note_id: input.note_id.clone(),
        synthetic: similarity(&input.synthetic, &input.original, bert(&input.synthetic)),
        baseline: similarity(&input.masked, &input.original, bert(&input.masked)),
        readability_original: readability(&input.original),
        readability_masked: readability(&input.masked),
        readability_synthetic: readability(&input.synthetic),
        advanced_original: advanced(id, &input.original, gate, options),
        advanced_synthetic: advanced(id, &input.synthetic, gate, options),
        invalid_rate: input.invalid_rate,
    }
}

fn push_prf(out: &mut Vec<(String, Option<f64>)>, prefix: &str, prf: Option<Prf>) {
    for (name, v) in [
        ("p", prf.map(|p| p.precision)),
        ("r", prf.map(|p| p.recall)),
        ("f1", prf.map(|p| p.f1)),
    ] {
        out.push((format!("{prefix}_{name}"), v));
    }
}

fn push_similarity(out: &mut Vec<(String, Option<f64>)>, prefix: &str, s: &SimilarityScores) {
    push_prf(out, &format!("{prefix}_rouge1"), Some(s.rouge1));
    push_prf(out, &format!("{prefix}_rouge2"), Some(s.rouge2));
    push_prf(out, &format!("{prefix}_rougeL"), Some(s.rouge_l));
    out.push((format!("{prefix}_meteor"), Some(s.meteor)));
    push_prf(out, &format!("{prefix}_bertscore"), s.bertscore);
}

fn push_readability(out: &mut Vec<(String, Option<f64>)>, prefix: &str, r: &ReadabilityScores) {
    out.push((format!("{prefix}_smog"), r.smog));
    out.push((format!("{prefix}_fre"), r.flesch_reading_ease));
    out.push((format!("{prefix}_fkg"), r.flesch_kincaid_grade));
}

fn push_advanced(out: &mut Vec<(String, Option<f64>)>, prefix: &str, a: &AdvancedScores) {
    out.push((format!("{prefix}_perplexity"), a.pseudo_perplexity));
    out.push((format!("{prefix}_entropy"), Some(a.entropy_bits)));
    out.push((format!("{prefix}_subjectivity"), Some(a.subjectivity)));
}

impl LetterEvaluation {
    /// Flat numeric view in fixed column order; `None` marks an
    /// unavailable metric.
    pub fn columns(&self) -> Vec<(String, Option<f64>)> {
        let mut out = Vec::with_capacity(48);
        push_similarity(&mut out, "syn", &self.synthetic);
        push_similarity(&mut out, "base", &self.baseline);
        push_readability(&mut out, "orig", &self.readability_original);
        push_readability(&mut out, "masked", &self.readability_masked);
        push_readability(&mut out, "syn", &self.readability_synthetic);
        push_advanced(&mut out, "orig", &self.advanced_original);
        push_advanced(&mut out, "syn", &self.advanced_synthetic);
        out.push(("invalid_rate".into(), self.invalid_rate));
        out
    }
}

pub const METRIC_VERSIONS: &[(&str, &str)] = &[
    ("rouge", "clipped-ngram+lcs/f1-percent/v1"),
    ("meteor", "exact+porter-stem/no-synonyms/alpha0.9-beta3-gamma0.5/v1"),
    ("bertscore", "greedy-cosine/no-idf/no-rescale/v1"),
    ("readability", "vowel-group-syllables/silent-e/v1"),
    ("perplexity", "pseudo-perplexity/exp-mean-nll/v1"),
    ("entropy", "word-unigram/bits/v1"),
    ("subjectivity", "bundled-lexicon-mean/v1"),
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub letters: Vec<LetterEvaluation>,
}

impl EvaluationReport {
    pub fn new(letters: Vec<LetterEvaluation>) -> Self {
        Self { letters }
    }

    /// Per-column mean over letters, each letter weighted equally. Letters
    /// where a metric is unavailable are left out of that column's mean.
    pub fn aggregate(&self) -> Vec<(String, Option<f64>)> {
        let Some(first) = self.letters.first() else {
            return Vec::new();
        };
        let names: Vec<String> = first.columns().into_iter().map(|(n, _)| n).collect();
        let mut sums = vec![(0.0f64, 0usize); names.len()];
        for letter in &self.letters {
            for (slot, (_, v)) in sums.iter_mut().zip(letter.columns()) {
                if let Some(v) = v {
                    slot.0 += v;
                    slot.1 += 1;
                }
            }
        }
        names
            .into_iter()
            .zip(sums)
            .map(|(n, (sum, count))| (n, (count > 0).then(|| sum / count as f64)))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if let Some(first) = self.letters.first() {
            let mut header = vec!["note_id".to_string()];
            header.extend(first.columns().into_iter().map(|(n, _)| n));
            w.write_record(&header)?;
        }
        for letter in &self.letters {
            let mut row = vec![letter.note_id.clone()];
            row.extend(
                letter
                    .columns()
                    .into_iter()
                    .map(|(_, v)| v.map(|x| x.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Summary document: aggregates, the caller's config echo and metric
    /// version tags.
    pub fn summary(&self, config: Value) -> Value {
        let aggregate: Map<String, Value> = self
            .aggregate()
            .into_iter()
            .map(|(n, v)| (n, v.map_or(Value::Null, |x| json!(x))))
            .collect();
        let versions: Map<String, Value> = METRIC_VERSIONS
            .iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        json!({
            "letters": self.letters.len(),
            "aggregate": aggregate,
            "config": config,
            "metric_versions": versions,
            "notes": [
                "ROUGE cells are F1 unless the column name says p or r",
                "METEOR uses exact and stem matches only, without synonyms",
                "BERTScore is unrescaled and unweighted",
            ],
        })
    }
}
