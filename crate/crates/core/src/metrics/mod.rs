//! Evaluation battery: similarity to the original letter, readability and
//! a few distributional measures, plus the per-letter report.

pub mod advanced;
pub mod bertscore;
pub mod meteor;
pub mod readability;
pub mod report;
pub mod rouge;
pub mod stem;

pub use advanced::{entropy_bits, pseudo_perplexity, AdvancedScores, SubjectivityLexicon};
pub use bertscore::{bert_score, embed_tokens, greedy_match, score_embeddings};
pub use meteor::{meteor, meteor_tokens};
pub use readability::{readability, syllables, ReadabilityScores};
pub use report::{
    evaluate_letter, EvaluationInput, EvaluationReport, LetterEvaluation, MetricOptions,
    SimilarityScores,
};
pub use rouge::{lcs_len, rouge, rouge_tokens, Prf, RougeVariant};
pub use stem::porter_stem;

use crate::featurizer::tokenize_words;

/// Lowercased word tokens, the common input of the text metrics.
pub fn metric_tokens(text: &str) -> Vec<String> {
    tokenize_words(text, 0)
        .into_iter()
        .map(|t| t.text.to_lowercase())
        .collect()
}

/// Window size in words for backends with an input limit.
pub fn window_for(max_input_tokens: usize) -> usize {
    (max_input_tokens / 2).max(16)
}

/// Split `text` into consecutive pieces of at most `window` word tokens,
/// each paired with its token count. Pieces are exact substrings.
pub(crate) fn window_texts(text: &str, window: usize) -> Vec<(String, usize)> {
    let tokens = tokenize_words(text, 0);
    let chars: Vec<char> = text.chars().collect();
    tokens
        .chunks(window.max(1))
        .map(|group| {
            let start = group[0].start;
            let end = group[group.len() - 1].end;
            (chars[start..end].iter().collect(), group.len())
        })
        .collect()
}
