use super::rouge::Prf;
use super::window_texts;
use crate::modelgate::ModelGate;
use crate::{Error, Result};

/// Greedy cosine matching over a similarity matrix with candidate tokens
/// as rows and reference tokens as columns. Fractions, no idf weighting
/// and no baseline rescaling.
pub fn greedy_match(similarity: &[Vec<f64>]) -> Prf {
    let rows = similarity.len();
    let cols = similarity.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Prf::default();
    }
    let precision = similarity
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / rows as f64;
    let recall = (0..cols)
        .map(|j| similarity.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cols as f64;
    Prf::from_pr(precision, recall)
}

fn unit(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Unit-normalised token vectors of `text`. Texts longer than `window`
/// words are embedded in consecutive windows and the vectors concatenated.
pub fn embed_tokens(gate: &ModelGate, text: &str, window: usize) -> Result<Vec<Vec<f64>>> {
    let mut vectors = Vec::new();
    for (piece, _) in window_texts(text, window) {
        let result = gate.embed(&piece)?;
        if result.truncated {
            log::warn!("embedding input was truncated by the backend");
        }
        vectors.extend(result.vectors.iter().map(|v| unit(v)));
    }
    Ok(vectors)
}

/// Greedy matching over unit vectors without materialising the matrix.
pub fn score_embeddings(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<Prf> {
    if candidate.is_empty() || reference.is_empty() {
        return Ok(Prf::default());
    }
    let dim = reference[0].len();
    if candidate[0].len() != dim {
        return Err(Error::Protocol("embedding dimension changed between calls".into()));
    }
    let mut row_max = vec![f64::NEG_INFINITY; candidate.len()];
    let mut col_max = vec![f64::NEG_INFINITY; reference.len()];
    for (i, c) in candidate.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            let mut dot = 0.0;
            for k in 0..dim {
                dot += c[k] * r[k];
            }
            if dot > row_max[i] {
                row_max[i] = dot;
            }
            if dot > col_max[j] {
                col_max[j] = dot;
            }
        }
    }
    let precision = row_max.iter().sum::<f64>() / row_max.len() as f64;
    let recall = col_max.iter().sum::<f64>() / col_max.len() as f64;
    Ok(Prf::from_pr(precision, recall))
}

/// BERTScore of `candidate` against `reference` using the backend's
/// contextual embeddings.
pub fn bert_score(candidate: &str, reference: &str, gate: &ModelGate, window: usize) -> Result<Prf> {
    let cand = embed_tokens(gate, candidate, window)?;
    let refs = embed_tokens(gate, reference, window)?;
    score_embeddings(&cand, &refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelgate::DictionaryBackend;

    #[test]
    fn hand_matrix() {
        let s = greedy_match(&[vec![1.0, 0.0], vec![0.0, 0.5]]);
        assert!((s.precision - 0.75).abs() < 1e-12);
        assert!((s.recall - 0.75).abs() < 1e-12);
        assert!((s.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_matrix() {
        // rows: max 0.9, 0.2 -> P 0.55; cols: max 0.9, 0.1, 0.2 -> R 0.4
        let s = greedy_match(&[vec![0.9, 0.1, 0.0], vec![0.1, 0.0, 0.2]]);
        assert!((s.precision - 0.55).abs() < 1e-12);
        assert!((s.recall - 0.4).abs() < 1e-12);
    }

    #[test]
    fn streaming_matches_matrix() {
        let c = vec![vec![1.0, 0.0], vec![0.6, 0.8]];
        let r = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.8, 0.6]];
        let matrix: Vec<Vec<f64>> = c
            .iter()
            .map(|a| r.iter().map(|b: &Vec<f64>| a[0] * b[0] + a[1] * b[1]).collect())
            .collect();
        let s = score_embeddings(&c, &r).unwrap();
        let m = greedy_match(&matrix);
        assert!((s.f1 - m.f1).abs() < 1e-12 && (s.precision - m.precision).abs() < 1e-12);
    }

    #[test]
    fn identical_texts_score_one_even_when_windowed() {
        let gate = ModelGate::new(DictionaryBackend::new(1));
        let text = (0..50).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let s = bert_score(&text, &text, &gate, 16).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-9);
    }
}
