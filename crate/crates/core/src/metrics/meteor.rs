use super::metric_tokens;
use super::stem::porter_stem;

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MeteorDetail {
    pub score: f64,
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Align one matching stage. Each unmatched candidate position, left to
/// right, takes the reference position directly after the previous
/// alignment if it qualifies, otherwise the leftmost qualifying one.
fn align_stage(
    cand: &[String],
    refs: &[String],
    alignment: &mut [Option<usize>],
    used: &mut [bool],
) {
    let mut prev: Option<usize> = None;
    for i in 0..cand.len() {
        if let Some(j) = alignment[i] {
            prev = Some(j);
            continue;
        }
        let free = |j: usize| !used[j] && cand[i] == refs[j];
        let next = prev.map(|p| p + 1).filter(|&j| j < refs.len() && free(j));
        if let Some(j) = next.or_else(|| (0..refs.len()).find(|&j| free(j))) {
            alignment[i] = Some(j);
            used[j] = true;
            prev = Some(j);
        }
    }
}

fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    let mut prev_i: Option<usize> = None;
    for (i, a) in alignment.iter().enumerate() {
        if let Some(j) = *a {
            let contiguous = matches!((prev_i, prev), (Some(pi), Some(pj)) if pi + 1 == i && pj + 1 == j);
            if !contiguous {
                chunks += 1;
            }
            prev = Some(j);
            prev_i = Some(i);
        }
    }
    chunks
}

/// METEOR with exact matching followed by Porter-stem matching. No
/// synonym stage.
pub fn meteor_tokens(candidate: &[String], reference: &[String]) -> MeteorDetail {
    let zero = MeteorDetail {
        score: 0.0,
        matches: 0,
        chunks: 0,
        precision: 0.0,
        recall: 0.0,
    };
    if candidate.is_empty() || reference.is_empty() {
        return zero;
    }
    let mut alignment = vec![None; candidate.len()];
    let mut used = vec![false; reference.len()];
    align_stage(candidate, reference, &mut alignment, &mut used);
    let cand_stems: Vec<String> = candidate.iter().map(|t| porter_stem(t)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| porter_stem(t)).collect();
    align_stage(&cand_stems, &ref_stems, &mut alignment, &mut used);

    let matches = alignment.iter().flatten().count();
    if matches == 0 {
        return zero;
    }
    let chunks = count_chunks(&alignment);
    let precision = matches as f64 / candidate.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let fmean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall);
    let penalty = GAMMA * (chunks as f64 / matches as f64).powf(BETA);
    MeteorDetail {
        score: fmean * (1.0 - penalty),
        matches,
        chunks,
        precision,
        recall,
    }
}

pub fn meteor(candidate: &str, reference: &str) -> f64 {
    meteor_tokens(&metric_tokens(candidate), &metric_tokens(reference)).score
}
