//! Mask rendering, infilling and letter reassembly.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chunker::{chunk_letter, Chunk, ChunkConfig};
use crate::corpus::AnnotatedLetter;
use crate::error::{Error, Result};
use crate::featurizer::{Featurizer, LetterFeatures, TokenRecord};
use crate::maskplanner::{chunk_seed, compute_eligibility, plan, MaskPlan, MaskSpec};
use crate::modelgate::{
    AnnotationResult, AnnotationSpan, Candidate, EchoBackend, FillMaskQuery, Layer, ModelGate,
    MASK_SENTINEL,
};
use crate::text::{CharIndex, CharSpan};

/// Stand-in text for a slot whose candidate list came back empty.
pub const EMPTY_PREDICTION: &str = "___";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub token_index: usize,
    pub original: String,
    /// Letter character offsets of the masked token.
    pub span: CharSpan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedChunk {
    pub note_id: String,
    pub chunk_index: usize,
    pub chunk_span: CharSpan,
    pub original_text: String,
    pub masked_text: String,
    pub slots: Vec<Slot>,
}

/// Replace each planned token of `chunk` with the sentinel, leaving every
/// other character in place.
pub fn render_masked(chunk: &Chunk, tokens: &[TokenRecord], plan: &MaskPlan) -> Result<MaskedChunk> {
    if let Some(&bad) = plan.masked.iter().find(|&&i| i >= tokens.len()) {
        return Err(Error::InvalidArgument(format!(
            "plan index {bad} out of range for chunk {} with {} tokens",
            chunk.chunk_index,
            tokens.len()
        )));
    }
    let idx = CharIndex::new(&chunk.text);
    let mut masked_text = String::with_capacity(chunk.text.len());
    let mut slots = Vec::with_capacity(plan.masked.len());
    let mut cursor = 0;
    for &i in &plan.masked {
        let t = &tokens[i];
        let local = CharSpan::new(t.start - chunk.start, t.end - chunk.start);
        masked_text.push_str(idx.slice(&chunk.text, CharSpan::new(cursor, local.start)));
        masked_text.push_str(MASK_SENTINEL);
        cursor = local.end;
        slots.push(Slot {
            token_index: i,
            original: t.text.clone(),
            span: t.span(),
        });
    }
    masked_text.push_str(idx.slice(&chunk.text, CharSpan::new(cursor, idx.char_len())));
    Ok(MaskedChunk {
        note_id: chunk.note_id.clone(),
        chunk_index: chunk.chunk_index,
        chunk_span: chunk.span(),
        original_text: chunk.text.clone(),
        masked_text,
        slots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvalidReason {
    Empty,
    Punctuation,
    Subword,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "lowercase")]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Empty, punctuation-only, `##` continuation pieces and unknown-token
/// symbols are invalid; anything else is a valid word.
pub fn classify_prediction(candidate: &str) -> Validity {
    let t = candidate.trim();
    if t.is_empty() {
        Validity::Invalid(InvalidReason::Empty)
    } else if matches!(t, "[UNK]" | "<unk>" | "<UNK>") {
        Validity::Invalid(InvalidReason::Unknown)
    } else if t.starts_with("##") {
        Validity::Invalid(InvalidReason::Subword)
    } else if t.chars().all(|c| !c.is_alphanumeric()) {
        Validity::Invalid(InvalidReason::Punctuation)
    } else {
        Validity::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Selection {
    /// Highest-scoring candidate.
    Greedy,
    /// Score-weighted draw among the best `k`.
    TopKSample { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfillOptions {
    pub selection: Selection,
    /// Under greedy selection, how many lower-ranked candidates to try
    /// after an invalid top candidate.
    pub retry_invalid: u32,
}

impl Default for InfillOptions {
    fn default() -> Self {
        Self {
            selection: Selection::Greedy,
            retry_invalid: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub token_index: usize,
    pub original: String,
    pub predicted: String,
    pub score: f64,
    pub validity: Validity,
}

fn pick(candidates: &[Candidate], options: &InfillOptions, rng: &mut ChaCha8Rng) -> (String, f64) {
    if candidates.is_empty() {
        return (EMPTY_PREDICTION.to_string(), 0.0);
    }
    match options.selection {
        Selection::Greedy => {
            let tries = 1 + options.retry_invalid as usize;
            let chosen = candidates
                .iter()
                .take(tries)
                .find(|c| classify_prediction(&c.token).is_valid())
                .unwrap_or(&candidates[0]);
            (chosen.token.trim().to_string(), chosen.score)
        }
        Selection::TopKSample { k } => {
            let pool = &candidates[..k.max(1).min(candidates.len())];
            let total: f64 = pool.iter().map(|c| c.score).sum();
            let mut x = rng.random_range(0.0..total);
            for c in pool {
                if x < c.score {
                    return (c.token.trim().to_string(), c.score);
                }
                x -= c.score;
            }
            let last = pool.last().expect("non-empty pool");
            (last.token.trim().to_string(), last.score)
        }
    }
}

/// One fill-mask request for all sentinels of the chunk.
pub fn infill_chunk(
    masked: &MaskedChunk,
    gate: &ModelGate,
    options: &InfillOptions,
    seed: u64,
) -> Result<Vec<SlotPrediction>> {
    if masked.slots.is_empty() {
        return Ok(Vec::new());
    }
    let top_k = match options.selection {
        Selection::Greedy => 1 + options.retry_invalid as usize,
        Selection::TopKSample { k } => k.max(1),
    };
    let result = gate.fill_mask(&FillMaskQuery::new(masked.masked_text.clone(), top_k))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(masked
        .slots
        .iter()
        .zip(&result.masks)
        .map(|(slot, candidates)| {
            let (predicted, score) = pick(candidates, options, &mut rng);
            let validity = if candidates.is_empty() {
                Validity::Invalid(InvalidReason::Empty)
            } else {
                classify_prediction(&predicted)
            };
            SlotPrediction {
                token_index: slot.token_index,
                original: slot.original.clone(),
                predicted,
                score,
                validity,
            }
        })
        .collect())
}

/// Substitute predictions into the masked text, in sentinel order.
pub fn fill_sentinels(masked_text: &str, predictions: &[String]) -> Result<String> {
    let pieces: Vec<&str> = masked_text.split(MASK_SENTINEL).collect();
    if pieces.len() != predictions.len() + 1 {
        return Err(Error::Assembly(format!(
            "{} sentinels but {} predictions",
            pieces.len() - 1,
            predictions.len()
        )));
    }
    let mut out = String::with_capacity(masked_text.len());
    for (piece, pred) in pieces.iter().zip(predictions) {
        out.push_str(piece);
        out.push_str(pred);
    }
    out.push_str(pieces.last().expect("split yields at least one piece"));
    Ok(out)
}

/// The replacement text of one chunk of a letter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkText {
    pub chunk_index: usize,
    pub span: CharSpan,
    pub text: String,
}

/// Splice chunk texts back into the letter, keeping the original text
/// between chunks. Chunk indices must run 0..n with none missing.
pub fn reassemble_letter(original: &str, note_id: &str, chunks: &[ChunkText]) -> Result<String> {
    let mut sorted: Vec<&ChunkText> = chunks.iter().collect();
    sorted.sort_by_key(|c| c.chunk_index);
    for (expected, c) in sorted.iter().enumerate() {
        if c.chunk_index != expected {
            return Err(Error::Assembly(format!(
                "letter `{note_id}` is missing chunk_index {expected}"
            )));
        }
    }
    let idx = CharIndex::new(original);
    let mut out = String::with_capacity(original.len());
    let mut cursor = 0;
    for c in sorted {
        if c.span.start < cursor || c.span.end > idx.char_len() {
            return Err(Error::Assembly(format!(
                "chunk {} of `{note_id}` overlaps its predecessor or the letter end",
                c.chunk_index
            )));
        }
        out.push_str(idx.slice(original, CharSpan::new(cursor, c.span.start)));
        out.push_str(&c.text);
        cursor = c.span.end;
    }
    out.push_str(idx.slice(original, CharSpan::new(cursor, idx.char_len())));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_index: usize,
    pub masked_text: String,
    pub synthetic_text: String,
    pub predictions: Vec<SlotPrediction>,
    pub token_count: usize,
    pub eligible_count: usize,
    pub masked_eligible: usize,
    pub masked_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLetter {
    pub note_id: String,
    pub text: String,
    /// The letter with sentinels in place of masked tokens.
    pub masked_text: String,
    pub chunks: Vec<ChunkRecord>,
    pub duration_ms: f64,
}

impl SyntheticLetter {
    pub fn slot_count(&self) -> usize {
        self.chunks.iter().map(|c| c.predictions.len()).sum()
    }

    pub fn invalid_count(&self) -> usize {
        self.chunks
            .iter()
            .flat_map(|c| &c.predictions)
            .filter(|p| !p.validity.is_valid())
            .count()
    }

    /// Invalid predictions over all sentinels; 0 when nothing was masked.
    pub fn invalid_rate(&self) -> f64 {
        invalid_rate(self.invalid_count(), self.slot_count())
    }

    /// Masked eligible tokens over eligible tokens, across chunks.
    pub fn eligible_ratio(&self) -> f64 {
        let eligible: usize = self.chunks.iter().map(|c| c.eligible_count).sum();
        let hit: usize = self.chunks.iter().map(|c| c.masked_eligible).sum();
        if eligible == 0 {
            0.0
        } else {
            hit as f64 / eligible as f64
        }
    }

    /// Masked tokens over all tokens, across chunks.
    pub fn actual_ratio(&self) -> f64 {
        let total: usize = self.chunks.iter().map(|c| c.token_count).sum();
        let masked: usize = self.chunks.iter().map(|c| c.masked_count).sum();
        if total == 0 {
            0.0
        } else {
            masked as f64 / total as f64
        }
    }

    /// Every slot's validity flag, in letter order.
    pub fn validity_flags(&self) -> Vec<bool> {
        self.chunks
            .iter()
            .flat_map(|c| c.predictions.iter().map(|p| p.validity.is_valid()))
            .collect()
    }
}

pub fn invalid_rate(invalid: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        invalid as f64 / total as f64
    }
}

/// A single ratio, or one per hybrid component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestedRatio {
    Single(f64),
    Components(Vec<f64>),
}

impl From<&MaskSpec> for RequestedRatio {
    fn from(spec: &MaskSpec) -> Self {
        if spec.hybrid {
            RequestedRatio::Components(spec.components.iter().map(|c| c.1).collect())
        } else {
            RequestedRatio::Single(spec.components.first().map(|c| c.1).unwrap_or(0.0))
        }
    }
}

/// One line of `generation_report.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub note_id: String,
    pub strategy: String,
    pub requested_ratio: RequestedRatio,
    pub eligible_ratio: f64,
    pub actual_ratio: f64,
    pub invalid_rate: f64,
    pub duration_ms: f64,
}

impl GenerationRow {
    pub fn new(letter: &SyntheticLetter, spec: &MaskSpec) -> Self {
        Self {
            note_id: letter.note_id.clone(),
            strategy: spec.to_string(),
            requested_ratio: spec.into(),
            eligible_ratio: letter.eligible_ratio(),
            actual_ratio: letter.actual_ratio(),
            invalid_rate: letter.invalid_rate(),
            duration_ms: letter.duration_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub chunking: ChunkConfig,
    pub spec: MaskSpec,
    pub seed: u64,
    pub infill: InfillOptions,
}

/// Where fill-mask answers come from.
#[derive(Debug, Clone)]
pub enum Infiller {
    Gate(ModelGate),
    /// An echo backend built per letter from that letter's own chunks, so
    /// identical masked chunks in different letters cannot be confused.
    EchoOracle,
}

/// A chunk with its labelled tokens.
#[derive(Debug, Clone)]
pub struct PreparedChunk {
    pub chunk: Chunk,
    pub tokens: Vec<TokenRecord>,
}

/// Why a letter could not be generated.
#[derive(Debug)]
pub struct GenerationFailure {
    pub note_id: String,
    pub chunk_index: Option<usize>,
    pub error: Error,
}

impl std::fmt::Display for GenerationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.chunk_index {
            Some(i) => write!(f, "letter `{}` chunk {i}: {}", self.note_id, self.error),
            None => write!(f, "letter `{}`: {}", self.note_id, self.error),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub featurizer: Featurizer,
    infiller: Infiller,
    /// Used for POS/NER/medical-term annotation; `None` skips model
    /// features.
    annotator: Option<ModelGate>,
}

impl Generator {
    pub fn new(config: GeneratorConfig, infiller: Infiller, annotator: Option<ModelGate>) -> Result<Self> {
        config.chunking.validate()?;
        Ok(Self {
            config,
            featurizer: Featurizer::default(),
            infiller,
            annotator,
        })
    }

    pub fn with_featurizer(mut self, featurizer: Featurizer) -> Self {
        self.featurizer = featurizer;
        self
    }

    fn annotate_chunk(&self, chunk: &Chunk) -> Result<Option<AnnotationResult>> {
        let Some(gate) = &self.annotator else {
            return Ok(None);
        };
        let ann = gate.annotate(&chunk.text, &[Layer::Pos, Layer::Ner, Layer::Medterm])?;
        Ok(Some(AnnotationResult {
            spans: ann
                .spans
                .into_iter()
                .map(|s| AnnotationSpan {
                    start: s.start + chunk.start,
                    end: s.end + chunk.start,
                    ..s
                })
                .collect(),
        }))
    }

    /// Chunk, annotate and label one letter.
    pub fn prepare(&self, letter: &AnnotatedLetter) -> Result<Vec<PreparedChunk>> {
        let chunks = chunk_letter(letter, &self.config.chunking);
        let mut merged = AnnotationResult::default();
        let mut any = false;
        for c in &chunks {
            if let Some(a) = self.annotate_chunk(c)? {
                any = true;
                merged.spans.extend(a.spans);
            }
        }
        let features: LetterFeatures = self.featurizer.letter_features(
            letter.text(),
            &letter.entity_spans(),
            any.then_some(&merged),
        );
        Ok(chunks
            .into_iter()
            .map(|chunk| {
                let tokens = self.featurizer.featurize(&chunk.text, chunk.start, &features);
                PreparedChunk { chunk, tokens }
            })
            .collect())
    }

    pub fn generate_letter(&self, letter: &AnnotatedLetter) -> Result<SyntheticLetter, GenerationFailure> {
        let started = Instant::now();
        let fail = |chunk_index: Option<usize>, error: Error| GenerationFailure {
            note_id: letter.note_id().to_string(),
            chunk_index,
            error,
        };
        let prepared = self.prepare(letter).map_err(|e| fail(None, e))?;
        let gate = match &self.infiller {
            Infiller::Gate(g) => g.clone(),
            Infiller::EchoOracle => ModelGate::new(EchoBackend::from_references(
                prepared.iter().map(|p| p.chunk.text.clone()),
            )),
        };

        let mut records = Vec::with_capacity(prepared.len());
        let mut synthetic = Vec::with_capacity(prepared.len());
        let mut masked = Vec::with_capacity(prepared.len());
        for p in &prepared {
            let idx = p.chunk.chunk_index;
            let seed = chunk_seed(self.config.seed, letter.note_id(), idx);
            let eligibility = compute_eligibility(&p.tokens);
            let mask_plan = plan(&p.tokens, &eligibility, &self.config.spec, seed).map_err(|e| fail(Some(idx), e))?;
            let rendered = render_masked(&p.chunk, &p.tokens, &mask_plan).map_err(|e| fail(Some(idx), e))?;
            let predictions =
                infill_chunk(&rendered, &gate, &self.config.infill, seed).map_err(|e| fail(Some(idx), e))?;
            let words: Vec<String> = predictions.iter().map(|p| p.predicted.clone()).collect();
            let text = fill_sentinels(&rendered.masked_text, &words).map_err(|e| fail(Some(idx), e))?;
            synthetic.push(ChunkText {
                chunk_index: idx,
                span: p.chunk.span(),
                text: text.clone(),
            });
            masked.push(ChunkText {
                chunk_index: idx,
                span: p.chunk.span(),
                text: rendered.masked_text.clone(),
            });
            let masked_eligible = mask_plan.masked.intersection(&eligibility.eligible).count();
            records.push(ChunkRecord {
                chunk_index: idx,
                masked_text: rendered.masked_text,
                synthetic_text: text,
                predictions,
                token_count: p.tokens.len(),
                eligible_count: eligibility.eligible.len(),
                masked_eligible,
                masked_count: mask_plan.masked.len(),
            });
        }
        let text = reassemble_letter(letter.text(), letter.note_id(), &synthetic).map_err(|e| fail(None, e))?;
        let masked_text = reassemble_letter(letter.text(), letter.note_id(), &masked).map_err(|e| fail(None, e))?;
        Ok(SyntheticLetter {
            note_id: letter.note_id().to_string(),
            text,
            masked_text,
            chunks: records,
            duration_ms: started.elapsed().as_secs_f64() * 1000.0,
        })
    }

    /// Letters run in parallel; output order follows input order.
    pub fn generate_corpus(&self, letters: &[AnnotatedLetter]) -> Vec<Result<SyntheticLetter, GenerationFailure>> {
        letters.par_iter().map(|l| self.generate_letter(l)).collect()
    }
}
