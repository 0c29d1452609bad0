//! Sentence splitting, token-budgeted chunking and the `max_lines` sweep.

use std::collections::BTreeSet;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedLetter;
use crate::error::{Error, Result};
use crate::featurizer::{tokenize_words, STRUCTURE};
use crate::text::{CharIndex, CharSpan};

const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "no.", "vs.", "e.g.", "i.e.", "etc.", "approx.",
    "pt.", "mg.", "ml.", "mcg.", "b.i.d.", "t.i.d.", "q.d.", "p.r.n.", "p.o.",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl SentenceSpan {
    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

/// Rule-based sentence segmenter.
///
/// A new sentence starts
/// - after `.`, `?` or `!` followed by whitespace and an uppercase letter
///   or digit, unless the word ending in the mark is a guarded
///   abbreviation or a list enumerator (`2.`) at the start of its line;
/// - after a blank line;
/// - at a structure header, and right after a header that is alone on its
///   line.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: BTreeSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            abbreviations: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    /// No abbreviation guard at all.
    pub fn unguarded() -> Self {
        Self {
            abbreviations: BTreeSet::new(),
        }
    }

    pub fn split(&self, text: &str) -> Vec<SentenceSpan> {
        let chars: Vec<char> = text.chars().collect();
        let idx = CharIndex::new(text);
        let mut cuts: BTreeSet<usize> = BTreeSet::new();

        for cap in STRUCTURE.captures_iter(text) {
            let m = cap.get(1).expect("header group");
            let span = idx.span_of_bytes(m.start(), m.end());
            cuts.insert(span.start);
            let rest = chars[span.end..].iter().take_while(|&&c| c != '\n');
            if rest.clone().all(|c| c.is_whitespace()) {
                cuts.insert(span.end);
            }
        }

        let mut i = 0;
        while i < chars.len() {
            if chars[i] == '\n' {
                let mut j = i + 1;
                while j < chars.len() && chars[j] != '\n' && chars[j].is_whitespace() {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '\n' {
                    cuts.insert(j + 1);
                }
            }
            i += 1;
        }

        for (i, &c) in chars.iter().enumerate() {
            if !matches!(c, '.' | '?' | '!') {
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            if j == i + 1 || j >= chars.len() {
                continue;
            }
            let next = chars[j];
            if !(next.is_uppercase() || next.is_ascii_digit()) {
                continue;
            }
            if c == '.' && self.guarded(&chars, i) {
                continue;
            }
            cuts.insert(j);
        }

        let mut bounds: Vec<usize> = cuts.into_iter().filter(|&c| c > 0 && c < chars.len()).collect();
        bounds.insert(0, 0);
        bounds.push(chars.len());
        bounds
            .windows(2)
            .filter_map(|w| {
                let (mut s, mut e) = (w[0], w[1]);
                while s < e && chars[s].is_whitespace() {
                    s += 1;
                }
                while e > s && chars[e - 1].is_whitespace() {
                    e -= 1;
                }
                (s < e).then(|| SentenceSpan {
                    start: s,
                    end: e,
                    text: chars[s..e].iter().collect(),
                })
            })
            .collect()
    }

    /// The period at `dot` ends an abbreviation or a line-initial enumerator.
    fn guarded(&self, chars: &[char], dot: usize) -> bool {
        let mut s = dot;
        while s > 0 && !chars[s - 1].is_whitespace() {
            s -= 1;
        }
        let word: String = chars[s..=dot]
            .iter()
            .skip_while(|c| matches!(c, '(' | '"' | '\''))
            .collect::<String>()
            .to_lowercase();
        if self.abbreviations.contains(&word) {
            return true;
        }
        let enumerator = word.len() > 1 && word[..word.len() - 1].chars().all(|c| c.is_ascii_digit());
        let line_initial = chars[..s]
            .iter()
            .rev()
            .take_while(|&&c| c != '\n')
            .all(|c| c.is_whitespace());
        enumerator && line_initial
    }
}

/// Split with the default abbreviation guard.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    SentenceSplitter::default().split(text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    /// Sentence budget per chunk.
    pub max_lines: usize,
    /// Word-token budget per chunk.
    pub max_tokens: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            max_lines: 41,
            max_tokens: 256,
        }
    }
}

impl ChunkConfig {
    pub fn new(max_lines: usize, max_tokens: usize) -> Result<Self> {
        let cfg = Self {
            max_lines,
            max_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_lines < 1 {
            return Err(Error::InvalidArgument("max_lines must be at least 1".into()));
        }
        if self.max_tokens < 8 {
            return Err(Error::InvalidArgument(format!(
                "max_tokens must be at least 8, got {}",
                self.max_tokens
            )));
        }
        Ok(())
    }
}

/// Marks a chunk that holds one slice of an oversize sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PieceMarker {
    pub index: usize,
    pub of: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub note_id: String,
    pub chunk_index: usize,
    /// Indices of the contained sentences.
    pub sentences: Range<usize>,
    pub piece: Option<PieceMarker>,
    pub start: usize,
    pub end: usize,
    pub token_count: usize,
    pub text: String,
}

impl Chunk {
    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

/// One slice of an oversize sentence, in letter character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece {
    pub start: usize,
    pub end: usize,
    pub token_count: usize,
}

/// Cut a sentence longer than `max_tokens` into runs of whole word tokens.
///
/// Each piece is filled up to `max_tokens`, then the cut backs off to the
/// nearest token gap that is whitespace and not inside an entity. If no
/// such gap exists the cut falls back to any gap outside entities, and
/// finally to the full budget.
pub fn split_oversize(
    sentence: &str,
    base_offset: usize,
    max_tokens: usize,
    entities: &[CharSpan],
) -> Vec<Piece> {
    assert!(max_tokens > 0, "max_tokens must be positive");
    let tokens = tokenize_words(sentence, base_offset);
    let n = tokens.len();
    let inside_entity = |c: usize| {
        let (left, right) = (tokens[c - 1].end, tokens[c].start);
        entities.iter().any(|e| e.start < right && e.end > left)
    };
    let gap_is_space = |c: usize| tokens[c - 1].end < tokens[c].start;

    let mut pieces = Vec::new();
    let mut p = 0;
    while p < n {
        let q = (p + max_tokens).min(n);
        let cut = if q == n {
            n
        } else {
            ((p + 1)..=q)
                .rev()
                .find(|&c| gap_is_space(c) && !inside_entity(c))
                .or_else(|| ((p + 1)..=q).rev().find(|&c| !inside_entity(c)))
                .unwrap_or(q)
        };
        pieces.push(Piece {
            start: tokens[p].start,
            end: tokens[cut - 1].end,
            token_count: cut - p,
        });
        p = cut;
    }
    pieces
}

/// Greedy sentence accumulation under both budgets.
///
/// A sentence joins the open chunk iff the chunk holds fewer than
/// `max_lines` sentences and the combined token count stays within
/// `max_tokens`. A sentence that alone exceeds `max_tokens` closes the open
/// chunk and is emitted as pieces, one chunk each.
pub fn build_chunks<F>(
    letter_text: &str,
    note_id: &str,
    sentences: &[SentenceSpan],
    config: &ChunkConfig,
    entities: &[CharSpan],
    token_counter: F,
) -> Vec<Chunk>
where
    F: Fn(&str) -> usize,
{
    let counts: Vec<usize> = sentences.iter().map(|s| token_counter(&s.text)).collect();
    let idx = CharIndex::new(letter_text);
    let mut out = Vec::new();
    for g in group_sentences(&counts, config) {
        match g {
            Group::Run { sentences: range, tokens } => {
                let span = CharSpan::new(sentences[range.start].start, sentences[range.end - 1].end);
                out.push(Chunk {
                    note_id: note_id.to_string(),
                    chunk_index: out.len(),
                    sentences: range,
                    piece: None,
                    start: span.start,
                    end: span.end,
                    token_count: tokens,
                    text: idx.slice(letter_text, span).to_string(),
                });
            }
            Group::Oversize(i) => {
                let s = &sentences[i];
                let pieces = split_oversize(&s.text, s.start, config.max_tokens, entities);
                let of = pieces.len();
                for (k, p) in pieces.into_iter().enumerate() {
                    let span = CharSpan::new(p.start, p.end);
                    out.push(Chunk {
                        note_id: note_id.to_string(),
                        chunk_index: out.len(),
                        sentences: i..i + 1,
                        piece: Some(PieceMarker { index: k, of }),
                        start: p.start,
                        end: p.end,
                        token_count: p.token_count,
                        text: idx.slice(letter_text, span).to_string(),
                    });
                }
            }
        }
    }
    out
}

enum Group {
    Run { sentences: Range<usize>, tokens: usize },
    Oversize(usize),
}

fn group_sentences(counts: &[usize], config: &ChunkConfig) -> Vec<Group> {
    let mut groups = Vec::new();
    let mut open: Option<(usize, usize, usize)> = None; // (first, len, tokens)
    for (i, &t) in counts.iter().enumerate() {
        if t > config.max_tokens {
            if let Some((first, len, tokens)) = open.take() {
                groups.push(Group::Run { sentences: first..first + len, tokens });
            }
            groups.push(Group::Oversize(i));
            continue;
        }
        match open.as_mut() {
            Some((_, len, tokens)) if *len < config.max_lines && *tokens + t <= config.max_tokens => {
                *len += 1;
                *tokens += t;
            }
            _ => {
                if let Some((first, len, tokens)) = open.take() {
                    groups.push(Group::Run { sentences: first..first + len, tokens });
                }
                open = Some((i, 1, t));
            }
        }
    }
    if let Some((first, len, tokens)) = open {
        groups.push(Group::Run { sentences: first..first + len, tokens });
    }
    groups
}

/// Join neighbouring sentences whose boundary falls inside an entity.
pub fn merge_across_entities(text: &str, sentences: Vec<SentenceSpan>, entities: &[CharSpan]) -> Vec<SentenceSpan> {
    let idx = CharIndex::new(text);
    let mut out: Vec<SentenceSpan> = Vec::with_capacity(sentences.len());
    for s in sentences {
        if let Some(last) = out.last_mut() {
            let (gap_start, gap_end) = (last.end, s.start);
            if entities.iter().any(|e| e.start < gap_end && e.end > gap_start) {
                last.end = s.end;
                last.text = idx.slice(text, CharSpan::new(last.start, last.end)).to_string();
                continue;
            }
        }
        out.push(s);
    }
    out
}

fn word_count(text: &str) -> usize {
    tokenize_words(text, 0).len()
}

/// Sentences of one letter with their token counts, ready for repeated
/// chunking under different budgets.
#[derive(Debug, Clone)]
pub struct PreparedLetter {
    pub note_id: String,
    pub sentences: Vec<SentenceSpan>,
    pub token_counts: Vec<usize>,
    pub entities: Vec<CharSpan>,
}

impl PreparedLetter {
    pub fn new(letter: &AnnotatedLetter, splitter: &SentenceSplitter) -> Self {
        let entities = letter.entity_spans();
        let sentences = merge_across_entities(letter.text(), splitter.split(letter.text()), &entities);
        let token_counts = sentences.iter().map(|s| word_count(&s.text)).collect();
        Self {
            note_id: letter.note_id().to_string(),
            sentences,
            token_counts,
            entities,
        }
    }

    /// (total tokens, chunk count) under `config`, without materialising
    /// chunk text.
    pub fn chunk_stats(&self, config: &ChunkConfig) -> (usize, usize) {
        let mut tokens = 0;
        let mut chunks = 0;
        for g in group_sentences(&self.token_counts, config) {
            match g {
                Group::Run { tokens: t, .. } => {
                    tokens += t;
                    chunks += 1;
                }
                Group::Oversize(i) => {
                    let s = &self.sentences[i];
                    for p in split_oversize(&s.text, s.start, config.max_tokens, &self.entities) {
                        tokens += p.token_count;
                        chunks += 1;
                    }
                }
            }
        }
        (tokens, chunks)
    }
}

/// Split, merge across entities, and chunk one letter.
pub fn chunk_letter(letter: &AnnotatedLetter, config: &ChunkConfig) -> Vec<Chunk> {
    let prepared = PreparedLetter::new(letter, &SentenceSplitter::default());
    build_chunks(
        letter.text(),
        letter.note_id(),
        &prepared.sentences,
        config,
        &prepared.entities,
        word_count,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub max_lines: usize,
    pub average_tokens_per_chunk: f64,
    pub chunk_count: usize,
    pub total_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    /// Strictly increasing in `max_lines`.
    pub rows: Vec<TuningRow>,
    pub chosen_max_lines: usize,
    pub plateau_average: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub coarse_step: usize,
    pub fine_step: usize,
    pub plateau_epsilon: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        Self {
            coarse_step: 10,
            fine_step: 1,
            plateau_epsilon: 0.5,
        }
    }
}

fn tuning_row(corpus: &[PreparedLetter], config: ChunkConfig) -> TuningRow {
    let (total_tokens, chunk_count) = corpus
        .par_iter()
        .map(|l| l.chunk_stats(&config))
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    TuningRow {
        max_lines: config.max_lines,
        average_tokens_per_chunk: if chunk_count == 0 {
            0.0
        } else {
            total_tokens as f64 / chunk_count as f64
        },
        chunk_count,
        total_tokens,
    }
}

/// Sweep `max_lines` to the point where average tokens per chunk stops
/// growing.
///
/// Coarse rows run at `coarse_step, 2·coarse_step, …` until the average
/// grows by less than `plateau_epsilon`, or until `max_lines` reaches the
/// largest sentence count of any letter (beyond which nothing changes).
/// The last coarse row defines the plateau. The fine sweep then fills the
/// gap below the first coarse row that is on the plateau, and the chosen
/// value is the smallest row within `plateau_epsilon` of the plateau.
pub fn tune_max_lines(
    corpus: &[AnnotatedLetter],
    base: &ChunkConfig,
    params: &TuningParams,
) -> Result<TuningReport> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("cannot tune max_lines on an empty corpus".into()));
    }
    if params.coarse_step == 0 || params.fine_step == 0 {
        return Err(Error::InvalidArgument("tuning steps must be positive".into()));
    }
    if !(params.plateau_epsilon > 0.0) {
        return Err(Error::InvalidArgument("plateau_epsilon must be positive".into()));
    }
    base.validate()?;
    let splitter = SentenceSplitter::default();
    let prepared: Vec<PreparedLetter> = corpus.par_iter().map(|l| PreparedLetter::new(l, &splitter)).collect();
    let saturation = prepared.iter().map(|p| p.sentences.len()).max().unwrap_or(0);
    let at = |max_lines: usize| tuning_row(&prepared, ChunkConfig { max_lines, ..*base });

    let mut coarse: Vec<TuningRow> = Vec::new();
    let mut ml = params.coarse_step;
    loop {
        let row = at(ml);
        let flat = coarse
            .last()
            .is_some_and(|prev| row.average_tokens_per_chunk - prev.average_tokens_per_chunk < params.plateau_epsilon);
        coarse.push(row);
        if flat || ml >= saturation {
            break;
        }
        ml += params.coarse_step;
    }

    let plateau = coarse.last().expect("at least one coarse row").average_tokens_per_chunk;
    let on_plateau = |r: &TuningRow| plateau - r.average_tokens_per_chunk < params.plateau_epsilon;
    let first = coarse.iter().position(on_plateau).expect("last row is on the plateau");

    let mut rows = coarse.clone();
    if first > 0 {
        let lo = coarse[first - 1].max_lines;
        let hi = coarse[first].max_lines;
        let mut m = lo + params.fine_step;
        while m < hi {
            rows.push(at(m));
            m += params.fine_step;
        }
    }
    rows.sort_by_key(|r| r.max_lines);
    rows.dedup_by_key(|r| r.max_lines);
    let chosen = rows
        .iter()
        .find(|r| on_plateau(r))
        .map(|r| r.max_lines)
        .unwrap_or(params.coarse_step);

    Ok(TuningReport {
        rows,
        chosen_max_lines: chosen,
        plateau_average: plateau,
    })
}

/// Chunk debug dump: one JSON object per chunk.
pub fn write_chunk_dump<W: std::io::Write>(mut out: W, chunks: &[Chunk]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        note_id: &'a str,
        chunk_index: usize,
        start: usize,
        end: usize,
        token_count: usize,
    }
    for c in chunks {
        serde_json::to_writer(
            &mut out,
            &Row {
                note_id: &c.note_id,
                chunk_index: c.chunk_index,
                start: c.start,
                end: c.end,
                token_count: c.token_count,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, LetterRecord};
    use crate::text::normalize_whitespace;

    fn texts(spans: &[SentenceSpan]) -> Vec<&str> {
        spans.iter().map(|s| s.text.as_str()).collect()
    }

    fn letter(id: &str, text: &str) -> AnnotatedLetter {
        AnnotatedLetter {
            letter: LetterRecord {
                note_id: id.into(),
                text: text.into(),
            },
            entities: vec![],
        }
    }

    #[test]
    fn two_plain_sentences() {
        assert_eq!(texts(&split_sentences("He fell. She called 911.")), vec!["He fell.", "She called 911."]);
    }

    #[test]
    fn header_line_is_own_sentence() {
        let got = split_sentences("Discharge Medication:\nJone is living in Leeds. He is well.");
        assert_eq!(texts(&got), vec!["Discharge Medication:", "Jone is living in Leeds.", "He is well."]);
    }

    #[test]
    fn abbreviation_guard() {
        let text = "Pt got 5 mg. Then slept.";
        assert_eq!(split_sentences(text).len(), 1);
        assert_eq!(SentenceSplitter::unguarded().split(text).len(), 2);
    }

    #[test]
    fn blank_line_and_enumerator() {
        let text = "Plan made\n\n1. Metformin 500 mg daily.\n2. Aspirin";
        assert_eq!(
            texts(&split_sentences(text)),
            vec!["Plan made", "1. Metformin 500 mg daily.", "2. Aspirin"]
        );
        assert!(split_sentences("").is_empty());
        assert!(split_sentences(" \n ").is_empty());
    }

    #[test]
    fn inline_header_keeps_content() {
        let text = "Admission Date: 08/03/2014\nPostal Code: LS1 4AP";
        assert_eq!(
            texts(&split_sentences(text)),
            vec!["Admission Date: 08/03/2014", "Postal Code: LS1 4AP"]
        );
    }

    fn sentences_from(counts: &[usize]) -> (String, Vec<SentenceSpan>) {
        let text = counts
            .iter()
            .map(|&n| format!("{}.", vec!["W"; n].join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        let s = SentenceSplitter::unguarded().split(&text);
        (text, s)
    }

    #[test]
    fn greedy_budget_arithmetic() {
        let text = "A. B. C. D. E.";
        let sentences = split_sentences(text);
        let cfg = ChunkConfig::new(2, 256).unwrap();
        let chunks = build_chunks(text, "n", &sentences, &cfg, &[], |s| s.len() - 1);
        let sizes: Vec<_> = chunks.iter().map(|c| c.sentences.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn token_budget_closes_chunk() {
        let (text, sentences) = sentences_from(&[5, 5, 5]);
        let cfg = ChunkConfig::new(10, 12).unwrap();
        let chunks = build_chunks(&text, "n", &sentences, &cfg, &[], word_count);
        let sizes: Vec<_> = chunks.iter().map(|c| c.token_count).collect();
        assert_eq!(sizes, vec![12, 6]);
    }

    #[test]
    fn oversize_pieces() {
        let sentence = vec!["x"; 513].join(" ");
        let sizes: Vec<_> = split_oversize(&sentence, 0, 256, &[]).iter().map(|p| p.token_count).collect();
        assert_eq!(sizes, vec![256, 256, 1]);
        let sentence = vec!["x"; 257].join(" ");
        let sizes: Vec<_> = split_oversize(&sentence, 0, 256, &[]).iter().map(|p| p.token_count).collect();
        assert_eq!(sizes, vec![256, 1]);
    }

    #[test]
    fn oversize_cut_avoids_entity_interior() {
        let sentence = vec!["x"; 20].join(" ");
        // Entity covering tokens 7..10, where the first cut at 8 would land.
        let entity = CharSpan::new(14, 19);
        let pieces = split_oversize(&sentence, 0, 8, &[entity]);
        assert_eq!(pieces[0].token_count, 7);
        assert!(pieces.iter().all(|p| !(p.start < entity.start && p.end > entity.start && p.end < entity.end)));
    }

    #[test]
    fn oversize_prefers_whitespace_gap() {
        let sentence = "a b c d e f g, h";
        let pieces = split_oversize(sentence, 0, 7, &[]);
        assert_eq!(pieces[0].token_count, 6);
    }

    #[test]
    fn forty_sentences_fit_one_chunk() {
        let text = (0..40).map(|i| format!("Item {i} ok.")).collect::<Vec<_>>().join(" ");
        let chunks = chunk_letter(&letter("n", &text), &ChunkConfig::new(41, 256).unwrap());
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, word_count(&text));
    }

    #[test]
    fn entity_across_boundary_merges_sentences() {
        let text = "Seen by Dr. X. Smith today. Fine.";
        let unguarded = SentenceSplitter::unguarded().split(text);
        assert!(unguarded.len() > 2);
        let e = CharSpan::new(12, 20);
        let merged = merge_across_entities(text, unguarded, &[e]);
        assert!(merged.iter().any(|s| s.start <= e.start && s.end >= e.end));
    }

    #[test]
    fn round_trip_and_order() {
        let text = "Name: A B\n\nHistory:\nHe fell. He was fine.\nPlan:\nRest.";
        let chunks = chunk_letter(&letter("n", text), &ChunkConfig::new(1, 8).unwrap());
        let joined = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(normalize_whitespace(&joined), normalize_whitespace(text));
        assert!(chunks.windows(2).all(|w| w[0].end <= w[1].start));
    }

    fn crafted(id: &str, sentences: usize) -> AnnotatedLetter {
        letter(id, &vec!["One two three."; sentences].join(" "))
    }

    #[test]
    fn tuning_on_crafted_corpus() {
        let corpus = vec![crafted("a", 25), crafted("b", 12)];
        let report = tune_max_lines(&corpus, &ChunkConfig::default(), &TuningParams::default()).unwrap();
        // 148 tokens; chunks at 10/20/30 lines: 5, 3, 2.
        let coarse: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.max_lines % 10 == 0)
            .map(|r| (r.max_lines, r.chunk_count))
            .collect();
        assert_eq!(coarse, vec![(10, 5), (20, 3), (30, 2)]);
        assert!((report.rows[0].average_tokens_per_chunk - 29.6).abs() < 1e-9);
        assert_eq!(report.chosen_max_lines, 25);
        assert!((report.plateau_average - 74.0).abs() < 1e-9);
        assert!(report.rows.windows(2).all(|w| w[0].max_lines < w[1].max_lines));
    }

    #[test]
    fn tuning_single_sentence_letters() {
        let corpus = vec![crafted("a", 1), crafted("b", 1)];
        let report = tune_max_lines(&corpus, &ChunkConfig::default(), &TuningParams::default()).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.chosen_max_lines, 10);
        assert!(tune_max_lines(&[], &ChunkConfig::default(), &TuningParams::default()).is_err());
    }

    #[test]
    fn entity_spans_survive_chunking() {
        let mut l = crafted("a", 30);
        l.entities.push(EntitySpan {
            note_id: "a".into(),
            start: 8,
            end: 18,
            concept_id: "c".into(),
        });
        let chunks = chunk_letter(&l, &ChunkConfig::new(1, 256).unwrap());
        assert!(chunks.iter().any(|c| c.start <= 8 && c.end >= 18));
    }

    #[test]
    fn config_validation() {
        assert!(ChunkConfig::new(0, 256).is_err());
        assert!(ChunkConfig::new(1, 7).is_err());
    }
}
