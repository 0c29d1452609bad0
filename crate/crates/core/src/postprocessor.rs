//! Placeholder filling and dictionary spelling correction.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::Serialize;

use crate::chunker::split_sentences;
use crate::featurizer::{tokenize_words, TokenRecord};
use crate::generator::classify_prediction;
use crate::modelgate::{FillMaskQuery, ModelGate, MASK_SENTINEL};
use crate::text::CharIndex;
use crate::{Error, Result};

const BUNDLED_SPELLING: &str = include_str!("../data/spelling_en.tsv");

/// How many candidates a blank may fall through before it is left alone.
pub const BLANK_TOP_K: usize = 5;

fn underscore_run() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"_{3,}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FillOutcome {
    pub text: String,
    pub filled: usize,
    pub left: usize,
}

/// Group sentences into pieces that fit the backend's input limit. Returns
/// char ranges covering the whole text.
fn fill_groups(text: &str, limit: usize) -> Vec<(usize, usize)> {
    let total = text.chars().count();
    let mut groups = Vec::new();
    let mut start = 0;
    let mut words = 0;
    for sentence in split_sentences(text) {
        let n = tokenize_words(&sentence.text, 0).len();
        if words > 0 && words + n > limit {
            groups.push((start, sentence.start));
            start = sentence.start;
            words = 0;
        }
        words += n;
    }
    groups.push((start, total));
    groups
}

fn fill_piece(piece: &str, gate: &ModelGate) -> Result<(String, usize, usize)> {
    let runs: Vec<_> = underscore_run().find_iter(piece).collect();
    if runs.is_empty() {
        return Ok((piece.to_string(), 0, 0));
    }
    let masked = underscore_run().replace_all(piece, MASK_SENTINEL);
    let result = gate.fill_mask(&FillMaskQuery::new(masked.as_ref(), BLANK_TOP_K))?;

    let mut out = String::with_capacity(piece.len());
    let mut last = 0;
    let (mut filled, mut left) = (0, 0);
    for (run, candidates) in runs.iter().zip(&result.masks) {
        out.push_str(&piece[last..run.start()]);
        let pick = candidates.iter().take(BLANK_TOP_K).find(|c| {
            classify_prediction(&c.token).is_valid() && !underscore_run().is_match(&c.token)
        });
        match pick {
            Some(c) => {
                out.push_str(c.token.trim());
                filled += 1;
            }
            None => {
                out.push_str(run.as_str());
                left += 1;
            }
        }
        last = run.end();
    }
    out.push_str(&piece[last..]);
    Ok((out, filled, left))
}

/// Replace every run of three or more underscores with the backend's best
/// valid single-word guess. One fill-mask call per piece of text that fits
/// the backend's input limit. Backend failures leave the text unchanged.
pub fn fill_blanks(text: &str, gate: &ModelGate) -> FillOutcome {
    let unchanged = |left| FillOutcome {
        text: text.to_string(),
        filled: 0,
        left,
    };
    let runs = underscore_run().find_iter(text).count();
    if runs == 0 {
        return unchanged(0);
    }
    let limit = match gate.capabilities() {
        Ok(c) => c.max_input_tokens.max(1),
        Err(e) => {
            log::warn!("blank filling skipped: {e}");
            return unchanged(runs);
        }
    };
    let index = CharIndex::new(text);
    let mut out = String::with_capacity(text.len());
    let (mut filled, mut left) = (0, 0);
    for (start, end) in fill_groups(text, limit) {
        let piece = &text[index.byte(start)..index.byte(end)];
        match fill_piece(piece, gate) {
            Ok((t, f, l)) => {
                out.push_str(&t);
                filled += f;
                left += l;
            }
            Err(e) => {
                log::warn!("blank filling skipped: {e}");
                return unchanged(runs);
            }
        }
    }
    FillOutcome {
        text: out,
        filled,
        left,
    }
}

/// Lowercased word frequency table.
#[derive(Debug, Clone)]
pub struct SpellDictionary {
    words: HashMap<String, u64>,
    max_edit_distance: usize,
}

impl SpellDictionary {
    pub const DEFAULT_MAX_EDIT_DISTANCE: usize = 2;

    /// The bundled English frequency list, shared and cloned on demand.
    pub fn bundled() -> SpellDictionary {
        static SHARED: OnceLock<Arc<SpellDictionary>> = OnceLock::new();
        SHARED
            .get_or_init(|| {
                Arc::new(Self::from_reader(BUNDLED_SPELLING.as_bytes()).expect("bundled dictionary parses"))
            })
            .as_ref()
            .clone()
    }

    /// `word<TAB>count` per line. Blank lines and `#` comments are skipped.
    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut words = HashMap::new();
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
            let (word, count) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected word<TAB>count".into()))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("bad count: {e}")))?;
            if count == 0 {
                return Err(parse_err(format!("count for `{word}` must be positive")));
            }
            *words.entry(word.trim().to_lowercase()).or_insert(0) += count;
        }
        if words.is_empty() {
            return Err(Error::Validation("spelling dictionary is empty".into()));
        }
        Ok(Self {
            words,
            max_edit_distance: Self::DEFAULT_MAX_EDIT_DISTANCE,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn with_max_edit_distance(mut self, d: usize) -> Self {
        self.max_edit_distance = d;
        self
    }

    pub fn max_edit_distance(&self) -> usize {
        self.max_edit_distance
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Add every word of each term, so clinical vocabulary from the corpus
    /// is not flagged. Known words keep their count.
    pub fn add_terms<'a>(&mut self, terms: impl IntoIterator<Item = &'a str>) {
        for term in terms {
            for token in tokenize_words(term, 0) {
                if token.text.chars().all(char::is_alphabetic) {
                    self.words.entry(token.text.to_lowercase()).or_insert(1);
                }
            }
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains_key(&word.to_lowercase())
    }

    /// Best in-dictionary replacement for `word`: smallest edit distance,
    /// then highest frequency, then alphabetical.
    pub fn suggest(&self, word: &str) -> Option<String> {
        let lower = word.to_lowercase();
        let len = lower.chars().count();
        let max = self.max_edit_distance;
        self.words
            .iter()
            .filter(|(w, _)| w.chars().count().abs_diff(len) <= max)
            .filter_map(|(w, &freq)| {
                let d = strsim::damerau_levenshtein(&lower, w);
                (d <= max).then_some((d, std::cmp::Reverse(freq), w))
            })
            .min()
            .map(|(_, _, w)| restore_case(word, w))
    }
}

fn restore_case(original: &str, replacement: &str) -> String {
    let letters: Vec<char> = original.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match original.chars().next() {
        Some(c) if c.is_uppercase() => {
            let mut chars = replacement.chars();
            chars
                .next()
                .map(|f| f.to_uppercase().chain(chars).collect())
                .unwrap_or_default()
        }
        _ => replacement.to_string(),
    }
}

fn is_protected(token: &TokenRecord) -> bool {
    let f = &token.flags;
    f.is_entity || f.is_structure || f.is_special || f.is_privacy || f.is_number
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Correction {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub from: String,
    pub to: String,
}

/// Corrected surface form for each token. Protected, non-alphabetic and
/// known tokens come back unchanged, as do unknown words with no candidate.
pub fn correct_spelling(tokens: &[TokenRecord], dictionary: &SpellDictionary) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let candidate = !is_protected(t)
                && t.text.chars().all(char::is_alphabetic)
                && !dictionary.contains(&t.text);
            if candidate {
                dictionary.suggest(&t.text).unwrap_or_else(|| t.text.clone())
            } else {
                t.text.clone()
            }
        })
        .collect()
}

/// Apply [`correct_spelling`] to `text`, whose tokens (with char offsets
/// relative to `text`) are `tokens`.
pub fn correct_text(text: &str, tokens: &[TokenRecord], dictionary: &SpellDictionary) -> (String, Vec<Correction>) {
    let fixed = correct_spelling(tokens, dictionary);
    let index = CharIndex::new(text);
    let mut out = String::with_capacity(text.len());
    let mut corrections = Vec::new();
    let mut last = 0;
    for (token, new) in tokens.iter().zip(fixed) {
        if new == token.text {
            continue;
        }
        out.push_str(&text[index.byte(last)..index.byte(token.start)]);
        out.push_str(&new);
        last = token.end;
        corrections.push(Correction {
            index: token.index,
            start: token.start,
            end: token.end,
            from: token.text.clone(),
            to: new,
        });
    }
    out.push_str(&text[index.byte(last)..]);
    (out, corrections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurizer::TokenFlags;
    use crate::modelgate::{
        AnnotationResult, Backend, BackendDescriptor, BackendKind, Candidate, Capabilities,
        EmbeddingResult, FillMaskResult, LabeledSpan, Layer, NerExample,
    };
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// Emits a fixed candidate list for every sentinel.
    struct Scripted {
        candidates: Vec<&'static str>,
        calls: AtomicUsize,
        fail: bool,
    }

    impl Scripted {
        fn new(candidates: Vec<&'static str>) -> Self {
            Self {
                candidates,
                calls: AtomicUsize::new(0),
                fail: false,
            }
        }
    }

    impl Backend for Scripted {
        fn descriptor(&self) -> BackendDescriptor {
            BackendDescriptor {
                kind: BackendKind::MockDictionary,
                model_name: "scripted".into(),
                max_input_tokens: 512,
                base_url: None,
            }
        }
        fn capabilities(&self) -> Result<Capabilities> {
            Ok(Capabilities {
                model_name: "scripted".into(),
                max_input_tokens: 512,
                embedding_dim: 2,
                layers: vec![],
                pll: false,
                ner_training: false,
            })
        }
        fn fill_mask(&self, q: &FillMaskQuery) -> Result<FillMaskResult> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail {
                return Err(Error::Transport {
                    detail: "connection refused".into(),
                    retries: 2,
                });
            }
            let list: Vec<Candidate> = self
                .candidates
                .iter()
                .enumerate()
                .map(|(i, t)| Candidate {
                    token: t.to_string(),
                    score: 1.0 / (i + 2) as f64,
                })
                .collect();
            Ok(FillMaskResult {
                masks: vec![list; q.sentinel_count()],
            })
        }
        fn embed(&self, _: &str) -> Result<EmbeddingResult> {
            unimplemented!()
        }
        fn pseudo_log_likelihood(&self, _: &str) -> Result<f64> {
            unimplemented!()
        }
        fn annotate(&self, _: &str, _: &[Layer]) -> Result<AnnotationResult> {
            unimplemented!()
        }
        fn ner_train(&self, _: &[NerExample], _: u64, _: u32) -> Result<String> {
            unimplemented!()
        }
        fn ner_predict(&self, _: &str, _: &[String]) -> Result<Vec<Vec<LabeledSpan>>> {
            unimplemented!()
        }
    }

    #[test]
    fn blank_gets_first_valid_candidate() {
        let gate = ModelGate::new(Scripted::new(vec!["middle-aged", "old"]));
        let out = fill_blanks("Patient is a ___ yo male", &gate);
        assert_eq!(out.text, "Patient is a middle-aged yo male");
        assert_eq!((out.filled, out.left), (1, 0));
    }

    #[test]
    fn invalid_candidates_fall_through_then_give_up() {
        let gate = ModelGate::new(Scripted::new(vec!["##ed", ".", "clinic"]));
        assert_eq!(fill_blanks("Seen at ____ today.", &gate).text, "Seen at clinic today.");

        let gate = ModelGate::new(Scripted::new(vec!["##a", "##b", ",", "[UNK]", "_____", "late"]));
        let out = fill_blanks("Seen at ____ today.", &gate);
        assert_eq!(out.text, "Seen at ____ today.");
        assert_eq!((out.filled, out.left), (0, 1));
    }

    #[test]
    fn every_run_replaced_short_runs_kept_one_call() {
        let backend = Arc::new(Scripted::new(vec!["hospital"]));
        let gate = ModelGate::from_arc(backend.clone());
        let out = fill_blanks("A ___ B __ C ________ D", &gate);
        assert_eq!(out.text, "A hospital B __ C hospital D");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
        let again = fill_blanks(&out.text, &gate);
        assert_eq!(again.text, out.text);
    }

    #[test]
    fn no_blanks_no_call_and_failures_leave_text() {
        let backend = Arc::new(Scripted::new(vec!["x"]));
        let gate = ModelGate::from_arc(backend.clone());
        assert_eq!(fill_blanks("nothing here", &gate).text, "nothing here");
        assert_eq!(backend.calls.load(Ordering::SeqCst), 0);

        let mut failing = Scripted::new(vec!["x"]);
        failing.fail = true;
        let gate = ModelGate::new(failing);
        let out = fill_blanks("Seen at ___ today.", &gate);
        assert_eq!(out.text, "Seen at ___ today.");
        assert_eq!(out.left, 1);
    }

    #[test]
    fn bundled_dictionary_fixes_transposition() {
        let dict = SpellDictionary::bundled();
        assert_eq!(dict.suggest("healhty").as_deref(), Some("healthy"));
        assert_eq!(dict.suggest("Healhty").as_deref(), Some("Healthy"));
    }

    #[test]
    fn ties_break_on_frequency() {
        let dict = SpellDictionary::from_reader("the\t100\ntea\t50\n".as_bytes()).unwrap();
        assert_eq!(dict.suggest("teh").as_deref(), Some("the"));
        assert_eq!(dict.suggest("zzzzzz"), None);
    }

    #[test]
    fn dictionary_file_errors() {
        assert!(SpellDictionary::from_reader("".as_bytes()).is_err());
        assert!(SpellDictionary::from_reader("a\t0\n".as_bytes()).is_err());
        assert!(SpellDictionary::from_reader("a 3\n".as_bytes()).is_err());
    }

    fn tokens_with(text: &str, flag: impl Fn(&mut TokenFlags, &str)) -> Vec<TokenRecord> {
        let mut tokens = tokenize_words(text, 0);
        for t in &mut tokens {
            let s = t.text.clone();
            flag(&mut t.flags, &s);
        }
        tokens
    }

    #[test]
    fn protected_tokens_survive() {
        let dict = SpellDictionary::bundled();
        let text = "Started on enoxaprin for DVT, patinet was healhty.";
        let tokens = tokens_with(text, |f, s| f.is_entity = s == "enoxaprin" || s == "DVT");
        let (fixed, corrections) = correct_text(text, &tokens, &dict);
        assert_eq!(fixed, "Started on enoxaprin for DVT, patient was healthy.");
        assert_eq!(corrections.len(), 2);
        assert_eq!(corrections[0].start, 30);
        assert_eq!(correct_spelling(&tokens, &dict).len(), tokens.len());
    }

    #[test]
    fn corpus_terms_become_known() {
        let mut dict = SpellDictionary::from_reader("the\t1\n".as_bytes()).unwrap();
        dict.add_terms(["Enoxaparin sodium", "DVT"]);
        assert!(dict.contains("enoxaparin") && dict.contains("dvt") && dict.contains("sodium"));
    }
}
