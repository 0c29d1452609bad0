//! Word tokenization and per-token feature flags.
//!
//! Feature spans are detected once per letter (structure headers, privacy
//! information, medical terms, dosage patterns) and then joined onto word
//! tokens by character overlap.

mod patterns;
mod tokenize;

use std::collections::HashSet;
use std::io::BufRead;
use std::sync::{LazyLock, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::modelgate::{AnnotationResult, Layer};
use crate::text::CharSpan;

pub use patterns::{
    detect_privacy, detect_special_patterns, detect_structure, PrivacyKind, PrivacyRules,
    PrivacySpan,
};
pub(crate) use patterns::STRUCTURE;
pub use tokenize::tokenize_words;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\d+([.,]\d+)?$").unwrap());

/// Coarse part-of-speech tags. `Unk` when no tagger was available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Propn,
    Verb,
    Aux,
    Adj,
    Adv,
    Adp,
    Det,
    Pron,
    Num,
    Punct,
    Other,
    #[default]
    Unk,
}

impl Pos {
    pub fn from_label(label: &str) -> Pos {
        match label.to_ascii_uppercase().as_str() {
            "NOUN" => Pos::Noun,
            "PROPN" => Pos::Propn,
            "VERB" => Pos::Verb,
            "AUX" => Pos::Aux,
            "ADJ" => Pos::Adj,
            "ADV" => Pos::Adv,
            "ADP" => Pos::Adp,
            "DET" => Pos::Det,
            "PRON" => Pos::Pron,
            "NUM" => Pos::Num,
            "PUNCT" => Pos::Punct,
            "UNK" | "" => Pos::Unk,
            _ => Pos::Other,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Pos::Noun => "NOUN",
            Pos::Propn => "PROPN",
            Pos::Verb => "VERB",
            Pos::Aux => "AUX",
            Pos::Adj => "ADJ",
            Pos::Adv => "ADV",
            Pos::Adp => "ADP",
            Pos::Det => "DET",
            Pos::Pron => "PRON",
            Pos::Num => "NUM",
            Pos::Punct => "PUNCT",
            Pos::Other => "OTHER",
            Pos::Unk => "UNK",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenFlags {
    pub is_structure: bool,
    pub is_entity: bool,
    pub is_privacy: bool,
    pub is_special: bool,
    pub is_stopword: bool,
    pub is_punct: bool,
    pub is_number: bool,
    pub is_phi_placeholder: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    /// Position within the chunk (or whatever sequence was tokenized).
    pub index: usize,
    pub text: String,
    pub start: usize,
    pub end: usize,
    pub flags: TokenFlags,
    pub pos: Pos,
}

impl TokenRecord {
    pub(crate) fn new(text: String, span: CharSpan) -> Self {
        Self {
            index: 0,
            text,
            start: span.start,
            end: span.end,
            flags: TokenFlags::default(),
            pos: Pos::Unk,
        }
    }

    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

/// Spans for each rule/model feature layer over one letter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpanSet {
    pub structure: Vec<CharSpan>,
    pub privacy: Vec<PrivacySpan>,
    pub medterm: Vec<CharSpan>,
    pub special: Vec<CharSpan>,
}

/// A part-of-speech label over a character span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosSpan {
    pub span: CharSpan,
    pub tag: Pos,
}

const BUNDLED_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Case-insensitive stopword membership.
#[derive(Debug, Clone)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    /// The shipped 179-word English list.
    pub fn bundled() -> &'static StopwordSet {
        static SET: OnceLock<StopwordSet> = OnceLock::new();
        SET.get_or_init(|| {
            StopwordSet::from_reader(BUNDLED_STOPWORDS.as_bytes()).expect("bundled stopwords")
        })
    }

    /// One word per line; blank lines ignored.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut words = HashSet::new();
        for line in reader.lines() {
            let line = line?;
            let w = line.trim();
            if !w.is_empty() {
                words.insert(w.to_lowercase());
            }
        }
        Ok(Self { words })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn is_punct_token(text: &str) -> bool {
    !text.is_empty() && text.chars().all(|c| c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control() && c != '_' && c.len_utf8() > 1 && is_unicode_punct(c)))
}

fn is_unicode_punct(c: char) -> bool {
    matches!(c, '–' | '—' | '‘' | '’' | '“' | '”' | '…' | '·' | '•')
}

fn is_phi_placeholder(text: &str) -> bool {
    text.chars().count() >= 3 && text.chars().all(|c| c == '_')
}

/// Set every flag from span overlap and attach POS tags.
///
/// `entity_spans` are the annotated entities; medical-term spans from
/// `features` also set `is_entity`. POS tags join by overlap; a token
/// overlapping no tag span keeps `Unk`.
pub fn label_tokens(
    mut tokens: Vec<TokenRecord>,
    entity_spans: &[CharSpan],
    features: &FeatureSpanSet,
    pos_tags: &[PosSpan],
    stopwords: &StopwordSet,
) -> Vec<TokenRecord> {
    let hits = |span: CharSpan, spans: &[CharSpan]| spans.iter().any(|s| s.overlaps(&span));
    for (i, tok) in tokens.iter_mut().enumerate() {
        let span = tok.span();
        tok.index = i;
        let mut flags = TokenFlags {
            is_structure: hits(span, &features.structure),
            is_entity: hits(span, entity_spans) || hits(span, &features.medterm),
            is_privacy: false,
            is_special: hits(span, &features.special),
            is_stopword: stopwords.contains(&tok.text),
            is_punct: is_punct_token(&tok.text),
            is_number: NUMBER.is_match(&tok.text),
            is_phi_placeholder: is_phi_placeholder(&tok.text),
        };
        // A privacy span only claims tokens nothing else protects, so the
        // comma in "12 March, 2010" stays punctuation and an annotated
        // entity is never forced into the mask.
        flags.is_privacy = features.privacy.iter().any(|p| p.span.overlaps(&span))
            && !(flags.is_entity
                || flags.is_structure
                || flags.is_special
                || flags.is_punct
                || flags.is_phi_placeholder);
        tok.flags = flags;
        tok.pos = pos_tags
            .iter()
            .find(|p| p.span.overlaps(&span))
            .map(|p| p.tag)
            .unwrap_or(Pos::Unk);
    }
    tokens
}

/// Letter-level feature extraction configuration.
#[derive(Debug, Clone)]
pub struct Featurizer {
    pub privacy_rules: PrivacyRules,
    pub stopwords: StopwordSet,
}

impl Default for Featurizer {
    fn default() -> Self {
        Self {
            privacy_rules: PrivacyRules::default(),
            stopwords: StopwordSet::bundled().clone(),
        }
    }
}

/// Everything the featurizer knows about one letter, before tokenization.
#[derive(Debug, Clone, Default)]
pub struct LetterFeatures {
    pub spans: FeatureSpanSet,
    pub pos: Vec<PosSpan>,
    pub entities: Vec<CharSpan>,
}

impl Featurizer {
    /// Detect all feature spans over a letter. `annotations` come from the
    /// backend's `pos`/`ner`/`medterm` layers and may be absent.
    pub fn letter_features(
        &self,
        text: &str,
        entities: &[CharSpan],
        annotations: Option<&AnnotationResult>,
    ) -> LetterFeatures {
        let mut ner = Vec::new();
        let mut medterm = Vec::new();
        let mut pos = Vec::new();
        if let Some(ann) = annotations {
            for s in &ann.spans {
                let span = CharSpan::new(s.start, s.end);
                match s.layer {
                    Layer::Ner => {
                        if let Some(kind) = PrivacyKind::from_ner_label(&s.label) {
                            ner.push(PrivacySpan { span, kind });
                        }
                    }
                    Layer::Medterm => medterm.push(span),
                    Layer::Pos => pos.push(PosSpan {
                        span,
                        tag: Pos::from_label(&s.label),
                    }),
                }
            }
        }
        LetterFeatures {
            spans: FeatureSpanSet {
                structure: detect_structure(text),
                privacy: detect_privacy(text, &self.privacy_rules, &ner),
                medterm,
                special: detect_special_patterns(text),
            },
            pos,
            entities: entities.to_vec(),
        }
    }

    /// Tokenize `segment` (which starts at character `base_offset` of the
    /// letter) and label every token.
    pub fn featurize(
        &self,
        segment: &str,
        base_offset: usize,
        features: &LetterFeatures,
    ) -> Vec<TokenRecord> {
        label_tokens(
            tokenize_words(segment, base_offset),
            &features.entities,
            &features.spans,
            &features.pos,
            &self.stopwords,
        )
    }
}

/// One JSON object per token, for auditing feature assignment.
pub fn write_feature_dump<W: std::io::Write>(
    mut out: W,
    note_id: &str,
    chunk_index: usize,
    tokens: &[TokenRecord],
) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        note_id: &'a str,
        chunk_index: usize,
        #[serde(flatten)]
        token: &'a TokenRecord,
    }
    for token in tokens {
        serde_json::to_writer(
            &mut out,
            &Row {
                note_id,
                chunk_index,
                token,
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labeled(text: &str, entities: &[CharSpan]) -> Vec<TokenRecord> {
        let fz = Featurizer::default();
        let features = fz.letter_features(text, entities, None);
        fz.featurize(text, 0, &features)
    }

    fn find<'a>(tokens: &'a [TokenRecord], text: &str) -> &'a TokenRecord {
        tokens.iter().find(|t| t.text == text).unwrap()
    }

    #[test]
    fn bundled_stopwords_have_179_entries() {
        assert_eq!(StopwordSet::bundled().len(), 179);
        assert!(StopwordSet::bundled().contains("The"));
    }

    #[test]
    fn entity_overlap_sets_flag() {
        let text = "presenting w/ fall from 6 feet";
        let start = text.find("fall").unwrap();
        let toks = labeled(text, &[CharSpan::new(start, start + 4)]);
        assert!(find(&toks, "fall").flags.is_entity);
        assert!(!find(&toks, "from").flags.is_entity);
    }

    #[test]
    fn stopword_and_number_flags() {
        let toks = labeled("the fall from 6 feet", &[]);
        assert!(find(&toks, "the").flags.is_stopword);
        assert!(find(&toks, "6").flags.is_number);
        assert!(!find(&toks, "feet").flags.is_number);
    }

    #[test]
    fn dosage_tokens_are_special() {
        let toks = labeled("enoxaparin 40 mg/0.4 mL daily", &[]);
        let forty = find(&toks, "40");
        assert!(forty.flags.is_special && forty.flags.is_number);
        assert!(find(&toks, "mL").flags.is_special);
        assert!(!find(&toks, "daily").flags.is_special);
    }

    #[test]
    fn structure_privacy_placeholder_punct() {
        let toks = labeled("Postal Code: M16 3JE\nPatient is a ___ yo.", &[]);
        assert!(find(&toks, "Postal").flags.is_structure);
        assert!(find(&toks, ":").flags.is_structure && find(&toks, ":").flags.is_punct);
        assert!(find(&toks, "M16").flags.is_privacy);
        assert!(find(&toks, "3JE").flags.is_privacy);
        assert!(find(&toks, "___").flags.is_phi_placeholder);
        assert!(find(&toks, ".").flags.is_punct);
        assert!(!find(&toks, "Patient").flags.is_punct);
    }

    #[test]
    fn pos_joins_by_overlap_and_tolerates_misalignment() {
        let text = "Jone is living";
        let fz = Featurizer::default();
        let mut features = fz.letter_features(text, &[], None);
        features.pos = vec![
            PosSpan { span: CharSpan::new(0, 4), tag: Pos::Propn },
            PosSpan { span: CharSpan::new(5, 7), tag: Pos::Aux },
        ];
        let toks = fz.featurize(text, 0, &features);
        let tags: Vec<_> = toks.iter().map(|t| t.pos).collect();
        assert_eq!(tags, vec![Pos::Propn, Pos::Aux, Pos::Unk]);
    }

    #[test]
    fn moving_a_feature_span_moves_only_overlapping_flags() {
        let text = "aa bb cc dd ee";
        let tokens = tokenize_words(text, 0);
        let base = FeatureSpanSet {
            special: vec![CharSpan::new(3, 5)],
            ..Default::default()
        };
        let moved = FeatureSpanSet {
            special: vec![CharSpan::new(6, 8)],
            ..Default::default()
        };
        let sw = StopwordSet::bundled();
        let a = label_tokens(tokens.clone(), &[], &base, &[], sw);
        let b = label_tokens(tokens, &[], &moved, &[], sw);
        let flagged = |ts: &[TokenRecord]| {
            ts.iter()
                .filter(|t| t.flags.is_special)
                .map(|t| t.text.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(flagged(&a), vec!["bb"]);
        assert_eq!(flagged(&b), vec!["cc"]);
    }

    #[test]
    fn privacy_yields_to_other_protection() {
        let text = "Seen on 12 March, 2010 for asthma 06/03/2010";
        let entity = CharSpan::new(34, 44);
        let toks = labeled(text, &[entity]);
        assert!(find(&toks, "12").flags.is_privacy);
        assert!(find(&toks, "March").flags.is_privacy);
        let comma = find(&toks, ",");
        assert!(comma.flags.is_punct && !comma.flags.is_privacy);
        let date = find(&toks, "06/03/2010");
        assert!(date.flags.is_entity && !date.flags.is_privacy);
    }
}
