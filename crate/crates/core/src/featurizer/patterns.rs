//! Rule-based detectors: document structure headers, privacy formats, and
//! dosage/notation patterns.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{merge_overlapping, CharIndex, CharSpan};

/// Header at the start of a line: capitalised words followed by a colon.
/// Capped at 60 characters so a colon in prose cannot swallow a paragraph.
pub(crate) static STRUCTURE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^[ \t]*([A-Z][A-Za-z0-9 ()/\-]{0,60}:)").unwrap());

static SPECIAL: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"\d+(?:\.\d+)?";
    let unit = r"(?:mg|ml|mcg|g|units)";
    Regex::new(&format!(
        r"(?i)[<>^]\s?{num}\s?{unit}\b|\b{num}\s?{unit}\b(?:\s?/\s?{num}\s?{unit}\b)?|(?:#\*?|\*)\d+|\b(?:b\.i\.d|t\.i\.d|q\.d|p\.r\.n)\."
    ))
    .unwrap()
});

const MONTHS: &str = r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PrivacyKind {
    Person,
    Date,
    Loc,
    Phone,
    Postcode,
    Email,
}

impl PrivacyKind {
    /// Map a model NER label onto a privacy kind. Labels outside the
    /// person/date/location family are not privacy information.
    pub fn from_ner_label(label: &str) -> Option<Self> {
        match label.to_ascii_uppercase().as_str() {
            "PERSON" | "PER" | "NAME" => Some(Self::Person),
            "DATE" | "TIME" => Some(Self::Date),
            "LOC" | "GPE" | "LOCATION" => Some(Self::Loc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivacySpan {
    pub span: CharSpan,
    pub kind: PrivacyKind,
}

/// Regular expressions for privacy formats a model NER pass does not cover.
#[derive(Debug, Clone)]
pub struct PrivacyRules {
    rules: Vec<(PrivacyKind, Regex)>,
}

impl Default for PrivacyRules {
    fn default() -> Self {
        let table: Vec<(PrivacyKind, String)> = vec![
            (
                PrivacyKind::Phone,
                r"\+\d{1,3}[\s.-]?(?:\(\d{1,4}\)|\d{1,4})(?:[\s.-]?\d{2,4}){2,4}\b".into(),
            ),
            (
                PrivacyKind::Phone,
                r"(?:\(\d{3}\)\s?|\b\d{3}[\s.-])\d{3}[\s.-]\d{4}\b".into(),
            ),
            (PrivacyKind::Phone, r"\b0\d{2,4}[\s-]?\d{3,4}[\s-]?\d{3,4}\b".into()),
            (PrivacyKind::Postcode, r"\b[A-Z]{1,2}\d[A-Z\d]? ?\d[A-Z]{2}\b".into()),
            (PrivacyKind::Email, r"\S+@\S+\.\S+".into()),
            (PrivacyKind::Date, r"\b\d{1,2}[/-]\d{1,2}[/-]\d{2,4}\b".into()),
            (
                PrivacyKind::Date,
                format!(r"\b\d{{1,2}}(?:st|nd|rd|th)?\s+{MONTHS}\.?,?\s+\d{{4}}\b"),
            ),
            (
                PrivacyKind::Date,
                format!(r"\b{MONTHS}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b"),
            ),
        ];
        Self {
            rules: table
                .into_iter()
                .map(|(k, p)| (k, Regex::new(&p).expect("built-in privacy pattern")))
                .collect(),
        }
    }
}

impl PrivacyRules {
    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn with_pattern(mut self, kind: PrivacyKind, pattern: &str) -> Result<Self> {
        let re = Regex::new(pattern)
            .map_err(|e| Error::InvalidArgument(format!("privacy pattern `{pattern}`: {e}")))?;
        self.rules.push((kind, re));
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn find(&self, text: &str, idx: &CharIndex) -> Vec<PrivacySpan> {
        let mut hits = Vec::new();
        for (kind, re) in &self.rules {
            for m in re.find_iter(text) {
                hits.push(PrivacySpan {
                    span: idx.span_of_bytes(m.start(), m.end()),
                    kind: *kind,
                });
            }
        }
        hits
    }
}

fn regex_spans(re: &Regex, text: &str, idx: &CharIndex) -> Vec<CharSpan> {
    re.find_iter(text)
        .map(|m| idx.span_of_bytes(m.start(), m.end()))
        .collect()
}

/// Header spans, each covering the header words and the trailing colon.
pub fn detect_structure(text: &str) -> Vec<CharSpan> {
    let idx = CharIndex::new(text);
    STRUCTURE
        .captures_iter(text)
        .filter_map(|c| c.get(1))
        .map(|m| idx.span_of_bytes(m.start(), m.end()))
        .collect()
}

/// Dosage, comparator, count-marker and schedule spans, merged.
pub fn detect_special_patterns(text: &str) -> Vec<CharSpan> {
    let idx = CharIndex::new(text);
    merge_overlapping(regex_spans(&SPECIAL, text, &idx))
}

/// Union of rule hits and model NER spans, with overlapping hits merged.
///
/// A merged span keeps the kind of its earliest (then longest) contributor.
pub fn detect_privacy(
    text: &str,
    rules: &PrivacyRules,
    ner_spans: &[PrivacySpan],
) -> Vec<PrivacySpan> {
    let idx = CharIndex::new(text);
    let mut hits = rules.find(text, &idx);
    hits.extend(ner_spans.iter().copied());
    hits.sort_by(|a, b| {
        a.span
            .start
            .cmp(&b.span.start)
            .then(b.span.end.cmp(&a.span.end))
    });
    let mut out: Vec<PrivacySpan> = Vec::with_capacity(hits.len());
    for h in hits {
        match out.last_mut() {
            Some(last) if h.span.start < last.span.end => {
                last.span.end = last.span.end.max(h.span.end);
            }
            _ => out.push(h),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::char_slice;

    fn surfaces(text: &str, spans: &[CharSpan]) -> Vec<String> {
        spans.iter().map(|s| char_slice(text, *s).to_string()).collect()
    }

    #[test]
    fn structure_header_spans_whole_header() {
        let spans = detect_structure("Discharge Medication:\nJone is living in Leeds.");
        assert_eq!(spans, vec![CharSpan::new(0, 21)]);
    }

    #[test]
    fn structure_requires_capital_at_line_start() {
        assert!(detect_structure("he said: hello").is_empty());
    }

    #[test]
    fn structure_stops_at_colon() {
        let text = "Past Medical History:\nHTN";
        let spans = detect_structure(text);
        assert_eq!(surfaces(text, &spans), vec!["Past Medical History:"]);
    }

    #[test]
    fn structure_header_length_is_capped() {
        let long = format!("A{}: x", "b".repeat(70));
        assert!(detect_structure(&long).is_empty());
    }

    #[test]
    fn special_dosage_with_ratio() {
        let text = "enoxaparin 40 mg/0.4 mL SC daily";
        assert_eq!(surfaces(text, &detect_special_patterns(text)), vec!["40 mg/0.4 mL"]);
    }

    #[test]
    fn special_comparator_and_markers() {
        let text = "Ibuprofen > 200 mg PO b.i.d. Disp #*14 Refills:*0 Vitamin C ^ 1000 mg";
        assert_eq!(
            surfaces(text, &detect_special_patterns(text)),
            vec!["> 200 mg", "b.i.d.", "#*14", "*0", "^ 1000 mg"]
        );
    }

    #[test]
    fn special_none_in_plain_prose() {
        assert!(detect_special_patterns("take two tablets").is_empty());
    }

    #[test]
    fn privacy_postcode_and_date() {
        let text = "Postal Code: M16 3JE seen 06/03/2010";
        let hits = detect_privacy(text, &PrivacyRules::default(), &[]);
        let got: Vec<_> = hits
            .iter()
            .map(|h| (char_slice(text, h.span).to_string(), h.kind))
            .collect();
        assert_eq!(
            got,
            vec![
                ("M16 3JE".to_string(), PrivacyKind::Postcode),
                ("06/03/2010".to_string(), PrivacyKind::Date)
            ]
        );
    }

    #[test]
    fn privacy_phone_email_month_date() {
        let text = "Call 0161 496 3115 or +44 20 7946 0958, mail a.b@example.org on 3 March 2021.";
        let hits = detect_privacy(text, &PrivacyRules::default(), &[]);
        let kinds: Vec<_> = hits.iter().map(|h| h.kind).collect();
        assert_eq!(
            kinds,
            vec![
                PrivacyKind::Phone,
                PrivacyKind::Phone,
                PrivacyKind::Email,
                PrivacyKind::Date
            ]
        );
    }

    #[test]
    fn privacy_none_in_plain_text() {
        assert!(detect_privacy("no contact info here", &PrivacyRules::default(), &[]).is_empty());
    }

    #[test]
    fn privacy_merges_model_and_rule_overlaps() {
        let text = "Jone Smith on 06/03/2010";
        let ner = [
            PrivacySpan {
                span: CharSpan::new(0, 4),
                kind: PrivacyKind::Person,
            },
            PrivacySpan {
                span: CharSpan::new(2, 10),
                kind: PrivacyKind::Person,
            },
            PrivacySpan {
                span: CharSpan::new(14, 19),
                kind: PrivacyKind::Date,
            },
        ];
        let hits = detect_privacy(text, &PrivacyRules::default(), &ner);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].span, CharSpan::new(0, 10));
        assert_eq!(hits[1].span, CharSpan::new(14, 24));
    }

    #[test]
    fn custom_rule_extends_inventory() {
        let rules = PrivacyRules::empty()
            .with_pattern(PrivacyKind::Loc, r"\bWard \d+\b")
            .unwrap();
        let hits = detect_privacy("moved to Ward 7 today", &rules, &[]);
        assert_eq!(hits[0].span, CharSpan::new(9, 15));
        assert!(PrivacyRules::empty().with_pattern(PrivacyKind::Loc, "(").is_err());
    }
}
