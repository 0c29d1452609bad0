//! Letters and span annotations: CSV loading and the `note_id` join.

use std::collections::{HashMap, HashSet};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{CharIndex, CharSpan};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LetterRecord {
    pub note_id: String,
    pub text: String,
}

/// One annotated concept mention. Offsets are character offsets into the
/// letter text, `start` inclusive and `end` exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub note_id: String,
    pub start: usize,
    pub end: usize,
    pub concept_id: String,
}

impl EntitySpan {
    pub fn span(&self) -> CharSpan {
        CharSpan::new(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedLetter {
    pub letter: LetterRecord,
    /// Sorted by `start`; ties keep file order.
    pub entities: Vec<EntitySpan>,
}

impl AnnotatedLetter {
    pub fn note_id(&self) -> &str {
        &self.letter.note_id
    }

    pub fn text(&self) -> &str {
        &self.letter.text
    }

    pub fn entity_spans(&self) -> Vec<CharSpan> {
        self.entities.iter().map(EntitySpan::span).collect()
    }

    /// Surface strings of all entities, in entity order.
    pub fn surfaces(&self) -> Vec<&str> {
        let idx = CharIndex::new(&self.letter.text);
        self.entities
            .iter()
            .map(|e| idx.slice(&self.letter.text, e.span()))
            .collect()
    }
}

/// An annotation whose `note_id` matched no letter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrphanAnnotation {
    pub annotation: EntitySpan,
}

/// An annotation that failed the bounds check against its letter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanViolation {
    pub annotation: EntitySpan,
    pub letter_len: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub letters: Vec<AnnotatedLetter>,
    pub orphans: Vec<OrphanAnnotation>,
    pub rejected: Vec<SpanViolation>,
}

impl MergeOutcome {
    pub fn accepted_count(&self) -> usize {
        self.letters.iter().map(|l| l.entities.len()).sum()
    }

    /// Fails on any bounds violation; orphans are logged and dropped.
    pub fn into_validated(self) -> Result<Vec<AnnotatedLetter>> {
        for orphan in &self.orphans {
            log::warn!(
                "annotation for unknown note_id `{}` ({}..{}) ignored",
                orphan.annotation.note_id,
                orphan.annotation.start,
                orphan.annotation.end
            );
        }
        if self.rejected.is_empty() {
            return Ok(self.letters);
        }
        let listing = self
            .rejected
            .iter()
            .map(|v| {
                format!(
                    "{} [{}, {}) {} (letter length {})",
                    v.annotation.note_id, v.annotation.start, v.annotation.end, v.reason, v.letter_len
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::Validation(format!(
            "{} annotation(s) out of bounds: {listing}",
            self.rejected.len()
        )))
    }
}

fn require_columns(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim() == *col)
                .ok_or_else(|| Error::Schema(format!("missing column `{col}`")))
        })
        .collect()
}

fn row_number(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Read `note_id,text` rows. Text is kept exactly as stored, newlines
/// included.
pub fn load_letters<R: Read>(source: R) -> Result<Vec<LetterRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let cols = require_columns(reader.headers()?, &["note_id", "text"])?;
    let mut seen = HashSet::new();
    let mut letters = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = row_number(&record);
        let note_id = record.get(cols[0]).unwrap_or_default().to_string();
        let text = record.get(cols[1]).unwrap_or_default().to_string();
        if note_id.is_empty() {
            return Err(Error::Parse {
                row,
                detail: "empty note_id".into(),
            });
        }
        if text.is_empty() {
            return Err(Error::Parse {
                row,
                detail: format!("empty text for note_id `{note_id}`"),
            });
        }
        if !seen.insert(note_id.clone()) {
            return Err(Error::DuplicateKey(note_id));
        }
        letters.push(LetterRecord { note_id, text });
    }
    Ok(letters)
}

/// Read `note_id,start,end,concept_id` rows in file order.
pub fn load_annotations<R: Read>(source: R) -> Result<Vec<EntitySpan>> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(source);
    let cols = require_columns(reader.headers()?, &["note_id", "start", "end", "concept_id"])?;
    let mut spans = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = row_number(&record);
        let field = |i: usize| record.get(cols[i]).unwrap_or_default().trim();
        let offset = |i: usize, name: &str| {
            field(i).parse::<usize>().map_err(|_| Error::Parse {
                row,
                detail: format!("`{name}` is not a non-negative integer: `{}`", field(i)),
            })
        };
        spans.push(EntitySpan {
            note_id: field(0).to_string(),
            start: offset(1, "start")?,
            end: offset(2, "end")?,
            concept_id: field(3).to_string(),
        });
    }
    Ok(spans)
}

/// Join annotations onto letters and bounds-check every span.
///
/// Each input annotation ends up in exactly one of: a letter's entity list,
/// `orphans`, or `rejected`.
pub fn merge_and_validate(
    letters: Vec<LetterRecord>,
    annotations: Vec<EntitySpan>,
) -> MergeOutcome {
    let lengths: HashMap<&str, usize> = letters
        .iter()
        .map(|l| (l.note_id.as_str(), l.text.chars().count()))
        .collect();
    let mut by_note: HashMap<String, Vec<EntitySpan>> = HashMap::new();
    let mut orphans = Vec::new();
    let mut rejected = Vec::new();

    for ann in annotations {
        let Some(&len) = lengths.get(ann.note_id.as_str()) else {
            orphans.push(OrphanAnnotation { annotation: ann });
            continue;
        };
        let reason = if ann.start >= ann.end {
            Some("empty or inverted span")
        } else if ann.end > len {
            Some("end beyond letter")
        } else {
            None
        };
        match reason {
            Some(reason) => rejected.push(SpanViolation {
                annotation: ann,
                letter_len: len,
                reason: reason.to_string(),
            }),
            None => by_note.entry(ann.note_id.clone()).or_default().push(ann),
        }
    }

    let letters = letters
        .into_iter()
        .map(|letter| {
            let mut entities = by_note.remove(&letter.note_id).unwrap_or_default();
            entities.sort_by_key(|e| e.start);
            AnnotatedLetter { letter, entities }
        })
        .collect();

    MergeOutcome {
        letters,
        orphans,
        rejected,
    }
}
