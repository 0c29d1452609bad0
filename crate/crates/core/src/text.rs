//! Character-offset helpers.
//!
//! Every offset in this crate counts Unicode scalar values, not bytes. The
//! regex engine and `str` slicing work in bytes, so conversions go through
//! [`CharIndex`].

use serde::{Deserialize, Serialize};

/// Half-open `[start, end)` range of character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start {start} after end {end}");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.start <= offset && offset < self.end
    }

    pub fn shifted(&self, by: usize) -> CharSpan {
        CharSpan::new(self.start + by, self.end + by)
    }
}

/// Byte position of every character in a string, for O(1) char→byte and
/// O(log n) byte→char conversion.
#[derive(Debug, Clone)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        Self { bytes }
    }

    pub fn char_len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn byte(&self, char_offset: usize) -> usize {
        self.bytes[char_offset]
    }

    /// Character offset of a byte position that lies on a char boundary.
    pub fn char_of_byte(&self, byte_offset: usize) -> usize {
        match self.bytes.binary_search(&byte_offset) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn span_of_bytes(&self, start: usize, end: usize) -> CharSpan {
        CharSpan::new(self.char_of_byte(start), self.char_of_byte(end))
    }

    pub fn slice<'a>(&self, text: &'a str, span: CharSpan) -> &'a str {
        &text[self.byte(span.start)..self.byte(span.end)]
    }
}

/// Slice `text` by character offsets. Allocates an index; prefer
/// [`CharIndex::slice`] in loops.
pub fn char_slice(text: &str, span: CharSpan) -> &str {
    CharIndex::new(text).slice(text, span)
}

/// Merge overlapping spans into their union, sorted by start.
pub fn merge_overlapping(mut spans: Vec<CharSpan>) -> Vec<CharSpan> {
    spans.sort();
    let mut out: Vec<CharSpan> = Vec::with_capacity(spans.len());
    for s in spans {
        match out.last_mut() {
            Some(last) if s.start < last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

/// Collapse every run of whitespace to a single space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_and_byte_offsets_agree_on_non_ascii() {
        let text = "37.8°C on day 2";
        let idx = CharIndex::new(text);
        assert_eq!(idx.char_len(), 15);
        let span = CharSpan::new(4, 6);
        assert_eq!(idx.slice(text, span), "°C");
        let b = text.find("on").unwrap();
        assert_eq!(idx.char_of_byte(b), 7);
    }

    #[test]
    fn merge_joins_overlaps_but_not_touching() {
        let merged = merge_overlapping(vec![
            CharSpan::new(5, 8),
            CharSpan::new(0, 3),
            CharSpan::new(2, 4),
            CharSpan::new(8, 9),
        ]);
        assert_eq!(
            merged,
            vec![CharSpan::new(0, 4), CharSpan::new(5, 8), CharSpan::new(8, 9)]
        );
    }
}
