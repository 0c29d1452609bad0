use serde::{Deserialize, Serialize};

use crate::chunker::split_sentences;
use crate::featurizer::tokenize_words;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityScores {
    pub smog: Option<f64>,
    pub flesch_reading_ease: Option<f64>,
    pub flesch_kincaid_grade: Option<f64>,
}

/// Vowel-group syllable estimate. A trailing silent `e` is dropped unless
/// the word ends in consonant + `le`. Never less than one.
pub fn syllables(word: &str) -> usize {
    let w: Vec<char> = word
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphabetic())
        .collect();
    let vowel = |c: char| "aeiouy".contains(c);
    let mut groups = 0;
    let mut in_group = false;
    for &c in &w {
        let v = vowel(c);
        if v && !in_group {
            groups += 1;
        }
        in_group = v;
    }
    let n = w.len();
    if groups > 1 && n >= 2 && w[n - 1] == 'e' && !vowel(w[n - 2]) {
        let consonant_le = n >= 3 && w[n - 2] == 'l' && !vowel(w[n - 3]);
        if !consonant_le {
            groups -= 1;
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextCounts {
    pub sentences: usize,
    pub words: usize,
    pub syllables: usize,
    pub polysyllables: usize,
}

/// Words are tokens containing at least one alphanumeric character.
pub fn text_counts(text: &str) -> TextCounts {
    let sentences = split_sentences(text)
        .iter()
        .filter(|s| s.text.chars().any(char::is_alphanumeric))
        .count();
    let mut counts = TextCounts {
        sentences,
        words: 0,
        syllables: 0,
        polysyllables: 0,
    };
    for token in tokenize_words(text, 0) {
        if !token.text.chars().any(char::is_alphanumeric) {
            continue;
        }
        let s = syllables(&token.text);
        counts.words += 1;
        counts.syllables += s;
        if s >= 3 {
            counts.polysyllables += 1;
        }
    }
    counts
}

pub fn readability(text: &str) -> ReadabilityScores {
    let c = text_counts(text);
    if c.sentences == 0 || c.words == 0 {
        return ReadabilityScores::default();
    }
    let (s, w, y) = (c.sentences as f64, c.words as f64, c.syllables as f64);
    ReadabilityScores {
        smog: Some(1.0430 * (c.polysyllables as f64 * 30.0 / s).sqrt() + 3.1291),
        flesch_reading_ease: Some(206.835 - 1.015 * (w / s) - 84.6 * (y / w)),
        flesch_kincaid_grade: Some(0.39 * (w / s) + 11.8 * (y / w) - 15.59),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn syllable_rules() {
        for (w, n) in [
            ("cat", 1),
            ("the", 1),
            ("make", 1),
            ("table", 2),
            ("little", 2),
            ("eye", 1),
            ("hypertension", 4),
            ("queue", 1),
            ("37", 1),
            ("beautiful", 3),
        ] {
            assert_eq!(syllables(w), n, "{w}");
        }
    }

    #[test]
    fn one_short_sentence() {
        let r = readability("The cat sat on the mat.");
        close(r.flesch_reading_ease.unwrap(), 116.145);
        close(r.flesch_kincaid_grade.unwrap(), 0.39 * 6.0 + 11.8 - 15.59);
        close(r.smog.unwrap(), 3.1291);
    }

    #[test]
    fn two_sentences_with_polysyllables() {
        let text = "Hypertension was treated. The patient improved.";
        let c = text_counts(text);
        // vowel groups: hypertension 4, was 1, treated 2, the 1, patient 2, improved 3
        assert_eq!(c, TextCounts { sentences: 2, words: 6, syllables: 13, polysyllables: 2 });
        let r = readability(text);
        close(r.smog.unwrap(), 1.0430 * 30f64.sqrt() + 3.1291);
        close(r.flesch_reading_ease.unwrap(), 206.835 - 1.015 * 3.0 - 84.6 * 13.0 / 6.0);
    }

    #[test]
    fn empty_text_has_no_scores() {
        assert_eq!(readability(""), ReadabilityScores::default());
        assert_eq!(readability(" ... "), ReadabilityScores::default());
    }
}
