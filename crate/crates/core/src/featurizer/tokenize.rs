use super::patterns::detect_special_patterns;
use super::TokenRecord;
use crate::modelgate::MASK_SENTINEL;
use crate::text::CharSpan;

const DETACHABLE: &[char] = &['.', ',', ':', ';', '!', '?', '(', ')', '[', ']', '{', '}', '"', '\''];

/// Word-level tokenization used for features, masking, chunk budgets and
/// the text metrics.
///
/// Whitespace separates tokens. Inside a whitespace-delimited run the marks
/// in `DETACHABLE` become single-character tokens, except
/// - inside a dosage/notation span (`40 mg/0.4 mL`, `b.i.d.`),
/// - a `.` or `,` between digits (`0.4`, `1,000`),
/// - an apostrophe between letters (`don't`).
///
/// Underscore runs and the literal `[MASK]` sentinel are always whole
/// tokens. Offsets are character offsets shifted by `base_offset`.
pub fn tokenize_words(text: &str, base_offset: usize) -> Vec<TokenRecord> {
    let chars: Vec<char> = text.chars().collect();
    let special = detect_special_patterns(text);
    let sentinel: Vec<char> = MASK_SENTINEL.chars().collect();
    let in_special = |i: usize| special.iter().any(|s| s.contains(i));

    let mut tokens = Vec::new();
    let mut push = |start: usize, end: usize| {
        if start < end {
            tokens.push(TokenRecord::new(
                chars[start..end].iter().collect(),
                CharSpan::new(start + base_offset, end + base_offset),
            ));
        }
    };

    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let run_end = (i..chars.len())
            .find(|&j| chars[j].is_whitespace())
            .unwrap_or(chars.len());
        let mut word_start = i;
        while i < run_end {
            let c = chars[i];
            if chars[i..run_end].starts_with(&sentinel) {
                push(word_start, i);
                push(i, i + sentinel.len());
                i += sentinel.len();
                word_start = i;
                continue;
            }
            if c == '_' {
                push(word_start, i);
                let end = (i..run_end).find(|&j| chars[j] != '_').unwrap_or(run_end);
                push(i, end);
                i = end;
                word_start = i;
                continue;
            }
            if DETACHABLE.contains(&c) && !in_special(i) && !attached(&chars, i, word_start, run_end) {
                push(word_start, i);
                push(i, i + 1);
                i += 1;
                word_start = i;
                continue;
            }
            i += 1;
        }
        push(word_start, run_end);
        i = run_end;
    }
    tokens
}

fn attached(chars: &[char], i: usize, word_start: usize, run_end: usize) -> bool {
    if i == word_start || i + 1 >= run_end {
        return false;
    }
    let (prev, next) = (chars[i - 1], chars[i + 1]);
    match chars[i] {
        '.' | ',' => prev.is_ascii_digit() && next.is_ascii_digit(),
        '\'' => prev.is_alphabetic() && next.is_alphabetic(),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(text: &str) -> Vec<String> {
        tokenize_words(text, 0).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn placeholder_is_one_token() {
        assert_eq!(
            words("Patient is a ___ yo male"),
            vec!["Patient", "is", "a", "___", "yo", "male"]
        );
    }

    #[test]
    fn slash_abbreviation_kept_comma_detached() {
        assert_eq!(
            words("w/ fall from 6 feet,"),
            vec!["w/", "fall", "from", "6", "feet", ","]
        );
    }

    #[test]
    fn full_example_sentence() {
        let got = words("Patient is a ___ yo male previously healthy presenting w/ fall from 6 feet, from ladder.");
        assert_eq!(
            got,
            vec![
                "Patient", "is", "a", "___", "yo", "male", "previously", "healthy", "presenting",
                "w/", "fall", "from", "6", "feet", ",", "from", "ladder", "."
            ]
        );
    }

    #[test]
    fn empty_text() {
        assert!(words("").is_empty());
        assert!(words("   \n\t").is_empty());
    }

    #[test]
    fn dosage_pieces_keep_inner_punctuation() {
        assert_eq!(
            words("enoxaparin 40 mg/0.4 mL, b.i.d."),
            vec!["enoxaparin", "40", "mg/0.4", "mL", ",", "b.i.d."]
        );
    }

    #[test]
    fn numbers_and_headers() {
        assert_eq!(words("Temp 37.8 today."), vec!["Temp", "37.8", "today", "."]);
        assert_eq!(words("Discharge Medication:"), vec!["Discharge", "Medication", ":"]);
        assert_eq!(words("(don't)"), vec!["(", "don't", ")"]);
    }

    #[test]
    fn sentinel_survives_brackets() {
        assert_eq!(words("a [MASK], b"), vec!["a", "[MASK]", ",", "b"]);
        assert_eq!(words("x([MASK])"), vec!["x", "(", "[MASK]", ")"]);
    }

    #[test]
    fn offsets_are_shifted_char_offsets() {
        let toks = tokenize_words("°C ok", 10);
        assert_eq!(toks[0].span(), CharSpan::new(10, 12));
        assert_eq!(toks[1].span(), CharSpan::new(13, 15));
    }
}
