//! Porter (1980) suffix-stripping stemmer over lowercase ASCII words.

fn is_consonant(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => false,
        b'y' => i == 0 || !is_consonant(w, i - 1),
        _ => true,
    }
}

/// Number of vowel-consonant sequences in `w`.
fn measure(w: &[u8]) -> usize {
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let vowel = !is_consonant(w, i);
        if prev_vowel && !vowel {
            m += 1;
        }
        prev_vowel = vowel;
    }
    m
}

fn has_vowel(w: &[u8]) -> bool {
    (0..w.len()).any(|i| !is_consonant(w, i))
}

fn double_consonant(w: &[u8]) -> bool {
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && is_consonant(w, n - 1)
}

/// Consonant-vowel-consonant ending, last consonant not w, x or y.
fn cvc(w: &[u8]) -> bool {
    let n = w.len();
    n >= 3
        && is_consonant(w, n - 3)
        && !is_consonant(w, n - 2)
        && is_consonant(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn stem_of<'a>(w: &'a [u8], suffix: &str) -> Option<&'a [u8]> {
    w.strip_suffix(suffix.as_bytes())
}

/// Apply the first (longest) matching rule if its stem has measure above
/// `min_m`. Returns whether any suffix matched at all.
fn replace_rule(w: &mut Vec<u8>, rules: &[(&str, &str)], min_m: usize) -> bool {
    for (suffix, repl) in rules {
        if let Some(stem) = stem_of(w, suffix) {
            if measure(stem) > min_m {
                let keep = stem.len();
                w.truncate(keep);
                w.extend_from_slice(repl.as_bytes());
            }
            return true;
        }
    }
    false
}

const STEP2: &[(&str, &str)] = &[
    ("ational", "ate"),
    ("tional", "tion"),
    ("enci", "ence"),
    ("anci", "ance"),
    ("izer", "ize"),
    ("abli", "able"),
    ("alli", "al"),
    ("entli", "ent"),
    ("eli", "e"),
    ("ousli", "ous"),
    ("ization", "ize"),
    ("ation", "ate"),
    ("ator", "ate"),
    ("alism", "al"),
    ("iveness", "ive"),
    ("fulness", "ful"),
    ("ousness", "ous"),
    ("aliti", "al"),
    ("iviti", "ive"),
    ("biliti", "ble"),
];

const STEP3: &[(&str, &str)] = &[
    ("icate", "ic"),
    ("ative", ""),
    ("alize", "al"),
    ("iciti", "ic"),
    ("ical", "ic"),
    ("ful", ""),
    ("ness", ""),
];

const STEP4: &[&str] = &[
    "al", "ance", "ence", "er", "ic", "able", "ible", "ant", "ement", "ment", "ent", "ion", "ou",
    "ism", "ate", "iti", "ous", "ive", "ize",
];

fn longest_first(rules: &[(&'static str, &'static str)]) -> Vec<(&'static str, &'static str)> {
    let mut v = rules.to_vec();
    v.sort_by_key(|(s, _)| std::cmp::Reverse(s.len()));
    v
}

fn step1(w: &mut Vec<u8>) {
    // 1a
    if w.ends_with(b"sses") || w.ends_with(b"ies") {
        w.truncate(w.len() - 2);
    } else if w.ends_with(b"ss") {
    } else if w.ends_with(b"s") {
        w.pop();
    }

    // 1b
    let mut tidy = false;
    if let Some(stem) = stem_of(w, "eed") {
        if measure(stem) > 0 {
            w.pop();
        }
    } else if let Some(stem) = stem_of(w, "ed").or_else(|| stem_of(w, "ing")) {
        if has_vowel(stem) {
            let keep = stem.len();
            w.truncate(keep);
            tidy = true;
        }
    }
    if tidy {
        if w.ends_with(b"at") || w.ends_with(b"bl") || w.ends_with(b"iz") {
            w.push(b'e');
        } else if double_consonant(w) && !matches!(w[w.len() - 1], b'l' | b's' | b'z') {
            w.pop();
        } else if measure(w) == 1 && cvc(w) {
            w.push(b'e');
        }
    }

    // 1c
    if let Some(stem) = stem_of(w, "y") {
        if has_vowel(stem) {
            let n = w.len();
            w[n - 1] = b'i';
        }
    }
}

fn step4(w: &mut Vec<u8>) {
    let mut suffixes = STEP4.to_vec();
    suffixes.sort_by_key(|s| std::cmp::Reverse(s.len()));
    for suffix in suffixes {
        if let Some(stem) = stem_of(w, suffix) {
            let ok = measure(stem) > 1
                && (suffix != "ion" || matches!(stem.last(), Some(b's') | Some(b't')));
            if ok {
                let keep = stem.len();
                w.truncate(keep);
            }
            return;
        }
    }
}

fn step5(w: &mut Vec<u8>) {
    if let Some(stem) = stem_of(w, "e") {
        let m = measure(stem);
        if m > 1 || (m == 1 && !cvc(stem)) {
            w.pop();
        }
    }
    if measure(w) > 1 && double_consonant(w) && w.ends_with(b"l") {
        w.pop();
    }
}

/// Stem a word. Input is lowercased first; words of two letters or fewer
/// and words with non-ASCII-letter characters are returned lowercased but
/// otherwise unchanged.
pub fn porter_stem(word: &str) -> String {
    let lower = word.to_lowercase();
    if lower.len() <= 2 || !lower.bytes().all(|b| b.is_ascii_lowercase()) {
        return lower;
    }
    let mut w = lower.into_bytes();
    step1(&mut w);
    replace_rule(&mut w, &longest_first(STEP2), 0);
    replace_rule(&mut w, &longest_first(STEP3), 0);
    step4(&mut w);
    step5(&mut w);
    String::from_utf8(w).expect("ASCII in, ASCII out")
}
