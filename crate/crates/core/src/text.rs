//! Word segmentation shared by attribute matching, near-duplicate detection,
//! and the toy model's tokenizer.
//!
//! A "word" is a maximal run of alphanumeric characters and apostrophes that
//! contains at least one alphanumeric. Everything else is a boundary. Treating
//! the apostrophe as a word character keeps clitics ("she's", "he'll")
//! attached to their base form so the caller can decide how to split them.

/// Characters that extend a word without being alphanumeric. Covers the ASCII
/// apostrophe and the typographic right single quote commonly found in
/// web-sourced text.
pub fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || is_apostrophe(c)
}

/// Iterates over `(byte_offset, word)` pairs in `text`.
///
/// Offsets index into the original string. Runs made purely of apostrophes
/// (e.g. a stray `''`) are skipped.
pub fn word_spans(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || {
        loop {
            // Skip boundary characters.
            while let Some(&(_, c)) = chars.peek() {
                if is_word_char(c) {
                    break;
                }
                chars.next();
            }
            let (start, _) = *chars.peek()?;
            let mut end = start;
            let mut has_alnum = false;
            while let Some(&(i, c)) = chars.peek() {
                if !is_word_char(c) {
                    break;
                }
                has_alnum |= c.is_alphanumeric();
                end = i + c.len_utf8();
                chars.next();
            }
            if has_alnum {
                return Some((start, &text[start..end]));
            }
            // Apostrophe-only run: keep scanning.
        }
    })
}

/// Lowercased word list for `text`, apostrophes intact.
pub fn words_lower(text: &str) -> Vec<String> {
    word_spans(text).map(|(_, w)| w.to_lowercase()).collect()
}

/// Splits a word at its first apostrophe, returning the base and the clitic
/// remainder ("she's" -> ("she", Some("'s"))). Words without an apostrophe
/// come back whole.
pub fn split_clitic(word: &str) -> (&str, Option<&str>) {
    match word.char_indices().find(|&(_, c)| is_apostrophe(c)) {
        Some((i, _)) if i > 0 => (&word[..i], Some(&word[i..])),
        _ => (word, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_report_byte_offsets() {
        let spans: Vec<_> = word_spans("I am dancing with her.").collect();
        assert_eq!(
            spans,
            vec![(0, "I"), (2, "am"), (5, "dancing"), (13, "with"), (18, "her")]
        );
    }

    #[test]
    fn clitics_stay_attached() {
        let spans: Vec<_> = word_spans("she's here, isn't she?").collect();
        assert_eq!(spans, vec![(0, "she's"), (6, "here"), (12, "isn't"), (18, "she")]);
    }

    #[test]
    fn split_clitic_separates_base() {
        assert_eq!(split_clitic("she's"), ("she", Some("'s")));
        assert_eq!(split_clitic("he’ll"), ("he", Some("’ll")));
        assert_eq!(split_clitic("plain"), ("plain", None));
    }

    #[test]
    fn apostrophe_only_runs_are_skipped() {
        let spans: Vec<_> = word_spans("'' she '' ").collect();
        assert_eq!(spans, vec![(3, "she")]);
    }

    #[test]
    fn unicode_words_survive() {
        let spans: Vec<_> = word_spans("café naïve").collect();
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].1, "café");
    }

    #[test]
    fn leading_apostrophe_is_part_of_span_but_not_base() {
        // A quote glued to a word: the span keeps it, clitic split does not
        // produce an empty base.
        let spans: Vec<_> = word_spans("'tis her").collect();
        assert_eq!(spans[0], (0, "'tis"));
        assert_eq!(split_clitic("'tis"), ("'tis", None));
    }
}
