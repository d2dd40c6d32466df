//! Gendered attribute words and their detection in free text.
//!
//! The lexicon is a list of (female, male) word pairs forming a bijection:
//! pair `i` holds the female word `w_f[i]` and its male counterpart `w_m[i]`.
//! Detection is word-boundary based, case-insensitive, and clitic-tolerant,
//! so "She's busy" yields a match for "she" while "sheriff" yields nothing.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text;

/// Gender of a matched attribute word or of a sentence-level lean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gender::Female => write!(f, "female"),
            Gender::Male => write!(f, "male"),
        }
    }
}

/// Sentence-level gender lean: which side contributed more matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lean {
    Female,
    Male,
    /// No attribute word present at all.
    Neutral,
}

/// One female/male word pair. `index` is 1-based and unique within a lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePair {
    pub index: usize,
    pub female: String,
    pub male: String,
}

/// A single attribute-word occurrence found in text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMatch {
    /// The surface form as it appeared (original case, clitic stripped).
    pub word: String,
    pub gender: Gender,
    /// 1-based index of the pair the word belongs to.
    pub pair_index: usize,
    /// Byte offset of the match in the scanned text.
    pub char_offset: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon is empty")]
    Empty,
    #[error("duplicate word {word:?} (lines {first} and {second}); every word must appear once across both columns")]
    DuplicateWord {
        word: String,
        first: usize,
        second: usize,
    },
    #[error("line {line}: expected exactly one tab separating female and male word, got {got:?}")]
    BadLine { line: usize, got: String },
    #[error("line {line}: word {word:?} contains whitespace")]
    WordWithWhitespace { line: usize, word: String },
    #[error("failed to read lexicon file {path:?}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The full word-pair list plus the matching machinery built on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeLexicon {
    pairs: Vec<AttributePair>,
}

/// The pair list shipped with the crate. Pronoun surface forms are assigned
/// so that each of she/her/hers/herself and he/him/his/himself appears
/// exactly once across the whole table.
const DEFAULT_LEXICON_TSV: &str = include_str!("../fixtures/default_lexicon.tsv");

impl AttributeLexicon {
    /// Builds a lexicon from (female, male) pairs, checking the global
    /// uniqueness and shape invariants.
    pub fn new<I, S>(pairs: I) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (S, S)>,
        S: Into<String>,
    {
        let mut seen: std::collections::HashMap<String, usize> = Default::default();
        let mut out = Vec::new();
        for (i, (f, m)) in pairs.into_iter().enumerate() {
            let line = i + 1;
            let female: String = f.into();
            let male: String = m.into();
            for word in [&female, &male] {
                if word.is_empty() || word.chars().any(char::is_whitespace) {
                    return Err(LexiconError::WordWithWhitespace {
                        line,
                        word: word.clone(),
                    });
                }
                let key = word.to_lowercase();
                if let Some(&first) = seen.get(&key) {
                    return Err(LexiconError::DuplicateWord {
                        word: key,
                        first,
                        second: line,
                    });
                }
                seen.insert(key, line);
            }
            out.push(AttributePair {
                index: line,
                female: female.to_lowercase(),
                male: male.to_lowercase(),
            });
        }
        if out.is_empty() {
            return Err(LexiconError::Empty);
        }
        Ok(AttributeLexicon { pairs: out })
    }

    /// The built-in default pair list.
    pub fn default_pairs() -> Self {
        Self::parse_tsv(DEFAULT_LEXICON_TSV)
            .expect("bundled default lexicon must parse")
    }

    /// Parses the `female<TAB>male` file format. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse_tsv(content: &str) -> Result<Self, LexiconError> {
        let mut pairs = Vec::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(f), Some(m), None) => pairs.push((f.trim().to_string(), m.trim().to_string())),
                _ => {
                    return Err(LexiconError::BadLine {
                        line: idx + 1,
                        got: raw.to_string(),
                    })
                }
            }
        }
        Self::new(pairs)
    }

    /// Loads a lexicon from a TSV file on disk.
    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        let content = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_tsv(&content)
    }

    /// Serializes back to the TSV file format (no comments).
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&p.female);
            out.push('\t');
            out.push_str(&p.male);
            out.push('\n');
        }
        out
    }

    pub fn pairs(&self) -> &[AttributePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// All words of one gender, in pair order.
    pub fn words(&self, gender: Gender) -> Vec<&str> {
        self.pairs
            .iter()
            .map(|p| match gender {
                Gender::Female => p.female.as_str(),
                Gender::Male => p.male.as_str(),
            })
            .collect()
    }

    /// Looks up a lowercased word, returning its gender and 1-based pair index.
    pub fn lookup(&self, word_lower: &str) -> Option<(Gender, usize)> {
        self.pairs.iter().find_map(|p| {
            if p.female == word_lower {
                Some((Gender::Female, p.index))
            } else if p.male == word_lower {
                Some((Gender::Male, p.index))
            } else {
                None
            }
        })
    }

    /// Scans `text` for attribute words and returns every occurrence ordered
    /// by offset.
    ///
    /// Matching is case-insensitive and respects word boundaries: a boundary
    /// is the start/end of text or any character that is neither alphanumeric
    /// nor an apostrophe. Clitic forms match their base ("she's" matches
    /// "she"); the recorded surface form is the base as it appeared.
    pub fn detect_attributes(&self, text: &str) -> Vec<AttributeMatch> {
        let mut matches = Vec::new();
        for (offset, span) in text::word_spans(text) {
            let lowered = span.to_lowercase();
            let (surface, key) = if let Some((gender, idx)) = self.lookup(&lowered) {
                (span, Some((gender, idx)))
            } else {
                // Try the clitic base: everything before the first apostrophe.
                let (base, clitic) = text::split_clitic(span);
                if clitic.is_some() {
                    (base, self.lookup(&base.to_lowercase()))
                } else {
                    (span, None)
                }
            };
            if let Some((gender, pair_index)) = key {
                matches.push(AttributeMatch {
                    word: surface.to_string(),
                    gender,
                    pair_index,
                    char_offset: offset,
                });
            }
        }
        matches
    }

    /// 1 if the text contains any attribute word, else 0. This is the
    /// per-sentence indicator the GAS metric averages.
    pub fn indicator(&self, text: &str) -> u8 {
        u8::from(self.detect_attributes(text).first().is_some())
    }

    /// Majority gender among the matches; ties go to the gender of the
    /// earliest match; no matches at all is neutral.
    pub fn lean(&self, text: &str) -> Lean {
        let matches = self.detect_attributes(text);
        if matches.is_empty() {
            return Lean::Neutral;
        }
        let females = matches.iter().filter(|m| m.gender == Gender::Female).count();
        let males = matches.len() - females;
        match females.cmp(&males) {
            std::cmp::Ordering::Greater => Lean::Female,
            std::cmp::Ordering::Less => Lean::Male,
            std::cmp::Ordering::Equal => match matches[0].gender {
                Gender::Female => Lean::Female,
                Gender::Male => Lean::Male,
            },
        }
    }

    /// True when none of the lexicon's words occur in `text`. Probe builders
    /// use this to guarantee prompts are gender-neutral.
    pub fn is_neutral(&self, text: &str) -> bool {
        self.detect_attributes(text).is_empty()
    }

    /// The set of all words, both genders, lowercased.
    pub fn all_words(&self) -> HashSet<&str> {
        self.pairs
            .iter()
            .flat_map(|p| [p.female.as_str(), p.male.as_str()])
            .collect()
    }
}
