//! Replay backend: serves generations and attribute scores from a JSONL file
//! instead of a live model.
//!
//! Records are keyed by the SHA-256 of the prompt, so fixture files stay
//! valid when prompts contain newlines or grow large, and a file can omit the
//! raw prompt text entirely. The [`RecordingBackend`] wrapper sits in front
//! of any live backend and captures everything it returns in the same format,
//! which is how fixtures are produced in the first place.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backends::{AttributeDistribution, Backend, BackendError, GenerationRecord, TokenLogprob};
use crate::decoding::DecodeConfig;
use crate::hashing::prompt_hash;
use crate::lexicon::AttributeLexicon;

/// One stored exchange. `next_token_top_logprobs` maps lowercase words to
/// log-probabilities of appearing right after the prompt; attribute words
/// absent from the map score zero, so fixtures only need entries for words
/// the original model gave measurable mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default)]
    pub continuation: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub token_logprobs: Vec<TokenLogprob>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub next_token_top_logprobs: BTreeMap<String, f64>,
}

/// Read-only backend over a fixture file.
pub struct ReplayBackend {
    records: BTreeMap<String, ReplayRecord>,
}

impl ReplayBackend {
    /// Parses JSONL fixture content. Blank lines are skipped. Each record's
    /// hash is checked against its prompt when both are present, computed
    /// from the prompt when absent, and duplicates are rejected.
    pub fn from_jsonl<R: BufRead>(r: R, origin: &str) -> Result<Self, BackendError> {
        let format_err = |reason: String| BackendError::ReplayFormat {
            path: origin.to_string(),
            reason,
        };
        let mut records = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(BackendError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let mut record: ReplayRecord = serde_json::from_str(&line)
                .map_err(|e| format_err(format!("line {}: {e}", i + 1)))?;
            if let Some(prompt) = &record.prompt {
                let computed = prompt_hash(prompt);
                if record.prompt_hash.is_empty() {
                    record.prompt_hash = computed;
                } else if record.prompt_hash != computed {
                    return Err(format_err(format!(
                        "line {}: prompt_hash {} does not match prompt (expected {computed})",
                        i + 1,
                        record.prompt_hash
                    )));
                }
            } else if record.prompt_hash.is_empty() {
                return Err(format_err(format!(
                    "line {}: record needs a prompt or a prompt_hash",
                    i + 1
                )));
            }
            for (word, lp) in &record.next_token_top_logprobs {
                if !lp.is_finite() || *lp > 0.0 {
                    return Err(format_err(format!(
                        "line {}: logprob {lp} for {word:?} is not a valid log-probability",
                        i + 1
                    )));
                }
            }
            let key = record.prompt_hash.clone();
            if records.insert(key.clone(), record).is_some() {
                return Err(format_err(format!("duplicate record for prompt hash {key}")));
            }
        }
        if records.is_empty() {
            return Err(format_err("fixture contains no records".into()));
        }
        Ok(ReplayBackend { records })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let file = std::fs::File::open(path).map_err(BackendError::Io)?;
        Self::from_jsonl(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn lookup(&self, prompt: &str) -> Result<&ReplayRecord, BackendError> {
        let hash = prompt_hash(prompt);
        self.records.get(&hash).ok_or_else(|| BackendError::UnknownPrompt {
            hash,
            preview: prompt.chars().take(60).collect(),
        })
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let record = self.lookup(prompt)?;
        Ok(GenerationRecord {
            probe_id: String::new(),
            prompt: prompt.to_string(),
            continuation: record.continuation.clone(),
            tokens: record.token_logprobs.clone(),
            decode: decode.clone(),
            backend_id: self.id().to_string(),
            reproducible: true,
        })
    }

    fn score_attribute_words(
        &self,
        prompt: &str,
        lexicon: &AttributeLexicon,
    ) -> Result<AttributeDistribution, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let record = self.lookup(prompt)?;
        let score = |word: &str| -> f64 {
            record
                .next_token_top_logprobs
                .get(word)
                .map(|lp| lp.exp())
                .unwrap_or(0.0)
        };
        let mut pf = Vec::with_capacity(lexicon.len());
        let mut pm = Vec::with_capacity(lexicon.len());
        for pair in lexicon.pairs() {
            pf.push(score(&pair.female));
            pm.push(score(&pair.male));
        }
        Ok(AttributeDistribution { probe_id: String::new(), pf, pm })
    }
}

/// Pass-through wrapper that captures every exchange in replay format.
///
/// Generation fills a record's continuation and token logprobs; scoring fills
/// its next-word map, skipping zero-probability words (replay scores a
/// missing word as zero, so the round trip is lossless). Both halves merge
/// into the same record when they saw the same prompt.
pub struct RecordingBackend<'a> {
    inner: &'a dyn Backend,
    records: Mutex<BTreeMap<String, ReplayRecord>>,
}

impl<'a> RecordingBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        RecordingBackend { inner, records: Mutex::new(BTreeMap::new()) }
    }

    /// Captured records as JSONL, ordered by prompt hash.
    pub fn to_jsonl(&self) -> String {
        let records = self.records.lock().expect("recording mutex poisoned");
        let mut out = String::new();
        for record in records.values() {
            out.push_str(&serde_json::to_string(record).expect("replay record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), BackendError> {
        w.write_all(self.to_jsonl().as_bytes()).map_err(BackendError::Io)
    }

    fn with_record<F: FnOnce(&mut ReplayRecord)>(&self, prompt: &str, f: F) {
        let hash = prompt_hash(prompt);
        let mut records = self.records.lock().expect("recording mutex poisoned");
        let record = records.entry(hash.clone()).or_insert_with(|| ReplayRecord {
            prompt_hash: hash,
            prompt: Some(prompt.to_string()),
            continuation: String::new(),
            token_logprobs: Vec::new(),
            next_token_top_logprobs: BTreeMap::new(),
        });
        f(record);
    }
}

impl Backend for RecordingBackend<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
        let result = self.inner.generate(prompt, decode)?;
        self.with_record(prompt, |r| {
            r.continuation = result.continuation.clone();
            r.token_logprobs = result.tokens.clone();
        });
        Ok(result)
    }

    fn score_attribute_words(
        &self,
        prompt: &str,
        lexicon: &AttributeLexicon,
    ) -> Result<AttributeDistribution, BackendError> {
        let result = self.inner.score_attribute_words(prompt, lexicon)?;
        self.with_record(prompt, |r| {
            for (pair, (&pf, &pm)) in lexicon.pairs().iter().zip(result.pf.iter().zip(&result.pm)) {
                if pf > 0.0 {
                    r.next_token_top_logprobs.insert(pair.female.clone(), pf.ln());
                }
                if pm > 0.0 {
                    r.next_token_top_logprobs.insert(pair.male.clone(), pm.ln());
                }
            }
        });
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::ToyBackend;
    use crate::tuning::model::ToyLm;

    fn lex() -> AttributeLexicon {
        AttributeLexicon::default_pairs()
    }

    fn fixture_line(prompt: &str, continuation: &str, she: f64, he: f64) -> String {
        format!(
            r#"{{"prompt_hash":"{}","prompt":{},"continuation":{},"next_token_top_logprobs":{{"she":{},"he":{}}}}}"#,
            prompt_hash(prompt),
            serde_json::to_string(prompt).unwrap(),
            serde_json::to_string(continuation).unwrap(),
            she.ln(),
            he.ln(),
        )
    }

    #[test]
    fn replay_serves_stored_continuations_and_scores() {
        let jsonl = [
            fixture_line("My friend is a nurse, and", "she is kind", 0.24, 0.01),
            fixture_line("My friend likes chess, and", "it is fun", 0.07, 0.14),
        ]
        .join("\n");
        let backend = ReplayBackend::from_jsonl(jsonl.as_bytes(), "test").unwrap();
        assert_eq!(backend.len(), 2);

        let record = backend
            .generate("My friend is a nurse, and", &DecodeConfig::default())
            .unwrap();
        assert_eq!(record.continuation, "she is kind");
        assert!(record.reproducible);

        let dist = backend
            .score_attribute_words("My friend is a nurse, and", &lex())
            .unwrap();
        // Pair 1 is she/he; everything else is absent and scores zero.
        assert!((dist.pf[0] - 0.24).abs() < 1e-12);
        assert!((dist.pm[0] - 0.01).abs() < 1e-12);
        assert_eq!(dist.pf[1], 0.0);
        assert!((dist.sum_f() - 0.24).abs() < 1e-12);
    }

    #[test]
    fn unknown_prompts_are_reported_with_hash_and_preview() {
        let jsonl = fixture_line("known", "x", 0.1, 0.1);
        let backend = ReplayBackend::from_jsonl(jsonl.as_bytes(), "test").unwrap();
        let err = backend.generate("unknown prompt", &DecodeConfig::default()).unwrap_err();
        match err {
            BackendError::UnknownPrompt { hash, preview } => {
                assert_eq!(hash, prompt_hash("unknown prompt"));
                assert_eq!(preview, "unknown prompt");
            }
            other => panic!("expected UnknownPrompt, got {other:?}"),
        }
    }

    #[test]
    fn fixture_validation_rejects_bad_records() {
        // Mismatched hash.
        let bad_hash = r#"{"prompt_hash":"0000","prompt":"x","continuation":"y"}"#;
        assert!(matches!(
            ReplayBackend::from_jsonl(bad_hash.as_bytes(), "test"),
            Err(BackendError::ReplayFormat { .. })
        ));
        // Duplicate prompt.
        let dup = [fixture_line("p", "a", 0.1, 0.1), fixture_line("p", "b", 0.2, 0.2)].join("\n");
        assert!(matches!(
            ReplayBackend::from_jsonl(dup.as_bytes(), "test"),
            Err(BackendError::ReplayFormat { .. })
        ));
        // Positive logprob.
        let positive = r#"{"prompt":"p","continuation":"c","next_token_top_logprobs":{"she":0.5}}"#;
        assert!(matches!(
            ReplayBackend::from_jsonl(positive.as_bytes(), "test"),
            Err(BackendError::ReplayFormat { .. })
        ));
        // Neither prompt nor hash.
        let nothing = r#"{"prompt_hash":"","continuation":"c"}"#;
        assert!(matches!(
            ReplayBackend::from_jsonl(nothing.as_bytes(), "test"),
            Err(BackendError::ReplayFormat { .. })
        ));
        // Empty file.
        assert!(matches!(
            ReplayBackend::from_jsonl("".as_bytes(), "test"),
            Err(BackendError::ReplayFormat { .. })
        ));
    }

    #[test]
    fn hash_only_records_are_accepted() {
        let hash = prompt_hash("secret prompt");
        let line = format!(r#"{{"prompt_hash":"{hash}","continuation":"ok"}}"#);
        let backend = ReplayBackend::from_jsonl(line.as_bytes(), "test").unwrap();
        let record = backend.generate("secret prompt", &DecodeConfig::default()).unwrap();
        assert_eq!(record.continuation, "ok");
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let lexicon = lex();
        let mut words: Vec<String> = lexicon.all_words().iter().map(|s| s.to_string()).collect();
        words.sort();
        for w in ["my", "friend", "is", "a", "nurse", "likes", "tea"] {
            words.push(w.into());
        }
        let toy = ToyBackend::new(ToyLm::new(&words, 23).unwrap());
        let recorder = RecordingBackend::new(&toy);

        let decode = DecodeConfig { max_new_tokens: 5, ..DecodeConfig::default() };
        let prompts = ["my friend is a nurse", "my friend likes tea"];
        let mut live_gen = Vec::new();
        let mut live_score = Vec::new();
        for p in prompts {
            live_gen.push(recorder.generate(p, &decode).unwrap());
            live_score.push(recorder.score_attribute_words(p, &lexicon).unwrap());
        }
        assert_eq!(recorder.id(), "toy");

        let replay = ReplayBackend::from_jsonl(recorder.to_jsonl().as_bytes(), "test").unwrap();
        for (i, p) in prompts.iter().enumerate() {
            let record = replay.generate(p, &decode).unwrap();
            assert_eq!(record.continuation, live_gen[i].continuation);
            let dist = replay.score_attribute_words(p, &lexicon).unwrap();
            for (a, b) in dist.pf.iter().zip(&live_score[i].pf) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
            for (a, b) in dist.pm.iter().zip(&live_score[i].pm) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
