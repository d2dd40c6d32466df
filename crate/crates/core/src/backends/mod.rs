//! Text-generation backends and the orchestration that runs probe sets
//! through them.
//!
//! Three implementations share one trait: [`http::HttpBackend`] speaks an
//! OpenAI-style completions protocol, [`replay::ReplayBackend`] serves
//! recorded responses from a JSONL file, and [`toy::ToyBackend`] wraps the
//! in-repo toy model. Everything downstream (metrics, sweeps, tuning
//! evaluation) only sees the trait, so fixture-driven tests and live runs
//! exercise identical code paths.

pub mod http;
pub mod replay;
pub mod toy;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::decoding::{DecodeConfig, DecodeError};
use crate::hashing::derive_seed;
use crate::lexicon::AttributeLexicon;

/// One decoded token with the log-probability the model assigned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// The full outcome of one generation call.
///
/// `continuation` always equals the concatenation of `tokens[i].token`, and
/// `tokens.len() <= decode.max_new_tokens`. `reproducible` is true when the
/// backend can guarantee that rerunning with the same config yields the same
/// bytes (local backends always; HTTP only when decoding greedily, since a
/// remote server may ignore the seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub probe_id: String,
    pub prompt: String,
    pub continuation: String,
    pub tokens: Vec<TokenLogprob>,
    pub decode: DecodeConfig,
    pub backend_id: String,
    pub reproducible: bool,
}

/// Per-probe attribute-word probabilities: `pf[i]` and `pm[i]` are the
/// teacher-forced probabilities of the female and male word of pair `i`
/// immediately after the prompt, taken from the full-vocabulary distribution
/// (no renormalization over the word subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    pub probe_id: String,
    pub pf: Vec<f64>,
    pub pm: Vec<f64>,
}

impl AttributeDistribution {
    /// Checks shape against a lexicon and that every entry is a probability.
    pub fn validate(&self, lexicon_len: usize) -> Result<(), BackendError> {
        if self.pf.len() != lexicon_len || self.pm.len() != lexicon_len {
            return Err(BackendError::ShapeMismatch {
                probe_id: self.probe_id.clone(),
                got: (self.pf.len(), self.pm.len()),
                want: lexicon_len,
            });
        }
        for &p in self.pf.iter().chain(self.pm.iter()) {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(BackendError::InvalidProbability {
                    probe_id: self.probe_id.clone(),
                    value: p,
                });
            }
        }
        Ok(())
    }

    /// Sum of female-word probabilities.
    pub fn sum_f(&self) -> f64 {
        self.pf.iter().sum()
    }

    /// Sum of male-word probabilities.
    pub fn sum_m(&self) -> f64 {
        self.pm.iter().sum()
    }
}

/// Which backend implementation a descriptor selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Replay,
    Toy,
}

/// Serializable recipe for constructing a backend; recorded in run manifests
/// so artifacts state where their numbers came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// HTTP endpoint URL (http backends only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Model name sent on the wire (http backends only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Replay file or toy checkpoint path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("decode configuration rejected: {0}")]
    Decode(#[from] DecodeError),
    #[error("no replay entry for prompt hash {hash} (prompt starts {preview:?})")]
    UnknownPrompt { hash: String, preview: String },
    #[error("replay file {path}: {reason}")]
    ReplayFormat { path: String, reason: String },
    #[error("attribute word {word:?} cannot be scored: {reason}")]
    UnscorableWord { word: String, reason: String },
    #[error("distribution for probe {probe_id} has shape {got:?}, lexicon expects {want}")]
    ShapeMismatch {
        probe_id: String,
        got: (usize, usize),
        want: usize,
    },
    #[error("probe {probe_id}: probability out of range: {value}")]
    InvalidProbability { probe_id: String, value: f64 },
    #[error("http request to {url} failed after {attempts} attempts: {reason}")]
    Transport {
        url: String,
        attempts: u32,
        reason: String,
    },
    #[error("http status {status} from {url}: {body}")]
    Status {
        status: u16,
        url: String,
        body: String,
    },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("response carried no logprobs; scoring requires them")]
    MissingLogprobs,
    #[error("auth environment variable {0} is not set")]
    AuthEnvMissing(String),
    #[error("toy model error: {0}")]
    Model(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// A conditional text generator that can also report next-word probabilities.
///
/// Implementations must be safe to call from several threads at once; the
/// harness issues bounded concurrent requests (see [`run_generation`]).
pub trait Backend: Send + Sync {
    /// Stable identifier recorded in artifacts ("toy", "replay:<file>",
    /// "http:<model>").
    fn id(&self) -> &str;

    /// Generates a continuation for `prompt` under `decode`. The returned
    /// record has an empty `probe_id`; orchestration stamps it.
    fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError>;

    /// Teacher-forced probability of every lexicon word right after `prompt`,
    /// from the full-vocabulary distribution. Independent of any decode
    /// configuration by construction.
    fn score_attribute_words(
        &self,
        prompt: &str,
        lexicon: &AttributeLexicon,
    ) -> Result<AttributeDistribution, BackendError>;
}

/// A prompt ready to be sent, keyed by the probe that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptJob {
    pub probe_id: String,
    pub prompt: String,
}

/// Runs `jobs` through a worker with bounded concurrency, preserving job
/// order in the output. `op` must be safe to call concurrently.
fn run_bounded<T, F>(jobs_len: usize, max_in_flight: usize, op: F) -> Result<Vec<T>, BackendError>
where
    T: Send,
    F: Fn(usize) -> Result<T, BackendError> + Sync,
{
    let workers = max_in_flight.max(1).min(jobs_len.max(1));
    let mut slots: Vec<Option<Result<T, BackendError>>> = Vec::with_capacity(jobs_len);
    slots.resize_with(jobs_len, || None);

    if workers <= 1 {
        for (i, slot) in slots.iter_mut().enumerate() {
            *slot = Some(op(i));
        }
    } else {
        let next = AtomicUsize::new(0);
        let results = Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs_len {
                        break;
                    }
                    let out = op(i);
                    results.lock().expect("result lock poisoned")[i] = Some(out);
                });
            }
        });
    }

    // First failure (in job order) wins; otherwise unwrap everything.
    let mut out = Vec::with_capacity(jobs_len);
    for slot in slots {
        out.push(slot.expect("worker pool left a job unprocessed")?);
    }
    Ok(out)
}

/// Generates one continuation per job with bounded in-flight requests
/// (default callers pass 4).
///
/// Each job decodes under `decode` but with its own seed derived from
/// `decode.seed` and the probe id, so results do not depend on scheduling
/// order and any single probe can be re-run in isolation.
pub fn run_generation(
    backend: &dyn Backend,
    jobs: &[PromptJob],
    decode: &DecodeConfig,
    max_in_flight: usize,
) -> Result<Vec<GenerationRecord>, BackendError> {
    decode.validate()?;
    run_bounded(jobs.len(), max_in_flight, |i| {
        let job = &jobs[i];
        let per_probe = decode.with_seed(derive_seed(decode.seed, &job.probe_id));
        let mut record = backend.generate(&job.prompt, &per_probe)?;
        record.probe_id = job.probe_id.clone();
        Ok(record)
    })
}

/// Scores attribute-word distributions for every job, bounded like
/// [`run_generation`]. Output order matches job order.
pub fn score_attributes(
    backend: &dyn Backend,
    jobs: &[PromptJob],
    lexicon: &AttributeLexicon,
    max_in_flight: usize,
) -> Result<Vec<AttributeDistribution>, BackendError> {
    run_bounded(jobs.len(), max_in_flight, |i| {
        let job = &jobs[i];
        let mut dist = backend.score_attribute_words(&job.prompt, lexicon)?;
        dist.probe_id = job.probe_id.clone();
        dist.validate(lexicon.len())?;
        Ok(dist)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal scripted backend for orchestration tests.
    struct Scripted;

    impl Backend for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }

        fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
            if prompt.contains("boom") {
                return Err(BackendError::Protocol("scripted failure".into()));
            }
            Ok(GenerationRecord {
                probe_id: String::new(),
                prompt: prompt.to_string(),
                continuation: format!(" echo:{}", decode.seed),
                tokens: vec![TokenLogprob {
                    token: format!(" echo:{}", decode.seed),
                    logprob: -0.5,
                }],
                decode: decode.clone(),
                backend_id: "scripted".into(),
                reproducible: true,
            })
        }

        fn score_attribute_words(
            &self,
            _prompt: &str,
            lexicon: &AttributeLexicon,
        ) -> Result<AttributeDistribution, BackendError> {
            Ok(AttributeDistribution {
                probe_id: String::new(),
                pf: vec![0.1; lexicon.len()],
                pm: vec![0.2; lexicon.len()],
            })
        }
    }

    fn jobs(n: usize) -> Vec<PromptJob> {
        (0..n)
            .map(|i| PromptJob {
                probe_id: format!("p{i:03}"),
                prompt: format!("prompt number {i}"),
            })
            .collect()
    }

    #[test]
    fn generation_preserves_job_order_and_stamps_ids() {
        let jobs = jobs(9);
        let records =
            run_generation(&Scripted, &jobs, &DecodeConfig::default(), 4).unwrap();
        assert_eq!(records.len(), 9);
        for (r, j) in records.iter().zip(&jobs) {
            assert_eq!(r.probe_id, j.probe_id);
            assert_eq!(r.prompt, j.prompt);
        }
    }

    #[test]
    fn per_probe_seeds_are_derived_not_shared() {
        let jobs = jobs(3);
        let records =
            run_generation(&Scripted, &jobs, &DecodeConfig::default(), 1).unwrap();
        let seeds: Vec<u64> = records.iter().map(|r| r.decode.seed).collect();
        assert_ne!(seeds[0], seeds[1]);
        assert_ne!(seeds[1], seeds[2]);
        // And independent of concurrency level.
        let par = run_generation(&Scripted, &jobs, &DecodeConfig::default(), 4).unwrap();
        assert_eq!(records, par);
    }

    #[test]
    fn first_failing_job_aborts_the_run() {
        let mut js = jobs(4);
        js[2].prompt = "boom".into();
        let err = run_generation(&Scripted, &js, &DecodeConfig::default(), 2).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn scoring_validates_shapes() {
        let lexicon = AttributeLexicon::default_pairs();
        let dists = score_attributes(&Scripted, &jobs(2), &lexicon, 4).unwrap();
        assert_eq!(dists.len(), 2);
        assert_eq!(dists[0].pf.len(), lexicon.len());
        assert_eq!(dists[0].probe_id, "p000");
    }

    #[test]
    fn empty_job_list_yields_empty_output() {
        let records =
            run_generation(&Scripted, &[], &DecodeConfig::default(), 4).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn descriptor_serializes_compactly() {
        let d = BackendDescriptor {
            kind: BackendKind::Toy,
            endpoint: None,
            model: None,
            path: Some("model.json".into()),
            auth_env: None,
        };
        let json = serde_json::to_string(&d).unwrap();
        assert_eq!(json, r#"{"kind":"toy","path":"model.json"}"#);
    }
}
