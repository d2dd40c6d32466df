//! Harness for probing generative language models for gender bias and for
//! exercising mitigation strategies against it.
//!
//! The pipeline: build gender-neutral probe prompts ([`probes`]), run them
//! through a text-generation backend ([`backends`]) under a decoding
//! configuration ([`decoding`]), score the attribute-word distributions the
//! model assigns after each prompt, and reduce the results to bias metrics
//! ([`metrics`]). Mitigation comes in three flavors: decoding hyperparameter
//! sweeps and instruction prefixes ([`mitigation`]), and loss-based tuning
//! demonstrated on a small self-contained model ([`tuning`]).
//!
//! Everything is deterministic given a seed: sampling uses ChaCha8 streams,
//! per-probe seeds are derived by hashing, and all artifacts serialize to
//! stable byte layouts so repeated runs can be compared with `diff`.

pub mod backends;
pub mod decoding;
pub mod hashing;
pub mod lexicon;
pub mod metrics;
pub mod mitigation;
pub mod probes;
pub mod text;
pub mod tuning;
