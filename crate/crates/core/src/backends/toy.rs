//! Backend adapter for the in-repo toy language model.
//!
//! Everything runs locally and deterministically: generation samples from the
//! model's own next-token distributions through the shared decoding pipeline,
//! and scoring reads teacher-forced word probabilities straight off the
//! softmax. This is the backend the tuning experiments evaluate against, and
//! the only one that needs no fixtures or network.

use crate::backends::{AttributeDistribution, Backend, BackendError, GenerationRecord, TokenLogprob};
use crate::decoding::{apply_config, rng_from_seed, select_next, DecodeConfig};
use crate::lexicon::AttributeLexicon;
use crate::tuning::model::{ToyLm, EOS};

/// A [`ToyLm`] behind the [`Backend`] interface.
pub struct ToyBackend {
    model: ToyLm,
}

impl ToyBackend {
    pub fn new(model: ToyLm) -> Self {
        ToyBackend { model }
    }

    pub fn model(&self) -> &ToyLm {
        &self.model
    }
}

impl Backend for ToyBackend {
    fn id(&self) -> &str {
        "toy"
    }

    /// Samples up to `max_new_tokens` words. Each emitted token carries a
    /// leading space and the log of its unfiltered model probability; the
    /// end-of-sentence token stops generation without being emitted.
    fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        decode.validate().map_err(BackendError::Decode)?;

        let mut ctx = self.model.tokenize(prompt);
        let mut rng = rng_from_seed(decode.seed);
        let mut continuation = String::new();
        let mut tokens = Vec::new();
        for _ in 0..decode.max_new_tokens {
            let fwd = self.model.forward(&ctx);
            let dist = apply_config(&fwd.logits, decode).map_err(BackendError::Decode)?;
            let next = select_next(&dist, &mut rng).map_err(BackendError::Decode)?;
            if next == EOS {
                break;
            }
            let text = format!(" {}", self.model.token_text(next));
            continuation.push_str(&text);
            tokens.push(TokenLogprob {
                token: text,
                logprob: fwd.probs[next].max(f64::MIN_POSITIVE).ln(),
            });
            ctx.push(next);
        }

        Ok(GenerationRecord {
            probe_id: String::new(),
            prompt: prompt.to_string(),
            continuation,
            tokens,
            decode: decode.clone(),
            backend_id: self.id().to_string(),
            reproducible: true,
        })
    }

    /// Teacher-forced P(word | prompt) for every lexicon word, straight from
    /// full softmaxes — no truncation, no renormalization, so the result is
    /// identical under every decoding configuration.
    fn score_attribute_words(
        &self,
        prompt: &str,
        lexicon: &AttributeLexicon,
    ) -> Result<AttributeDistribution, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let ctx = self.model.tokenize(prompt);
        let mut pf = Vec::with_capacity(lexicon.len());
        let mut pm = Vec::with_capacity(lexicon.len());
        for pair in lexicon.pairs() {
            let score = |word: &str| -> Result<f64, BackendError> {
                self.model.word_prob(&ctx, word).ok_or_else(|| BackendError::UnscorableWord {
                    word: word.to_string(),
                    reason: "not representable in the toy vocabulary".to_string(),
                })
            };
            pf.push(score(&pair.female)?);
            pm.push(score(&pair.male)?);
        }
        Ok(AttributeDistribution { probe_id: String::new(), pf, pm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{run_generation, score_attributes, PromptJob};
    use crate::lexicon::AttributeLexicon;

    fn lex() -> AttributeLexicon {
        AttributeLexicon::default_pairs()
    }

    fn backend() -> ToyBackend {
        let lexicon = lex();
        let mut words: Vec<String> = lexicon.all_words().iter().map(|s| s.to_string()).collect();
        words.sort();
        for w in ["my", "friend", "is", "a", "nurse", "kind", "likes", "tea"] {
            words.push(w.into());
        }
        ToyBackend::new(ToyLm::new(&words, 17).unwrap())
    }

    #[test]
    fn greedy_generation_is_reproducible_and_bounded() {
        let b = backend();
        let decode = DecodeConfig { max_new_tokens: 6, ..DecodeConfig::default() };
        let r1 = b.generate("my friend is a nurse", &decode).unwrap();
        let r2 = b.generate("my friend is a nurse", &decode).unwrap();
        assert_eq!(r1.continuation, r2.continuation);
        assert!(r1.tokens.len() <= 6);
        assert!(r1.reproducible);
        // The continuation is exactly the concatenation of its tokens.
        let joined: String = r1.tokens.iter().map(|t| t.token.as_str()).collect();
        assert_eq!(r1.continuation, joined);
        for t in &r1.tokens {
            assert!(t.token.starts_with(' '));
            assert!(t.logprob <= 0.0);
        }
    }

    #[test]
    fn sampled_generation_varies_with_seed_but_not_within_it() {
        let b = backend();
        let base = DecodeConfig {
            temperature: 1.0,
            max_new_tokens: 8,
            seed: 101,
            ..DecodeConfig::default()
        };
        let r1 = b.generate("my friend likes tea", &base).unwrap();
        let r2 = b.generate("my friend likes tea", &base).unwrap();
        assert_eq!(r1.continuation, r2.continuation);

        // Across many seeds at least one continuation must differ; a fixed
        // point for all of them would mean the seed is being ignored.
        let mut seen = std::collections::HashSet::new();
        for seed in 0..20u64 {
            let d = base.with_seed(seed);
            seen.insert(b.generate("my friend likes tea", &d).unwrap().continuation);
        }
        assert!(seen.len() > 1, "20 seeds produced identical samples");
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let b = backend();
        assert!(matches!(
            b.generate("  ", &DecodeConfig::default()),
            Err(BackendError::EmptyPrompt)
        ));
        assert!(matches!(
            b.score_attribute_words("", &lex()),
            Err(BackendError::EmptyPrompt)
        ));
    }

    #[test]
    fn scoring_is_decode_invariant_and_in_range() {
        let b = backend();
        let d1 = b.score_attribute_words("my friend is kind", &lex()).unwrap();
        d1.validate(lex().len()).unwrap();
        // Scores live on the full softmax, so every value is a probability
        // and the total attribute mass cannot exceed one.
        assert!(d1.pf.iter().chain(&d1.pm).all(|&p| (0.0..=1.0).contains(&p)));
        assert!(d1.sum_f() + d1.sum_m() <= 1.0 + 1e-12);
    }

    #[test]
    fn scoring_matches_manual_forward() {
        let b = backend();
        let ctx = b.model().tokenize("my friend is");
        let probs = b.model().next_dist(&ctx);
        let she = b.model().token_id("she").unwrap();
        let dist = b.score_attribute_words("my friend is", &lex()).unwrap();
        // Pair 1 is she/he; "she" is a single token, so its teacher-forced
        // probability is exactly the softmax entry.
        assert_eq!(dist.pf[0], probs[she]);
    }

    #[test]
    fn orchestration_runs_toy_jobs_in_order() {
        let b = backend();
        let jobs: Vec<PromptJob> = ["my friend is a nurse", "my friend likes tea"]
            .iter()
            .enumerate()
            .map(|(i, p)| PromptJob { probe_id: format!("p-{i}"), prompt: p.to_string() })
            .collect();
        let decode = DecodeConfig { max_new_tokens: 4, ..DecodeConfig::default() };
        let records = run_generation(&b, &jobs, &decode, 2).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].probe_id, "p-0");
        assert_eq!(records[1].probe_id, "p-1");

        let dists = score_attributes(&b, &jobs, &lex(), 2).unwrap();
        assert_eq!(dists[1].probe_id, "p-1");
    }
}
