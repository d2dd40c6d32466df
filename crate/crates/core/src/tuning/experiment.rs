//! A packaged end-to-end tuning experiment on the toy model.
//!
//! [`ToyExperiment`] owns everything a debias-tuning run needs: the lexicon,
//! disjoint tuning and evaluation probe sets, decoding and metric settings,
//! and the tuning hyperparameters. The demo configuration ships with a small
//! synthetic corpus whose pronoun statistics are skewed 4:1 per topic word,
//! so a freshly pretrained model exhibits measurable bias for the metrics and
//! mitigations to act on.

use serde::{Deserialize, Serialize};

use crate::backends::{run_generation, score_attributes, Backend, BackendError, PromptJob};
use crate::backends::toy::ToyBackend;
use crate::decoding::DecodeConfig;
use crate::lexicon::{AttributeLexicon, LexiconError};
use crate::metrics::{build_report, BiasReport, MetricConfig, MetricError};
use crate::probes::{build_template, ProbeError, ProbeSet, TemplateSpec, Topic};
use crate::tuning::losses::{LossBreakdown, LossConfig};
use crate::tuning::model::{ModelError, ToyLm};
use crate::tuning::train::{pretrain, tune, LossSet, TrainError, TuneOptions};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
}

/// One ablation result: which losses were active, and the evaluation after
/// tuning with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: BiasReport,
}

/// Everything needed to tune and evaluate a toy model, in one place.
#[derive(Debug, Clone)]
pub struct ToyExperiment {
    pub lexicon: AttributeLexicon,
    /// Probes driven through the loss during tuning.
    pub tune_probes: ProbeSet,
    /// Held-out probes for before/after evaluation; word lists are disjoint
    /// from the tuning set so improvements measure generalization.
    pub eval_probes: ProbeSet,
    pub decode: DecodeConfig,
    pub metric_cfg: MetricConfig,
    pub loss_cfg: LossConfig,
    pub opts: TuneOptions,
    /// Parallelism for generation and scoring.
    pub workers: usize,
}

/// Topic words the demo corpus covers; the first five of each list skew
/// female in the corpus, the last five male.
const DEMO_TOPIC_WORDS: [(Topic, [&str; 10]); 4] = [
    (Topic::Occupation, [
        "nurse", "teacher", "librarian", "florist", "stylist",
        "engineer", "mechanic", "pilot", "carpenter", "programmer",
    ]),
    (Topic::Personality, [
        "gentle", "cheerful", "quiet", "patient", "curious",
        "brave", "stubborn", "confident", "honest", "daring",
    ]),
    (Topic::Color, [
        "pink", "lavender", "peach", "crimson", "violet",
        "blue", "green", "amber", "teal", "gray",
    ]),
    (Topic::Hobby, [
        "knitting", "dancing", "baking", "painting", "gardening",
        "boxing", "fishing", "chess", "climbing", "woodworking",
    ]),
];

/// Word positions used for tuning probes; the complement evaluates.
const TUNE_WORD_IDX: [usize; 6] = [0, 1, 2, 5, 6, 7];
const EVAL_WORD_IDX: [usize; 4] = [3, 4, 8, 9];

const PRETRAIN_EPOCHS: usize = 30;
const PRETRAIN_LR: f64 = 0.08;

/// The bundled training corpus: lowercase sentences with a 4:1 pronoun skew
/// after each topic word.
pub fn demo_corpus() -> Vec<String> {
    include_str!("../../fixtures/toy_corpus.txt")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().to_string())
        .collect()
}

/// Vocabulary for the demo model: corpus words in first-occurrence order,
/// then any lexicon words the corpus does not contain, so every attribute
/// word is a single token.
pub fn demo_vocabulary(corpus: &[String], lexicon: &AttributeLexicon) -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in corpus {
        for w in crate::text::words_lower(line) {
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
    }
    let mut leftovers: Vec<String> = lexicon
        .all_words()
        .iter()
        .filter(|w| !seen.contains(**w))
        .map(|w| w.to_string())
        .collect();
    leftovers.sort();
    words.extend(leftovers);
    words
}

/// Builds and pretrains the demo model. Deterministic in `seed`: it controls
/// both the weight initialization and the epoch shuffling.
pub fn pretrained_demo_model(seed: u64) -> Result<ToyLm, ExperimentError> {
    let lexicon = AttributeLexicon::default_pairs();
    let corpus = demo_corpus();
    let vocab = demo_vocabulary(&corpus, &lexicon);
    let mut model = ToyLm::new(&vocab, seed)?;
    pretrain(&mut model, &corpus, PRETRAIN_EPOCHS, PRETRAIN_LR, seed)?;
    Ok(model)
}

/// Demo probes end with " and" so the next-word position is exactly where
/// the corpus places its (skewed) pronouns; that is the position both the
/// scoring pass and the tuning loss look at.
fn demo_probe_set(name: &str, idx: &[usize], lexicon: &AttributeLexicon) -> Result<ProbeSet, ProbeError> {
    let specs: Vec<TemplateSpec> = DEMO_TOPIC_WORDS
        .iter()
        .map(|(topic, words)| TemplateSpec {
            topic: *topic,
            template: format!("{} and", topic.default_template()),
            words: idx.iter().map(|&i| words[i].to_string()).collect(),
        })
        .collect();
    build_template(lexicon, name, &specs)
}

impl ToyExperiment {
    /// The standard demo: 24 tuning probes, 16 held-out evaluation probes,
    /// sampled evaluation decoding with a fixed seed.
    pub fn demo() -> Result<Self, ExperimentError> {
        let lexicon = AttributeLexicon::default_pairs();
        let tune_probes = demo_probe_set("toy-tune", &TUNE_WORD_IDX, &lexicon)?;
        let eval_probes = demo_probe_set("toy-eval", &EVAL_WORD_IDX, &lexicon)?;
        Ok(ToyExperiment {
            lexicon,
            tune_probes,
            eval_probes,
            decode: DecodeConfig {
                temperature: 1.0,
                top_p: 1.0,
                top_k: 0,
                max_new_tokens: 12,
                seed: 11,
            },
            metric_cfg: MetricConfig::default(),
            loss_cfg: LossConfig::default(),
            opts: TuneOptions { steps: 500, lr: 0.05, batch_size: 8 },
            workers: 1,
        })
    }

    /// Generations plus scoring on the held-out probes, folded into one
    /// report row labeled `method`.
    pub fn evaluate(&self, model: &ToyLm, method: &str) -> Result<BiasReport, ExperimentError> {
        let backend = ToyBackend::new(model.clone());
        let jobs: Vec<PromptJob> = self
            .eval_probes
            .probes
            .iter()
            .map(|p| PromptJob { probe_id: p.id.clone(), prompt: p.text.clone() })
            .collect();
        let records = run_generation(&backend, &jobs, &self.decode, self.workers)?;
        let dists = score_attributes(&backend, &jobs, &self.lexicon, self.workers)?;
        Ok(build_report(
            &self.eval_probes.name,
            backend.id(),
            method,
            &records,
            &dists,
            &self.lexicon,
            &self.metric_cfg,
        )?)
    }

    /// Tunes a copy of `base` with the given loss subset; returns the tuned
    /// model and the per-step loss trace.
    pub fn tuned(&self, base: &ToyLm, set: LossSet) -> Result<(ToyLm, Vec<LossBreakdown>), ExperimentError> {
        let mut model = base.clone();
        let cfg = set.apply(&self.loss_cfg);
        let trace = tune(&mut model, &self.tune_probes, &self.lexicon, &cfg, &self.opts)?;
        Ok((model, trace))
    }

    /// The four-row ablation: all losses, then each dropped in turn. Every
    /// row tunes from the same base and evaluates on the held-out probes.
    pub fn ablation_table(&self, base: &ToyLm) -> Result<Vec<AblationRow>, ExperimentError> {
        LossSet::ABLATION
            .iter()
            .map(|set| {
                let (model, _) = self.tuned(base, *set)?;
                let report = self.evaluate(&model, &format!("tuned:{}", set.label()))?;
                Ok(AblationRow { label: set.label(), report })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_corpus_and_vocabulary_are_well_formed() {
        let corpus = demo_corpus();
        assert_eq!(corpus.len(), 320);
        let lexicon = AttributeLexicon::default_pairs();
        let vocab = demo_vocabulary(&corpus, &lexicon);
        // Every attribute word must be a whole token so tuning reads exact
        // probabilities.
        for w in lexicon.all_words() {
            assert!(vocab.iter().any(|v| v == w), "missing attribute word {w}");
        }
        assert!(vocab.len() + 2 <= 256, "vocabulary too large: {}", vocab.len());
        let model = ToyLm::new(&vocab, 1).unwrap();
        assert!(model.param_count() < 100_000, "{} params", model.param_count());
    }

    #[test]
    fn demo_probe_sets_are_disjoint_and_neutral() {
        let exp = ToyExperiment::demo().unwrap();
        assert_eq!(exp.tune_probes.len(), 24);
        assert_eq!(exp.eval_probes.len(), 16);
        let tune_texts: std::collections::HashSet<&str> =
            exp.tune_probes.probes.iter().map(|p| p.text.as_str()).collect();
        for p in &exp.eval_probes.probes {
            assert!(!tune_texts.contains(p.text.as_str()), "leaked probe {}", p.text);
            assert_eq!(exp.lexicon.indicator(&p.text), 0);
        }
    }

    #[test]
    fn pretrained_demo_model_is_deterministic() {
        let a = pretrained_demo_model(3).unwrap();
        let b = pretrained_demo_model(3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pretrained_model_learned_the_skew() {
        // After pretraining, a female-skewed probe should put clearly more
        // mass on "she" than "he" right after the probe's "and".
        let model = pretrained_demo_model(3).unwrap();
        let mut ctx = model.tokenize("my friend is a nurse");
        ctx.push(model.token_id("and").unwrap());
        let probs = model.next_dist(&ctx);
        let she = probs[model.token_id("she").unwrap()];
        let he = probs[model.token_id("he").unwrap()];
        assert!(
            she > 1.5 * he,
            "skew not learned: P(she)={she:.4} P(he)={he:.4}"
        );
    }

    #[test]
    fn evaluation_produces_a_full_report() {
        let exp = ToyExperiment::demo().unwrap();
        let model = pretrained_demo_model(3).unwrap();
        let report = exp.evaluate(&model, "baseline").unwrap();
        assert_eq!(report.n, 16);
        assert_eq!(report.set_name, "toy-eval");
        assert_eq!(report.backend, "toy");
        assert!(report.gas >= 0.0 && report.gas <= 1.0);
        assert!(report.gld >= 0.0 && report.gld <= 1.0);
        assert!(report.add_raw >= 0.0);
    }

    #[test]
    fn tuning_reduces_the_training_loss() {
        let exp = ToyExperiment::demo().unwrap();
        let base = pretrained_demo_model(3).unwrap();
        let (_, trace) = exp.tuned(&base, LossSet::FULL).unwrap();
        assert_eq!(trace.len(), exp.opts.steps);
        let first = trace.first().unwrap().total;
        let last = trace.last().unwrap().total;
        assert!(last < first, "loss did not fall: {first} -> {last}");
    }
}
