//! Training loops for the toy model: corpus pretraining and bias tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backends::AttributeDistribution;
use crate::lexicon::AttributeLexicon;
use crate::probes::ProbeSet;
use crate::tuning::losses::{compute_losses, loss_gradients, LossBreakdown, LossConfig, LossError};
use crate::tuning::model::{ToyLm, EOS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error("learning rate must be positive and finite, got {0}")]
    BadLearningRate(f64),
    #[error("attribute word {0:?} cannot be tokenized by the model")]
    UnscorableWord(String),
}

/// Hyperparameters for one bias-tuning run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TuneOptions {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TuneOptions {
    fn default() -> Self {
        TuneOptions { steps: 500, lr: 2e-4, batch_size: 16 }
    }
}

/// Which of the three losses participate in a tuning run. Leave-one-out
/// variants support ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSet {
    pub use_d: bool,
    pub use_g: bool,
    pub use_l: bool,
}

impl LossSet {
    pub const FULL: LossSet = LossSet { use_d: true, use_g: true, use_l: true };
    pub const WITHOUT_D: LossSet = LossSet { use_d: false, use_g: true, use_l: true };
    pub const WITHOUT_G: LossSet = LossSet { use_d: true, use_g: false, use_l: true };
    pub const WITHOUT_L: LossSet = LossSet { use_d: true, use_g: true, use_l: false };

    /// The four rows of the standard ablation: everything, then each loss
    /// dropped in turn.
    pub const ABLATION: [LossSet; 4] =
        [Self::FULL, Self::WITHOUT_D, Self::WITHOUT_G, Self::WITHOUT_L];

    pub fn label(&self) -> String {
        match (self.use_d, self.use_g, self.use_l) {
            (true, true, true) => "full".into(),
            (false, true, true) => "wo_ld".into(),
            (true, false, true) => "wo_lg".into(),
            (true, true, false) => "wo_ll".into(),
            (d, g, l) => {
                let mut parts = Vec::new();
                if d {
                    parts.push("ld");
                }
                if g {
                    parts.push("lg");
                }
                if l {
                    parts.push("ll");
                }
                if parts.is_empty() {
                    "none".into()
                } else {
                    parts.join("+")
                }
            }
        }
    }

    /// Zeroes the weights of excluded losses, leaving the rest untouched.
    pub fn apply(&self, cfg: &LossConfig) -> LossConfig {
        LossConfig {
            epsilon: cfg.epsilon,
            w_d: if self.use_d { cfg.w_d } else { 0.0 },
            w_g: if self.use_g { cfg.w_g } else { 0.0 },
            w_l: if self.use_l { cfg.w_l } else { 0.0 },
        }
    }
}

/// Cross-entropy pretraining over a sentence corpus with per-example SGD.
///
/// Each sentence becomes (context, target) pairs for every position,
/// terminated by the end-of-sentence token. Example order is reshuffled each
/// epoch from a ChaCha stream, so a (model, corpus, seed) triple always
/// trains identically. Returns the mean per-token loss of each epoch.
pub fn pretrain(
    model: &mut ToyLm,
    corpus: &[String],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(TrainError::BadLearningRate(lr));
    }
    let examples: Vec<Vec<usize>> = corpus
        .iter()
        .map(|s| {
            let mut ids = model.tokenize(s);
            ids.push(EOS);
            ids
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut tokens = 0usize;
        for &ei in &order {
            let ids = &examples[ei];
            let mut grads = model.zero_gradients();
            for t in 0..ids.len() {
                loss_sum += model.accumulate_cross_entropy(&ids[..t], ids[t], &mut grads);
                tokens += 1;
            }
            model.apply_gradients(&grads, lr);
        }
        trace.push(if tokens == 0 { 0.0 } else { loss_sum / tokens as f64 });
    }
    Ok(trace)
}

/// Token ids the tuner reads attribute probabilities from: one per lexicon
/// word, in pair order. A multi-piece word is represented by its first piece
/// (exact whenever the vocabulary carries the word whole, as the bundled
/// experiment does).
fn attribute_token_ids(
    model: &ToyLm,
    lexicon: &AttributeLexicon,
) -> Result<(Vec<usize>, Vec<usize>), TrainError> {
    let first_piece = |word: &str| -> Result<usize, TrainError> {
        model
            .tokenize_word(word)
            .and_then(|ts| ts.first().copied())
            .ok_or_else(|| TrainError::UnscorableWord(word.to_string()))
    };
    let mut f_tok = Vec::with_capacity(lexicon.len());
    let mut m_tok = Vec::with_capacity(lexicon.len());
    for pair in lexicon.pairs() {
        f_tok.push(first_piece(&pair.female)?);
        m_tok.push(first_piece(&pair.male)?);
    }
    Ok((f_tok, m_tok))
}

/// One bias-tuning run: gradient descent on the weighted loss total, read
/// from the next-token distribution at the end of each probe.
///
/// Probes are consumed round-robin in `batch_size` slices (capped at the set
/// size); each step forwards its batch, evaluates the losses, backpropagates
/// through the softmax, and applies one summed update. The returned trace
/// holds the pre-update loss of every step, so `trace.first()` is the
/// untouched model and a shrinking `total` means tuning is working.
pub fn tune(
    model: &mut ToyLm,
    probes: &ProbeSet,
    lexicon: &AttributeLexicon,
    cfg: &LossConfig,
    opts: &TuneOptions,
) -> Result<Vec<LossBreakdown>, TrainError> {
    if opts.batch_size == 0 {
        return Err(TrainError::BadBatchSize);
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(TrainError::BadLearningRate(opts.lr));
    }
    let (f_tok, m_tok) = attribute_token_ids(model, lexicon)?;
    let contexts: Vec<Vec<usize>> = probes.probes.iter().map(|p| model.tokenize(&p.text)).collect();

    let n = contexts.len();
    let batch = opts.batch_size.min(n);
    let mut trace = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let start = (step * batch) % n;
        let batch_idx: Vec<usize> = (0..batch).map(|j| (start + j) % n).collect();

        let mut fwds = Vec::with_capacity(batch);
        let mut dists = Vec::with_capacity(batch);
        for &pi in &batch_idx {
            let fwd = model.forward(&contexts[pi]);
            let pf: Vec<f64> = f_tok.iter().map(|&t| fwd.probs[t]).collect();
            let pm: Vec<f64> = m_tok.iter().map(|&t| fwd.probs[t]).collect();
            dists.push(AttributeDistribution {
                probe_id: probes.probes[pi].id.clone(),
                pf,
                pm,
            });
            fwds.push(fwd);
        }

        let breakdown = compute_losses(&dists, cfg)?;
        if !breakdown.total.is_finite() {
            return Err(LossError::NonFinite { step }.into());
        }
        let pair_grads = loss_gradients(&dists, cfg)?;

        let mut grads = model.zero_gradients();
        for (fwd, (gpf, gpm)) in fwds.iter().zip(&pair_grads) {
            // Scatter the per-word gradients onto the vocabulary, then pull
            // them back through the softmax:
            // d logit_j = p_j * (g_j - sum_w g_w p_w).
            let mut dprobs = vec![0.0; fwd.probs.len()];
            for (i, &t) in f_tok.iter().enumerate() {
                dprobs[t] += gpf[i];
            }
            for (i, &t) in m_tok.iter().enumerate() {
                dprobs[t] += gpm[i];
            }
            let dot: f64 = dprobs.iter().zip(&fwd.probs).map(|(g, p)| g * p).sum();
            let dlogits: Vec<f64> = fwd
                .probs
                .iter()
                .zip(&dprobs)
                .map(|(p, g)| p * (g - dot))
                .collect();
            model.accumulate(fwd, &dlogits, &mut grads);
        }
        model.apply_gradients(&grads, opts.lr);
        trace.push(breakdown);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::AttributeLexicon;
    use crate::probes::{Probe, Strategy};

    fn lex() -> AttributeLexicon {
        AttributeLexicon::default_pairs()
    }

    /// Small vocabulary containing every lexicon word plus filler.
    fn demo_model(seed: u64) -> ToyLm {
        let lexicon = lex();
        let mut words: Vec<String> = lexicon.all_words().iter().map(|s| s.to_string()).collect();
        words.sort();
        for w in ["my", "friend", "is", "a", "nurse", "pilot", "kind", "likes", "tea"] {
            words.push(w.into());
        }
        ToyLm::new(&words, seed).unwrap()
    }

    fn probe_set() -> ProbeSet {
        let texts = ["My friend is a nurse", "My friend is a pilot", "My friend likes tea"];
        ProbeSet::new(
            "tune",
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Probe {
                    id: format!("p-{i}"),
                    text: t.to_string(),
                    strategy: Strategy::Template,
                    topic: None,
                    source_ref: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pretrain_reduces_cross_entropy() {
        let mut model = demo_model(7);
        let corpus: Vec<String> = vec![
            "my friend is a nurse".into(),
            "my friend is a pilot".into(),
            "she is kind".into(),
            "he likes tea".into(),
        ];
        let trace = pretrain(&mut model, &corpus, 30, 0.05, 11).unwrap();
        assert_eq!(trace.len(), 30);
        assert!(
            trace.last().unwrap() < &(trace[0] * 0.7),
            "loss did not fall: {} -> {}",
            trace[0],
            trace.last().unwrap()
        );
    }

    #[test]
    fn pretrain_is_deterministic_in_the_seed() {
        let corpus: Vec<String> = vec!["my friend likes tea".into(), "she is kind".into()];
        let mut a = demo_model(3);
        let mut b = demo_model(3);
        pretrain(&mut a, &corpus, 5, 0.05, 42).unwrap();
        pretrain(&mut b, &corpus, 5, 0.05, 42).unwrap();
        assert_eq!(a, b);
        let mut c = demo_model(3);
        pretrain(&mut c, &corpus, 5, 0.05, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tune_reduces_the_loss_it_descends() {
        let mut model = demo_model(5);
        let probes = probe_set();
        let opts = TuneOptions { steps: 60, lr: 0.05, batch_size: 2 };
        let trace = tune(&mut model, &probes, &lex(), &LossConfig::default(), &opts).unwrap();
        assert_eq!(trace.len(), 60);
        assert!(
            trace.last().unwrap().total < trace[0].total,
            "total did not fall: {} -> {}",
            trace[0].total,
            trace.last().unwrap().total
        );
    }

    #[test]
    fn tune_with_zero_steps_is_identity() {
        let mut model = demo_model(5);
        let before = model.clone();
        let opts = TuneOptions { steps: 0, ..TuneOptions::default() };
        let trace = tune(&mut model, &probe_set(), &lex(), &LossConfig::default(), &opts).unwrap();
        assert!(trace.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn tune_numeric_gradient_agrees_on_a_tiny_step() {
        // One step of tune() must move parameters along -lr * dL/dtheta.
        // Check indirectly: a tiny-lr step changes the batch loss by about
        // -lr * ||g||^2, i.e. the loss cannot increase.
        let mut model = demo_model(9);
        let probes = probe_set();
        let cfg = LossConfig::default();
        let opts = TuneOptions { steps: 1, lr: 1e-4, batch_size: 3 };
        let before = tune(&mut model, &probes, &lex(), &cfg, &opts).unwrap()[0].total;
        // Second call re-evaluates the same batch on the updated model.
        let after = tune(&mut model, &probes, &lex(), &cfg, &opts).unwrap()[0].total;
        assert!(after <= before, "descent step increased loss: {before} -> {after}");
    }

    #[test]
    fn tune_validates_options() {
        let mut model = demo_model(5);
        let bad_batch = TuneOptions { batch_size: 0, ..TuneOptions::default() };
        assert!(matches!(
            tune(&mut model, &probe_set(), &lex(), &LossConfig::default(), &bad_batch),
            Err(TrainError::BadBatchSize)
        ));
        let bad_lr = TuneOptions { lr: 0.0, ..TuneOptions::default() };
        assert!(matches!(
            tune(&mut model, &probe_set(), &lex(), &LossConfig::default(), &bad_lr),
            Err(TrainError::BadLearningRate(_))
        ));
    }

    #[test]
    fn tuning_errors_on_untokenizable_attribute_words() {
        // A vocabulary missing "woman" entirely (and any pieces of it).
        let mut model = ToyLm::new(&["my", "friend", "she", "he"], 1).unwrap();
        let err = tune(
            &mut model,
            &probe_set(),
            &lex(),
            &LossConfig::default(),
            &TuneOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, TrainError::UnscorableWord(_)));
    }

    #[test]
    fn loss_set_labels_and_weights() {
        assert_eq!(LossSet::FULL.label(), "full");
        assert_eq!(LossSet::WITHOUT_D.label(), "wo_ld");
        assert_eq!(LossSet::WITHOUT_G.label(), "wo_lg");
        assert_eq!(LossSet::WITHOUT_L.label(), "wo_ll");
        let only_d = LossSet { use_d: true, use_g: false, use_l: false };
        assert_eq!(only_d.label(), "ld");

        let cfg = LossConfig { epsilon: 1e-10, w_d: 2.0, w_g: 3.0, w_l: 4.0 };
        let wo_g = LossSet::WITHOUT_G.apply(&cfg);
        assert_eq!(wo_g.w_d, 2.0);
        assert_eq!(wo_g.w_g, 0.0);
        assert_eq!(wo_g.w_l, 4.0);
    }
}
