//! A word-level toy language model small enough to tune in tests.
//!
//! Architecture: embedding table (16 dims), mean-pool over the last 8 context
//! tokens, one tanh hidden layer (32 units), linear projection to the
//! vocabulary. Everything is plain `Vec<f64>`; forward and backward passes
//! are hand-written. The parameter budget stays under 1e5 by construction
//! (vocabulary capped at 256 words, each lexicon word a single token).

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::text;

/// Fallback token for out-of-vocabulary words.
pub const UNK: usize = 0;
/// End-of-sentence token; generation stops when it is sampled.
pub const EOS: usize = 1;

const UNK_TOKEN: &str = "<unk>";
const EOS_TOKEN: &str = "</s>";
const MAX_VOCAB: usize = 256;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("vocabulary of {0} words exceeds the {MAX_VOCAB}-token budget")]
    VocabTooLarge(usize),
    #[error("vocabulary word {0:?} appears twice")]
    DuplicateWord(String),
    #[error("vocabulary must contain at least one word")]
    EmptyVocab,
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// The model. Weight layout is row-major: `emb[v*dim..]` is the embedding of
/// token `v`, `w1[h*dim..]` the input weights of hidden unit `h`, and
/// `w2[v*hidden..]` the output weights of token `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyLm {
    format_version: u32,
    pub seed: u64,
    pub dim: usize,
    pub context_len: usize,
    pub hidden: usize,
    vocab: Vec<String>,
    emb: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    #[serde(skip)]
    word_ids: HashMap<String, usize>,
}

/// Intermediate activations of one forward pass, kept for backprop.
pub struct Forward {
    pub window: Vec<usize>,
    pub pool: Vec<f64>,
    pub hid: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Gradient accumulator with the same layout as the parameters.
pub struct Gradients {
    pub emb: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ToyLm {
    /// Builds a freshly initialized model over `words` plus the `<unk>` and
    /// `</s>` specials. Weights are Gaussian (std 0.1) from a ChaCha8 stream
    /// seeded with `seed`; biases start at zero.
    pub fn new<S: AsRef<str>>(words: &[S], seed: u64) -> Result<Self, ModelError> {
        let mut vocab: Vec<String> = vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()];
        let mut seen: HashMap<String, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        for w in words {
            let w = w.as_ref().to_lowercase();
            if seen.contains_key(&w) {
                return Err(ModelError::DuplicateWord(w));
            }
            seen.insert(w.clone(), vocab.len());
            vocab.push(w);
        }
        if vocab.len() <= 2 {
            return Err(ModelError::EmptyVocab);
        }
        if vocab.len() > MAX_VOCAB {
            return Err(ModelError::VocabTooLarge(vocab.len()));
        }

        let (dim, context_len, hidden) = (16, 8, 32);
        let v = vocab.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        let mut model = ToyLm {
            format_version: FORMAT_VERSION,
            seed,
            dim,
            context_len,
            hidden,
            emb: draw(v * dim),
            w1: draw(hidden * dim),
            b1: vec![0.0; hidden],
            w2: draw(v * hidden),
            b2: vec![0.0; v],
            vocab,
            word_ids: HashMap::new(),
        };
        model.word_ids = seen;
        debug_assert!(model.param_count() < 100_000);
        Ok(model)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn param_count(&self) -> usize {
        self.emb.len() + self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn token_id(&self, word: &str) -> Option<usize> {
        self.word_ids.get(word).copied()
    }

    pub fn token_text(&self, id: usize) -> &str {
        &self.vocab[id]
    }

    /// Token ids for one lowercased word. In-vocabulary words map to a single
    /// token; unknown words fall back to a greedy longest-prefix segmentation
    /// into vocabulary pieces (so "herself" becomes ["her", "self"] when the
    /// vocabulary has the pieces but not the whole). `None` when no full
    /// segmentation exists.
    pub fn tokenize_word(&self, word: &str) -> Option<Vec<usize>> {
        if let Some(id) = self.token_id(word) {
            return Some(vec![id]);
        }
        fn segment(lm: &ToyLm, rest: &str, out: &mut Vec<usize>) -> bool {
            if rest.is_empty() {
                return true;
            }
            // Longest matching prefix first, backtracking on dead ends.
            let mut lens: Vec<usize> = (1..=rest.len())
                .filter(|&l| rest.is_char_boundary(l))
                .collect();
            lens.reverse();
            for l in lens {
                if let Some(id) = lm.token_id(&rest[..l]) {
                    out.push(id);
                    if segment(lm, &rest[l..], out) {
                        return true;
                    }
                    out.pop();
                }
            }
            false
        }
        let mut out = Vec::new();
        if segment(self, word, &mut out) && !out.is_empty() {
            Some(out)
        } else {
            None
        }
    }

    /// Tokenizes running text: word segmentation as everywhere else in the
    /// harness, lowercased, unknown words collapsing to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut ids = Vec::new();
        for word in text::words_lower(text) {
            match self.tokenize_word(&word) {
                Some(mut ts) => ids.append(&mut ts),
                None => ids.push(UNK),
            }
        }
        ids
    }

    /// The pooled context window: the last `context_len` tokens of `ctx`.
    fn window<'a>(&self, ctx: &'a [usize]) -> &'a [usize] {
        let start = ctx.len().saturating_sub(self.context_len);
        &ctx[start..]
    }

    /// Full forward pass for the next-token distribution after `ctx`.
    pub fn forward(&self, ctx: &[usize]) -> Forward {
        let window: Vec<usize> = self.window(ctx).to_vec();
        let mut pool = vec![0.0; self.dim];
        if !window.is_empty() {
            for &t in &window {
                let e = &self.emb[t * self.dim..(t + 1) * self.dim];
                for (p, x) in pool.iter_mut().zip(e) {
                    *p += x;
                }
            }
            let inv = 1.0 / window.len() as f64;
            for p in pool.iter_mut() {
                *p *= inv;
            }
        }

        let mut hid = vec![0.0; self.hidden];
        for h in 0..self.hidden {
            let row = &self.w1[h * self.dim..(h + 1) * self.dim];
            let mut acc = self.b1[h];
            for (w, x) in row.iter().zip(&pool) {
                acc += w * x;
            }
            hid[h] = acc.tanh();
        }

        let v = self.vocab.len();
        let mut logits = vec![0.0; v];
        for t in 0..v {
            let row = &self.w2[t * self.hidden..(t + 1) * self.hidden];
            let mut acc = self.b2[t];
            for (w, x) in row.iter().zip(&hid) {
                acc += w * x;
            }
            logits[t] = acc;
        }

        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }

        Forward { window, pool, hid, logits, probs }
    }

    pub fn next_logits(&self, ctx: &[usize]) -> Vec<f64> {
        self.forward(ctx).logits
    }

    pub fn next_dist(&self, ctx: &[usize]) -> Vec<f64> {
        self.forward(ctx).probs
    }

    /// Teacher-forced probability of `word` (possibly multi-token) appearing
    /// right after `ctx`: the product of each piece's probability given the
    /// prompt plus the earlier pieces. `None` when the word cannot be
    /// tokenized without `<unk>`.
    pub fn word_prob(&self, ctx: &[usize], word: &str) -> Option<f64> {
        let pieces = self.tokenize_word(word)?;
        let mut running: Vec<usize> = ctx.to_vec();
        let mut p = 1.0;
        for t in pieces {
            p *= self.forward(&running).probs[t];
            running.push(t);
        }
        Some(p)
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            emb: vec![0.0; self.emb.len()],
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        }
    }

    /// Backpropagates an upstream gradient on the logits of one forward pass
    /// into `grads`.
    pub fn accumulate(&self, fwd: &Forward, dlogits: &[f64], grads: &mut Gradients) {
        let mut dhid = vec![0.0; self.hidden];
        for t in 0..self.vocab.len() {
            let g = dlogits[t];
            if g == 0.0 {
                continue;
            }
            grads.b2[t] += g;
            let row = &self.w2[t * self.hidden..(t + 1) * self.hidden];
            let grow = &mut grads.w2[t * self.hidden..(t + 1) * self.hidden];
            for h in 0..self.hidden {
                grow[h] += g * fwd.hid[h];
                dhid[h] += g * row[h];
            }
        }

        let mut dpool = vec![0.0; self.dim];
        for h in 0..self.hidden {
            // d tanh(u)/du = 1 - tanh(u)^2
            let dpre = dhid[h] * (1.0 - fwd.hid[h] * fwd.hid[h]);
            if dpre == 0.0 {
                continue;
            }
            grads.b1[h] += dpre;
            let row = &self.w1[h * self.dim..(h + 1) * self.dim];
            let grow = &mut grads.w1[h * self.dim..(h + 1) * self.dim];
            for d in 0..self.dim {
                grow[d] += dpre * fwd.pool[d];
                dpool[d] += dpre * row[d];
            }
        }

        if !fwd.window.is_empty() {
            let inv = 1.0 / fwd.window.len() as f64;
            for &t in &fwd.window {
                let grow = &mut grads.emb[t * self.dim..(t + 1) * self.dim];
                for d in 0..self.dim {
                    grow[d] += dpool[d] * inv;
                }
            }
        }
    }

    /// Cross-entropy on one (context, target) pair; returns the loss and
    /// accumulates its gradient.
    pub fn accumulate_cross_entropy(
        &self,
        ctx: &[usize],
        target: usize,
        grads: &mut Gradients,
    ) -> f64 {
        let fwd = self.forward(ctx);
        let mut dlogits = fwd.probs.clone();
        dlogits[target] -= 1.0;
        self.accumulate(&fwd, &dlogits, grads);
        -fwd.probs[target].max(f64::MIN_POSITIVE).ln()
    }

    /// Plain gradient-descent update: `theta -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in self.emb.iter_mut().zip(&grads.emb) {
            *p -= lr * g;
        }
        for (p, g) in self.w1.iter_mut().zip(&grads.w1) {
            *p -= lr * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grads.b1) {
            *p -= lr * g;
        }
        for (p, g) in self.w2.iter_mut().zip(&grads.w2) {
            *p -= lr * g;
        }
        for (p, g) in self.b2.iter_mut().zip(&grads.b2) {
            *p -= lr * g;
        }
    }

    /// Serializes the checkpoint (versioned JSON with embedded vocabulary and
    /// seed) to a writer.
    pub fn save<W: std::io::Write>(&self, mut w: W) -> Result<(), ModelError> {
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn save_to_path(&self, path: &Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(f))
    }

    /// Loads a checkpoint, validating version and weight shapes.
    pub fn load<R: std::io::Read>(r: R, origin: &str) -> Result<Self, ModelError> {
        let mut model: ToyLm = serde_json::from_reader(r)?;
        let bad = |reason: &str| ModelError::BadCheckpoint {
            path: origin.to_string(),
            reason: reason.to_string(),
        };
        if model.format_version != FORMAT_VERSION {
            return Err(bad(&format!(
                "format version {} unsupported (expected {FORMAT_VERSION})",
                model.format_version
            )));
        }
        let v = model.vocab.len();
        if v < 2 || v > MAX_VOCAB {
            return Err(bad(&format!("vocabulary size {v} out of range")));
        }
        if model.emb.len() != v * model.dim
            || model.w1.len() != model.hidden * model.dim
            || model.b1.len() != model.hidden
            || model.w2.len() != v * model.hidden
            || model.b2.len() != v
        {
            return Err(bad("weight shapes do not match dims"));
        }
        if model
            .emb
            .iter()
            .chain(&model.w1)
            .chain(&model.b1)
            .chain(&model.w2)
            .chain(&model.b2)
            .any(|x| !x.is_finite())
        {
            return Err(bad("non-finite parameter"));
        }
        model.word_ids = model
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        if model.word_ids.len() != v {
            return Err(bad("duplicate vocabulary entries"));
        }
        Ok(model)
    }

    pub fn load_from_path(path: &Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f), &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny() -> ToyLm {
        ToyLm::new(&["my", "friend", "likes", "tea", "and", "she", "he"], 7).unwrap()
    }

    #[test]
    fn parameter_budget_holds_at_maximum_vocab() {
        let words: Vec<String> = (0..254).map(|i| format!("w{i}")).collect();
        let lm = ToyLm::new(&words, 0).unwrap();
        assert_eq!(lm.vocab_size(), 256);
        assert!(lm.param_count() < 100_000, "params = {}", lm.param_count());
    }

    #[test]
    fn vocab_over_budget_is_rejected() {
        let words: Vec<String> = (0..255).map(|i| format!("w{i}")).collect();
        assert!(matches!(
            ToyLm::new(&words, 0),
            Err(ModelError::VocabTooLarge(257))
        ));
    }

    #[test]
    fn duplicate_vocab_is_rejected() {
        assert!(matches!(
            ToyLm::new(&["tea", "Tea"], 0),
            Err(ModelError::DuplicateWord(_))
        ));
    }

    #[test]
    fn next_dist_is_a_distribution() {
        let lm = tiny();
        let ctx = lm.tokenize("my friend likes");
        let probs = lm.next_dist(&ctx);
        let sum: f64 = probs.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let lm = tiny();
        assert_eq!(lm.tokenize("my xyzzy"), vec![lm.token_id("my").unwrap(), UNK]);
    }

    #[test]
    fn segmentation_splits_unknown_compounds() {
        let lm = ToyLm::new(&["her", "self", "hers"], 3).unwrap();
        // "herself" is not a token; greedy-longest tries "hers" + "elf"
        // (fails) and backtracks to "her" + "self".
        let ids = lm.tokenize_word("herself").unwrap();
        let words: Vec<&str> = ids.iter().map(|&i| lm.token_text(i)).collect();
        assert_eq!(words, vec!["her", "self"]);
    }

    #[test]
    fn multi_token_word_prob_is_the_teacher_forced_product() {
        let lm = ToyLm::new(&["my", "friend", "her", "self"], 11).unwrap();
        let ctx = lm.tokenize("my friend");
        let her = lm.token_id("her").unwrap();
        let selfv = lm.token_id("self").unwrap();
        // Exhaustive forward passes, by hand.
        let p1 = lm.next_dist(&ctx)[her];
        let mut ctx2 = ctx.clone();
        ctx2.push(her);
        let p2 = lm.next_dist(&ctx2)[selfv];
        let got = lm.word_prob(&ctx, "herself").unwrap();
        assert_abs_diff_eq!(got, p1 * p2, epsilon = 1e-15);
    }

    #[test]
    fn word_prob_refuses_unsegmentable_words() {
        let lm = tiny();
        assert!(lm.word_prob(&lm.tokenize("my friend"), "qqq").is_none());
    }

    #[test]
    fn pool_uses_only_the_window() {
        let lm = tiny();
        let long: Vec<usize> = std::iter::repeat(lm.token_id("tea").unwrap())
            .take(3)
            .chain(std::iter::repeat(lm.token_id("she").unwrap()).take(8))
            .collect();
        let short = vec![lm.token_id("she").unwrap(); 8];
        // Both contexts share the same trailing window of 8 tokens.
        assert_eq!(lm.next_logits(&long), lm.next_logits(&short));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let lm = tiny();
        let mut buf = Vec::new();
        lm.save(&mut buf).unwrap();
        let back = ToyLm::load(&buf[..], "mem").unwrap();
        assert_eq!(lm, back);
    }

    #[test]
    fn corrupt_checkpoints_are_refused() {
        let lm = tiny();
        let mut buf = Vec::new();
        lm.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let wrong_version = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            ToyLm::load(wrong_version.as_bytes(), "mem"),
            Err(ModelError::BadCheckpoint { .. })
        ));
        let truncated = text.replace("\"hidden\":32", "\"hidden\":33");
        assert!(matches!(
            ToyLm::load(truncated.as_bytes(), "mem"),
            Err(ModelError::BadCheckpoint { .. })
        ));
    }

    #[test]
    fn cross_entropy_gradients_match_finite_differences() {
        let lm = ToyLm::new(&["a", "b", "c"], 5).unwrap();
        let ctx = vec![lm.token_id("a").unwrap(), lm.token_id("b").unwrap()];
        let target = lm.token_id("c").unwrap();
        let mut grads = lm.zero_gradients();
        lm.accumulate_cross_entropy(&ctx, target, &mut grads);

        let h = 1e-6;
        let loss = |m: &ToyLm| -m.forward(&ctx).probs[target].ln();
        // Spot-check a handful of parameters across all tensors.
        let cases: Vec<(f64, Box<dyn Fn(&mut ToyLm) -> &mut f64>, &str)> = vec![
            (grads.emb[3], Box::new(|m| &mut m.emb[3]), "emb[3]"),
            (grads.w1[10], Box::new(|m| &mut m.w1[10]), "w1[10]"),
            (grads.b1[0], Box::new(|m| &mut m.b1[0]), "b1[0]"),
            (grads.w2[7], Box::new(|m| &mut m.w2[7]), "w2[7]"),
            (grads.b2[2], Box::new(|m| &mut m.b2[2]), "b2[2]"),
        ];
        for (grad, slot, name) in cases {
            let mut plus = lm.clone();
            *slot(&mut plus) += h;
            let mut minus = lm.clone();
            *slot(&mut minus) -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!(
                (fd - grad).abs() < 1e-5 * grad.abs().max(fd.abs()).max(1e-3),
                "{name}: analytic {grad} vs fd {fd}"
            );
        }
    }
}
