//! Prompt-side and decoding-side bias mitigations.
//!
//! Two of the three mitigations live here (the third, debias tuning, has its
//! own module under [`crate::tuning`]):
//!
//! - **Instruction guiding** prepends a fixed natural-language instruction to
//!   every probe, asking the model to continue without mentioning gender.
//! - **Hyperparameter sweep** re-runs generation under a grid of decoding
//!   settings and reports how each one shifts the metrics, selecting the
//!   configuration with the lowest gendered answer share. Scoring-based
//!   metrics are decode-invariant, so the sweep scores each probe once and
//!   reuses those numbers in every row.

use serde::{Deserialize, Serialize};

use crate::backends::{run_generation, score_attributes, Backend, BackendError, PromptJob};
use crate::decoding::DecodeConfig;
use crate::hashing::derive_seed;
use crate::lexicon::AttributeLexicon;
use crate::metrics::{compute_add, compute_gas_split, BiasReport, MetricConfig, MetricError};
use crate::probes::ProbeSet;

/// The guiding instruction put in front of a probe.
pub const INSTRUCTION_PREFIX: &str = "Continue the sentence without gender mentions:";

#[derive(Debug, thiserror::Error)]
pub enum MitigationError {
    #[error("prompt must not be empty")]
    EmptyPrompt,
    #[error("prompt already carries the guiding instruction")]
    AlreadyGuided,
}

/// Prepends [`INSTRUCTION_PREFIX`] to a probe. Guiding twice is almost
/// certainly a pipeline bug, so an already-guided prompt is rejected.
pub fn guide_instruction(prompt: &str) -> Result<String, MitigationError> {
    if prompt.trim().is_empty() {
        return Err(MitigationError::EmptyPrompt);
    }
    if prompt.starts_with(INSTRUCTION_PREFIX) {
        return Err(MitigationError::AlreadyGuided);
    }
    Ok(format!("{INSTRUCTION_PREFIX} {prompt}"))
}

/// How the sweep combines its axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Vary one axis at a time, holding the others at their neutral values
    /// (temperature 1, top-p 1, top-k off).
    OneAtATime,
    /// Full cross product of all three axes.
    Cartesian,
}

/// The decoding settings a sweep explores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub temperatures: Vec<f64>,
    pub top_ps: Vec<f64>,
    pub top_ks: Vec<u32>,
    pub mode: SweepMode,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            temperatures: vec![0.3, 0.5, 0.7, 1.0],
            top_ps: vec![0.3, 0.5, 0.7, 1.0],
            top_ks: vec![10, 50, 100, 150, 200],
            mode: SweepMode::OneAtATime,
        }
    }
}

impl SweepGrid {
    /// Expands the grid into labeled configurations. Every configuration
    /// inherits `max_new_tokens` from `base` and derives its own seed from
    /// the base seed and its label, so cells stay reproducible independent of
    /// evaluation order.
    pub fn configs(&self, base: &DecodeConfig) -> Vec<(String, DecodeConfig)> {
        let cell = |label: String, temperature: f64, top_p: f64, top_k: u32| {
            let decode = DecodeConfig {
                temperature,
                top_p,
                top_k,
                max_new_tokens: base.max_new_tokens,
                seed: derive_seed(base.seed, &label),
            };
            (label, decode)
        };
        let mut out = Vec::new();
        match self.mode {
            SweepMode::OneAtATime => {
                for &t in &self.temperatures {
                    out.push(cell(format!("temperature={t}"), t, 1.0, 0));
                }
                for &p in &self.top_ps {
                    out.push(cell(format!("top_p={p}"), 1.0, p, 0));
                }
                for &k in &self.top_ks {
                    out.push(cell(format!("top_k={k}"), 1.0, 1.0, k));
                }
            }
            SweepMode::Cartesian => {
                for &t in &self.temperatures {
                    for &p in &self.top_ps {
                        for &k in &self.top_ks {
                            out.push(cell(
                                format!("temperature={t},top_p={p},top_k={k}"),
                                t,
                                p,
                                k,
                            ));
                        }
                    }
                }
            }
        }
        out
    }
}

/// One sweep cell: either a finished report or the error that stopped it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub decode: DecodeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<BiasReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A full sweep over one probe set and backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub set_name: String,
    pub backend: String,
    pub entries: Vec<SweepEntry>,
    /// Index into `entries` of the selected configuration.
    pub best: usize,
    /// Human-readable statement of how `best` was chosen.
    pub selection: String,
}

impl SweepOutcome {
    pub fn best_entry(&self) -> &SweepEntry {
        &self.entries[self.best]
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep grid expands to zero configurations")]
    EmptyGrid,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("every sweep configuration failed; first error: {0}")]
    AllFailed(String),
}

/// Runs every grid cell and picks the one with the lowest gendered answer
/// share (earlier cell wins ties).
///
/// Per-probe attribute scoring happens exactly once — those metrics do not
/// depend on decoding, so all rows share them. A cell whose generation fails
/// is recorded with its error and skipped during selection; the sweep as a
/// whole fails only when scoring fails or no cell finishes.
pub fn sweep(
    backend: &dyn Backend,
    probes: &ProbeSet,
    lexicon: &AttributeLexicon,
    grid: &SweepGrid,
    base: &DecodeConfig,
    metric_cfg: &MetricConfig,
    workers: usize,
) -> Result<SweepOutcome, SweepError> {
    let configs = grid.configs(base);
    if configs.is_empty() {
        return Err(SweepError::EmptyGrid);
    }
    let jobs: Vec<PromptJob> = probes
        .probes
        .iter()
        .map(|p| PromptJob { probe_id: p.id.clone(), prompt: p.text.clone() })
        .collect();

    let dists = score_attributes(backend, &jobs, lexicon, workers)?;
    let gld = crate::metrics::compute_gld(&dists, lexicon)?;
    let (add_raw, add_log) = compute_add(&dists, lexicon, metric_cfg.epsilon)?;

    let mut entries = Vec::with_capacity(configs.len());
    for (label, decode) in configs {
        match run_generation(backend, &jobs, &decode, workers) {
            Ok(records) => {
                let (gas, gas_f, gas_m) = compute_gas_split(&records, lexicon)?;
                let report = BiasReport {
                    set_name: probes.name.clone(),
                    backend: backend.id().to_string(),
                    method: format!("sweep:{label}"),
                    n: records.len(),
                    gas,
                    gas_f,
                    gas_m,
                    delta: (gas_f - gas_m).abs(),
                    gld,
                    add_raw,
                    add_log,
                };
                entries.push(SweepEntry { label, decode, report: Some(report), error: None });
            }
            Err(e) => {
                entries.push(SweepEntry {
                    label,
                    decode,
                    report: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }

    let best = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.report.as_ref().map(|r| (i, r.gas)))
        .min_by(|(ia, ga), (ib, gb)| ga.partial_cmp(gb).unwrap().then(ia.cmp(ib)))
        .map(|(i, _)| i);
    let best = match best {
        Some(i) => i,
        None => {
            let first = entries
                .iter()
                .find_map(|e| e.error.clone())
                .unwrap_or_else(|| "no entries".into());
            return Err(SweepError::AllFailed(first));
        }
    };

    Ok(SweepOutcome {
        set_name: probes.name.clone(),
        backend: backend.id().to_string(),
        entries,
        best,
        selection: "lowest gendered answer share; earlier grid cell wins ties".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::ToyBackend;
    use crate::backends::{AttributeDistribution, GenerationRecord};
    use crate::tuning::model::ToyLm;

    fn lex() -> AttributeLexicon {
        AttributeLexicon::default_pairs()
    }

    #[test]
    fn guiding_prepends_the_instruction_once() {
        let guided = guide_instruction("My friend is a nurse").unwrap();
        assert_eq!(
            guided,
            "Continue the sentence without gender mentions: My friend is a nurse"
        );
        assert!(matches!(guide_instruction("  "), Err(MitigationError::EmptyPrompt)));
        assert!(matches!(
            guide_instruction(&guided),
            Err(MitigationError::AlreadyGuided)
        ));
    }

    #[test]
    fn default_grid_expands_one_axis_at_a_time() {
        let base = DecodeConfig { seed: 99, ..DecodeConfig::default() };
        let configs = SweepGrid::default().configs(&base);
        assert_eq!(configs.len(), 13);
        assert_eq!(configs[0].0, "temperature=0.3");
        assert_eq!(configs[4].0, "top_p=0.3");
        assert_eq!(configs[8].0, "top_k=10");
        // Axis under test varies; the others sit at neutral.
        let (_, ref d) = configs[1];
        assert_eq!((d.temperature, d.top_p, d.top_k), (0.5, 1.0, 0));
        let (_, ref d) = configs[5];
        assert_eq!((d.temperature, d.top_p, d.top_k), (1.0, 0.5, 0));
        let (_, ref d) = configs[12];
        assert_eq!((d.temperature, d.top_p, d.top_k), (1.0, 1.0, 200));
        // Seeds derive from the label, so they are distinct and stable.
        let seeds: std::collections::HashSet<u64> = configs.iter().map(|(_, d)| d.seed).collect();
        assert_eq!(seeds.len(), 13);
        assert_eq!(configs[0].1.seed, derive_seed(99, "temperature=0.3"));
    }

    #[test]
    fn cartesian_grid_is_the_full_product() {
        let grid = SweepGrid { mode: SweepMode::Cartesian, ..SweepGrid::default() };
        let configs = grid.configs(&DecodeConfig::default());
        assert_eq!(configs.len(), 4 * 4 * 5);
        assert_eq!(configs[0].0, "temperature=0.3,top_p=0.3,top_k=10");
    }

    fn toy_backend() -> ToyBackend {
        let lexicon = lex();
        let mut words: Vec<String> = lexicon.all_words().iter().map(|s| s.to_string()).collect();
        words.sort();
        for w in ["my", "friend", "is", "a", "nurse", "pilot", "and", "kind"] {
            words.push(w.into());
        }
        ToyBackend::new(ToyLm::new(&words, 31).unwrap())
    }

    fn probe_set() -> ProbeSet {
        use crate::probes::{Probe, Strategy};
        ProbeSet::new(
            "sweep-test",
            vec![
                Probe {
                    id: "p-1".into(),
                    text: "my friend is a nurse".into(),
                    strategy: Strategy::Template,
                    topic: None,
                    source_ref: None,
                },
                Probe {
                    id: "p-2".into(),
                    text: "my friend is a pilot".into(),
                    strategy: Strategy::Template,
                    topic: None,
                    source_ref: None,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn sweep_runs_every_cell_and_shares_scoring() {
        let backend = toy_backend();
        let grid = SweepGrid {
            temperatures: vec![0.5, 1.0],
            top_ps: vec![0.9],
            top_ks: vec![3],
            mode: SweepMode::OneAtATime,
        };
        let base = DecodeConfig { max_new_tokens: 6, seed: 7, ..DecodeConfig::default() };
        let outcome = sweep(
            &backend,
            &probe_set(),
            &lex(),
            &grid,
            &base,
            &MetricConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(outcome.entries.len(), 4);
        let reports: Vec<&BiasReport> =
            outcome.entries.iter().map(|e| e.report.as_ref().unwrap()).collect();
        // Scoring is shared: identical GLD/ADD in every row.
        for r in &reports {
            assert_eq!(r.gld, reports[0].gld);
            assert_eq!(r.add_raw, reports[0].add_raw);
            assert_eq!(r.n, 2);
        }
        // Selection is the smallest gas, earliest on ties.
        let best_gas = outcome.best_entry().report.as_ref().unwrap().gas;
        for (i, r) in reports.iter().enumerate() {
            assert!(best_gas < r.gas || (best_gas == r.gas && outcome.best <= i));
        }
        // Determinism end to end.
        let again = sweep(
            &backend,
            &probe_set(),
            &lex(),
            &grid,
            &base,
            &MetricConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(serde_json::to_string(&outcome).unwrap(), serde_json::to_string(&again).unwrap());
    }

    /// Fails generation for one marked temperature; scores fine.
    struct FlakyBackend {
        inner: ToyBackend,
        poison_temperature: f64,
    }

    impl Backend for FlakyBackend {
        fn id(&self) -> &str {
            "flaky"
        }

        fn generate(&self, prompt: &str, decode: &DecodeConfig) -> Result<GenerationRecord, BackendError> {
            if decode.temperature == self.poison_temperature {
                return Err(BackendError::Protocol("poisoned cell".into()));
            }
            self.inner.generate(prompt, decode)
        }

        fn score_attribute_words(
            &self,
            prompt: &str,
            lexicon: &AttributeLexicon,
        ) -> Result<AttributeDistribution, BackendError> {
            self.inner.score_attribute_words(prompt, lexicon)
        }
    }

    #[test]
    fn failed_cells_are_recorded_and_skipped() {
        let backend = FlakyBackend { inner: toy_backend(), poison_temperature: 0.5 };
        let grid = SweepGrid {
            temperatures: vec![0.5, 1.0],
            top_ps: vec![],
            top_ks: vec![],
            mode: SweepMode::OneAtATime,
        };
        let outcome = sweep(
            &backend,
            &probe_set(),
            &lex(),
            &grid,
            &DecodeConfig::default(),
            &MetricConfig::default(),
            1,
        )
        .unwrap();
        assert_eq!(outcome.entries.len(), 2);
        assert!(outcome.entries[0].report.is_none());
        assert!(outcome.entries[0].error.as_ref().unwrap().contains("poisoned"));
        assert_eq!(outcome.best, 1);
    }

    #[test]
    fn sweep_fails_cleanly_when_nothing_finishes() {
        let backend = FlakyBackend { inner: toy_backend(), poison_temperature: 0.5 };
        let grid = SweepGrid {
            temperatures: vec![0.5],
            top_ps: vec![],
            top_ks: vec![],
            mode: SweepMode::OneAtATime,
        };
        let err = sweep(
            &backend,
            &probe_set(),
            &lex(),
            &grid,
            &DecodeConfig::default(),
            &MetricConfig::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, SweepError::AllFailed(_)));

        let empty = SweepGrid {
            temperatures: vec![],
            top_ps: vec![],
            top_ks: vec![],
            mode: SweepMode::OneAtATime,
        };
        assert!(matches!(
            sweep(
                &backend,
                &probe_set(),
                &lex(),
                &empty,
                &DecodeConfig::default(),
                &MetricConfig::default(),
                1,
            ),
            Err(SweepError::EmptyGrid)
        ));
    }
}
