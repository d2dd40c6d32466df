//! Layered configuration: built-in defaults, then an optional TOML file,
//! then command-line flags. Later layers win field by field, so a config
//! file can pin a backend while individual runs still override the seed.

use std::path::{Path, PathBuf};

use clap::Args;
use genbias::decoding::DecodeConfig;
use genbias::mitigation::{SweepGrid, SweepMode};
use genbias::tuning::TuneOptions;
use serde::Deserialize;

use crate::errors::AppError;

/// The TOML file shape. Every field is optional; missing sections fall back
/// to flag values or defaults. Unknown keys are rejected so typos surface as
/// config errors instead of silently ignored settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out_dir: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub tune: TuneSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeSection {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub top_k: Option<u32>,
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    /// "toy", "replay", or "http".
    pub kind: Option<String>,
    pub model_path: Option<PathBuf>,
    pub model_seed: Option<u64>,
    pub replay_file: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub auth_env: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub temperatures: Option<Vec<f64>>,
    pub top_ps: Option<Vec<f64>>,
    pub top_ks: Option<Vec<u32>>,
    pub cartesian: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneSection {
    pub steps: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
}

impl FileConfig {
    /// Loads the file when a path is given; otherwise an empty layer.
    pub fn load(path: Option<&Path>) -> Result<Self, AppError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| AppError::config(format!("{}: {e}", path.display())))
    }
}

/// Decoding flags shared by every command that generates text.
#[derive(Debug, Clone, Default, Args)]
pub struct DecodeOpts {
    /// Softmax temperature; 0 means greedy argmax.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Nucleus sampling mass; 1 disables the filter.
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Top-K cutoff; 0 disables the filter.
    #[arg(long)]
    pub top_k: Option<u32>,
    /// Continuation length in tokens.
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

/// Resolves the decode configuration. `seed` is the already-resolved run
/// seed; everything random downstream derives from it.
pub fn resolve_decode(flags: &DecodeOpts, file: &DecodeSection, seed: u64) -> DecodeConfig {
    let d = DecodeConfig::default();
    DecodeConfig {
        temperature: flags.temperature.or(file.temperature).unwrap_or(d.temperature),
        top_p: flags.top_p.or(file.top_p).unwrap_or(d.top_p),
        top_k: flags.top_k.or(file.top_k).unwrap_or(d.top_k),
        max_new_tokens: flags.max_new_tokens.or(file.max_new_tokens).unwrap_or(d.max_new_tokens),
        seed,
    }
}

/// Sweep grid flags; comma-separated values mirror the TOML arrays.
#[derive(Debug, Clone, Default, Args)]
pub struct SweepOpts {
    /// Temperatures to try, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub temperatures: Option<Vec<f64>>,
    /// Top-p values to try, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub top_ps: Option<Vec<f64>>,
    /// Top-K values to try, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub top_ks: Option<Vec<u32>>,
    /// Cross all three axes instead of varying one at a time.
    #[arg(long)]
    pub cartesian: bool,
}

pub fn resolve_grid(flags: &SweepOpts, file: &SweepSection) -> SweepGrid {
    let d = SweepGrid::default();
    let cartesian = flags.cartesian || file.cartesian.unwrap_or(false);
    SweepGrid {
        temperatures: flags.temperatures.clone().or_else(|| file.temperatures.clone()).unwrap_or(d.temperatures),
        top_ps: flags.top_ps.clone().or_else(|| file.top_ps.clone()).unwrap_or(d.top_ps),
        top_ks: flags.top_ks.clone().or_else(|| file.top_ks.clone()).unwrap_or(d.top_ks),
        mode: if cartesian { SweepMode::Cartesian } else { SweepMode::OneAtATime },
    }
}

/// Toy-tuning hyperparameter flags.
#[derive(Debug, Clone, Default, Args)]
pub struct TuneOpts {
    /// Gradient steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Probes per gradient step.
    #[arg(long)]
    pub batch_size: Option<usize>,
}

pub fn resolve_tune(flags: &TuneOpts, file: &TuneSection) -> TuneOptions {
    let d = TuneOptions::default();
    TuneOptions {
        steps: flags.steps.or(file.steps).unwrap_or(d.steps),
        lr: flags.lr.or(file.lr).unwrap_or(d.lr),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let file: FileConfig = toml::from_str(
            r#"
            seed = 9
            [decode]
            temperature = 0.7
            max_new_tokens = 20
            "#,
        )
        .unwrap();
        let flags = DecodeOpts { temperature: Some(0.3), ..DecodeOpts::default() };
        let decode = resolve_decode(&flags, &file.decode, file.seed.unwrap());
        assert_eq!(decode.temperature, 0.3); // flag wins
        assert_eq!(decode.max_new_tokens, 20); // file wins
        assert_eq!(decode.top_p, 1.0); // default
        assert_eq!(decode.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("temprature = 1.0").unwrap_err();
        assert!(err.to_string().contains("temprature"));
    }

    #[test]
    fn grid_resolution_defaults_to_thirteen_cells() {
        let grid = resolve_grid(&SweepOpts::default(), &SweepSection::default());
        let n = grid.temperatures.len() + grid.top_ps.len() + grid.top_ks.len();
        assert_eq!(n, 13);
        assert_eq!(grid.mode, SweepMode::OneAtATime);
    }

    #[test]
    fn tune_defaults_are_the_documented_ones() {
        let opts = resolve_tune(&TuneOpts::default(), &TuneSection::default());
        assert_eq!(opts.steps, 500);
        assert_eq!(opts.lr, 2e-4);
        assert_eq!(opts.batch_size, 16);
    }
}
