//! Backend selection: flags/config resolve to a [`BackendSpec`], which both
//! describes itself for the run manifest and constructs the live backend.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use genbias::backends::http::HttpBackend;
use genbias::backends::replay::ReplayBackend;
use genbias::backends::toy::ToyBackend;
use genbias::backends::{Backend, BackendDescriptor, BackendKind};
use genbias::tuning::{pretrained_demo_model, ToyLm};

use crate::config::BackendSection;
use crate::errors::{setup_error, AppError};

/// Seed for the bundled pretrained toy model when no checkpoint is given.
pub const DEFAULT_MODEL_SEED: u64 = 3;

/// Environment variable consulted for the HTTP bearer token by default.
pub const DEFAULT_AUTH_ENV: &str = "GENBIAS_API_TOKEN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// The bundled small model; offline and fully deterministic.
    Toy,
    /// Recorded responses from a JSONL file; offline.
    Replay,
    /// An OpenAI-style completion endpoint.
    Http,
}

/// Backend flags shared by the commands that talk to a model.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendOpts {
    /// Which backend to use.
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Toy checkpoint to load instead of the bundled pretrained model.
    #[arg(long, value_name = "FILE")]
    pub model_path: Option<PathBuf>,
    /// Seed for the bundled toy model (ignored with --model-path).
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Replay JSONL file (required with --backend replay).
    #[arg(long, value_name = "FILE")]
    pub replay_file: Option<PathBuf>,
    /// Completion endpoint URL (required with --backend http).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint (required with --backend http).
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token.
    #[arg(long, value_name = "VAR")]
    pub auth_env: Option<String>,
}

/// A fully resolved backend recipe.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Toy { checkpoint: Option<PathBuf>, model_seed: u64 },
    Replay { file: PathBuf },
    Http { endpoint: String, model: String, auth_env: String },
}

/// Merges backend flags over the config-file section and validates that the
/// chosen kind has what it needs.
pub fn resolve_backend(flags: &BackendOpts, file: &BackendSection) -> Result<BackendSpec, AppError> {
    let kind = match flags.backend {
        Some(BackendChoice::Toy) => "toy".to_string(),
        Some(BackendChoice::Replay) => "replay".to_string(),
        Some(BackendChoice::Http) => "http".to_string(),
        None => file.kind.clone().unwrap_or_else(|| "toy".to_string()),
    };
    match kind.as_str() {
        "toy" => Ok(BackendSpec::Toy {
            checkpoint: flags.model_path.clone().or_else(|| file.model_path.clone()),
            model_seed: flags.model_seed.or(file.model_seed).unwrap_or(DEFAULT_MODEL_SEED),
        }),
        "replay" => {
            let file_path = flags
                .replay_file
                .clone()
                .or_else(|| file.replay_file.clone())
                .ok_or_else(|| AppError::config("replay backend needs --replay-file"))?;
            Ok(BackendSpec::Replay { file: file_path })
        }
        "http" => {
            let endpoint = flags
                .endpoint
                .clone()
                .or_else(|| file.endpoint.clone())
                .ok_or_else(|| AppError::config("http backend needs --endpoint"))?;
            let model = flags
                .model
                .clone()
                .or_else(|| file.model.clone())
                .ok_or_else(|| AppError::config("http backend needs --model"))?;
            let auth_env = flags
                .auth_env
                .clone()
                .or_else(|| file.auth_env.clone())
                .unwrap_or_else(|| DEFAULT_AUTH_ENV.to_string());
            Ok(BackendSpec::Http { endpoint, model, auth_env })
        }
        other => Err(AppError::config(format!(
            "unknown backend kind {other:?} (expected toy, replay, or http)"
        ))),
    }
}

impl BackendSpec {
    /// The manifest-facing description of this backend.
    pub fn descriptor(&self) -> BackendDescriptor {
        match self {
            BackendSpec::Toy { checkpoint, .. } => BackendDescriptor {
                kind: BackendKind::Toy,
                endpoint: None,
                model: None,
                path: checkpoint.as_ref().map(|p| p.display().to_string()),
                auth_env: None,
            },
            BackendSpec::Replay { file } => BackendDescriptor {
                kind: BackendKind::Replay,
                endpoint: None,
                model: None,
                path: Some(file.display().to_string()),
                auth_env: None,
            },
            BackendSpec::Http { endpoint, model, auth_env } => BackendDescriptor {
                kind: BackendKind::Http,
                endpoint: Some(endpoint.clone()),
                model: Some(model.clone()),
                path: None,
                auth_env: Some(auth_env.clone()),
            },
        }
    }

    /// Constructs the live backend, classifying failures: a bad checkpoint or
    /// replay file is a data error, a missing token variable a config error.
    pub fn build(&self) -> Result<Box<dyn Backend>, AppError> {
        match self {
            BackendSpec::Toy { checkpoint, model_seed } => {
                let model = match checkpoint {
                    Some(path) => ToyLm::load_from_path(path)
                        .map_err(|e| AppError::data(e.to_string()))?,
                    None => pretrained_demo_model(*model_seed)
                        .map_err(|e| AppError::internal(e.to_string()))?,
                };
                Ok(Box::new(ToyBackend::new(model)))
            }
            BackendSpec::Replay { file } => {
                let backend = ReplayBackend::load(file).map_err(setup_error)?;
                Ok(Box::new(backend))
            }
            BackendSpec::Http { endpoint, model, auth_env } => {
                let backend =
                    HttpBackend::new(endpoint, model, Some(auth_env)).map_err(setup_error)?;
                Ok(Box::new(backend))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backend_is_the_bundled_toy_model() {
        let spec = resolve_backend(&BackendOpts::default(), &BackendSection::default()).unwrap();
        match spec {
            BackendSpec::Toy { checkpoint, model_seed } => {
                assert!(checkpoint.is_none());
                assert_eq!(model_seed, DEFAULT_MODEL_SEED);
            }
            other => panic!("expected toy, got {other:?}"),
        }
    }

    #[test]
    fn replay_without_a_file_is_a_config_error() {
        let flags = BackendOpts { backend: Some(BackendChoice::Replay), ..BackendOpts::default() };
        let err = resolve_backend(&flags, &BackendSection::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn http_requires_endpoint_and_model() {
        let flags = BackendOpts {
            backend: Some(BackendChoice::Http),
            endpoint: Some("http://localhost:1".into()),
            ..BackendOpts::default()
        };
        let err = resolve_backend(&flags, &BackendSection::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn file_section_supplies_the_kind() {
        let section = BackendSection {
            kind: Some("replay".into()),
            replay_file: Some("cases.jsonl".into()),
            ..BackendSection::default()
        };
        let spec = resolve_backend(&BackendOpts::default(), &section).unwrap();
        assert!(matches!(spec, BackendSpec::Replay { .. }));
    }

    #[test]
    fn missing_replay_file_is_a_data_error() {
        let spec = BackendSpec::Replay { file: "does-not-exist.jsonl".into() };
        let Err(err) = spec.build() else { panic!("expected the build to fail") };
        assert_eq!(err.exit_code(), 4);
    }
}
