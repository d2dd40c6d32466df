//! Process-level failure classification. Every error is folded into one of
//! four classes before the process exits, each with its own exit code, so
//! scripts can tell a typo in a flag from a dead endpoint from a corrupt
//! input file.

use genbias::backends::BackendError;

/// What went wrong, coarsely. Exit codes: config 2, backend 3, data 4,
/// internal 5 (0 is success; clap itself exits 2 on unparseable flags).
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Invalid option values or combinations, bad config file.
    #[error("{0}")]
    Config(String),
    /// A backend request failed at run time.
    #[error("{0}")]
    Backend(String),
    /// Missing, unreadable, or malformed data files.
    #[error("{0}")]
    Data(String),
    /// A bug: broken invariants in our own outputs.
    #[error("internal error: {0}")]
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Backend(_) => 3,
            AppError::Data(_) => 4,
            AppError::Internal(_) => 5,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AppError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        AppError::Internal(msg.into())
    }
}

/// Classifies a backend error raised while *constructing* a backend: a
/// missing auth variable is a configuration problem and a broken replay file
/// is a data problem, not a backend outage.
pub fn setup_error(e: BackendError) -> AppError {
    match e {
        BackendError::AuthEnvMissing(_) => AppError::Config(e.to_string()),
        BackendError::ReplayFormat { .. } | BackendError::Io(_) | BackendError::Json(_) => {
            AppError::Data(e.to_string())
        }
        other => AppError::Backend(other.to_string()),
    }
}

/// Classifies a backend error raised while serving requests.
pub fn request_error(e: BackendError) -> AppError {
    AppError::Backend(e.to_string())
}

/// Annotates an io error with the path it concerns.
pub fn io_error(path: &std::path::Path, e: std::io::Error) -> AppError {
    AppError::Data(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct_and_documented() {
        assert_eq!(AppError::config("x").exit_code(), 2);
        assert_eq!(AppError::Backend("x".into()).exit_code(), 3);
        assert_eq!(AppError::data("x").exit_code(), 4);
        assert_eq!(AppError::internal("x").exit_code(), 5);
    }

    #[test]
    fn setup_errors_reclassify_by_cause() {
        let auth = setup_error(BackendError::AuthEnvMissing("TOKEN".into()));
        assert!(matches!(auth, AppError::Config(_)));

        let replay = setup_error(BackendError::ReplayFormat {
            path: "x.jsonl".into(),
            reason: "bad line".into(),
        });
        assert!(matches!(replay, AppError::Data(_)));

        let transport = setup_error(BackendError::Transport {
            url: "http://x".into(),
            attempts: 3,
            reason: "refused".into(),
        });
        assert!(matches!(transport, AppError::Backend(_)));
    }
}
