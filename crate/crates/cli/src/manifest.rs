//! Run manifests and the per-manifest artifact folder.
//!
//! Every command snapshots what it is about to do — seed, decode settings,
//! backend, input hashes, option values — into a [`RunManifest`]. The
//! manifest hash (SHA-256 over the manifest JSON with `created_at` removed,
//! truncated to 16 hex chars) names the artifact folder and is embedded in
//! every file written, so any artifact can be traced back to the exact
//! configuration that produced it. Identical configurations hash identically
//! regardless of when they ran; timestamps live only inside `manifest.json`.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use genbias::backends::BackendDescriptor;
use genbias::decoding::DecodeConfig;
use genbias::hashing::sha256_hex;
use genbias::probes::ProbeSet;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::errors::{io_error, AppError};

pub const TOOL_NAME: &str = "genbias";

/// "genbias <version>", stamped into artifact headers.
pub fn tool_stamp() -> String {
    format!("{TOOL_NAME} {}", env!("CARGO_PKG_VERSION"))
}

/// Everything that determines a run's outputs, plus a creation timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// RFC 3339, UTC. Excluded from the manifest hash so reruns of the same
    /// configuration land in the same folder.
    pub created_at: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendDescriptor>,
    pub lexicon_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_set: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_set_sha256: Option<String>,
    /// Command-specific option snapshot.
    pub options: Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, lexicon_sha256: String) -> Self {
        RunManifest {
            tool: TOOL_NAME.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
            seed,
            decode: None,
            backend: None,
            lexicon_sha256,
            probe_set: None,
            probe_set_sha256: None,
            options: Value::Null,
        }
    }

    pub fn with_decode(mut self, decode: &DecodeConfig) -> Self {
        self.decode = Some(decode.clone());
        self
    }

    pub fn with_backend(mut self, descriptor: BackendDescriptor) -> Self {
        self.backend = Some(descriptor);
        self
    }

    pub fn with_probes(mut self, name: &str, sha256: String) -> Self {
        self.probe_set = Some(name.to_string());
        self.probe_set_sha256 = Some(sha256);
        self
    }

    pub fn with_options(mut self, options: Value) -> Self {
        self.options = options;
        self
    }

    /// 16 hex chars identifying this configuration, timestamp excluded.
    pub fn hash(&self) -> Result<String, AppError> {
        let mut value = serde_json::to_value(self)
            .map_err(|e| AppError::internal(format!("manifest serialization: {e}")))?;
        value
            .as_object_mut()
            .expect("manifest serializes to an object")
            .remove("created_at");
        let canonical = value.to_string();
        Ok(sha256_hex(canonical.as_bytes())[..16].to_string())
    }
}

/// The per-manifest folder artifacts are written into. Layout:
/// `<out_dir>/<hash>/{manifest.json, probes/, runs/, reports/, models/}`.
pub struct ArtifactDir {
    root: PathBuf,
    hash: String,
}

impl ArtifactDir {
    /// Creates the folder (reusing it if the same configuration ran before)
    /// and writes `manifest.json`.
    pub fn create(out_dir: &Path, manifest: &RunManifest) -> Result<Self, AppError> {
        let hash = manifest.hash()?;
        let root = out_dir.join(&hash);
        std::fs::create_dir_all(&root).map_err(|e| io_error(&root, e))?;
        let path = root.join("manifest.json");
        let mut body = serde_json::to_string_pretty(manifest)
            .map_err(|e| AppError::internal(format!("manifest serialization: {e}")))?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| io_error(&path, e))?;
        Ok(ArtifactDir { root, hash })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// The JSONL header object every line-oriented artifact starts with.
    pub fn header_line(&self) -> String {
        serde_json::json!({ "_manifest": self.hash, "_tool": tool_stamp() }).to_string()
    }

    fn path_for(&self, sub: &str, name: &str) -> Result<PathBuf, AppError> {
        let dir = self.root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(dir.join(name))
    }

    /// Writes records as JSONL: header line first, one record per line.
    pub fn write_records<T: Serialize>(
        &self,
        sub: &str,
        name: &str,
        items: &[T],
    ) -> Result<PathBuf, AppError> {
        let mut body = String::new();
        body.push_str(&self.header_line());
        body.push('\n');
        for item in items {
            let line = serde_json::to_string(item)
                .map_err(|e| AppError::internal(format!("record serialization: {e}")))?;
            body.push_str(&line);
            body.push('\n');
        }
        self.write_bytes(sub, name, body.as_bytes())
    }

    /// Writes an already-serialized JSONL body under the header line.
    pub fn write_jsonl_body(&self, sub: &str, name: &str, body: &[u8]) -> Result<PathBuf, AppError> {
        let mut bytes = Vec::with_capacity(body.len() + 64);
        bytes.extend_from_slice(self.header_line().as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(body);
        self.write_bytes(sub, name, &bytes)
    }

    /// Writes bytes exactly as given (renderers embed the hash themselves).
    pub fn write_bytes(&self, sub: &str, name: &str, bytes: &[u8]) -> Result<PathBuf, AppError> {
        let path = self.path_for(sub, name)?;
        std::fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        Ok(path)
    }

}

/// Reads a JSONL artifact, skipping blank lines and header objects (any
/// object carrying a `_manifest` key), and parses the rest as `T`.
pub fn read_jsonl_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| AppError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if value.as_object().is_some_and(|o| o.contains_key("_manifest")) {
            continue;
        }
        let record: T = serde_json::from_value(value)
            .map_err(|e| AppError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Loads a probe set from JSONL, tolerating a manifest header line. The set
/// is named after the file stem.
pub fn read_probe_file(path: &Path) -> Result<ProbeSet, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let data: String = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter(|l| {
            serde_json::from_str::<Value>(l)
                .map(|v| !v.as_object().is_some_and(|o| o.contains_key("_manifest")))
                .unwrap_or(true) // let the probe parser report the real error
        })
        .flat_map(|l| [l, "\n"])
        .collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "probes".to_string());
    ProbeSet::read_jsonl(name, Cursor::new(data.into_bytes()))
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

/// The canonical serialized form of a probe set — what gets hashed into
/// manifests and written (under a header) by `build-probes`.
pub fn canonical_probe_bytes(set: &ProbeSet) -> Result<Vec<u8>, AppError> {
    let mut buf = Vec::new();
    set.write_jsonl(&mut buf)
        .map_err(|e| AppError::internal(format!("probe serialization: {e}")))?;
    Ok(buf)
}
