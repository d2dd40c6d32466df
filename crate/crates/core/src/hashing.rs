//! Stable hashing helpers: content addresses for prompts and artifacts, and
//! seed derivation so that every random stream in a run descends from one
//! manifest seed.
//!
//! SHA-256 everywhere — std's `DefaultHasher` is explicitly not stable across
//! releases, and reproducibility across toolchains is a hard requirement here.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Content address for a prompt string, as used by the replay file format.
pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

/// Derives a child seed from a parent seed and a context label.
///
/// The derivation is a SHA-256 of `parent || 0x1f || label`, truncated to the
/// first eight bytes (little-endian). Labels namespace the streams: e.g.
/// `derive_seed(run_seed, "sweep-config/3")` then
/// `derive_seed(config_seed, probe_id)` gives every (probe, config) cell its
/// own reproducible stream regardless of evaluation order.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest shorter than 8 bytes"))
}
