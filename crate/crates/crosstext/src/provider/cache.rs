//! Content-addressed response cache.
//!
//! Keys are SHA-256 digests of (provider identity, operation, canonicalized
//! request body). Entries live under
//! `{root}/{provider_id}/{first 2 hex}/{digest}` with an integrity line so a
//! corrupt entry is evicted and treated as a miss. Stores write to a
//! temporary file and rename, so racing stores of the same key are
//! idempotent.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use sha2::{Digest, Sha256};

use crate::error::Result;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Serialize JSON with object keys sorted recursively, so two bodies that
/// differ only in key order share a digest.
pub fn canonical_json(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .into_iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        serde_json::to_string(k).expect("string serializes"),
                        canonical_json(&map[k])
                    )
                })
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        serde_json::Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", inner.join(","))
        }
        other => other.to_string(),
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct GcReport {
    pub scanned: usize,
    pub evicted: usize,
}

pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Digest of (provider identity, operation, canonical request body).
    pub fn digest(provider_identity: &str, operation: &str, canonical_body: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(provider_identity.as_bytes());
        hasher.update([0u8]);
        hasher.update(operation.as_bytes());
        hasher.update([0u8]);
        hasher.update(canonical_body.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn entry_path(&self, provider_id: &str, digest: &str) -> PathBuf {
        self.root
            .join(sanitize(provider_id))
            .join(&digest[..2])
            .join(digest)
    }

    pub fn lookup(&self, provider_id: &str, digest: &str) -> Option<Vec<u8>> {
        let path = self.entry_path(provider_id, digest);
        let bytes = fs::read(&path).ok()?;
        match parse_entry(&bytes) {
            Some(payload) => Some(payload.to_vec()),
            None => {
                // corrupt: evict and report a miss
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    pub fn store(&self, provider_id: &str, digest: &str, payload: &[u8]) -> Result<()> {
        let path = self.entry_path(provider_id, digest);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension(format!(
            "tmp.{}.{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(sha256_hex(payload).as_bytes())?;
            f.write_all(b"\n")?;
            f.write_all(payload)?;
        }
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Scan the whole cache, evicting corrupt entries and stray temp files.
    pub fn gc(&self) -> Result<GcReport> {
        let mut report = GcReport::default();
        if !self.root.exists() {
            return Ok(report);
        }
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir)? {
                let entry = entry?;
                let path = entry.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                report.scanned += 1;
                let corrupt = match fs::read(&path) {
                    Ok(bytes) => parse_entry(&bytes).is_none(),
                    Err(_) => true,
                };
                let is_tmp = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .map(|e| e.starts_with("tmp"))
                    .unwrap_or(false)
                    || path.to_string_lossy().contains(".tmp.");
                if corrupt || is_tmp {
                    fs::remove_file(&path)?;
                    report.evicted += 1;
                }
            }
        }
        Ok(report)
    }
}

fn parse_entry(bytes: &[u8]) -> Option<&[u8]> {
    let newline = bytes.iter().position(|b| *b == b'\n')?;
    let (header, rest) = bytes.split_at(newline);
    let payload = &rest[1..];
    let header = std::str::from_utf8(header).ok()?;
    if header.len() != 64 || sha256_hex(payload) != header {
        return None;
    }
    Some(payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_then_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let digest = ResponseCache::digest("prov", "embed", "{\"a\":1}");
        cache.store("prov", &digest, b"payload bytes").unwrap();
        assert_eq!(cache.lookup("prov", &digest).unwrap(), b"payload bytes");
    }

    #[test]
    fn unknown_key_is_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        assert!(cache.lookup("prov", &"0".repeat(64)).is_none());
    }

    #[test]
    fn key_order_does_not_change_digest() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x":1,"y":[{"b":2,"a":1}]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y":[{"a":1,"b":2}],"x":1}"#).unwrap();
        assert_eq!(canonical_json(&a), canonical_json(&b));
        assert_eq!(
            ResponseCache::digest("p", "op", &canonical_json(&a)),
            ResponseCache::digest("p", "op", &canonical_json(&b))
        );
    }

    #[test]
    fn corrupt_entry_evicted_on_lookup() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let digest = ResponseCache::digest("prov", "op", "body");
        cache.store("prov", &digest, b"good").unwrap();
        let path = cache.entry_path("prov", &digest);
        fs::write(&path, b"mangled").unwrap();
        assert!(cache.lookup("prov", &digest).is_none());
        assert!(!path.exists());
    }

    #[test]
    fn gc_reports_and_evicts() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let d1 = ResponseCache::digest("p", "op", "1");
        let d2 = ResponseCache::digest("p", "op", "2");
        cache.store("p", &d1, b"one").unwrap();
        cache.store("p", &d2, b"two").unwrap();
        fs::write(cache.entry_path("p", &d2), b"junk").unwrap();
        let report = cache.gc().unwrap();
        assert_eq!(report.scanned, 2);
        assert_eq!(report.evicted, 1);
        assert!(cache.lookup("p", &d1).is_some());
    }
}
