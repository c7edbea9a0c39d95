//! Retry and response-cache plumbing shared by the remote linker and KB
//! clients.

use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

/// Exponential-backoff retry: `attempts` tries total, sleeping
/// `base_delay * 2^n` between them.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> RetryPolicy {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

/// Outcome of a retried operation that kept failing.
#[derive(Debug)]
pub struct TransportFailure {
    pub attempts: u32,
    pub message: String,
}

impl RetryPolicy {
    /// Run `op` until it succeeds or the attempt budget is exhausted.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, String>) -> Result<T, TransportFailure> {
        let attempts = self.attempts.max(1);
        let mut last = String::new();
        for n in 0..attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(message) => last = message,
            }
            if n + 1 < attempts {
                std::thread::sleep(self.base_delay * 2u32.pow(n));
            }
        }
        Err(TransportFailure {
            attempts,
            message: last,
        })
    }
}

/// Content-addressed response cache: one file per key under a directory.
/// Writes go through a temp file and rename, so concurrent writers of the
/// same key are safe.
#[derive(Clone, Debug)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<DiskCache> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DiskCache { dir })
    }

    /// Stable cache key for arbitrary text.
    pub fn key_for(text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        std::fs::read_to_string(self.path_for(key)).ok()
    }

    pub fn put(&self, key: &str, body: &str) -> std::io::Result<()> {
        let target = self.path_for(key);
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &target)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
