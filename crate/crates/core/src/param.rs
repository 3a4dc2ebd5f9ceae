//! Versioned key-value store for sharing model state.
//!
//! Every successful write to a key bumps its version by exactly one,
//! starting at 1. Writers may pass an expected version to get
//! compare-and-set semantics; readers may long-poll for a minimum version.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use parking_lot::{Condvar, Mutex, RwLock};
use thiserror::Error;

use crate::clock;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelEntry {
    pub key: String,
    pub version: u64,
    pub blob: Bytes,
    pub updated_micros: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParamError {
    #[error("version conflict, current version is {current}")]
    VersionConflict { current: u64 },
    #[error("refusing to store an empty blob")]
    EmptyBlob,
    #[error("key `{0}` not found")]
    KeyNotFound(String),
    #[error("timed out waiting for version, current {current:?}")]
    Timeout { current: Option<u64> },
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Key convention for model state: `{job_id}/{model_name}`.
pub fn model_key(job_id: &uuid::Uuid, model_name: &str) -> String {
    format!("{job_id}/{model_name}")
}

pub trait ParamApi: Send + Sync {
    /// Writes `blob`; with `expected_version` the write only happens if it
    /// matches the current version (0 for an absent key).
    fn put_model(
        &self,
        key: &str,
        blob: Bytes,
        expected_version: Option<u64>,
    ) -> Result<u64, ParamError>;

    /// Latest entry. With `min_version`, waits up to `wait` for the key to
    /// reach that version.
    fn get_model(
        &self,
        key: &str,
        min_version: Option<u64>,
        wait: Duration,
    ) -> Result<ModelEntry, ParamError>;
}

#[derive(Default)]
struct Slot {
    entry: Mutex<Option<ModelEntry>>,
    updated: Condvar,
}

/// In-memory single-node store.
#[derive(Default)]
pub struct ParamStore {
    slots: RwLock<HashMap<String, Arc<Slot>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, key: &str) -> Arc<Slot> {
        if let Some(s) = self.slots.read().get(key) {
            return s.clone();
        }
        self.slots
            .write()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    pub fn keys(&self) -> Vec<String> {
        let mut k: Vec<_> = self
            .slots
            .read()
            .iter()
            .filter(|(_, s)| s.entry.lock().is_some())
            .map(|(k, _)| k.clone())
            .collect();
        k.sort();
        k
    }
}

fn check_key(key: &str) -> Result<(), ParamError> {
    if key.is_empty() || key.len() > u16::MAX as usize {
        Err(ParamError::InvalidKey(key.chars().take(64).collect()))
    } else {
        Ok(())
    }
}

impl ParamApi for ParamStore {
    fn put_model(
        &self,
        key: &str,
        blob: Bytes,
        expected_version: Option<u64>,
    ) -> Result<u64, ParamError> {
        check_key(key)?;
        if blob.is_empty() {
            return Err(ParamError::EmptyBlob);
        }
        let slot = self.slot(key);
        let mut entry = slot.entry.lock();
        let current = entry.as_ref().map_or(0, |e| e.version);
        if let Some(expected) = expected_version {
            if expected != current {
                return Err(ParamError::VersionConflict { current });
            }
        }
        let version = current + 1;
        *entry = Some(ModelEntry {
            key: key.to_string(),
            version,
            blob,
            updated_micros: clock::now_micros(),
        });
        drop(entry);
        slot.updated.notify_all();
        Ok(version)
    }

    fn get_model(
        &self,
        key: &str,
        min_version: Option<u64>,
        wait: Duration,
    ) -> Result<ModelEntry, ParamError> {
        check_key(key)?;
        let Some(min) = min_version else {
            let slot = self.slots.read().get(key).cloned();
            return slot
                .and_then(|s| s.entry.lock().clone())
                .ok_or_else(|| ParamError::KeyNotFound(key.to_string()));
        };
        let slot = self.slot(key);
        let deadline = Instant::now() + wait;
        let mut entry = slot.entry.lock();
        loop {
            if let Some(e) = entry.as_ref() {
                if e.version >= min {
                    return Ok(e.clone());
                }
            }
            if slot.updated.wait_until(&mut entry, deadline).timed_out() {
                return match entry.as_ref() {
                    Some(e) if e.version >= min => Ok(e.clone()),
                    other => Err(ParamError::Timeout {
                        current: other.map(|e| e.version),
                    }),
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(b: u8) -> Bytes {
        Bytes::from(vec![b; 8])
    }

    #[test]
    fn first_write_is_version_one() {
        let s = ParamStore::new();
        assert_eq!(s.put_model("j/kmeans", blob(1), None), Ok(1));
        assert_eq!(s.put_model("j/kmeans", blob(2), Some(1)), Ok(2));
        assert_eq!(
            s.put_model("j/kmeans", blob(3), Some(1)),
            Err(ParamError::VersionConflict { current: 2 })
        );
        assert_eq!(s.put_model("j/kmeans", blob(4), None), Ok(3));
        let e = s.get_model("j/kmeans", None, Duration::ZERO).unwrap();
        assert_eq!((e.version, e.blob), (3, blob(4)));
    }

    #[test]
    fn cas_on_absent_key_expects_zero() {
        let s = ParamStore::new();
        assert_eq!(
            s.put_model("k", blob(1), Some(1)),
            Err(ParamError::VersionConflict { current: 0 })
        );
        assert_eq!(s.put_model("k", blob(1), Some(0)), Ok(1));
    }

    #[test]
    fn errors() {
        let s = ParamStore::new();
        assert_eq!(s.put_model("k", Bytes::new(), None), Err(ParamError::EmptyBlob));
        assert_eq!(
            s.get_model("absent", None, Duration::ZERO),
            Err(ParamError::KeyNotFound("absent".into()))
        );
        assert!(matches!(
            s.put_model("", blob(1), None),
            Err(ParamError::InvalidKey(_))
        ));
        assert_eq!(
            s.get_model("absent", Some(1), Duration::from_millis(10)),
            Err(ParamError::Timeout { current: None })
        );
    }

    #[test]
    fn long_poll_unblocks_on_write() {
        let s = Arc::new(ParamStore::new());
        s.put_model("k", blob(1), None).unwrap();
        let reader = {
            let s = s.clone();
            std::thread::spawn(move || s.get_model("k", Some(2), Duration::from_secs(5)))
        };
        std::thread::sleep(Duration::from_millis(30));
        s.put_model("k", blob(2), Some(1)).unwrap();
        let got = reader.join().unwrap().unwrap();
        assert!(got.version >= 2);
    }

    #[test]
    fn concurrent_cas_has_one_winner() {
        for _ in 0..50 {
            let s = Arc::new(ParamStore::new());
            s.put_model("k", blob(0), None).unwrap();
            let barrier = Arc::new(std::sync::Barrier::new(2));
            let handles: Vec<_> = (0..2u8)
                .map(|i| {
                    let s = s.clone();
                    let b = barrier.clone();
                    std::thread::spawn(move || {
                        b.wait();
                        s.put_model("k", blob(i + 1), Some(1))
                    })
                })
                .collect();
            let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
            let wins = results.iter().filter(|r| r.is_ok()).count();
            assert_eq!(wins, 1);
            assert!(results.contains(&Err(ParamError::VersionConflict { current: 2 })));
        }
    }
}
