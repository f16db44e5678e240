//! On-disk corpus store: stage outputs, a manifest of completed stages and
//! a lock file so only one pipeline runs per directory.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Stage;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store {path} is locked by another run ({holder}); remove {path}/.lock if that run is gone")]
    Locked { path: String, holder: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMarker {
    pub config_hash: String,
    pub seed: u64,
    pub completed_at: DateTime<Utc>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageMarker>,
}

/// Exclusive handle on a store directory.
pub struct CorpusStore {
    root: PathBuf,
    lock: PathBuf,
}

impl CorpusStore {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let lock = root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&lock).unwrap_or_default().trim().to_string();
                return Err(StoreError::Locked {
                    path: root.display().to_string(),
                    holder,
                });
            }
            Err(e) => return Err(io_err(&lock)(e)),
        }
        Ok(Self {
            root: root.to_path_buf(),
            lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Create (if needed) and return a subdirectory.
    pub fn dir(&self, rel: &str) -> Result<PathBuf, StoreError> {
        let p = self.root.join(rel);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
        Ok(p)
    }

    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn manifest(&self) -> Result<Manifest, StoreError> {
        let p = self.manifest_path();
        match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| StoreError::Manifest {
                path: p.display().to_string(),
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    fn write_manifest(&self, m: &Manifest) -> Result<(), StoreError> {
        let p = self.manifest_path();
        let tmp = self.root.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(m).expect("manifest serializes");
        fs::write(&tmp, text + "\n").map_err(io_err(&tmp))?;
        fs::rename(&tmp, &p).map_err(io_err(&p))
    }

    /// Record completion of `stage`, dropping the markers of every later
    /// stage since their inputs have changed.
    pub fn mark_complete(&self, stage: Stage, marker: StageMarker) -> Result<(), StoreError> {
        let mut m = self.manifest()?;
        for later in Stage::ALL.iter().filter(|s| **s > stage) {
            m.stages.remove(later.name());
        }
        m.stages.insert(stage.name().to_string(), marker);
        self.write_manifest(&m)
    }

    /// Forget a stage's completion (and everything after it).
    pub fn invalidate_from(&self, stage: Stage) -> Result<(), StoreError> {
        let mut m = self.manifest()?;
        for s in Stage::ALL.iter().filter(|s| **s >= stage) {
            m.stages.remove(s.name());
        }
        self.write_manifest(&m)
    }
}

impl Drop for CorpusStore {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn marker() -> StageMarker {
        StageMarker {
            config_hash: "h".into(),
            seed: 1,
            completed_at: Utc::now(),
            summary: serde_json::json!({}),
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = CorpusStore::open(dir.path()).unwrap();
        assert!(matches!(CorpusStore::open(dir.path()), Err(StoreError::Locked { .. })));
        drop(a);
        assert!(CorpusStore::open(dir.path()).is_ok());
    }

    #[test]
    fn completing_a_stage_drops_later_markers() {
        let dir = tempfile::tempdir().unwrap();
        let s = CorpusStore::open(dir.path()).unwrap();
        s.mark_complete(Stage::Scan, marker()).unwrap();
        s.mark_complete(Stage::Probe, marker()).unwrap();
        s.mark_complete(Stage::Crawl, marker()).unwrap();
        s.mark_complete(Stage::Probe, marker()).unwrap();
        let m = s.manifest().unwrap();
        assert!(m.stages.contains_key("scan") && m.stages.contains_key("probe"));
        assert!(!m.stages.contains_key("crawl"));
        s.invalidate_from(Stage::Scan).unwrap();
        assert!(s.manifest().unwrap().stages.is_empty());
    }
}
