//! Run registry: one directory per run holding `run.json` plus artifacts.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

pub const RUNS_DIR_ENV: &str = "PATHBT_RUNS_DIR";
pub const RECORD_NAME: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "detail")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    /// Everything needed to re-execute the command.
    pub config: serde_json::Value,
    pub version: String,
    /// Where the command wrote its files; the run directory when `None`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub metrics: BTreeMap<String, f64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub started: String,
    pub finished: Option<String>,
    pub status: RunStatus,
}

impl RunRecord {
    pub fn add_artifact(&mut self, path: impl Into<PathBuf>) {
        let p = path.into();
        if !self.artifacts.contains(&p) {
            self.artifacts.push(p);
        }
    }
}

pub fn version_string() -> String {
    format!("pathbt {}", env!("CARGO_PKG_VERSION"))
}

/// Registry rooted at a directory; record writes go through one lock.
pub struct Registry {
    root: PathBuf,
    writer: Mutex<()>,
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, writer: Mutex::new(()) })
    }

    /// `$PATHBT_RUNS_DIR`, else `fallback`.
    pub fn from_env(fallback: impl Into<PathBuf>) -> Result<Self> {
        match std::env::var_os(RUNS_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::open(PathBuf::from(dir)),
            _ => Self::open(fallback),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn output_dir(&self, record: &RunRecord) -> PathBuf {
        record.output_dir.clone().unwrap_or_else(|| self.run_dir(&record.run_id))
    }

    /// Allocates a fresh run id, creates its directory and persists the
    /// record in `Running` state.
    pub fn begin(&self, command: &str, config: serde_json::Value) -> Result<RunRecord> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S").to_string();
        let mut n = 0;
        let run_id = loop {
            let id = format!("{command}-{stamp}-{n:02}");
            // create_dir fails if the id is taken, which keeps ids unique across processes
            match std::fs::create_dir(self.root.join(&id)) {
                Ok(()) => break id,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e.into()),
            }
        };
        let record = RunRecord {
            run_id,
            command: command.to_string(),
            config,
            version: version_string(),
            output_dir: None,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            status: RunStatus::Running,
        };
        self.write_locked(&record)?;
        Ok(record)
    }

    pub fn save(&self, record: &RunRecord) -> Result<()> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.write_locked(record)
    }

    pub fn finish(&self, record: &mut RunRecord, status: RunStatus) -> Result<()> {
        record.status = status;
        record.finished = Some(chrono::Utc::now().to_rfc3339());
        self.save(record)
    }

    fn write_locked(&self, record: &RunRecord) -> Result<()> {
        let dir = self.run_dir(&record.run_id);
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{RECORD_NAME}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec_pretty(record)?)?;
        std::fs::rename(tmp, dir.join(RECORD_NAME))?;
        Ok(())
    }

    pub fn load(&self, run_id: &str) -> Result<RunRecord> {
        let path = self.run_dir(run_id).join(RECORD_NAME);
        if !path.is_file() {
            return Err(Error::UnknownRun(run_id.to_string()));
        }
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// All run ids, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join(RECORD_NAME).is_file() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
