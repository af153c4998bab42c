//! Append-only JSON document store on the local filesystem.
//!
//! Layout under the root:
//!
//! ```text
//! documents/<scene_id>/<analytic_id>/<run_id>.json
//! runs/<run_id>.jsonl          one key per line, in write order
//! artifacts/<run_id>/<scene_id>/<name>
//! processed.txt                scene ids already taken by the wheel
//! tmp/                         staging area for atomic writes
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DocumentKind {
    Result,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocumentKey {
    pub scene_id: String,
    pub analytic_id: String,
    pub run_id: String,
}

impl fmt::Display for DocumentKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.scene_id, self.analytic_id, self.run_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDocument {
    pub scene_id: String,
    pub analytic_id: String,
    pub run_id: String,
    pub produced_at: DateTime<Utc>,
    pub schema_version: u32,
    pub kind: DocumentKind,
    pub body: Value,
}

impl AnalyticDocument {
    pub fn result(key: DocumentKey, body: Value) -> Self {
        Self::new(key, DocumentKind::Result, body)
    }

    /// Error documents carry `{analytic_id, scene_id, message, stage}`.
    pub fn error(key: DocumentKey, stage: &str, message: &str) -> Self {
        let body = serde_json::json!({
            "analytic_id": key.analytic_id,
            "scene_id": key.scene_id,
            "message": message,
            "stage": stage,
        });
        Self::new(key, DocumentKind::Error, body)
    }

    fn new(key: DocumentKey, kind: DocumentKind, body: Value) -> Self {
        AnalyticDocument {
            scene_id: key.scene_id,
            analytic_id: key.analytic_id,
            run_id: key.run_id,
            produced_at: Utc::now(),
            schema_version: SCHEMA_VERSION,
            kind,
            body,
        }
    }

    pub fn key(&self) -> DocumentKey {
        DocumentKey {
            scene_id: self.scene_id.clone(),
            analytic_id: self.analytic_id.clone(),
            run_id: self.run_id.clone(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.kind == DocumentKind::Error
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DocumentFilter {
    pub scene_id: Option<String>,
    pub analytic_id: Option<String>,
    pub run_id: Option<String>,
    /// Inclusive lower bound on `produced_at`.
    pub from: Option<DateTime<Utc>>,
    /// Inclusive upper bound on `produced_at`.
    pub to: Option<DateTime<Utc>>,
}

impl DocumentFilter {
    pub fn validate(&self) -> Result<()> {
        if let (Some(f), Some(t)) = (self.from, self.to) {
            if f > t {
                return Err(Error::Filter(format!("time range starts ({f}) after it ends ({t})")));
            }
        }
        for (name, v) in [("scene_id", &self.scene_id), ("analytic_id", &self.analytic_id), ("run_id", &self.run_id)] {
            if let Some(v) = v {
                check_component(v).map_err(|_| Error::Filter(format!("invalid {name} {v:?}")))?;
            }
        }
        Ok(())
    }

    pub fn matches(&self, doc: &AnalyticDocument) -> bool {
        self.scene_id.as_ref().is_none_or(|s| *s == doc.scene_id)
            && self.analytic_id.as_ref().is_none_or(|a| *a == doc.analytic_id)
            && self.run_id.as_ref().is_none_or(|r| *r == doc.run_id)
            && self.from.is_none_or(|f| doc.produced_at >= f)
            && self.to.is_none_or(|t| doc.produced_at <= t)
    }
}

/// Key components become path segments, so they are restricted to a safe
/// alphabet.
pub fn check_component(s: &str) -> Result<()> {
    let ok = !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Format(format!("{s:?} is not a valid key component")))
    }
}

#[derive(Debug)]
pub struct DocumentStore {
    root: PathBuf,
    index_lock: Mutex<()>,
    counter: AtomicU64,
}

impl DocumentStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in ["documents", "runs", "artifacts", "tmp"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(DocumentStore {
            root,
            index_lock: Mutex::new(()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn doc_path(&self, key: &DocumentKey) -> PathBuf {
        self.root
            .join("documents")
            .join(&key.scene_id)
            .join(&key.analytic_id)
            .join(format!("{}.json", key.run_id))
    }

    fn staging_path(&self) -> PathBuf {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        self.root.join("tmp").join(format!("{}-{n}.tmp", std::process::id()))
    }

    /// Writes `bytes` to `dest` via a staged file. With `exclusive`, an
    /// existing `dest` is an error and is left untouched.
    fn write_atomic(&self, dest: &Path, bytes: &[u8], exclusive: bool) -> Result<bool> {
        if let Some(parent) = dest.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let staged = self.staging_path();
        let mut f = fs::File::create(&staged).map_err(|e| Error::io(&staged, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&staged, e))?;
        f.sync_all().map_err(|e| Error::io(&staged, e))?;
        drop(f);
        let placed = if exclusive {
            // link fails if the target exists, giving a no-clobber publish
            match fs::hard_link(&staged, dest) {
                Ok(()) => true,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => false,
                Err(e) => {
                    let _ = fs::remove_file(&staged);
                    return Err(Error::io(dest, e));
                }
            }
        } else {
            fs::rename(&staged, dest).map_err(|e| Error::io(dest, e))?;
            true
        };
        if exclusive {
            let _ = fs::remove_file(&staged);
        }
        Ok(placed)
    }

    pub fn put(&self, doc: &AnalyticDocument) -> Result<DocumentKey> {
        let key = doc.key();
        for c in [&key.scene_id, &key.analytic_id, &key.run_id] {
            check_component(c)?;
        }
        let text = serde_json::to_string_pretty(doc).expect("documents serialise") + "\n";
        if !self.write_atomic(&self.doc_path(&key), text.as_bytes(), true)? {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        let _guard = self.index_lock.lock().unwrap();
        let index = self.root.join("runs").join(format!("{}.jsonl", key.run_id));
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| Error::io(&index, e))?;
        let line = serde_json::to_string(&key).expect("keys serialise") + "\n";
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&index, e))?;
        Ok(key)
    }

    pub fn get(&self, key: &DocumentKey) -> Result<AnalyticDocument> {
        let path = self.doc_path(key);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                Error::NotFound(format!("document {key}"))
            } else {
                Error::io(&path, e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
    }

    fn subdirs(dir: &Path, only: Option<&String>) -> Result<Vec<String>> {
        if let Some(name) = only {
            return Ok(if dir.join(name).is_dir() { vec![name.clone()] } else { Vec::new() });
        }
        let mut out = Vec::new();
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(Error::io(dir, e)),
        };
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            if entry.path().is_dir() {
                out.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        Ok(out)
    }

    /// Documents matching `filter`, sorted by `(scene_id, analytic_id, run_id)`.
    pub fn query(&self, filter: &DocumentFilter) -> Result<Vec<AnalyticDocument>> {
        filter.validate()?;
        let docs_root = self.root.join("documents");
        let mut out = Vec::new();
        for scene in Self::subdirs(&docs_root, filter.scene_id.as_ref())? {
            let scene_dir = docs_root.join(&scene);
            for analytic in Self::subdirs(&scene_dir, filter.analytic_id.as_ref())? {
                let dir = scene_dir.join(&analytic);
                let mut runs = Vec::new();
                match &filter.run_id {
                    Some(r) => runs.push(dir.join(format!("{r}.json"))),
                    None => {
                        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
                            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
                            if path.extension().is_some_and(|e| e == "json") {
                                runs.push(path);
                            }
                        }
                    }
                }
                for path in runs {
                    let text = match fs::read_to_string(&path) {
                        Ok(t) => t,
                        Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                        Err(e) => return Err(Error::io(&path, e)),
                    };
                    let doc: AnalyticDocument = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
                    if filter.matches(&doc) {
                        out.push(doc);
                    }
                }
            }
        }
        out.sort_by(|a, b| {
            (&a.scene_id, &a.analytic_id, &a.run_id).cmp(&(&b.scene_id, &b.analytic_id, &b.run_id))
        });
        Ok(out)
    }

    /// Keys written by one run, in write order.
    pub fn run_index(&self, run_id: &str) -> Result<Vec<DocumentKey>> {
        check_component(run_id)?;
        let path = self.root.join("runs").join(format!("{run_id}.jsonl"));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::json(&path, e)))
            .collect()
    }

    pub fn run_ids(&self) -> Result<Vec<String>> {
        let dir = self.root.join("runs");
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".jsonl") {
                out.push(id.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    fn artifact_path(&self, run_id: &str, scene_id: &str, name: &str) -> Result<PathBuf> {
        for c in [run_id, scene_id, name] {
            check_component(c)?;
        }
        Ok(self.root.join("artifacts").join(run_id).join(scene_id).join(name))
    }

    /// Stores a named binary artifact for a scene in a run (replacing any
    /// previous one of that name).
    pub fn put_artifact(&self, run_id: &str, scene_id: &str, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.artifact_path(run_id, scene_id, name)?;
        self.write_atomic(&path, bytes, false).map(|_| ())
    }

    pub fn get_artifact(&self, run_id: &str, scene_id: &str, name: &str) -> Result<Option<Vec<u8>>> {
        let path = self.artifact_path(run_id, scene_id, name)?;
        match fs::read(&path) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn ledger_path(&self) -> PathBuf {
        self.root.join("processed.txt")
    }

    pub fn processed_scenes(&self) -> Result<BTreeSet<String>> {
        let path = self.ledger_path();
        match fs::read_to_string(&path) {
            Ok(t) => Ok(t.lines().filter(|l| !l.is_empty()).map(str::to_string).collect()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(BTreeSet::new()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    pub fn mark_processed(&self, scene_id: &str) -> Result<()> {
        let _guard = self.index_lock.lock().unwrap();
        let path = self.ledger_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(format!("{scene_id}\n").as_bytes()).map_err(|e| Error::io(&path, e))
    }
}
