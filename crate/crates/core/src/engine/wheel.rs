//! The wheel: each new scene is read once, prepared once, and passed to
//! every registered analytic in priority order.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::registry::{AnalyticContext, Consumes, Registry};
use super::store::{AnalyticDocument, DocumentKey, DocumentStore};
use crate::error::{Error, Result};
use crate::radiometry::{BandInterval, PreparedScene};
use crate::scene::{load_scene_counted, validate_scene, BandReadCounter, SceneMetadata, METADATA_FILE};

/// Marker file that declares a bundle fully written.
pub const COMPLETE_MARKER: &str = "COMPLETE";

/// Analytic id used for documents about the wheel's own load and
/// validation stages.
pub const WHEEL_ANALYTIC_ID: &str = "wheel";

#[derive(Debug, Clone)]
pub struct WheelOptions {
    pub deadline: Duration,
    pub workers: usize,
    pub seed: u64,
    pub run_id: Option<String>,
    pub ali_intervals: Vec<BandInterval>,
}

impl Default for WheelOptions {
    fn default() -> Self {
        WheelOptions {
            deadline: Duration::from_secs(24 * 3600),
            workers: 1,
            seed: 0,
            run_id: None,
            ali_intervals: crate::radiometry::default_ali_intervals(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub scenes_processed: usize,
    pub scenes_deferred: Vec<String>,
    /// Scenes that could not be loaded or failed validation.
    pub scenes_rejected: Vec<String>,
    pub analytic_wall_seconds: BTreeMap<String, f64>,
    pub band_reads: BTreeMap<String, usize>,
    pub documents_written: usize,
    pub error_documents: usize,
    pub deadline_exceeded: bool,
}

/// Derives a per-(scene, analytic) seed from the run seed.
pub fn derive_seed(seed: u64, scene_id: &str, analytic_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}/{scene_id}/{analytic_id}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn new_run_id() -> String {
    format!("run-{}", Utc::now().format("%Y%m%dT%H%M%S%.6fZ"))
}

struct Candidate {
    dir: PathBuf,
    scene_id: String,
}

/// Bundles with a completion marker, sorted by directory name.
pub fn find_complete_bundles(batch_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(batch_dir).map_err(|e| Error::io(batch_dir, e))? {
        let path = entry.map_err(|e| Error::io(batch_dir, e))?.path();
        if path.is_dir() && path.join(COMPLETE_MARKER).is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn scene_id_of(dir: &Path) -> String {
    #[derive(Deserialize)]
    struct IdOnly {
        scene_id: String,
    }
    fs::read_to_string(dir.join(METADATA_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<IdOnly>(&t).ok())
        .map(|m| m.scene_id)
        .unwrap_or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

#[derive(Default)]
struct Tally {
    processed: usize,
    deferred: Vec<String>,
    rejected: Vec<String>,
    wall: BTreeMap<String, f64>,
    docs: usize,
    errors: usize,
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "analytic panicked".to_string()
    }
}

/// Summary of a scene kept next to its documents for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    #[serde(flatten)]
    pub metadata: SceneMetadata,
    pub rows: usize,
    pub cols: usize,
    pub valid_pixels: usize,
}

pub const SCENE_SUMMARY_ARTIFACT: &str = "scene.json";
pub const RGB_ARTIFACT: &str = "rgb.png";

/// Processes every marked, not yet processed bundle in `batch_dir`.
pub fn run_wheel(batch_dir: &Path, registry: &Registry, store: &DocumentStore, opts: &WheelOptions) -> Result<RunSummary> {
    run_wheel_counted(batch_dir, registry, store, opts, &BandReadCounter::new())
}

/// As [`run_wheel`], recording band reads into a caller-owned counter.
pub fn run_wheel_counted(
    batch_dir: &Path,
    registry: &Registry,
    store: &DocumentStore,
    opts: &WheelOptions,
    counter: &BandReadCounter,
) -> Result<RunSummary> {
    let start = Instant::now();
    let run_id = opts.run_id.clone().unwrap_or_else(new_run_id);
    super::store::check_component(&run_id).map_err(|_| Error::Config(format!("invalid run id {run_id:?}")))?;
    let done = store.processed_scenes()?;
    let candidates: Vec<Candidate> = find_complete_bundles(batch_dir)?
        .into_iter()
        .map(|dir| Candidate {
            scene_id: scene_id_of(&dir),
            dir,
        })
        .filter(|c| !done.contains(&c.scene_id))
        .collect();

    let next = AtomicUsize::new(0);
    let tally = Mutex::new(Tally::default());
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(c) = candidates.get(i) else { break };
        if start.elapsed() >= opts.deadline {
            tally.lock().unwrap().deferred.push(c.scene_id.clone());
            continue;
        }
        process_scene(c, registry, store, opts, &run_id, counter, &tally);
    };
    let workers = opts.workers.max(1).min(candidates.len().max(1));
    if workers == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }

    let mut t = tally.into_inner().unwrap();
    t.deferred.sort();
    t.rejected.sort();
    let reads = counter.snapshot();
    let band_reads = candidates
        .iter()
        .filter(|c| reads.contains_key(&c.scene_id))
        .map(|c| (c.scene_id.clone(), reads[&c.scene_id]))
        .collect();
    Ok(RunSummary {
        run_id,
        scenes_processed: t.processed,
        deadline_exceeded: !t.deferred.is_empty() || start.elapsed() > opts.deadline,
        scenes_deferred: t.deferred,
        scenes_rejected: t.rejected,
        analytic_wall_seconds: t.wall,
        band_reads,
        documents_written: t.docs,
        error_documents: t.errors,
    })
}

fn process_scene(
    c: &Candidate,
    registry: &Registry,
    store: &DocumentStore,
    opts: &WheelOptions,
    run_id: &str,
    counter: &BandReadCounter,
    tally: &Mutex<Tally>,
) {
    let key = |analytic_id: &str| DocumentKey {
        scene_id: c.scene_id.clone(),
        analytic_id: analytic_id.to_string(),
        run_id: run_id.to_string(),
    };
    let record = |doc: AnalyticDocument| {
        let is_error = doc.is_error();
        match store.put(&doc) {
            Ok(_) => {
                let mut t = tally.lock().unwrap();
                t.docs += 1;
                if is_error {
                    t.errors += 1;
                }
                true
            }
            Err(e) => {
                eprintln!("failed to store {}: {e}", doc.key());
                false
            }
        }
    };
    let reject = |stage: &str, message: String| {
        record(AnalyticDocument::error(key(WHEEL_ANALYTIC_ID, ), stage, &message));
        tally.lock().unwrap().rejected.push(c.scene_id.clone());
    };

    let mut scene = match load_scene_counted(&c.dir, Some(counter)) {
        Ok(s) => s,
        Err(e) => return reject("load", e.to_string()),
    };
    let report = validate_scene(&mut scene);
    if !report.ok {
        let messages: Vec<String> = report.issues.iter().map(|i| i.message.clone()).collect();
        reject("validate", messages.join("; "));
        let _ = store.mark_processed(&c.scene_id);
        return;
    }
    let prepared = match PreparedScene::new(scene, opts.ali_intervals.clone()) {
        Ok(p) => p,
        Err(e) => {
            reject("prepare", e.to_string());
            let _ = store.mark_processed(&c.scene_id);
            return;
        }
    };
    let summary = SceneSummary {
        metadata: prepared.scene.metadata.clone(),
        rows: prepared.scene.rows,
        cols: prepared.scene.cols,
        valid_pixels: prepared.scene.valid_count(),
    };
    let summary_json = serde_json::to_vec_pretty(&summary).expect("summary serialises");
    for (name, bytes) in [(SCENE_SUMMARY_ARTIFACT, summary_json), (RGB_ARTIFACT, prepared.rgb().to_png())] {
        if let Err(e) = store.put_artifact(run_id, &c.scene_id, name, &bytes) {
            eprintln!("failed to store artifact {name} for {}: {e}", c.scene_id);
        }
    }

    let mut upstream: Vec<AnalyticDocument> = Vec::new();
    for stage in [Consumes::PreparedScene, Consumes::StoredResults] {
        for entry in registry.stage(stage) {
            let id = &entry.descriptor.analytic_id;
            let ctx = AnalyticContext {
                scene_id: &c.scene_id,
                run_id,
                seed: derive_seed(opts.seed, &c.scene_id, id),
                config: &entry.descriptor.config,
                metadata: &prepared.scene.metadata,
                prepared: (stage == Consumes::PreparedScene).then_some(&prepared),
                upstream: &upstream,
            };
            let t0 = Instant::now();
            let outcome = catch_unwind(AssertUnwindSafe(|| entry.implementation.run(&ctx)));
            let elapsed = t0.elapsed().as_secs_f64();
            *tally.lock().unwrap().wall.entry(id.clone()).or_default() += elapsed;
            let doc = match outcome {
                Ok(Ok(body)) => AnalyticDocument::result(key(id), body),
                Ok(Err(e)) => AnalyticDocument::error(key(id), "run", &e.to_string()),
                Err(payload) => AnalyticDocument::error(key(id), "run", &panic_message(payload)),
            };
            let keep = (!doc.is_error()).then(|| doc.clone());
            if record(doc) {
                if let Some(d) = keep {
                    upstream.push(d);
                }
            }
        }
    }
    if let Err(e) = store.mark_processed(&c.scene_id) {
        eprintln!("failed to record {} as processed: {e}", c.scene_id);
    }
    tally.lock().unwrap().processed += 1;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_scene_and_analytic() {
        let a = derive_seed(1, "s1", "rpf");
        assert_eq!(a, derive_seed(1, "s1", "rpf"));
        assert_ne!(a, derive_seed(1, "s2", "rpf"));
        assert_ne!(a, derive_seed(1, "s1", "blobs"));
        assert_ne!(a, derive_seed(2, "s1", "rpf"));
    }

    #[test]
    fn empty_batch_processes_nothing() {
        let batch = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(root.path()).unwrap();
        let summary = run_wheel(batch.path(), &Registry::new(), &store, &WheelOptions::default()).unwrap();
        assert_eq!(summary.scenes_processed, 0);
        assert!(store.query(&Default::default()).unwrap().is_empty());
        assert!(!summary.deadline_exceeded);
    }
}
