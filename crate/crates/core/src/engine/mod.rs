//! Wheel execution, analytic registry and the JSON document store.

pub mod registry;
pub mod store;
pub mod wheel;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use registry::{Analytic, AnalyticContext, AnalyticDescriptor, Consumes, FnAnalytic, Registry};
pub use store::{AnalyticDocument, DocumentFilter, DocumentKey, DocumentKind, DocumentStore};
pub use wheel::{run_wheel, run_wheel_counted, RunSummary, WheelOptions};

use crate::error::{Error, Result};
use crate::radiometry::{default_ali_intervals, load_intervals, BandInterval};

/// Per-analytic block of the config file. Keys other than `enabled` and
/// `priority` are handed to the analytic as its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBlock {
    #[serde(default = "enabled_default")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<i64>,
    #[serde(flatten)]
    pub config: serde_json::Map<String, Value>,
}

fn enabled_default() -> bool {
    true
}

impl Default for AnalyticBlock {
    fn default() -> Self {
        AnalyticBlock {
            enabled: true,
            priority: None,
            config: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WheelConfig {
    pub store_root: Option<PathBuf>,
    pub batch_dir: Option<PathBuf>,
    pub workers: usize,
    pub deadline_seconds: f64,
    pub seed: u64,
    pub run_id: Option<String>,
    /// Inline ALI interval table; overrides `ali_intervals_path`.
    pub ali_intervals: Option<Vec<BandInterval>>,
    pub ali_intervals_path: Option<PathBuf>,
    /// Empty means every built-in analytic except the classifier, which
    /// needs a trained model.
    pub analytics: BTreeMap<String, AnalyticBlock>,
}

impl Default for WheelConfig {
    fn default() -> Self {
        WheelConfig {
            store_root: None,
            batch_dir: None,
            workers: 1,
            deadline_seconds: 24.0 * 3600.0,
            seed: 0,
            run_id: None,
            ali_intervals: None,
            ali_intervals_path: None,
            analytics: BTreeMap::new(),
        }
    }
}

impl WheelConfig {
    /// Reads a JSON config; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: WheelConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        rebase(&mut cfg.store_root);
        rebase(&mut cfg.batch_dir);
        rebase(&mut cfg.ali_intervals_path);
        for block in cfg.analytics.values_mut() {
            if let Some(Value::String(p)) = block.config.get("model_path") {
                let p = PathBuf::from(p);
                if p.is_relative() {
                    let joined = base.join(p).to_string_lossy().into_owned();
                    block.config.insert("model_path".into(), Value::String(joined));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.deadline_seconds >= 0.0) || !self.deadline_seconds.is_finite() {
            return Err(Error::Config(format!("deadline_seconds {} must be finite and >= 0", self.deadline_seconds)));
        }
        Ok(())
    }

    pub fn intervals(&self) -> Result<Vec<BandInterval>> {
        match (&self.ali_intervals, &self.ali_intervals_path) {
            (Some(v), _) => Ok(v.clone()),
            (None, Some(p)) => load_intervals(p),
            (None, None) => Ok(default_ali_intervals()),
        }
    }

    pub fn options(&self) -> Result<WheelOptions> {
        self.validate()?;
        Ok(WheelOptions {
            deadline: Duration::from_secs_f64(self.deadline_seconds),
            workers: self.workers,
            seed: self.seed,
            run_id: self.run_id.clone(),
            ali_intervals: self.intervals()?,
        })
    }
}
