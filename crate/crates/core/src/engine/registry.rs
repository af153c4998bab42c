//! Analytic plug-in registry.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::store::AnalyticDocument;
use crate::error::{Error, Result};
use crate::radiometry::PreparedScene;
use crate::scene::SceneMetadata;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Consumes {
    PreparedScene,
    StoredResults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticDescriptor {
    pub analytic_id: String,
    /// Lower runs earlier.
    pub priority: i64,
    pub consumes: Consumes,
    #[serde(default)]
    pub config: Value,
}

impl AnalyticDescriptor {
    pub fn new(analytic_id: impl Into<String>, priority: i64, consumes: Consumes) -> Self {
        AnalyticDescriptor {
            analytic_id: analytic_id.into(),
            priority,
            consumes,
            config: Value::Null,
        }
    }

    pub fn with_config(mut self, config: Value) -> Self {
        self.config = config;
        self
    }
}

/// Everything an analytic sees for one scene.
pub struct AnalyticContext<'a> {
    pub scene_id: &'a str,
    pub run_id: &'a str,
    /// Derived from the run seed, scene id and analytic id.
    pub seed: u64,
    pub config: &'a Value,
    pub metadata: &'a SceneMetadata,
    /// Present for `PREPARED_SCENE` analytics.
    pub prepared: Option<&'a PreparedScene>,
    /// Result documents already written for this scene in this run.
    pub upstream: &'a [AnalyticDocument],
}

pub trait Analytic: Send + Sync {
    /// Returns the document body.
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value>;
}

/// Adapter for closures, handy for ad-hoc and test analytics.
pub struct FnAnalytic<F>(pub F);

impl<F> Analytic for FnAnalytic<F>
where
    F: Fn(&AnalyticContext<'_>) -> Result<Value> + Send + Sync,
{
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        (self.0)(ctx)
    }
}

#[derive(Clone)]
pub struct RegisteredAnalytic {
    pub descriptor: AnalyticDescriptor,
    pub implementation: Arc<dyn Analytic>,
}

/// Analytics kept in execution order: ascending priority, then id.
#[derive(Clone, Default)]
pub struct Registry {
    entries: Vec<RegisteredAnalytic>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, descriptor: AnalyticDescriptor, implementation: Arc<dyn Analytic>) -> Result<&mut Self> {
        if descriptor.analytic_id.is_empty() {
            return Err(Error::Registration("empty analytic id".into()));
        }
        if self.entries.iter().any(|e| e.descriptor.analytic_id == descriptor.analytic_id) {
            return Err(Error::Registration(format!(
                "analytic {} is already registered",
                descriptor.analytic_id
            )));
        }
        self.entries.push(RegisteredAnalytic {
            descriptor,
            implementation,
        });
        self.entries.sort_by(|a, b| {
            (a.descriptor.priority, &a.descriptor.analytic_id).cmp(&(b.descriptor.priority, &b.descriptor.analytic_id))
        });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[RegisteredAnalytic] {
        &self.entries
    }

    pub fn execution_order(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.descriptor.analytic_id.as_str()).collect()
    }

    /// Entries of one kind, in execution order.
    pub fn stage(&self, consumes: Consumes) -> impl Iterator<Item = &RegisteredAnalytic> {
        self.entries.iter().filter(move |e| e.descriptor.consumes == consumes)
    }
}
