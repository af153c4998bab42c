//! Single-pass analytic wheel for batches of multi-band satellite scenes.
//!
//! Scenes are read once, turned into a [`radiometry::PreparedScene`] once,
//! and handed to every registered analytic in priority order. Results are
//! persisted as JSON documents in an append-only [`engine::store::DocumentStore`]
//! and rendered into per-scene and overview reports off the wheel.

pub mod analytics;
pub mod engine;
pub mod error;
pub mod grid;
pub mod radiometry;
pub mod raster;
pub mod report;
pub mod scene;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
