//! Wheel adapters for the built-in analytics.

use std::sync::Arc;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::blobs::{run_blobs, BlobsConfig};
use super::classifier::{classify_scene, ClassifierModel};
use super::contours::{run_contours, ContoursConfig};
use super::gmm_knn::{run_gmm_knn, GmmKnnConfig};
use super::rpf::{run_rpf, RpfInput, RpfParams};
use super::select_top_variance;
use crate::engine::{AnalyticBlock, AnalyticContext, AnalyticDescriptor, Consumes, Registry, WheelConfig};
use crate::engine::registry::Analytic;
use crate::error::{Error, Result};
use crate::radiometry::PreparedScene;
use crate::raster::Cube;

pub const CONTOURS: &str = "contours";
pub const RPF: &str = "rpf";
pub const GMM_KNN: &str = "gmm-knn";
pub const BLOBS: &str = "blobs";
pub const CLASSIFIER: &str = "classifier";

/// Built-in ids with their default priorities.
pub const BUILTIN_IDS: [(&str, i64); 5] = [(CONTOURS, 10), (RPF, 20), (GMM_KNN, 30), (BLOBS, 40), (CLASSIFIER, 50)];

fn parse_config<T: DeserializeOwned + Default>(id: &str, v: &Value) -> Result<T> {
    if v.is_null() {
        return Ok(T::default());
    }
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{id}: {e}")))
}

fn prepared<'a>(ctx: &AnalyticContext<'a>) -> Result<&'a PreparedScene> {
    ctx.prepared
        .ok_or_else(|| Error::Analytic("analytic needs a prepared scene".into()))
}

fn to_body<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("analytic output serialises")
}

pub struct ContoursAnalytic;

impl Analytic for ContoursAnalytic {
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        let cfg: ContoursConfig = parse_config(CONTOURS, ctx.config)?;
        let p = prepared(ctx)?;
        Ok(to_body(&run_contours(&p.reflectance, &p.scene.geo(), &cfg, ctx.seed)?))
    }
}

pub struct RpfAnalytic;

impl Analytic for RpfAnalytic {
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        let params: RpfParams = parse_config(RPF, ctx.config)?;
        let p = prepared(ctx)?;
        let input = RpfInput::from_scene(&p.scene, Some(&p.reflectance.values), params.transform)?;
        let trace = run_rpf(&input, Some(&p.scene.geo()), &params)?;
        Ok(to_body(&trace.output))
    }
}

pub struct GmmKnnAnalytic;

impl Analytic for GmmKnnAnalytic {
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        let cfg: GmmKnnConfig = parse_config(GMM_KNN, ctx.config)?;
        let p = prepared(ctx)?;
        let (out, _) = run_gmm_knn(p.log_color(), Some(&p.scene.geo()), &cfg, ctx.seed)?;
        Ok(to_body(&out))
    }
}

/// Band choice for blobs, read from the same block as [`BlobsConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobBands {
    /// Highest-variance reflectance bands used; 0 means all.
    pub band_count: usize,
}

impl Default for BlobBands {
    fn default() -> Self {
        BlobBands { band_count: 20 }
    }
}

pub struct BlobsAnalytic;

impl Analytic for BlobsAnalytic {
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        let cfg: BlobsConfig = parse_config(BLOBS, ctx.config)?;
        let bands: BlobBands = parse_config(BLOBS, ctx.config)?;
        let p = prepared(ctx)?;
        let refl = &p.reflectance;
        let mask = &refl.mask;
        let (out, _) = if bands.band_count == 0 || bands.band_count >= refl.values.bands() {
            run_blobs(&refl.values, mask, Some(&p.scene.geo()), &cfg)?
        } else {
            let chosen = select_top_variance(&refl.values, mask, bands.band_count);
            let (rows, cols) = (refl.values.rows(), refl.values.cols());
            let mut sub = Cube::zeros(chosen.len(), rows, cols);
            for (i, &b) in chosen.iter().enumerate() {
                sub.band_mut(i).copy_from_slice(refl.values.band(b));
            }
            let (mut out, cat) = run_blobs(&sub, mask, Some(&p.scene.geo()), &cfg)?;
            out.bands_used = chosen;
            (out, cat)
        };
        Ok(to_body(&out))
    }
}

/// `model_path` names a saved model; `model` embeds one.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct ClassifierBlock {
    model_path: Option<String>,
    model: Option<ClassifierModel>,
}

pub struct ClassifierAnalytic {
    model: ClassifierModel,
}

impl ClassifierAnalytic {
    pub fn new(model: ClassifierModel) -> Self {
        ClassifierAnalytic { model }
    }

    pub fn from_config(config: &Value) -> Result<Self> {
        let block: ClassifierBlock = parse_config(CLASSIFIER, config)?;
        match (block.model, block.model_path) {
            (Some(m), _) => Ok(Self::new(m)),
            (None, Some(p)) => Ok(Self::new(ClassifierModel::load(p)?)),
            (None, None) => Err(Error::Config("classifier needs model_path or model".into())),
        }
    }
}

impl Analytic for ClassifierAnalytic {
    fn run(&self, ctx: &AnalyticContext<'_>) -> Result<Value> {
        let p = prepared(ctx)?;
        let map = classify_scene(p, &self.model)?;
        let mut body = to_body(&map);
        body["labels_u8_base64"] = json!(base64::engine::general_purpose::STANDARD.encode(&map.labels));
        Ok(body)
    }
}

/// Registry for a wheel config. An empty analytics map enables every
/// built-in except the classifier.
pub fn build_registry(cfg: &WheelConfig) -> Result<Registry> {
    let mut blocks = cfg.analytics.clone();
    if blocks.is_empty() {
        for (id, _) in BUILTIN_IDS.iter().filter(|(id, _)| *id != CLASSIFIER) {
            blocks.insert(id.to_string(), AnalyticBlock::default());
        }
    }
    let mut registry = Registry::new();
    for (id, block) in &blocks {
        let Some(&(_, default_priority)) = BUILTIN_IDS.iter().find(|(b, _)| b == id) else {
            return Err(Error::Config(format!(
                "unknown analytic {id:?}; built-ins are {}",
                BUILTIN_IDS.map(|(b, _)| b).join(", ")
            )));
        };
        if !block.enabled {
            continue;
        }
        let config = Value::Object(block.config.clone());
        let implementation: Arc<dyn Analytic> = match id.as_str() {
            CONTOURS => Arc::new(ContoursAnalytic),
            RPF => Arc::new(RpfAnalytic),
            GMM_KNN => Arc::new(GmmKnnAnalytic),
            BLOBS => Arc::new(BlobsAnalytic),
            _ => Arc::new(ClassifierAnalytic::from_config(&config)?),
        };
        // Reject bad blocks at startup rather than once per scene.
        match id.as_str() {
            CONTOURS => drop(parse_config::<ContoursConfig>(id, &config)?),
            RPF => parse_config::<RpfParams>(id, &config)?.validate()?,
            GMM_KNN => parse_config::<GmmKnnConfig>(id, &config)?.validate()?,
            BLOBS => drop(parse_config::<BlobsConfig>(id, &config)?),
            _ => {}
        }
        let descriptor = AnalyticDescriptor::new(id.clone(), block.priority.unwrap_or(default_priority), Consumes::PreparedScene)
            .with_config(config);
        registry.register(descriptor, implementation)?;
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_registers_four_defaults() {
        let r = build_registry(&WheelConfig::default()).unwrap();
        assert_eq!(r.execution_order(), vec![CONTOURS, RPF, GMM_KNN, BLOBS]);
    }

    #[test]
    fn priorities_and_disabling() {
        let cfg: WheelConfig = serde_json::from_value(json!({
            "analytics": {"blobs": {"priority": 0}, "rpf": {"enabled": false}, "contours": {}}
        }))
        .unwrap();
        let r = build_registry(&cfg).unwrap();
        assert_eq!(r.execution_order(), vec![BLOBS, CONTOURS]);
    }

    #[test]
    fn unknown_id_rejected() {
        let cfg: WheelConfig = serde_json::from_value(json!({"analytics": {"nope": {}}})).unwrap();
        assert!(matches!(build_registry(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn classifier_without_model_rejected() {
        let cfg: WheelConfig = serde_json::from_value(json!({"analytics": {"classifier": {}}})).unwrap();
        assert!(matches!(build_registry(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn bad_analytic_block_rejected_at_startup() {
        let cfg: WheelConfig = serde_json::from_value(json!({"analytics": {"rpf": {"k2": "high"}}})).unwrap();
        assert!(matches!(build_registry(&cfg), Err(Error::Config(_))));
    }
}
