//! Browser bindings: synthesize a scene, then run the rare-pixel finder,
//! spectral blobs or the land-cover classifier on it and draw the results.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use scanwheel::analytics::blobs::{run_blobs, BlobsConfig};
use scanwheel::analytics::classifier::{
    add_region, classify_scene, train_classifier, ClassifierModel, LandClass, PixelRect, TrainParams, TrainingSet,
    DEFAULT_RATIO_CAP,
};
use scanwheel::analytics::rpf::{run_rpf, RpfInput, RpfParams, RpfTransform};
use scanwheel::radiometry::{default_ali_intervals, PreparedScene};
use scanwheel::raster::Pixel;
use scanwheel::synth::{
    synthesize, AnomalySpectrum, GroundTruth, Layout, PlantedAnomaly, SceneRecipe, Shape, ShiftProfile,
};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn layout_named(name: &str) -> Result<Layout, String> {
    let [a, b, c, d] = LandClass::ALL;
    Ok(match name {
        "quadrants" => Layout::Quadrants { classes: [a, b, c, d] },
        "split" => Layout::Split { left: LandClass::Water, right: LandClass::Desert, split_col: None },
        other => Layout::Uniform {
            class: LandClass::parse(other).ok_or_else(|| format!("unknown layout {other:?}"))?,
        },
    })
}

/// Scene recipe used by the page: a background layout plus a handful of
/// flat-shifted blobs and one square patch with a sine-shaped shift.
pub fn demo_recipe(rows: usize, cols: usize, layout: &str, sigma: f64, seed: u64) -> Result<SceneRecipe, String> {
    if rows < 24 || cols < 24 || rows > 512 || cols > 512 {
        return Err("rows and cols must lie in 24..=512".into());
    }
    let mut anomalies = Vec::new();
    let spots = [(0.25, 0.3, 9), (0.7, 0.2, 14), (0.4, 0.75, 6)];
    for (fr, fc, size) in spots {
        anomalies.push(PlantedAnomaly {
            shape: Shape::Blob { center: [(fr * rows as f64) as usize, (fc * cols as f64) as usize], size },
            spectrum: AnomalySpectrum::Shift { sigma, profile: ShiftProfile::Flat },
            halo_sigma: None,
        });
    }
    anomalies.push(PlantedAnomaly {
        shape: Shape::Rect { row: rows * 3 / 4, col: cols * 3 / 4, height: 5, width: 5 },
        spectrum: AnomalySpectrum::Shift { sigma, profile: ShiftProfile::Sine },
        halo_sigma: None,
    });
    Ok(SceneRecipe {
        scene_id: format!("demo-{seed}"),
        rows,
        cols,
        layout: layout_named(layout)?,
        anomalies,
        seed,
        ..Default::default()
    })
}

/// A small model trained on uniform archetype scenes, enough for the page.
pub fn demo_model() -> Result<ClassifierModel, String> {
    let mut ts = TrainingSet::from_samples(Vec::new());
    for (i, class) in LandClass::ALL.into_iter().enumerate() {
        let recipe = SceneRecipe {
            scene_id: format!("train-{i}"),
            rows: 12,
            cols: 12,
            layout: Layout::Uniform { class },
            sun_elevation_deg: 35.0 + 10.0 * i as f64,
            seed: 1000 + i as u64,
            ..Default::default()
        };
        let (scene, _) = synthesize(&recipe).map_err(|e| e.to_string())?;
        let p = PreparedScene::new(scene, default_ali_intervals()).map_err(|e| e.to_string())?;
        add_region(&mut ts, &p, PixelRect { row: 0, col: 0, height: 12, width: 12 }, class, DEFAULT_RATIO_CAP)
            .map_err(|e| e.to_string())?;
    }
    train_classifier(&ts, &TrainParams::default()).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Detection {
    pixels: Vec<[usize; 2]>,
    score: Option<u32>,
    /// Share of the detection's pixels that were planted.
    planted_share: f64,
}

#[wasm_bindgen]
pub struct DemoScene {
    prepared: PreparedScene,
    truth: GroundTruth,
    model: Option<ClassifierModel>,
}

impl DemoScene {
    pub fn build(rows: usize, cols: usize, layout: &str, sigma: f64, seed: u64) -> Result<DemoScene, String> {
        let recipe = demo_recipe(rows, cols, layout, sigma, seed)?;
        let (scene, truth) = synthesize(&recipe).map_err(|e| e.to_string())?;
        let prepared = PreparedScene::new(scene, default_ali_intervals()).map_err(|e| e.to_string())?;
        Ok(DemoScene { prepared, truth, model: None })
    }

    fn detection(&self, pixels: &[Pixel], score: Option<u32>) -> Detection {
        let planted: std::collections::BTreeSet<&Pixel> = self.truth.anomalies.iter().flat_map(|a| &a.pixels).collect();
        let hit = pixels.iter().filter(|p| planted.contains(p)).count();
        Detection {
            pixels: pixels.iter().map(|p| [p.row, p.col]).collect(),
            score,
            planted_share: hit as f64 / pixels.len().max(1) as f64,
        }
    }

    pub fn rare_pixels_json(&self, k1_sigma: f64) -> Result<String, String> {
        let params = RpfParams { k1_sigma, ..Default::default() };
        let input = RpfInput::from_scene(&self.prepared.scene, None, RpfTransform::Radiance).map_err(|e| e.to_string())?;
        let trace = run_rpf(&input, None, &params).map_err(|e| e.to_string())?;
        let o = &trace.output;
        let found: Vec<Detection> = o.objects.iter().filter(|x| x.reported).map(|x| self.detection(&x.pixel_set, x.score)).collect();
        Ok(json!({
            "s1_size": o.s1_size,
            "s2_size": o.s2_size,
            "s1_rule": o.s1_rule,
            "candidates": o.objects.len(),
            "objects": found,
        })
        .to_string())
    }

    pub fn blobs_json(&self, threshold_quantile: f64, max_size: usize) -> Result<String, String> {
        let cfg = BlobsConfig { threshold_quantile, max_size, ..Default::default() };
        let refl = &self.prepared.reflectance;
        let (out, _) = run_blobs(&refl.values, &refl.mask, None, &cfg).map_err(|e| e.to_string())?;
        let found: Vec<Detection> = out.anomalies.iter().map(|a| self.detection(&a.pixel_set, Some(a.score))).collect();
        Ok(json!({
            "boundary_fraction": out.boundary_fraction,
            "blob_count": out.blob_count,
            "group_count": out.merge_groups.len(),
            "anomalies": found,
        })
        .to_string())
    }

    /// Class labels as RGBA plus coverage against the generator's truth.
    pub fn classify(&mut self) -> Result<(Vec<u8>, String), String> {
        if self.model.is_none() {
            self.model = Some(demo_model()?);
        }
        let map = classify_scene(&self.prepared, self.model.as_ref().expect("set above")).map_err(|e| e.to_string())?;
        let mut rgba = Vec::with_capacity(map.labels.len() * 4);
        for &l in &map.labels {
            let [r, g, b] = LandClass::from_code(l).map_or([0, 0, 0], LandClass::color);
            rgba.extend_from_slice(&[r, g, b, 255]);
        }
        let rows: Vec<_> = LandClass::ALL
            .iter()
            .map(|&c| json!({"class": c.name(), "classified": map.coverage_of(c), "truth": self.truth.class_fraction(c)}))
            .collect();
        Ok((rgba, json!({"coverage": rows}).to_string()))
    }
}

#[wasm_bindgen]
impl DemoScene {
    /// `layout` is `quadrants`, `split`, or a class name such as `desert`.
    #[wasm_bindgen(constructor)]
    pub fn new(rows: usize, cols: usize, layout: &str, sigma: f64, seed: u32) -> Result<DemoScene, JsValue> {
        Self::build(rows, cols, layout, sigma, seed as u64).map_err(js_err)
    }

    pub fn rows(&self) -> usize {
        self.prepared.scene.rows
    }

    pub fn cols(&self) -> usize {
        self.prepared.scene.cols
    }

    /// Stretched natural-colour composite, RGBA for a canvas.
    pub fn rgba(&self) -> Vec<u8> {
        self.prepared.rgb().data.chunks(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect()
    }

    /// Planted pixel sets as JSON `[[[row, col], ...], ...]`.
    pub fn planted(&self) -> String {
        let sets: Vec<Vec<[usize; 2]>> =
            self.truth.anomalies.iter().map(|a| a.pixels.iter().map(|p| [p.row, p.col]).collect()).collect();
        serde_json::to_string(&sets).expect("pixel lists serialise")
    }

    pub fn rare_pixels(&self, k1_sigma: f64) -> Result<String, JsValue> {
        self.rare_pixels_json(k1_sigma).map_err(js_err)
    }

    pub fn blobs(&self, threshold_quantile: f64, max_size: usize) -> Result<String, JsValue> {
        self.blobs_json(threshold_quantile, max_size).map_err(js_err)
    }

    /// Runs the classifier (training the demo model on first use).
    pub fn land_cover(&mut self) -> Result<ClassResult, JsValue> {
        let (rgba, summary) = self.classify().map_err(js_err)?;
        Ok(ClassResult { rgba, summary })
    }
}

#[wasm_bindgen]
pub struct ClassResult {
    rgba: Vec<u8>,
    summary: String,
}

#[wasm_bindgen]
impl ClassResult {
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    pub fn summary(&self) -> String {
        self.summary.clone()
    }
}
