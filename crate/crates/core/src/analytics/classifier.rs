//! Four-class land-cover classifier: ALI-binned reflectances plus two band
//! ratios, standardised, fed to one-vs-rest linear SVMs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiometry::{BandInterval, FeatureCube, PreparedScene};
use crate::scene::load_scene;
use crate::stats::{ols, RegressionStats};

pub const FEATURE_LEN: usize = 11;
pub const NODATA_LABEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LandClass {
    Cloud,
    Water,
    Desert,
    Vegetation,
}

impl LandClass {
    /// Fixed order, also the tie-break order.
    pub const ALL: [LandClass; 4] = [LandClass::Cloud, LandClass::Water, LandClass::Desert, LandClass::Vegetation];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn letter(self) -> char {
        match self {
            LandClass::Cloud => 'C',
            LandClass::Water => 'W',
            LandClass::Desert => 'D',
            LandClass::Vegetation => 'V',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LandClass::Cloud => "CLOUD",
            LandClass::Water => "WATER",
            LandClass::Desert => "DESERT",
            LandClass::Vegetation => "VEGETATION",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    /// Display colour used for class maps.
    pub fn color(self) -> [u8; 3] {
        match self {
            LandClass::Cloud => [255, 255, 255],
            LandClass::Water => [30, 90, 200],
            LandClass::Desert => [150, 100, 50],
            LandClass::Vegetation => [40, 160, 60],
        }
    }
}

/// Per-pixel feature vectors; `None` where masked.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub features: Vec<Option<[f64; FEATURE_LEN]>>,
    /// Ratios whose denominator was below `1e-6` and got clamped.
    pub clamped_ratios: usize,
}

pub const DEFAULT_RATIO_CAP: f64 = 100.0;

fn ratio(num: f64, den: f64, cap: f64, clamped: &mut usize) -> f64 {
    if den.abs() < 1e-6 {
        *clamped += 1;
        cap
    } else {
        num / den
    }
}

/// Nine binned reflectances followed by band3/band7 and band4/band8, with
/// bands numbered 1-9 in ascending wavelength.
pub fn pixel_features(ali: &[f64], cap: f64, clamped: &mut usize) -> [f64; FEATURE_LEN] {
    let mut f = [0.0; FEATURE_LEN];
    f[..9].copy_from_slice(&ali[..9]);
    f[9] = ratio(ali[2], ali[6], cap, clamped);
    f[10] = ratio(ali[3], ali[7], cap, clamped);
    f
}

pub fn build_features(ali: &FeatureCube, cap: f64) -> Result<FeatureGrid> {
    if ali.components() != 9 {
        return Err(Error::Config(format!("expected 9 ALI components, got {}", ali.components())));
    }
    let mut clamped = 0;
    let features = (0..ali.mask.len())
        .map(|p| (!ali.mask[p]).then(|| pixel_features(&ali.values.spectrum_at(p), cap, &mut clamped)))
        .collect();
    Ok(FeatureGrid {
        rows: ali.values.rows(),
        cols: ali.values.cols(),
        features,
        clamped_ratios: clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: LandClass,
    pub scene_id: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(w: &f64) -> bool {
    *w == 1.0
}

/// One row of a training-scene catalogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceRecord {
    pub region: String,
    pub classes: String,
    pub obs_date: NaiveDate,
    pub sun_azimuth_deg: f64,
    pub sun_elevation_deg: f64,
}

impl ProvenanceRecord {
    /// Returns `(azimuth, elevation)`, swapping the two when the printed
    /// elevation is outside `(0, 90]`, which only makes sense as an azimuth.
    pub fn normalized_sun(&self) -> (f64, f64) {
        if self.sun_elevation_deg > 90.0 && self.sun_azimuth_deg <= 90.0 {
            (self.sun_elevation_deg, self.sun_azimuth_deg)
        } else {
            (self.sun_azimuth_deg, self.sun_elevation_deg)
        }
    }
}

/// The Hyperion scenes behind the original training set, as printed.
pub fn reference_training_catalog() -> Vec<ProvenanceRecord> {
    const ROWS: [(&str, &str, (i32, u32, u32), f64, f64); 16] = [
        ("Aira", "W", (2014, 4, 18), 119.12, 49.1),
        ("San Rossore", "C/W", (2014, 1, 29), 145.5, 20.9),
        ("San Rossore", "C/V", (2012, 8, 10), 135.8, 54.5),
        ("Barton Bendish", "C", (2013, 8, 22), 142.7, 43.5),
        ("Jasper Ridge", "V/D", (2013, 9, 17), 140.7, 46.9),
        ("Jasper Ridge", "V/C", (2013, 9, 14), 132.9, 45.2),
        ("Jasper Ridge", "V/C", (2012, 9, 27), 147.6, 45.4),
        ("Arabian Desert", "D", (2012, 12, 30), 147.0, 29.9),
        ("Jornada", "D", (2012, 12, 10), 28.7, 151.4),
        ("Jornada", "D", (2012, 7, 24), 59.6, 107.5),
        ("Negev", "D", (2012, 9, 15), 130.7, 52.1),
        ("White Sands", "C", (2012, 7, 29), 58.3, 108.4),
        ("Besetsutzuyu", "V", (2012, 7, 14), 56.8, 135.5),
        ("Kenatedo", "W", (2012, 6, 22), 50.5, 46.5),
        ("Santarem", "W", (2012, 6, 17), 57.1, 118.15),
        ("Bibubemuku", "W", (2012, 5, 20), 57.5, 127.7),
    ];
    ROWS.iter()
        .map(|&(region, classes, (y, m, d), az, el)| ProvenanceRecord {
            region: region.into(),
            classes: classes.into(),
            obs_date: NaiveDate::from_ymd_opt(y, m, d).expect("valid date"),
            sun_azimuth_deg: az,
            sun_elevation_deg: el,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub provenance: Vec<ProvenanceRecord>,
    pub class_counts: BTreeMap<LandClass, usize>,
    pub skipped_nodata: usize,
    pub clamped_ratios: usize,
    pub warnings: Vec<String>,
}

/// Per-class sample counts outside this range draw a warning.
pub const GUIDE_CLASS_COUNT: (usize, usize) = (6000, 9000);

impl TrainingSet {
    pub fn from_samples(samples: Vec<Sample>) -> Self {
        let mut ts = TrainingSet {
            samples,
            provenance: Vec::new(),
            class_counts: BTreeMap::new(),
            skipped_nodata: 0,
            clamped_ratios: 0,
            warnings: Vec::new(),
        };
        ts.recount();
        ts
    }

    fn recount(&mut self) {
        self.class_counts.clear();
        for s in &self.samples {
            *self.class_counts.entry(s.label).or_default() += 1;
        }
        self.warnings.retain(|w| !w.starts_with("class "));
        for (class, &n) in &self.class_counts {
            if n < GUIDE_CLASS_COUNT.0 || n > GUIDE_CLASS_COUNT.1 {
                self.warnings.push(format!(
                    "class {} has {n} samples, outside the {}-{} guide",
                    class.name(),
                    GUIDE_CLASS_COUNT.0,
                    GUIDE_CLASS_COUNT.1
                ));
            }
        }
    }

    /// JSON lines, one sample per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("samples serialise"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let samples = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                let s: Sample = serde_json::from_str(l).map_err(|e| Error::Format(format!("training line {}: {e}", i + 1)))?;
                if s.features.len() != FEATURE_LEN || s.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!("training line {}: need {FEATURE_LEN} finite features", i + 1)));
                }
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_samples(samples))
    }
}

/// Rectangle of pixels `[row, row + height) x [col, col + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRegion {
    pub bundle: PathBuf,
    pub rect: PixelRect,
    pub class: LandClass,
}

/// Adds the samples of one rectangle of a prepared scene.
pub fn add_region(ts: &mut TrainingSet, prepared: &PreparedScene, rect: PixelRect, class: LandClass, cap: f64) -> Result<()> {
    let scene = &prepared.scene;
    if rect.row + rect.height > scene.rows || rect.col + rect.width > scene.cols || rect.height == 0 || rect.width == 0 {
        return Err(Error::Config(format!(
            "region {rect:?} outside the {}x{} scene {}",
            scene.rows, scene.cols, scene.metadata.scene_id
        )));
    }
    let ali = prepared.ali_binned()?;
    if ali.components() != 9 {
        return Err(Error::Config(format!("expected 9 ALI components, got {}", ali.components())));
    }
    for r in rect.row..rect.row + rect.height {
        for c in rect.col..rect.col + rect.width {
            let p = r * scene.cols + c;
            if ali.mask[p] {
                ts.skipped_nodata += 1;
                continue;
            }
            let f = pixel_features(&ali.values.spectrum_at(p), cap, &mut ts.clamped_ratios);
            ts.samples.push(Sample {
                features: f.to_vec(),
                label: class,
                scene_id: scene.metadata.scene_id.clone(),
                weight: 1.0,
            });
        }
    }
    let md = &scene.metadata;
    match ts.provenance.iter_mut().find(|p| p.region == md.scene_id) {
        Some(p) => {
            if !p.classes.contains(class.letter()) {
                p.classes = format!("{}/{}", p.classes, class.letter());
            }
        }
        None => ts.provenance.push(ProvenanceRecord {
            region: md.scene_id.clone(),
            classes: class.letter().to_string(),
            obs_date: md.acquisition_date,
            sun_azimuth_deg: md.sun_azimuth_deg,
            sun_elevation_deg: md.sun_elevation_deg,
        }),
    }
    ts.recount();
    Ok(())
}

/// Loads each bundle once, converts to reflectance, bins to ALI and
/// featurises every listed region.
pub fn build_training_set(regions: &[LabeledRegion], intervals: &[BandInterval], cap: f64) -> Result<TrainingSet> {
    if regions.is_empty() {
        return Err(Error::InsufficientData("empty region list".into()));
    }
    let mut ts = TrainingSet::from_samples(Vec::new());
    let mut cache: BTreeMap<PathBuf, PreparedScene> = BTreeMap::new();
    for region in regions {
        if !cache.contains_key(&region.bundle) {
            let scene = load_scene(&region.bundle)?;
            cache.insert(region.bundle.clone(), PreparedScene::new(scene, intervals.to_vec())?);
        }
        add_region(&mut ts, &cache[&region.bundle], region.rect, region.class, cap)?;
    }
    Ok(ts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            c: 1.0,
            epochs: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub class: LandClass,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Objective of the retained weights after each epoch.
    pub objective_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    /// One machine per trained class, in fixed class order.
    pub machines: Vec<BinarySvm>,
    pub params: TrainParams,
    pub training_accuracy: f64,
    pub ratio_cap: f64,
}

impl ClassifierModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        self.machines
            .iter()
            .map(|m| m.weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + m.bias)
            .collect()
    }

    /// Highest margin; earlier classes win ties.
    pub fn predict(&self, x: &[f64]) -> LandClass {
        let margins = self.margins(x);
        let mut best = 0;
        for (i, &m) in margins.iter().enumerate().skip(1) {
            if m > margins[best] {
                best = i;
            }
        }
        self.machines[best].class
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("model serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Draws a sample index with probability proportional to its weight.
fn weighted_pick(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

fn objective(w: &[f64], xs: &[Vec<f64>], ys: &[f64], weights: &[f64], lambda: f64, total: f64) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = xs
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((x, y), sw)| sw * (1.0 - y * dot(w, x)).max(0.0))
        .sum();
    reg + loss / total
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains one-vs-rest linear SVMs by stochastic subgradient descent on
/// `lambda/2 |w|^2 + (1/W) sum_i w_i hinge_i` with `lambda = 1/(C W)`, where
/// `W` is the total sample weight. The bias is learnt as the weight of a
/// constant feature. Steps decay as `1/(lambda t)` and samples are drawn in
/// proportion to their weight from a seeded generator. After each epoch the
/// epoch-averaged weights replace the kept solution only if they lower the
/// objective, so each machine's recorded objective never increases.
pub fn train_classifier(ts: &TrainingSet, params: &TrainParams) -> Result<ClassifierModel> {
    if ts.samples.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    if let Some(s) = ts.samples.iter().find(|s| s.features.len() != FEATURE_LEN || s.features.iter().any(|v| !v.is_finite())) {
        return Err(Error::Format(format!("sample from {} is not {FEATURE_LEN} finite features", s.scene_id)));
    }
    let mut weight_by_class: BTreeMap<LandClass, usize> = BTreeMap::new();
    for s in &ts.samples {
        *weight_by_class.entry(s.label).or_default() += 1;
    }
    if weight_by_class.len() < 2 {
        return Err(Error::InsufficientData("training needs at least two classes".into()));
    }
    if let Some((c, n)) = weight_by_class.iter().find(|(_, &n)| n < 10) {
        return Err(Error::InsufficientData(format!("class {} has only {n} samples (need 10)", c.name())));
    }
    if !(params.c > 0.0) || params.epochs == 0 {
        return Err(Error::Config("C must be positive and epochs at least 1".into()));
    }

    let weights: Vec<f64> = ts.samples.iter().map(|s| s.weight).collect();
    let total: f64 = weights.iter().sum();
    let mut mean = vec![0.0; FEATURE_LEN];
    for (s, w) in ts.samples.iter().zip(&weights) {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total);
    let mut std = vec![0.0; FEATURE_LEN];
    for (s, w) in ts.samples.iter().zip(&weights) {
        for d in 0..FEATURE_LEN {
            std[d] += w * (s.features[d] - mean[d]).powi(2);
        }
    }
    std.iter_mut().for_each(|v| {
        *v = (*v / total).sqrt();
        if *v < 1e-12 {
            *v = 1.0;
        }
    });
    // standardised features with a trailing constant for the bias
    let xs: Vec<Vec<f64>> = ts
        .samples
        .iter()
        .map(|s| {
            let mut z: Vec<f64> = s.features.iter().zip(&mean).zip(&std).map(|((v, m), sd)| (v - m) / sd).collect();
            z.push(1.0);
            z
        })
        .collect();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let lambda = 1.0 / (params.c * total);
    let steps_per_epoch = total.round().max(1.0) as usize;
    let radius = 1.0 / lambda.sqrt();

    let mut machines = Vec::new();
    for class in LandClass::ALL.into_iter().filter(|c| weight_by_class.contains_key(c)) {
        let ys: Vec<f64> = ts.samples.iter().map(|s| if s.label == class { 1.0 } else { -1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (class.code() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let dim = FEATURE_LEN + 1;
        let mut w = vec![0.0; dim];
        let mut kept = w.clone();
        let mut kept_obj = objective(&kept, &xs, &ys, &weights, lambda, total);
        let mut history = Vec::with_capacity(params.epochs);
        let mut t = 0usize;
        for _ in 0..params.epochs {
            let mut avg = vec![0.0; dim];
            for _ in 0..steps_per_epoch {
                t += 1;
                let i = weighted_pick(&cumulative, rng.random::<f64>() * total);
                let eta = 1.0 / (lambda * t as f64);
                let margin = ys[i] * dot(&w, &xs[i]);
                let shrink = 1.0 - eta * lambda;
                for v in w.iter_mut() {
                    *v *= shrink;
                }
                if margin < 1.0 {
                    for (v, x) in w.iter_mut().zip(&xs[i]) {
                        *v += eta * ys[i] * x;
                    }
                }
                let norm = dot(&w, &w).sqrt();
                if norm > radius {
                    w.iter_mut().for_each(|v| *v *= radius / norm);
                }
                for (a, v) in avg.iter_mut().zip(&w) {
                    *a += v;
                }
            }
            avg.iter_mut().for_each(|a| *a /= steps_per_epoch as f64);
            let obj = objective(&avg, &xs, &ys, &weights, lambda, total);
            if obj <= kept_obj {
                kept_obj = obj;
                kept = avg;
            }
            if let Some(&prev) = history.last() {
                assert!(kept_obj <= prev, "retained objective increased");
            }
            history.push(kept_obj);
        }
        machines.push(BinarySvm {
            class,
            bias: kept[FEATURE_LEN],
            weights: kept[..FEATURE_LEN].to_vec(),
            objective_history: history,
        });
    }
    let mut model = ClassifierModel {
        feature_mean: mean,
        feature_std: std,
        machines,
        params: *params,
        training_accuracy: 0.0,
        ratio_cap: DEFAULT_RATIO_CAP,
    };
    let correct: f64 = ts
        .samples
        .iter()
        .filter(|s| model.predict(&s.features) == s.label)
        .map(|s| s.weight)
        .sum();
    model.training_accuracy = correct / total;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub rows: usize,
    pub cols: usize,
    /// Class codes per pixel; `NODATA_LABEL` where masked.
    #[serde(skip)]
    pub labels: Vec<u8>,
    /// Fraction of classified pixels per class; `None` for an empty scene.
    pub coverage: Option<BTreeMap<LandClass, f64>>,
    pub classified_pixels: usize,
    pub clamped_ratios: usize,
    pub notes: Vec<String>,
}

impl ClassMap {
    pub fn from_labels(rows: usize, cols: usize, labels: Vec<u8>) -> Self {
        let mut counts = [0usize; 4];
        for &l in &labels {
            if let Some(c) = LandClass::from_code(l) {
                counts[c as usize] += 1;
            }
        }
        let classified: usize = counts.iter().sum();
        let mut notes = Vec::new();
        let coverage = if classified == 0 {
            notes.push("empty scene: no classified pixels".to_string());
            None
        } else {
            Some(LandClass::ALL.iter().map(|&c| (c, counts[c as usize] as f64 / classified as f64)).collect())
        };
        ClassMap {
            rows,
            cols,
            labels,
            coverage,
            classified_pixels: classified,
            clamped_ratios: 0,
            notes,
        }
    }

    pub fn coverage_of(&self, class: LandClass) -> f64 {
        self.coverage.as_ref().map_or(0.0, |c| c[&class])
    }

    /// Writes `labels.u8` and its JSON sidecar `labels.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let raster = dir.join("labels.u8");
        std::fs::write(&raster, &self.labels).map_err(|e| Error::io(&raster, e))?;
        let legend: BTreeMap<u8, &str> = LandClass::ALL
            .iter()
            .map(|c| (c.code(), c.name()))
            .chain([(NODATA_LABEL, "NODATA")])
            .collect();
        let sidecar = serde_json::json!({
            "rows": self.rows,
            "cols": self.cols,
            "legend": legend,
            "coverage": self.coverage,
            "classified_pixels": self.classified_pixels,
            "clamped_ratios": self.clamped_ratios,
            "notes": self.notes,
        });
        let path = dir.join("labels.json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serialises") + "\n";
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

pub fn classify_features(grid: &FeatureGrid, model: &ClassifierModel) -> ClassMap {
    let labels = grid
        .features
        .iter()
        .map(|f| f.map_or(NODATA_LABEL, |x| model.predict(&x).code()))
        .collect();
    let mut map = ClassMap::from_labels(grid.rows, grid.cols, labels);
    map.clamped_ratios = grid.clamped_ratios;
    if grid.clamped_ratios > 0 {
        map.notes.push(format!("{} band ratios clamped to {}", grid.clamped_ratios, model.ratio_cap));
    }
    map
}

pub fn classify_scene(prepared: &PreparedScene, model: &ClassifierModel) -> Result<ClassMap> {
    let grid = build_features(prepared.ali_binned()?, model.ratio_cap)?;
    Ok(classify_features(&grid, model))
}

/// OLS of classified against expected fractions.
pub fn validate_coverage(pairs: &[(f64, f64)]) -> Result<RegressionStats> {
    ols(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiometry::BasisTag;
    use crate::raster::Cube;
    use rand_distr::{Distribution, Normal};

    fn ali_cube(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> FeatureCube {
        let mut values = Cube::zeros(9, rows, cols);
        for b in 0..9 {
            for p in 0..rows * cols {
                values.set(b, p / cols, p % cols, f(b, p));
            }
        }
        FeatureCube {
            values,
            basis_tag: BasisTag::AliBinned,
            mask: vec![false; rows * cols],
        }
    }

    #[test]
    fn flat_half_reflectance_gives_unit_ratios() {
        let grid = build_features(&ali_cube(1, 1, |_, _| 0.5), 100.0).unwrap();
        let mut expect = [0.5; 11];
        expect[9] = 1.0;
        expect[10] = 1.0;
        assert_eq!(grid.features[0], Some(expect));
    }

    #[test]
    fn zero_denominator_clamps() {
        let grid = build_features(&ali_cube(1, 1, |b, _| if b == 6 { 0.0 } else { 0.3 }), 100.0).unwrap();
        let f = grid.features[0].unwrap();
        assert_eq!(f[9], 100.0);
        assert!((f[10] - 1.0).abs() < 1e-15);
        assert_eq!(grid.clamped_ratios, 1);
    }

    #[test]
    fn features_match_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..9 * 50).map(|_| rng.random::<f64>() + 0.01).collect();
        let cube = ali_cube(5, 10, |b, p| vals[b * 50 + p]);
        let grid = build_features(&cube, 100.0).unwrap();
        for p in 0..50 {
            let f = grid.features[p].unwrap();
            for b in 0..9 {
                assert_eq!(f[b], vals[b * 50 + p]);
            }
            assert_eq!(f[9], vals[2 * 50 + p] / vals[6 * 50 + p]);
            assert_eq!(f[10], vals[3 * 50 + p] / vals[7 * 50 + p]);
        }
    }

    fn sample(features: Vec<f64>, label: LandClass) -> Sample {
        Sample {
            features,
            label,
            scene_id: "toy".into(),
            weight: 1.0,
        }
    }

    fn padded(a: f64, b: f64) -> Vec<f64> {
        let mut v = vec![0.0; FEATURE_LEN];
        v[0] = a;
        v[1] = b;
        // constant features exercise the zero-deviation guard
        v
    }

    #[test]
    fn separable_toy_set_is_learnt_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = Vec::new();
        for _ in 0..40 {
            samples.push(sample(padded(rng.random::<f64>() + 2.0, rng.random::<f64>()), LandClass::Water));
            samples.push(sample(padded(-rng.random::<f64>() - 2.0, rng.random::<f64>()), LandClass::Desert));
        }
        let model = train_classifier(&TrainingSet::from_samples(samples), &TrainParams::default()).unwrap();
        assert_eq!(model.training_accuracy, 1.0);
        assert_eq!(model.machines.len(), 2);
        for m in &model.machines {
            assert!(m.objective_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn single_class_rejected() {
        let samples = (0..20).map(|i| sample(padded(i as f64, 0.0), LandClass::Cloud)).collect();
        assert!(train_classifier(&TrainingSet::from_samples(samples), &TrainParams::default()).is_err());
        assert!(train_classifier(&TrainingSet::from_samples(Vec::new()), &TrainParams::default()).is_err());
    }

    #[test]
    fn duplicated_samples_equal_doubled_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let base: Vec<Sample> = (0..20)
            .map(|i| {
                let class = if i % 2 == 0 { LandClass::Water } else { LandClass::Vegetation };
                let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
                sample(padded(shift + noise.sample(&mut rng), noise.sample(&mut rng)), class)
            })
            .collect();
        let doubled = [0usize, 3, 7];
        let mut duplicated = Vec::new();
        let mut weighted = Vec::new();
        for (i, s) in base.iter().enumerate() {
            duplicated.push(s.clone());
            if doubled.contains(&i) {
                duplicated.push(s.clone());
                weighted.push(Sample { weight: 2.0, ..s.clone() });
            } else {
                weighted.push(s.clone());
            }
        }
        let params = TrainParams {
            c: 0.5,
            epochs: 200,
            seed: 4,
        };
        let a = train_classifier(&TrainingSet::from_samples(duplicated), &params).unwrap();
        let b = train_classifier(&TrainingSet::from_samples(weighted), &params).unwrap();
        assert_eq!(a.feature_mean, b.feature_mean);
        for (ma, mb) in a.machines.iter().zip(&b.machines) {
            assert_eq!(ma.weights, mb.weights);
            assert_eq!(ma.bias, mb.bias);
        }
        // both sit at the optimum of the weighted problem: compare with a
        // dual coordinate-descent solve of the same objective
        let ts = TrainingSet::from_samples(base.iter().enumerate().map(|(i, s)| Sample { weight: if doubled.contains(&i) { 2.0 } else { 1.0 }, ..s.clone() }).collect());
        let xs: Vec<Vec<f64>> = ts.samples.iter().map(|s| {
            let mut z = b.standardize(&s.features);
            z.push(1.0);
            z
        }).collect();
        let ys: Vec<f64> = ts.samples.iter().map(|s| if s.label == LandClass::Water { 1.0 } else { -1.0 }).collect();
        let cw: Vec<f64> = ts.samples.iter().map(|s| params.c * s.weight).collect();
        let w_opt = dual_cd(&xs, &ys, &cw);
        let total: f64 = ts.samples.iter().map(|s| s.weight).sum();
        let lambda = 1.0 / (params.c * total);
        let weights: Vec<f64> = ts.samples.iter().map(|s| s.weight).collect();
        let mut w_sgd = b.machines[0].weights.clone();
        w_sgd.push(b.machines[0].bias);
        let opt = objective(&w_opt, &xs, &ys, &weights, lambda, total);
        let got = objective(&w_sgd, &xs, &ys, &weights, lambda, total);
        assert!(got - opt < 0.02 * opt.abs().max(1e-3), "{got} vs {opt}");
    }

    /// Dual coordinate descent for `1/2 |w|^2 + sum_i C_i hinge_i`.
    fn dual_cd(xs: &[Vec<f64>], ys: &[f64], c: &[f64]) -> Vec<f64> {
        let d = xs[0].len();
        let mut alpha = vec![0.0; xs.len()];
        let mut w = vec![0.0; d];
        for _ in 0..20_000 {
            for i in 0..xs.len() {
                let q = dot(&xs[i], &xs[i]);
                let g = ys[i] * dot(&w, &xs[i]) - 1.0;
                let new = (alpha[i] - g / q).clamp(0.0, c[i]);
                let delta = new - alpha[i];
                if delta != 0.0 {
                    for k in 0..d {
                        w[k] += delta * ys[i] * xs[i][k];
                    }
                    alpha[i] = new;
                }
            }
        }
        w
    }

    #[test]
    fn ties_follow_class_order() {
        let machine = |class| BinarySvm {
            class,
            weights: vec![0.0; FEATURE_LEN],
            bias: 0.0,
            objective_history: Vec::new(),
        };
        let model = ClassifierModel {
            feature_mean: vec![0.0; FEATURE_LEN],
            feature_std: vec![1.0; FEATURE_LEN],
            machines: LandClass::ALL.iter().rev().map(|&c| machine(c)).rev().collect(),
            params: TrainParams::default(),
            training_accuracy: 1.0,
            ratio_cap: 100.0,
        };
        assert_eq!(model.predict(&[0.0; FEATURE_LEN]), LandClass::Cloud);
    }

    #[test]
    fn empty_scene_has_no_coverage() {
        let map = ClassMap::from_labels(2, 2, vec![NODATA_LABEL; 4]);
        assert!(map.coverage.is_none());
        assert_eq!(map.notes.len(), 1);
    }

    #[test]
    fn coverage_sums_to_one() {
        let map = ClassMap::from_labels(1, 5, vec![0, 1, 1, 3, NODATA_LABEL]);
        let cov = map.coverage.unwrap();
        assert!((cov.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(cov[&LandClass::Water], 0.5);
    }

    #[test]
    fn coverage_regression_examples() {
        let s = validate_coverage(&[(0.0, 0.1), (0.5, 0.6), (1.0, 1.1)]).unwrap();
        assert!((s.slope - 1.0).abs() < 1e-12);
        assert!((s.intercept - 0.1).abs() < 1e-12);
        assert!(validate_coverage(&[(0.0, 0.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn catalog_rows_and_swapped_geometry() {
        let cat = reference_training_catalog();
        assert_eq!(cat.len(), 16);
        let aira = &cat[0];
        assert_eq!((aira.sun_azimuth_deg, aira.sun_elevation_deg), (119.12, 49.1));
        assert_eq!(aira.normalized_sun(), (119.12, 49.1));
        let jornada = &cat[8];
        assert_eq!(jornada.normalized_sun(), (151.4, 28.7));
        assert!(cat.iter().all(|r| {
            let (_, el) = r.normalized_sun();
            el > 0.0 && el <= 90.0
        }));
    }

    #[test]
    fn jsonl_round_trip() {
        let ts = TrainingSet::from_samples(vec![sample(padded(1.0, 2.0), LandClass::Cloud)]);
        let back = TrainingSet::from_jsonl(&ts.to_jsonl()).unwrap();
        assert_eq!(back.samples, ts.samples);
        assert!(TrainingSet::from_jsonl("{\"features\":[1],\"label\":\"CLOUD\",\"scene_id\":\"x\"}").is_err());
    }
}
