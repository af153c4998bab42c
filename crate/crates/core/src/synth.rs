//! Synthetic scenes with known ground truth.
//!
//! Backgrounds are built from four smooth archetype reflectance spectra
//! plus Gaussian noise, converted to radiance through the scene's solar
//! geometry. Anomalies are planted as spectral shifts or foreign materials
//! on known pixel sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::classifier::LandClass;
use crate::engine::wheel::COMPLETE_MARKER;
use crate::error::{Error, Result};
use crate::radiometry::solar_mu0;
use crate::raster::{Cube, Pixel};
use crate::scene::{band_bytes, write_scene, GeoBounds, Instrument, Scene, SceneMetadata};

/// 242 evenly spaced centres over 357-2576 nm.
pub fn hyperion_like_centers() -> Vec<f64> {
    even_centers(242, 357.0, 2576.0)
}

pub fn even_centers(n: usize, low_nm: f64, high_nm: f64) -> Vec<f64> {
    if n == 1 {
        return vec![low_nm];
    }
    (0..n).map(|i| low_nm + (high_nm - low_nm) * i as f64 / (n - 1) as f64).collect()
}

/// Top-of-atmosphere solar irradiance at 1 AU in W m^-2 um^-1, from a
/// 5778 K blackbody.
pub fn solar_flux(wavelength_nm: f64) -> f64 {
    const H: f64 = 6.626_070_15e-34;
    const C: f64 = 2.997_924_58e8;
    const K: f64 = 1.380_649e-23;
    const T: f64 = 5778.0;
    const SUN_RADIUS_M: f64 = 6.957e8;
    const AU_M: f64 = 1.495_978_707e11;
    let lambda = wavelength_nm * 1e-9;
    let planck = 2.0 * H * C * C / lambda.powi(5) / ((H * C / (lambda * K * T)).exp() - 1.0);
    let irradiance = std::f64::consts::PI * planck * (SUN_RADIUS_M / AU_M).powi(2);
    irradiance * 1e-6
}

/// Smooth stand-in reflectance of a land class.
pub fn archetype_reflectance(class: LandClass, wavelength_nm: f64) -> f64 {
    let x = wavelength_nm;
    match class {
        LandClass::Cloud => 0.74 - 0.08 * ((x - 400.0) / 2200.0).clamp(0.0, 1.0),
        LandClass::Water => 0.02 + 0.07 * (-(x - 400.0).max(0.0) / 120.0).exp(),
        LandClass::Desert => 0.12 + 0.30 * (1.0 - (-(x - 350.0).max(0.0) / 700.0).exp()),
        LandClass::Vegetation => {
            let green = 0.04 * (-((x - 550.0) / 40.0).powi(2)).exp();
            let edge = 0.42 / (1.0 + (-(x - 715.0) / 15.0).exp());
            let swir_decline = 0.22 * (1.0 / (1.0 + (-(x - 1500.0) / 150.0).exp()));
            0.04 + green + edge - swir_decline
        }
    }
}

pub fn archetype_spectrum(class: LandClass, centers: &[f64]) -> Vec<f64> {
    centers.iter().map(|&c| archetype_reflectance(class, c)).collect()
}

/// Background class arrangement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Uniform { class: LandClass },
    /// `left` for columns below `split_col` (default: half), `right` after.
    Split {
        left: LandClass,
        right: LandClass,
        #[serde(default)]
        split_col: Option<usize>,
    },
    /// North-west, north-east, south-west, south-east.
    Quadrants { classes: [LandClass; 4] },
}

impl Layout {
    pub fn class_at(&self, row: usize, col: usize, rows: usize, cols: usize) -> LandClass {
        match self {
            Layout::Uniform { class } => *class,
            Layout::Split { left, right, split_col } => {
                if col < split_col.unwrap_or(cols / 2) {
                    *left
                } else {
                    *right
                }
            }
            Layout::Quadrants { classes } => {
                let south = row >= rows / 2;
                let east = col >= cols / 2;
                classes[(south as usize) * 2 + east as usize]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftProfile {
    Flat,
    /// One full sine period across the band range.
    Sine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnomalySpectrum {
    /// Background reflectance plus `sigma` noise standard deviations,
    /// shaped by `profile`.
    Shift { sigma: f64, profile: ShiftProfile },
    /// Replaces the background with another archetype.
    Material { class: LandClass },
}

impl AnomalySpectrum {
    fn apply(&self, background: &[f64], centers: &[f64], noise_sigma: f64) -> Vec<f64> {
        match self {
            AnomalySpectrum::Shift { sigma, profile } => background
                .iter()
                .enumerate()
                .map(|(b, v)| v + sigma * noise_sigma * profile_value(*profile, b, background.len()))
                .collect(),
            AnomalySpectrum::Material { class } => archetype_spectrum(*class, centers),
        }
    }
}

fn profile_value(profile: ShiftProfile, band: usize, bands: usize) -> f64 {
    match profile {
        ShiftProfile::Flat => 1.0,
        ShiftProfile::Sine => (2.0 * std::f64::consts::PI * (band as f64 + 0.5) / bands as f64).sin(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { row: usize, col: usize, height: usize, width: usize },
    /// A random 4-connected patch of `size` pixels grown from `center`.
    Blob { center: [usize; 2], size: usize },
    Pixels { pixels: Vec<[usize; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAnomaly {
    pub shape: Shape,
    pub spectrum: AnomalySpectrum,
    /// Flat shift, in noise standard deviations, applied to the 4-neighbour
    /// ring around the anomaly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halo_sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRecipe {
    pub scene_id: String,
    pub rows: usize,
    pub cols: usize,
    pub band_centers_nm: Vec<f64>,
    pub instrument: Instrument,
    pub layout: Layout,
    /// Additive reflectance noise standard deviation.
    pub noise_sigma: f64,
    pub anomalies: Vec<PlantedAnomaly>,
    /// Rectangles `[row, col, height, width]` written as nodata.
    pub nodata_rects: Vec<[usize; 4]>,
    pub sun_elevation_deg: f64,
    pub sun_azimuth_deg: f64,
    pub earth_sun_distance_au: f64,
    pub acquisition_date: NaiveDate,
    pub geo_bounds: GeoBounds,
    pub seed: u64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        SceneRecipe {
            scene_id: "synthetic".into(),
            rows: 64,
            cols: 64,
            band_centers_nm: hyperion_like_centers(),
            instrument: Instrument::HyperionLike,
            layout: Layout::Uniform {
                class: LandClass::Desert,
            },
            noise_sigma: 0.002,
            anomalies: Vec::new(),
            nodata_rects: Vec::new(),
            sun_elevation_deg: 55.0,
            sun_azimuth_deg: 135.0,
            earth_sun_distance_au: 1.0,
            acquisition_date: NaiveDate::from_ymd_opt(2024, 6, 1).expect("valid date"),
            geo_bounds: GeoBounds {
                north: 10.1,
                south: 10.0,
                west: 20.0,
                east: 20.1,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub anomaly_id: usize,
    /// Row-major sorted.
    pub pixels: Vec<Pixel>,
    pub halo: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene_id: String,
    pub seed: u64,
    pub anomalies: Vec<PlantedTruth>,
    /// Background class code per pixel, row-major; 255 where nodata.
    pub class_codes: Vec<u8>,
    /// Hex SHA-256 of each band file.
    pub band_checksums: Vec<String>,
    pub archetypes: BTreeMap<LandClass, Vec<f64>>,
    pub noise_sigma: f64,
}

impl GroundTruth {
    /// Share of valid pixels whose background class is `class`.
    pub fn class_fraction(&self, class: LandClass) -> f64 {
        let valid = self.class_codes.iter().filter(|&&c| c != 255).count();
        let n = self.class_codes.iter().filter(|&&c| c == class.code()).count();
        n as f64 / valid.max(1) as f64
    }
}

fn shape_pixels(shape: &Shape, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let in_bounds = |r: usize, c: usize| -> Result<usize> {
        if r < rows && c < cols {
            Ok(r * cols + c)
        } else {
            Err(Error::Recipe(format!("pixel ({r}, {c}) outside {rows}x{cols} scene")))
        }
    };
    let mut out = BTreeSet::new();
    match shape {
        Shape::Rect { row, col, height, width } => {
            if *height == 0 || *width == 0 {
                return Err(Error::Recipe("empty rectangle".into()));
            }
            for r in *row..row + height {
                for c in *col..col + width {
                    out.insert(in_bounds(r, c)?);
                }
            }
        }
        Shape::Pixels { pixels } => {
            for &[r, c] in pixels {
                if !out.insert(in_bounds(r, c)?) {
                    return Err(Error::Recipe(format!("pixel ({r}, {c}) listed twice")));
                }
            }
        }
        Shape::Blob { center, size } => {
            let start = in_bounds(center[0], center[1])?;
            if *size == 0 || *size > rows * cols {
                return Err(Error::Recipe(format!("blob size {size} not in 1..={}", rows * cols)));
            }
            out.insert(start);
            let mut frontier: Vec<usize> = Vec::new();
            let push_neighbors = |p: usize, out: &BTreeSet<usize>, frontier: &mut Vec<usize>| {
                for q in crate::raster::neighbors4(p, rows, cols) {
                    if !out.contains(&q) && !frontier.contains(&q) {
                        frontier.push(q);
                    }
                }
            };
            push_neighbors(start, &out, &mut frontier);
            while out.len() < *size {
                let i = rng.random_range(0..frontier.len());
                let p = frontier.swap_remove(i);
                out.insert(p);
                push_neighbors(p, &out, &mut frontier);
            }
        }
    }
    Ok(out.into_iter().collect())
}

fn to_pixels(set: &[usize], cols: usize) -> Vec<Pixel> {
    set.iter().map(|&p| Pixel::from_index(p, cols)).collect()
}

/// Builds the scene in memory. Deterministic in the recipe.
pub fn synthesize(recipe: &SceneRecipe) -> Result<(Scene, GroundTruth)> {
    let (rows, cols) = (recipe.rows, recipe.cols);
    let centers = &recipe.band_centers_nm;
    let bands = centers.len();
    if rows == 0 || cols == 0 || bands == 0 {
        return Err(Error::Recipe("rows, cols and band count must be positive".into()));
    }
    if !(recipe.noise_sigma >= 0.0) {
        return Err(Error::Recipe("noise_sigma must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let n = rows * cols;

    // Shapes first so the noise stream does not depend on them.
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut planted = Vec::new();
    let mut halos = Vec::new();
    for (i, a) in recipe.anomalies.iter().enumerate() {
        let pixels = shape_pixels(&a.shape, rows, cols, &mut rng)?;
        for &p in &pixels {
            if owner[p].is_some() {
                return Err(Error::Recipe(format!("anomaly {i} overlaps another anomaly")));
            }
            owner[p] = Some(i);
        }
        planted.push(pixels);
    }
    for (i, a) in recipe.anomalies.iter().enumerate() {
        let mut ring = BTreeSet::new();
        if a.halo_sigma.is_some() {
            for &p in &planted[i] {
                for q in crate::raster::neighbors4(p, rows, cols) {
                    if owner[q] != Some(i) {
                        ring.insert(q);
                    }
                }
            }
        }
        halos.push(ring.into_iter().collect::<Vec<_>>());
    }
    let mut halo_owner: Vec<Option<usize>> = vec![None; n];
    for (i, ring) in halos.iter().enumerate() {
        for &p in ring {
            if owner[p].is_some() || halo_owner[p].is_some() {
                return Err(Error::Recipe(format!("halo of anomaly {i} overlaps another anomaly")));
            }
            halo_owner[p] = Some(i);
        }
    }
    let mut nodata = vec![false; n];
    for &[r0, c0, h, w] in &recipe.nodata_rects {
        for r in r0..(r0 + h).min(rows) {
            for c in c0..(c0 + w).min(cols) {
                nodata[r * cols + c] = true;
            }
        }
    }

    let archetypes: BTreeMap<LandClass, Vec<f64>> =
        LandClass::ALL.iter().map(|&c| (c, archetype_spectrum(c, centers))).collect();
    let flux: Vec<f64> = centers.iter().map(|&c| solar_flux(c)).collect();
    let mu0 = solar_mu0(recipe.sun_elevation_deg);
    let d2 = recipe.earth_sun_distance_au.powi(2);
    let noise = Normal::new(0.0, recipe.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");

    let mut radiance = Cube::<f32>::zeros(bands, rows, cols);
    let mut class_codes = vec![255u8; n];
    for p in 0..n {
        let (r, c) = (p / cols, p % cols);
        let class = recipe.layout.class_at(r, c, rows, cols);
        let background = &archetypes[&class];
        let rho = if let Some(i) = owner[p] {
            recipe.anomalies[i].spectrum.apply(background, centers, recipe.noise_sigma)
        } else if let Some(i) = halo_owner[p] {
            let s = recipe.anomalies[i].halo_sigma.unwrap_or(0.0) * recipe.noise_sigma;
            background.iter().map(|v| v + s).collect()
        } else {
            background.clone()
        };
        if nodata[p] {
            continue;
        }
        class_codes[p] = class.code();
        for b in 0..bands {
            let e = if recipe.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let value = (rho[b] + e).max(1e-4);
            let l = value * mu0 * flux[b] / (std::f64::consts::PI * d2);
            radiance.set(b, r, c, l as f32);
        }
    }

    let metadata = SceneMetadata {
        scene_id: recipe.scene_id.clone(),
        acquisition_date: recipe.acquisition_date,
        sun_elevation_deg: recipe.sun_elevation_deg,
        sun_azimuth_deg: recipe.sun_azimuth_deg,
        earth_sun_distance_au: recipe.earth_sun_distance_au,
        geo_bounds: recipe.geo_bounds,
        instrument: recipe.instrument,
        band_centers_nm: centers.clone(),
        band_solar_flux: flux,
        scale_offset: None,
    };
    let band_checksums = (0..bands)
        .map(|b| {
            let digest = Sha256::digest(band_bytes(radiance.band(b)));
            digest.iter().map(|x| format!("{x:02x}")).collect()
        })
        .collect();
    let scene = Scene::new(metadata, radiance, nodata)?;
    let truth = GroundTruth {
        scene_id: recipe.scene_id.clone(),
        seed: recipe.seed,
        anomalies: planted
            .iter()
            .zip(&halos)
            .enumerate()
            .map(|(i, (p, h))| PlantedTruth {
                anomaly_id: i,
                pixels: to_pixels(p, cols),
                halo: to_pixels(h, cols),
            })
            .collect(),
        class_codes,
        band_checksums,
        archetypes,
        noise_sigma: recipe.noise_sigma,
    };
    Ok((scene, truth))
}

/// Ground-truth manifest path for a bundle written by [`generate`].
pub fn truth_path(out_dir: &Path, scene_id: &str) -> PathBuf {
    out_dir.join(format!("{scene_id}.truth.json"))
}

/// Writes `<out_dir>/<scene_id>/` as a complete bundle and its manifest
/// beside it. Returns the bundle directory.
pub fn generate(recipe: &SceneRecipe, out_dir: impl AsRef<Path>) -> Result<(PathBuf, GroundTruth)> {
    let out_dir = out_dir.as_ref();
    crate::engine::store::check_component(&recipe.scene_id)
        .map_err(|_| Error::Recipe(format!("scene id {:?} is not a valid directory name", recipe.scene_id)))?;
    let (scene, truth) = synthesize(recipe)?;
    let dir = out_dir.join(&recipe.scene_id);
    write_scene(&scene, &dir)?;
    let text = serde_json::to_string(&truth).expect("truth serialises") + "\n";
    let tp = truth_path(out_dir, &recipe.scene_id);
    fs::write(&tp, text).map_err(|e| Error::io(&tp, e))?;
    let marker = dir.join(COMPLETE_MARKER);
    fs::write(&marker, b"").map_err(|e| Error::io(&marker, e))?;
    Ok((dir, truth))
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiometry::to_reflectance;
    use crate::scene::load_scene;

    fn small(seed: u64) -> SceneRecipe {
        SceneRecipe {
            rows: 12,
            cols: 10,
            band_centers_nm: even_centers(6, 450.0, 2200.0),
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn blackbody_flux_is_solar_scale() {
        let f = solar_flux(500.0);
        assert!(f > 1700.0 && f < 2200.0, "{f}");
        assert!(solar_flux(2200.0) < solar_flux(800.0));
    }

    #[test]
    fn archetypes_have_their_shapes() {
        use LandClass::*;
        let r = |c, x| archetype_reflectance(c, x);
        assert!((r(Cloud, 500.0) - r(Cloud, 1000.0)).abs() < 0.05 && r(Cloud, 500.0) > 0.6);
        assert!(r(Vegetation, 800.0) > 4.0 * r(Vegetation, 670.0));
        assert!(r(Water, 450.0) > r(Water, 900.0) && r(Water, 2000.0) < 0.05);
        assert!(r(Desert, 2000.0) > r(Desert, 500.0));
        for c in LandClass::ALL {
            for x in hyperion_like_centers() {
                assert!(r(c, x) > 0.01, "{c:?} at {x}");
            }
        }
    }

    #[test]
    fn no_anomalies_means_empty_manifest() {
        let (_, truth) = synthesize(&small(1)).unwrap();
        assert!(truth.anomalies.is_empty());
    }

    #[test]
    fn three_by_three_anomaly_has_nine_pixels() {
        let mut recipe = small(2);
        recipe.anomalies.push(PlantedAnomaly {
            shape: Shape::Rect { row: 2, col: 3, height: 3, width: 3 },
            spectrum: AnomalySpectrum::Shift { sigma: 10.0, profile: ShiftProfile::Flat },
            halo_sigma: None,
        });
        let (_, truth) = synthesize(&recipe).unwrap();
        assert_eq!(truth.anomalies[0].pixels.len(), 9);
    }

    #[test]
    fn overlapping_anomalies_are_rejected() {
        let mut recipe = small(3);
        for _ in 0..2 {
            recipe.anomalies.push(PlantedAnomaly {
                shape: Shape::Rect { row: 1, col: 1, height: 2, width: 2 },
                spectrum: AnomalySpectrum::Material { class: LandClass::Water },
                halo_sigma: None,
            });
        }
        assert!(matches!(synthesize(&recipe), Err(Error::Recipe(_))));
    }

    #[test]
    fn out_of_bounds_anomaly_rejected() {
        let mut recipe = small(3);
        recipe.anomalies.push(PlantedAnomaly {
            shape: Shape::Pixels { pixels: vec![[50, 0]] },
            spectrum: AnomalySpectrum::Material { class: LandClass::Water },
            halo_sigma: None,
        });
        assert!(matches!(synthesize(&recipe), Err(Error::Recipe(_))));
    }

    #[test]
    fn blob_is_connected_and_sized() {
        let mut recipe = small(4);
        recipe.anomalies.push(PlantedAnomaly {
            shape: Shape::Blob { center: [6, 5], size: 12 },
            spectrum: AnomalySpectrum::Shift { sigma: 8.0, profile: ShiftProfile::Sine },
            halo_sigma: Some(3.0),
        });
        let (_, truth) = synthesize(&recipe).unwrap();
        let set: Vec<usize> = truth.anomalies[0].pixels.iter().map(|p| p.index(10)).collect();
        assert_eq!(set.len(), 12);
        let labels = crate::grid::label_components(
            &(0..120).map(|p| set.contains(&p)).collect::<Vec<_>>(),
            12,
            10,
        );
        assert_eq!(labels.count, 1);
        assert!(!truth.anomalies[0].halo.is_empty());
    }

    #[test]
    fn same_seed_gives_identical_bundles() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let recipe = small(5);
        let (da, ta) = generate(&recipe, a.path()).unwrap();
        let (db, tb) = generate(&recipe, b.path()).unwrap();
        assert_eq!(ta, tb);
        let mut names: Vec<_> = fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for name in names {
            assert_eq!(fs::read(da.join(&name)).unwrap(), fs::read(db.join(&name)).unwrap());
        }
    }

    #[test]
    fn checksums_match_written_bands() {
        let dir = tempfile::tempdir().unwrap();
        let (bundle, truth) = generate(&small(6), dir.path()).unwrap();
        let scene = load_scene(&bundle).unwrap();
        for b in 0..scene.band_count() {
            let digest = Sha256::digest(band_bytes(scene.radiance.band(b)));
            let hex: String = digest.iter().map(|x| format!("{x:02x}")).collect();
            assert_eq!(hex, truth.band_checksums[b]);
        }
        assert!(bundle.join(COMPLETE_MARKER).exists());
        assert_eq!(load_truth(truth_path(dir.path(), "synthetic")).unwrap(), truth);
    }

    #[test]
    fn reflectance_recovers_archetype() {
        let mut recipe = small(7);
        recipe.noise_sigma = 0.0;
        recipe.sun_elevation_deg = 49.1;
        let (scene, truth) = synthesize(&recipe).unwrap();
        let refl = to_reflectance(&scene).unwrap();
        let want = &truth.archetypes[&LandClass::Desert];
        for b in 0..scene.band_count() {
            assert!((refl.values.at(b, 17) - want[b]).abs() < 1e-5);
        }
    }

    #[test]
    fn nodata_rects_are_masked() {
        let mut recipe = small(8);
        recipe.nodata_rects.push([0, 0, 2, 10]);
        let (scene, truth) = synthesize(&recipe).unwrap();
        assert_eq!(scene.valid_count(), 100);
        assert_eq!(truth.class_codes.iter().filter(|&&c| c == 255).count(), 20);
    }
}
