//! Scene bundles: metadata, band rasters, nodata mask, loading and validation.
//!
//! A bundle is a directory holding
//!
//! * `metadata.json` with the [`SceneMetadata`] keys plus `rows` and `cols`,
//! * `band_<i>.f32` for `i = 0..band_count`, each `rows * cols` little-endian
//!   `f32` values in row-major order,
//! * optionally `nodata.u8`, `rows * cols` bytes where `1` marks an invalid pixel.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Cube, Pixel};

pub const METADATA_FILE: &str = "metadata.json";
pub const NODATA_FILE: &str = "nodata.u8";

pub fn band_file_name(band: usize) -> String {
    format!("band_{band}.f32")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Instrument {
    HyperionLike,
    AliLike,
    Synthetic,
}

/// Axis-aligned lat/lon footprint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBounds {
    pub north: f64,
    pub south: f64,
    pub west: f64,
    pub east: f64,
}

/// Per-band affine calibration applied to raw counts before radiometric
/// conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleOffset {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub scene_id: String,
    pub acquisition_date: NaiveDate,
    pub sun_elevation_deg: f64,
    pub sun_azimuth_deg: f64,
    pub earth_sun_distance_au: f64,
    pub geo_bounds: GeoBounds,
    pub instrument: Instrument,
    pub band_centers_nm: Vec<f64>,
    pub band_solar_flux: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_offset: Option<ScaleOffset>,
}

impl SceneMetadata {
    pub fn band_count(&self) -> usize {
        self.band_centers_nm.len()
    }

    /// Every metadata invariant violation, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.band_centers_nm.len() != self.band_solar_flux.len() {
            out.push(format!(
                "band_centers_nm has {} entries but band_solar_flux has {}",
                self.band_centers_nm.len(),
                self.band_solar_flux.len()
            ));
        }
        if self.band_centers_nm.windows(2).any(|w| !(w[0] < w[1])) {
            out.push("band_centers_nm must be strictly increasing".into());
        }
        if !(self.sun_elevation_deg > 0.0 && self.sun_elevation_deg <= 90.0) {
            out.push(format!(
                "sun_elevation_deg {} outside (0, 90]",
                self.sun_elevation_deg
            ));
        }
        if !(self.sun_azimuth_deg >= 0.0 && self.sun_azimuth_deg < 360.0) {
            out.push(format!(
                "sun_azimuth_deg {} outside [0, 360)",
                self.sun_azimuth_deg
            ));
        }
        if !(self.earth_sun_distance_au > 0.0) {
            out.push(format!(
                "earth_sun_distance_au {} must be positive",
                self.earth_sun_distance_au
            ));
        }
        if let Some(so) = &self.scale_offset {
            if so.gain.len() != self.band_count() || so.offset.len() != self.band_count() {
                out.push("scale_offset length differs from band count".into());
            }
        }
        out
    }
}

/// On-disk form of `metadata.json`.
#[derive(Serialize, Deserialize)]
struct MetadataFile {
    #[serde(flatten)]
    metadata: SceneMetadata,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub metadata: SceneMetadata,
    pub rows: usize,
    pub cols: usize,
    pub radiance: Cube<f32>,
    pub nodata: Vec<bool>,
}

impl Scene {
    pub fn new(metadata: SceneMetadata, radiance: Cube<f32>, nodata: Vec<bool>) -> Result<Self> {
        let (rows, cols) = (radiance.rows(), radiance.cols());
        if radiance.bands() != metadata.band_count() {
            return Err(Error::Format(format!(
                "radiance has {} bands, metadata lists {}",
                radiance.bands(),
                metadata.band_count()
            )));
        }
        if nodata.len() != rows * cols {
            return Err(Error::Format(format!(
                "nodata mask has {} entries, expected {}",
                nodata.len(),
                rows * cols
            )));
        }
        Ok(Scene {
            metadata,
            rows,
            cols,
            radiance,
            nodata,
        })
    }

    pub fn band_count(&self) -> usize {
        self.radiance.bands()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_valid(&self, p: usize) -> bool {
        !self.nodata[p]
    }

    pub fn valid_count(&self) -> usize {
        self.nodata.iter().filter(|&&m| !m).count()
    }

    pub fn geo(&self) -> GeoTransform {
        GeoTransform::new(self.metadata.geo_bounds, self.rows, self.cols)
    }
}

/// Band-major spectrum of an in-bounds, valid pixel.
pub fn pixel_spectrum(scene: &Scene, row: usize, col: usize) -> Result<Vec<f64>> {
    if row >= scene.rows || col >= scene.cols {
        return Err(Error::Lookup(format!(
            "({row}, {col}) outside {}x{} grid",
            scene.rows, scene.cols
        )));
    }
    let p = row * scene.cols + col;
    if scene.nodata[p] {
        return Err(Error::Lookup(format!("({row}, {col}) is nodata")));
    }
    Ok((0..scene.band_count())
        .map(|b| scene.radiance.at(b, p) as f64)
        .collect())
}

/// Counts band-file reads per scene id. Shared by concurrent loaders.
#[derive(Debug, Default)]
pub struct BandReadCounter {
    reads: Mutex<BTreeMap<String, usize>>,
}

impl BandReadCounter {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, scene_id: &str) {
        let mut reads = self.reads.lock().unwrap();
        *reads.entry(scene_id.to_string()).or_default() += 1;
    }

    pub fn get(&self, scene_id: &str) -> usize {
        self.reads.lock().unwrap().get(scene_id).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> BTreeMap<String, usize> {
        self.reads.lock().unwrap().clone()
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    load_scene_counted(path, None)
}

/// Loads a bundle, reading each band file exactly once and recording each
/// read in `counter`.
pub fn load_scene_counted(path: impl AsRef<Path>, counter: Option<&BandReadCounter>) -> Result<Scene> {
    let dir = path.as_ref();
    let meta_path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let file: MetadataFile = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
    let MetadataFile {
        metadata,
        rows,
        cols,
    } = file;
    let bands = metadata.band_count();
    if metadata.band_solar_flux.len() != bands {
        return Err(Error::Format(format!(
            "{}: band_solar_flux has {} entries for {} bands",
            meta_path.display(),
            metadata.band_solar_flux.len(),
            bands
        )));
    }
    let n = rows * cols;
    let mut data = Vec::with_capacity(bands * n);
    for b in 0..bands {
        let name = band_file_name(b);
        let band_path = dir.join(&name);
        let bytes = fs::read(&band_path).map_err(|e| Error::io(&band_path, e))?;
        if let Some(c) = counter {
            c.record(&metadata.scene_id);
        }
        if bytes.len() != n * 4 {
            return Err(Error::Format(format!(
                "{name}: expected {} bytes for {rows}x{cols} pixels, found {}",
                n * 4,
                bytes.len()
            )));
        }
        data.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    let mask_path = dir.join(NODATA_FILE);
    let nodata = if mask_path.exists() {
        let bytes = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
        if bytes.len() != n {
            return Err(Error::Format(format!(
                "{NODATA_FILE}: expected {n} bytes, found {}",
                bytes.len()
            )));
        }
        bytes.iter().map(|&v| v == 1).collect()
    } else {
        vec![false; n]
    };
    let radiance = Cube::from_vec(bands, rows, cols, data).expect("length checked per band");
    Scene::new(metadata, radiance, nodata)
}

/// Writes a bundle in canonical form. `nodata.u8` is written only when at
/// least one pixel is masked.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file = MetadataFile {
        metadata: scene.metadata.clone(),
        rows: scene.rows,
        cols: scene.cols,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("metadata serializes");
    text.push('\n');
    let meta_path = dir.join(METADATA_FILE);
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    for b in 0..scene.band_count() {
        let path = dir.join(band_file_name(b));
        fs::write(&path, band_bytes(scene.radiance.band(b))).map_err(|e| Error::io(&path, e))?;
    }
    let mask_path = dir.join(NODATA_FILE);
    if scene.nodata.iter().any(|&m| m) {
        let bytes: Vec<u8> = scene.nodata.iter().map(|&m| m as u8).collect();
        fs::write(&mask_path, bytes).map_err(|e| Error::io(&mask_path, e))?;
    } else if mask_path.exists() {
        fs::remove_file(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
    }
    Ok(())
}

pub fn band_bytes(band: &[f32]) -> Vec<u8> {
    band.iter().flat_map(|v| v.to_le_bytes()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Warn,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

/// Checks a scene and extends its nodata mask.
///
/// Non-finite values and metadata violations are errors. All-zero rows or
/// columns running inward from an image edge are warnings and get masked.
/// Pixels are only ever added to the mask.
pub fn validate_scene(scene: &mut Scene) -> ValidationReport {
    let mut issues = Vec::new();
    for message in scene.metadata.violations() {
        issues.push(Issue {
            severity: Severity::Error,
            message,
        });
    }

    let (rows, cols, bands) = (scene.rows, scene.cols, scene.band_count());
    let mut non_finite = Vec::new();
    for p in 0..rows * cols {
        if (0..bands).any(|b| !scene.radiance.at(b, p).is_finite()) {
            non_finite.push(p);
        }
    }
    if !non_finite.is_empty() {
        let first = Pixel::from_index(non_finite[0], cols);
        issues.push(Issue {
            severity: Severity::Error,
            message: format!(
                "{} pixel(s) with non-finite radiance, first at ({}, {})",
                non_finite.len(),
                first.row,
                first.col
            ),
        });
        for p in non_finite {
            scene.nodata[p] = true;
        }
    }

    let zero_row = |r: usize| {
        (0..cols).all(|c| (0..bands).all(|b| scene.radiance.get(b, r, c) == 0.0))
    };
    let zero_col = |c: usize| {
        (0..rows).all(|r| (0..bands).all(|b| scene.radiance.get(b, r, c) == 0.0))
    };
    let mut edge_rows: Vec<usize> = (0..rows).take_while(|&r| zero_row(r)).collect();
    if edge_rows.len() < rows {
        edge_rows.extend((0..rows).rev().take_while(|&r| zero_row(r)));
    }
    let mut edge_cols: Vec<usize> = (0..cols).take_while(|&c| zero_col(c)).collect();
    if edge_cols.len() < cols {
        edge_cols.extend((0..cols).rev().take_while(|&c| zero_col(c)));
    }
    if !edge_rows.is_empty() || !edge_cols.is_empty() {
        issues.push(Issue {
            severity: Severity::Warn,
            message: format!(
                "masked {} zero-radiance edge row(s) and {} edge column(s)",
                edge_rows.len(),
                edge_cols.len()
            ),
        });
        for &r in &edge_rows {
            for c in 0..cols {
                scene.nodata[r * cols + c] = true;
            }
        }
        for &c in &edge_cols {
            for r in 0..rows {
                scene.nodata[r * cols + c] = true;
            }
        }
    }

    ValidationReport {
        ok: !issues.iter().any(|i| i.severity == Severity::Error),
        issues,
    }
}

/// Affine map between grid corner coordinates and lon/lat for an
/// axis-aligned footprint. Grid corner `(0, 0)` is the north-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    bounds: GeoBounds,
    rows: usize,
    cols: usize,
}

impl GeoTransform {
    pub fn new(bounds: GeoBounds, rows: usize, cols: usize) -> Self {
        GeoTransform { bounds, rows, cols }
    }

    /// `(lon, lat)` of fractional grid position `(row, col)`.
    pub fn to_geo(&self, row: f64, col: f64) -> (f64, f64) {
        let b = &self.bounds;
        let lon = b.west + col * (b.east - b.west) / self.cols as f64;
        let lat = b.north - row * (b.north - b.south) / self.rows as f64;
        (lon, lat)
    }

    /// Fractional `(row, col)` of a lon/lat position.
    pub fn to_grid(&self, lon: f64, lat: f64) -> (f64, f64) {
        let b = &self.bounds;
        let col = (lon - b.west) * self.cols as f64 / (b.east - b.west);
        let row = (b.north - lat) * self.rows as f64 / (b.north - b.south);
        (row, col)
    }

    /// `[west, south, east, north]` of the cells covered by `pixels`.
    pub fn bbox(&self, pixels: &[Pixel]) -> Option<[f64; 4]> {
        let bb = crate::raster::BBox::of(pixels)?;
        let (west, north) = self.to_geo(bb.row_min as f64, bb.col_min as f64);
        let (east, south) = self.to_geo((bb.row_max + 1) as f64, (bb.col_max + 1) as f64);
        Some([west, south, east, north])
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn test_metadata(bands: usize) -> SceneMetadata {
        SceneMetadata {
            scene_id: "test".into(),
            acquisition_date: NaiveDate::from_ymd_opt(2014, 4, 18).unwrap(),
            sun_elevation_deg: 90.0,
            sun_azimuth_deg: 119.12,
            earth_sun_distance_au: 1.0,
            geo_bounds: GeoBounds {
                north: 1.0,
                south: 0.0,
                west: 0.0,
                east: 1.0,
            },
            instrument: Instrument::Synthetic,
            band_centers_nm: (0..bands).map(|b| 500.0 + 10.0 * b as f64).collect(),
            band_solar_flux: vec![std::f64::consts::PI; bands],
            scale_offset: None,
        }
    }

    pub(crate) fn scene_from(bands: usize, rows: usize, cols: usize, data: Vec<f32>) -> Scene {
        let cube = Cube::from_vec(bands, rows, cols, data).unwrap();
        Scene::new(test_metadata(bands), cube, vec![false; rows * cols]).unwrap()
    }

    #[test]
    fn load_single_pixel_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let scene = scene_from(1, 1, 1, vec![0.0]);
        write_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        assert_eq!((loaded.rows, loaded.cols), (1, 1));
        assert_eq!(loaded.radiance.get(0, 0, 0), 0.0);
    }

    #[test]
    fn wrong_band_length_names_the_band() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene_from(2, 2, 2, vec![1.0; 8]), dir.path()).unwrap();
        fs::write(dir.path().join("band_1.f32"), [0u8; 12]).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("band_1.f32")), "{err}");
    }

    #[test]
    fn missing_band_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene_from(2, 2, 2, vec![1.0; 8]), dir.path()).unwrap();
        fs::remove_file(dir.path().join("band_0.f32")).unwrap();
        let err = load_scene(dir.path()).unwrap_err();
        assert!(err.to_string().contains("band_0.f32"), "{err}");
    }

    #[test]
    fn counter_counts_each_band_once() {
        let dir = tempfile::tempdir().unwrap();
        write_scene(&scene_from(3, 2, 2, vec![1.0; 12]), dir.path()).unwrap();
        let counter = BandReadCounter::new();
        load_scene_counted(dir.path(), Some(&counter)).unwrap();
        assert_eq!(counter.get("test"), 3);
    }

    #[test]
    fn pixel_spectrum_lookup() {
        let mut scene = scene_from(2, 1, 2, vec![1.0, 5.0, 2.0, 6.0]);
        assert_eq!(pixel_spectrum(&scene, 0, 0).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(pixel_spectrum(&scene, 1, 0), Err(Error::Lookup(_))));
        scene.nodata[1] = true;
        assert!(matches!(pixel_spectrum(&scene, 0, 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn validate_flags_nan() {
        let mut scene = scene_from(1, 2, 2, vec![1.0, f32::NAN, 1.0, 1.0]);
        let report = validate_scene(&mut scene);
        assert!(!report.ok);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].severity, Severity::Error);
        assert!(scene.nodata[1]);
    }

    #[test]
    fn validate_masks_zero_edge_row() {
        let mut scene = scene_from(2, 3, 2, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 2.0, 2.0]);
        let report = validate_scene(&mut scene);
        assert!(report.ok);
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].severity, Severity::Warn);
        assert_eq!(scene.nodata, vec![true, true, false, false, false, false]);
    }

    #[test]
    fn validate_clean_scene() {
        let mut scene = scene_from(2, 2, 2, vec![1.0; 8]);
        let report = validate_scene(&mut scene);
        assert!(report.ok);
        assert!(report.issues.is_empty());
    }

    #[test]
    fn validate_metadata_violation() {
        let mut scene = scene_from(2, 2, 2, vec![1.0; 8]);
        scene.metadata.sun_elevation_deg = 151.4;
        let report = validate_scene(&mut scene);
        assert!(!report.ok);
    }

    #[test]
    fn geo_transform_round_trip() {
        let g = GeoTransform::new(
            GeoBounds {
                north: 12.3,
                south: 11.9,
                west: 92.8,
                east: 93.1,
            },
            40,
            30,
        );
        let (lon, lat) = g.to_geo(7.0, 13.0);
        let (r, c) = g.to_grid(lon, lat);
        assert!((r - 7.0).abs() < 1e-9 && (c - 13.0).abs() < 1e-9);
    }
}
