//! Per-scene physical and feature transforms, cached once per scene in
//! [`PreparedScene`].

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Cube;
use crate::scene::{Instrument, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceCube {
    pub values: Cube<f64>,
    pub band_centers_nm: Vec<f64>,
    pub instrument: Instrument,
    /// Copy of the source scene's nodata mask.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BasisTag {
    LogColor,
    PcaScores,
    AliBinned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCube {
    pub values: Cube<f64>,
    pub basis_tag: BasisTag,
    /// `true` marks pixels excluded from this cube.
    pub mask: Vec<bool>,
}

impl FeatureCube {
    pub fn components(&self) -> usize {
        self.values.bands()
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&p| !self.mask[p]).collect()
    }
}

/// `cos(solar zenith)` for a given sun elevation.
pub fn solar_mu0(sun_elevation_deg: f64) -> f64 {
    (90.0 - sun_elevation_deg).to_radians().cos()
}

/// At-sensor reflectance `rho = pi * d^2 * L / (mu0 * F0)` per band, after
/// the optional per-band gain/offset calibration.
pub fn to_reflectance(scene: &Scene) -> Result<ReflectanceCube> {
    let meta = &scene.metadata;
    if let Some((b, f)) = meta
        .band_solar_flux
        .iter()
        .enumerate()
        .find(|(_, f)| !(**f > 0.0))
    {
        return Err(Error::Metadata(format!(
            "band {b} has non-positive solar flux {f}"
        )));
    }
    if !(meta.sun_elevation_deg > 0.0 && meta.sun_elevation_deg <= 90.0) {
        return Err(Error::Metadata(format!(
            "sun elevation {} outside (0, 90]",
            meta.sun_elevation_deg
        )));
    }
    let mu0 = solar_mu0(meta.sun_elevation_deg);
    let d2 = meta.earth_sun_distance_au * meta.earth_sun_distance_au;
    let (bands, rows, cols) = (scene.band_count(), scene.rows, scene.cols);
    let mut values = Cube::zeros(bands, rows, cols);
    for b in 0..bands {
        let factor = PI * d2 / (mu0 * meta.band_solar_flux[b]);
        let (gain, offset) = match &meta.scale_offset {
            Some(so) => (so.gain[b], so.offset[b]),
            None => (1.0, 0.0),
        };
        let src = scene.radiance.band(b);
        let dst = values.band_mut(b);
        for p in 0..src.len() {
            if !scene.nodata[p] {
                let l = gain * src[p] as f64 + offset;
                dst[p] = factor * l;
            }
        }
    }
    Ok(ReflectanceCube {
        values,
        band_centers_nm: meta.band_centers_nm.clone(),
        instrument: meta.instrument,
        mask: scene.nodata.clone(),
    })
}

/// Log radiance with the per-pixel mean removed, which discards overall
/// intensity. Pixels with any non-positive band are masked.
pub fn log_color_projection(scene: &Scene) -> FeatureCube {
    let (bands, rows, cols) = (scene.band_count(), scene.rows, scene.cols);
    let mut values = Cube::zeros(bands, rows, cols);
    let mut mask = scene.nodata.clone();
    let mut logs = vec![0.0; bands];
    for p in 0..rows * cols {
        if mask[p] {
            continue;
        }
        let mut ok = true;
        for (b, slot) in logs.iter_mut().enumerate() {
            let v = scene.radiance.at(b, p) as f64;
            if !(v > 0.0) {
                ok = false;
                break;
            }
            *slot = v.ln();
        }
        if !ok {
            mask[p] = true;
            continue;
        }
        let mean = logs.iter().sum::<f64>() / bands as f64;
        for (b, &x) in logs.iter().enumerate() {
            values.set(b, p / cols, p % cols, x - mean);
        }
    }
    FeatureCube {
        values,
        basis_tag: BasisTag::LogColor,
        mask,
    }
}

/// A closed wavelength interval `[low_nm, high_nm]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct BandInterval {
    pub low_nm: f64,
    pub high_nm: f64,
}

impl From<[f64; 2]> for BandInterval {
    fn from([low_nm, high_nm]: [f64; 2]) -> Self {
        BandInterval { low_nm, high_nm }
    }
}

impl From<BandInterval> for [f64; 2] {
    fn from(i: BandInterval) -> Self {
        [i.low_nm, i.high_nm]
    }
}

impl BandInterval {
    pub fn contains(&self, nm: f64) -> bool {
        nm >= self.low_nm && nm <= self.high_nm
    }
}

/// The nine ALI multispectral bands in ascending wavelength (panchromatic
/// excluded). Overridable through a JSON list of `[low_nm, high_nm]`.
pub fn default_ali_intervals() -> Vec<BandInterval> {
    [
        [433.0, 453.0],
        [450.0, 515.0],
        [525.0, 605.0],
        [630.0, 690.0],
        [775.0, 805.0],
        [845.0, 890.0],
        [1200.0, 1300.0],
        [1550.0, 1750.0],
        [2080.0, 2350.0],
    ]
    .into_iter()
    .map(BandInterval::from)
    .collect()
}

pub fn load_intervals(path: impl AsRef<Path>) -> Result<Vec<BandInterval>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Averages source bands into the given wavelength intervals.
///
/// An ALI-like cube whose band count already equals the interval count is
/// passed through unchanged.
pub fn bin_to_ali(cube: &ReflectanceCube, intervals: &[BandInterval]) -> Result<FeatureCube> {
    let (rows, cols) = (cube.values.rows(), cube.values.cols());
    if cube.instrument == Instrument::AliLike && cube.values.bands() == intervals.len() {
        return Ok(FeatureCube {
            values: cube.values.clone(),
            basis_tag: BasisTag::AliBinned,
            mask: cube.mask.clone(),
        });
    }
    let members: Vec<Vec<usize>> = intervals
        .iter()
        .map(|iv| {
            cube.band_centers_nm
                .iter()
                .enumerate()
                .filter(|(_, &nm)| iv.contains(nm))
                .map(|(b, _)| b)
                .collect()
        })
        .collect();
    let empty: Vec<String> = intervals
        .iter()
        .zip(&members)
        .filter(|(_, m)| m.is_empty())
        .map(|(iv, _)| format!("[{}, {}]", iv.low_nm, iv.high_nm))
        .collect();
    if !empty.is_empty() {
        return Err(Error::Config(format!(
            "band interval(s) contain no source band: {}",
            empty.join(", ")
        )));
    }
    let mut values = Cube::zeros(intervals.len(), rows, cols);
    for (j, m) in members.iter().enumerate() {
        let inv = 1.0 / m.len() as f64;
        let out = values.band_mut(j);
        for &b in m {
            for (o, &v) in out.iter_mut().zip(cube.values.band(b)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
    }
    Ok(FeatureCube {
        values,
        basis_tag: BasisTag::AliBinned,
        mask: cube.mask.clone(),
    })
}

/// 8-bit interleaved RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn to_rgba(&self) -> Vec<u8> {
        self.data
            .chunks_exact(3)
            .flat_map(|c| [c[0], c[1], c[2], 255])
            .collect()
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            writer.write_image_data(&self.data).expect("in-memory PNG data");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum StretchMode {
    #[default]
    MinMax,
    /// Clip to the given lower/upper percentiles (0-100) before stretching.
    Percentile { low: f64, high: f64 },
}

/// Hyperion bands used for true-colour composites.
pub const RGB_WAVELENGTHS_NM: [f64; 3] = [640.5, 579.45, 508.22];

pub fn nearest_band(centers: &[f64], nm: f64) -> usize {
    centers
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - nm).abs().total_cmp(&(b.1 - nm).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn default_rgb_bands(centers: &[f64]) -> [usize; 3] {
    RGB_WAVELENGTHS_NM.map(|nm| nearest_band(centers, nm))
}

/// Stretched composite. The longest-wavelength band goes to red, the
/// shortest to blue. Masked pixels render black.
pub fn rgb_composite(scene: &Scene, bands: [usize; 3], stretch: StretchMode) -> Result<RgbImage> {
    if let Some(b) = bands.iter().find(|&&b| b >= scene.band_count()) {
        return Err(Error::Config(format!(
            "band index {b} out of range for {} bands",
            scene.band_count()
        )));
    }
    let centers = &scene.metadata.band_centers_nm;
    let mut ordered = bands;
    ordered.sort_by(|a, b| centers[*b].total_cmp(&centers[*a]));
    let n = scene.pixels();
    let mut data = vec![0u8; 3 * n];
    for (ch, &b) in ordered.iter().enumerate() {
        let band = scene.radiance.band(b);
        let mut valid: Vec<f64> = (0..n)
            .filter(|&p| !scene.nodata[p])
            .map(|p| band[p] as f64)
            .collect();
        if valid.is_empty() {
            continue;
        }
        let (lo, hi) = match stretch {
            StretchMode::MinMax => valid
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v))),
            StretchMode::Percentile { low, high } => {
                valid.sort_by(f64::total_cmp);
                (
                    crate::stats::quantile_sorted(&valid, low / 100.0),
                    crate::stats::quantile_sorted(&valid, high / 100.0),
                )
            }
        };
        if !(hi > lo) {
            continue;
        }
        for p in 0..n {
            if scene.nodata[p] {
                continue;
            }
            let t = ((band[p] as f64 - lo) / (hi - lo)).clamp(0.0, 1.0);
            data[3 * p + ch] = (255.0 * t).round_ties_even() as u8;
        }
    }
    Ok(RgbImage {
        width: scene.cols,
        height: scene.rows,
        data,
    })
}

/// A scene plus its shared derivations. Each lazy member is computed at
/// most once and then shared read-only by every analytic.
#[derive(Debug)]
pub struct PreparedScene {
    pub scene: Scene,
    pub reflectance: ReflectanceCube,
    ali_intervals: Vec<BandInterval>,
    log_color: OnceLock<FeatureCube>,
    ali_binned: OnceLock<std::result::Result<FeatureCube, String>>,
    rgb: OnceLock<RgbImage>,
}

impl PreparedScene {
    pub fn new(scene: Scene, ali_intervals: Vec<BandInterval>) -> Result<Self> {
        let reflectance = to_reflectance(&scene)?;
        Ok(PreparedScene {
            scene,
            reflectance,
            ali_intervals,
            log_color: OnceLock::new(),
            ali_binned: OnceLock::new(),
            rgb: OnceLock::new(),
        })
    }

    pub fn log_color(&self) -> &FeatureCube {
        self.log_color.get_or_init(|| log_color_projection(&self.scene))
    }

    pub fn ali_binned(&self) -> Result<&FeatureCube> {
        self.ali_binned
            .get_or_init(|| bin_to_ali(&self.reflectance, &self.ali_intervals).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Config(e.clone()))
    }

    pub fn rgb(&self) -> &RgbImage {
        self.rgb.get_or_init(|| {
            let bands = default_rgb_bands(&self.scene.metadata.band_centers_nm);
            rgb_composite(&self.scene, bands, StretchMode::MinMax).expect("nearest bands are in range")
        })
    }
}
