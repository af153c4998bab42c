//! Rare Pixel Finder: small, compact groups of pixels that are spectrally
//! extreme, spectrally alike, and geographically close.
//!
//! Stages: Mahalanobis distances over a band subset, an extreme subset
//! `S1`, a cosine-similarity subset `S2`, proximity components `S4`, and
//! the object filters `p1..p5`.

use serde::{Deserialize, Serialize};

use super::select_top_variance;
use crate::error::{Error, Result};
use crate::raster::{BBox, Cube, Pixel};
use crate::scene::{GeoTransform, Scene};
use crate::stats::{mean_std, rank_percentiles, score_0_1000, Mahalanobis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BandSubset {
    #[serde(rename = "AUTO")]
    Auto,
    #[serde(untagged)]
    Bands(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RpfTransform {
    Radiance,
    Reflectance,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpfParams {
    pub band_subset: BandSubset,
    /// Band count for the AUTO subset (highest-variance bands).
    pub auto_band_count: usize,
    pub transform: RpfTransform,
    pub k1_sigma: f64,
    pub s1_fraction_bounds: [f64; 2],
    pub k2: f64,
    pub k3: usize,
    pub k4: usize,
    pub p1: f64,
    pub p2: f64,
    pub p3: usize,
    pub p4: usize,
    pub p5: usize,
}

impl Default for RpfParams {
    fn default() -> Self {
        RpfParams {
            band_subset: BandSubset::Auto,
            auto_band_count: 20,
            transform: RpfTransform::Radiance,
            k1_sigma: 6.0,
            s1_fraction_bounds: [0.001, 0.005],
            k2: 0.999,
            k3: 3,
            k4: 5,
            p1: 0.0,
            p2: 0.0,
            p3: 5,
            p4: 20,
            p5: 2,
        }
    }
}

impl RpfParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.p3 > self.p4 {
            problems.push(format!("p3 ({}) exceeds p4 ({})", self.p3, self.p4));
        }
        if !(self.k2 > 0.0 && self.k2 <= 1.0) {
            problems.push(format!("k2 ({}) outside (0, 1]", self.k2));
        }
        if self.k3 < 1 {
            problems.push("k3 must be >= 1".into());
        }
        if self.k4 < 1 {
            problems.push("k4 must be >= 1".into());
        }
        let [lo, hi] = self.s1_fraction_bounds;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            problems.push(format!("invalid S1 fraction bounds [{lo}, {hi}]"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// The transformed band values RPF works on, plus the pixel mask.
#[derive(Debug, Clone)]
pub struct RpfInput {
    pub values: Cube<f64>,
    pub mask: Vec<bool>,
}

impl RpfInput {
    pub fn from_scene(scene: &Scene, reflectance: Option<&Cube<f64>>, transform: RpfTransform) -> Result<Self> {
        let mut mask = scene.nodata.clone();
        let values = match transform {
            RpfTransform::Radiance => scene.radiance.map(|v| v as f64),
            RpfTransform::Reflectance => reflectance
                .ok_or_else(|| Error::Config("reflectance transform needs a reflectance cube".into()))?
                .clone(),
            RpfTransform::Log => {
                let logs = scene.radiance.map(|v| if v > 0.0 { (v as f64).ln() } else { f64::NAN });
                for (p, m) in mask.iter_mut().enumerate() {
                    if (0..logs.bands()).any(|b| logs.at(b, p).is_nan()) {
                        *m = true;
                    }
                }
                logs
            }
        };
        Ok(RpfInput { values, mask })
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| !m).count()
    }
}

/// Per-pixel Mahalanobis distances (NaN where masked) and the bands used.
#[derive(Debug, Clone)]
pub struct DistanceGrid {
    pub distances: Vec<f64>,
    pub bands_used: Vec<usize>,
    pub regularized: bool,
}

fn resolve_bands(input: &RpfInput, params: &RpfParams) -> Result<Vec<usize>> {
    let bands = input.values.bands();
    match &params.band_subset {
        BandSubset::Auto => Ok(select_top_variance(&input.values, &input.mask, params.auto_band_count)),
        BandSubset::Bands(list) => {
            if let Some(b) = list.iter().find(|&&b| b >= bands) {
                return Err(Error::Config(format!("band {b} out of range for {bands} bands")));
            }
            if list.is_empty() {
                return Err(Error::Config("empty band subset".into()));
            }
            Ok(list.clone())
        }
    }
}

pub fn mahalanobis_grid(input: &RpfInput, params: &RpfParams) -> Result<DistanceGrid> {
    let bands_used = resolve_bands(input, params)?;
    let valid: Vec<usize> = (0..input.mask.len()).filter(|&p| !input.mask[p]).collect();
    if valid.len() < bands_used.len() {
        return Err(Error::InsufficientData(format!(
            "{} valid pixels for a {}-band subset",
            valid.len(),
            bands_used.len()
        )));
    }
    let dim = bands_used.len();
    let mut rows = Vec::with_capacity(valid.len() * dim);
    for &p in &valid {
        rows.extend(bands_used.iter().map(|&b| input.values.at(b, p)));
    }
    let model = Mahalanobis::fit(rows.chunks_exact(dim), dim)?;
    let mut distances = vec![f64::NAN; input.mask.len()];
    for (i, &p) in valid.iter().enumerate() {
        distances[p] = model.distance(&rows[i * dim..(i + 1) * dim]);
    }
    Ok(DistanceGrid {
        distances,
        bands_used,
        regularized: model.regularized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum S1Rule {
    /// The log-normal `exp(m + k1_sigma * s)` threshold kept the fraction in bounds.
    LogNormal,
    /// Too few pixels passed; the lower-bound quantile was used instead.
    LowerBound,
    /// Too many pixels passed; the upper-bound quantile was used instead.
    UpperBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct S1Selection {
    /// Flat pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub k1: f64,
    pub rule: S1Rule,
}

/// Selects the extreme subset `S1`.
///
/// `k1 = exp(m + k1_sigma * s)` where `m`, `s` are the mean and standard
/// deviation of `ln D` over valid pixels. If that selects fewer than
/// `ceil(lo * n)` or more than `floor(hi * n)` pixels, the most distant
/// pixels up to the violated bound are taken instead (ties by pixel index).
pub fn select_s1(grid: &DistanceGrid, params: &RpfParams) -> Result<S1Selection> {
    let valid: Vec<usize> = (0..grid.distances.len())
        .filter(|&p| !grid.distances[p].is_nan())
        .collect();
    let n = valid.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!(
            "rare pixel selection needs at least 100 valid pixels, got {n}"
        )));
    }
    let logs: Vec<f64> = valid
        .iter()
        .map(|&p| grid.distances[p])
        .filter(|&d| d > 0.0)
        .map(f64::ln)
        .collect();
    let (m, s) = if logs.is_empty() { (f64::NEG_INFINITY, 0.0) } else { mean_std(&logs) };
    let k1 = (m + params.k1_sigma * s).exp();
    let [lo_frac, hi_frac] = params.s1_fraction_bounds;
    let lo = ((lo_frac * n as f64).ceil() as usize).max(1);
    let hi = ((hi_frac * n as f64).floor() as usize).max(lo);
    let passing: Vec<usize> = valid.iter().copied().filter(|&p| grid.distances[p] > k1).collect();
    let (rule, count) = if passing.len() < lo {
        (S1Rule::LowerBound, lo)
    } else if passing.len() > hi {
        (S1Rule::UpperBound, hi)
    } else {
        return Ok(S1Selection {
            pixels: passing,
            k1,
            rule: S1Rule::LogNormal,
        });
    };
    let mut ordered = valid;
    ordered.sort_by(|&a, &b| grid.distances[b].total_cmp(&grid.distances[a]).then(a.cmp(&b)));
    let mut pixels: Vec<usize> = ordered[..count].to_vec();
    let k1 = grid.distances[ordered[count - 1]];
    pixels.sort_unstable();
    Ok(S1Selection { pixels, k1, rule })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Keeps every `S1` pixel whose spectrum over `bands` has cosine
/// similarity above `k2` with at least one other `S1` pixel.
pub fn similarity_filter(s1: &[usize], values: &Cube<f64>, bands: &[usize], params: &RpfParams) -> Vec<usize> {
    if s1.len() < 2 {
        return Vec::new();
    }
    let spectra: Vec<Vec<f64>> = s1
        .iter()
        .map(|&p| bands.iter().map(|&b| values.at(b, p)).collect())
        .collect();
    let mut keep = vec![false; s1.len()];
    for i in 0..s1.len() {
        for j in i + 1..s1.len() {
            if cosine(&spectra[i], &spectra[j]) > params.k2 {
                keep[i] = true;
                keep[j] = true;
            }
        }
    }
    s1.iter().zip(keep).filter(|(_, k)| *k).map(|(&p, _)| p).collect()
}

/// Connected components of the graph on `S2` with an edge wherever the L1
/// grid distance is below `k3`; components of at least `k4` pixels survive.
/// Components are returned as sorted flat indices, ordered by first pixel.
pub fn proximity_cluster(s2: &[usize], cols: usize, params: &RpfParams) -> Vec<Vec<usize>> {
    let pixels: Vec<Pixel> = s2.iter().map(|&p| Pixel::from_index(p, cols)).collect();
    let n = pixels.len();
    let mut component = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if component[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        component[start] = id;
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(s2[i]);
            for j in 0..n {
                if component[j] == usize::MAX && pixels[i].l1(pixels[j]) < params.k3 {
                    component[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    let mut kept: Vec<Vec<usize>> = out.into_iter().filter(|m| m.len() >= params.k4).collect();
    kept.sort_by_key(|m| m[0]);
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassedFilters {
    pub extremeness: bool,
    pub closeness: bool,
    pub size: bool,
    pub dimension: bool,
}

impl PassedFilters {
    pub fn all(&self) -> bool {
        self.extremeness && self.closeness && self.size && self.dimension
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareObject {
    pub cluster_id: usize,
    pub pixel_set: Vec<Pixel>,
    pub mean_mahalanobis: f64,
    /// Mean over standard deviation of member distances; `null` in JSON
    /// when the deviation is zero (infinite ratio).
    pub snr: f64,
    pub bbox: BBox,
    pub bbox_rows: usize,
    pub bbox_cols: usize,
    pub passed_filters: PassedFilters,
    pub reported: bool,
    /// 0-1000 percentile of `mean_mahalanobis` among reported objects.
    pub score: Option<u32>,
    pub geo_bbox: Option<[f64; 4]>,
}

/// Applies the extremeness (`p1`), closeness (`p2`), size (`p3..=p4`) and
/// dimension (`p5`) criteria to each cluster.
pub fn filter_objects(clusters: &[Vec<usize>], grid: &DistanceGrid, cols: usize, params: &RpfParams) -> Vec<RareObject> {
    let mut objects: Vec<RareObject> = clusters
        .iter()
        .enumerate()
        .map(|(cluster_id, members)| {
            let d: Vec<f64> = members.iter().map(|&p| grid.distances[p]).collect();
            let (mean, std) = mean_std(&d);
            let snr = if std == 0.0 { f64::INFINITY } else { mean / std };
            let pixel_set: Vec<Pixel> = members.iter().map(|&p| Pixel::from_index(p, cols)).collect();
            let bbox = BBox::of(&pixel_set).expect("clusters are non-empty");
            let passed_filters = PassedFilters {
                extremeness: mean >= params.p1,
                closeness: snr >= params.p2,
                size: members.len() >= params.p3 && members.len() <= params.p4,
                dimension: bbox.height() >= params.p5 && bbox.width() >= params.p5,
            };
            RareObject {
                cluster_id,
                pixel_set,
                mean_mahalanobis: mean,
                snr,
                bbox_rows: bbox.height(),
                bbox_cols: bbox.width(),
                bbox,
                reported: passed_filters.all(),
                passed_filters,
                score: None,
                geo_bbox: None,
            }
        })
        .collect();
    let reported: Vec<usize> = (0..objects.len()).filter(|&i| objects[i].reported).collect();
    let values: Vec<f64> = reported.iter().map(|&i| objects[i].mean_mahalanobis).collect();
    if !values.is_empty() {
        for (&i, pct) in reported.iter().zip(rank_percentiles(&values)) {
            objects[i].score = Some(score_0_1000(pct));
        }
    }
    objects
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpfOutput {
    pub params_used: RpfParams,
    pub bands_used: Vec<usize>,
    pub k1: f64,
    pub s1_rule: S1Rule,
    pub s1_size: usize,
    pub s2_size: usize,
    pub s4_size: usize,
    pub valid_pixels: usize,
    pub objects: Vec<RareObject>,
}

/// Full pipeline, including the intermediate stage sets for inspection.
#[derive(Debug, Clone)]
pub struct RpfTrace {
    pub grid: DistanceGrid,
    pub s1: S1Selection,
    pub s2: Vec<usize>,
    pub clusters: Vec<Vec<usize>>,
    pub output: RpfOutput,
}

pub fn run_rpf(input: &RpfInput, geo: Option<&GeoTransform>, params: &RpfParams) -> Result<RpfTrace> {
    params.validate()?;
    let cols = input.values.cols();
    let grid = mahalanobis_grid(input, params)?;
    let s1 = select_s1(&grid, params)?;
    let s2 = similarity_filter(&s1.pixels, &input.values, &grid.bands_used, params);
    let clusters = proximity_cluster(&s2, cols, params);
    let mut objects = filter_objects(&clusters, &grid, cols, params);
    if let Some(g) = geo {
        for o in &mut objects {
            o.geo_bbox = g.bbox(&o.pixel_set);
        }
    }
    let output = RpfOutput {
        params_used: params.clone(),
        bands_used: grid.bands_used.clone(),
        k1: s1.k1,
        s1_rule: s1.rule,
        s1_size: s1.pixels.len(),
        s2_size: s2.len(),
        s4_size: clusters.iter().map(Vec::len).sum(),
        valid_pixels: input.valid_count(),
        objects,
    };
    Ok(RpfTrace {
        grid,
        s1,
        s2,
        clusters,
        output,
    })
}
