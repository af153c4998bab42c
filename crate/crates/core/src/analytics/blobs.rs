//! Spectral Blobs: a local-heterogeneity boundary mask splits the scene into
//! connected blobs, spectrally indistinguishable blobs are merged, and small
//! blobs that belong to no large merged group are reported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{label_components, UNLABELED};
use crate::raster::{Cube, Pixel};
use crate::scene::GeoTransform;
use crate::stats::{quantile, rank_percentiles, score_0_1000, welch_p_value, Moments};

/// Label-grid value for boundary pixels.
pub const BOUNDARY: u32 = u32::MAX - 1;
/// Label-grid value for masked pixels.
pub const NODATA: u32 = UNLABELED;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryMask {
    /// Mean over bands of the window standard deviation; NaN where masked.
    pub heterogeneity: Vec<f64>,
    pub boundary: Vec<bool>,
    pub threshold: f64,
}

/// Marks pixels whose heterogeneity exceeds the `1 - threshold_quantile`
/// quantile. Windows are truncated at the image edge and skip masked pixels.
pub fn boundary_mask(cube: &Cube<f64>, mask: &[bool], window: usize, threshold_quantile: f64) -> Result<BoundaryMask> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::Config(format!("window must be odd, got {window}")));
    }
    let (rows, cols, bands) = (cube.rows(), cube.cols(), cube.bands());
    let half = (window / 2) as i64;
    let mut heterogeneity = vec![f64::NAN; rows * cols];
    let mut members = Vec::with_capacity(window * window);
    for r in 0..rows {
        for c in 0..cols {
            let p = r * cols + c;
            if mask[p] {
                continue;
            }
            members.clear();
            for dr in -half..=half {
                for dc in -half..=half {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                        continue;
                    }
                    let q = rr as usize * cols + cc as usize;
                    if !mask[q] {
                        members.push(q);
                    }
                }
            }
            let m = members.len() as f64;
            let mut total = 0.0;
            for b in 0..bands {
                let band = cube.band(b);
                let mean = members.iter().map(|&q| band[q]).sum::<f64>() / m;
                let var = members.iter().map(|&q| (band[q] - mean).powi(2)).sum::<f64>() / m;
                total += var.sqrt();
            }
            heterogeneity[p] = total / bands as f64;
        }
    }
    let valid: Vec<f64> = heterogeneity.iter().copied().filter(|v| !v.is_nan()).collect();
    let threshold = if valid.is_empty() { 0.0 } else { quantile(&valid, 1.0 - threshold_quantile) };
    let boundary = heterogeneity.iter().map(|&h| !h.is_nan() && h > threshold).collect();
    Ok(BoundaryMask {
        heterogeneity,
        boundary,
        threshold,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub blob_id: usize,
    /// Flat pixel indices, ascending.
    pub pixels: Vec<usize>,
    /// Per-band count, mean and unbiased variance of member values.
    pub moments: Vec<Moments>,
}

impl Blob {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }

    pub fn mean_spectrum(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.mean).collect()
    }

    pub fn spectrum_variance(&self) -> Vec<f64> {
        self.moments.iter().map(|m| m.var).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlobCatalog {
    pub rows: usize,
    pub cols: usize,
    /// Blob id per pixel, or `BOUNDARY` / `NODATA`.
    pub label_grid: Vec<u32>,
    pub blobs: Vec<Blob>,
    pub merge_groups: Vec<Vec<usize>>,
}

/// Labels 4-connected non-boundary, unmasked pixels into blobs (row-major
/// discovery order) and records each blob's per-band moments.
pub fn build_catalog(cube: &Cube<f64>, mask: &[bool], boundary: &[bool]) -> BlobCatalog {
    let (rows, cols) = (cube.rows(), cube.cols());
    let eligible: Vec<bool> = (0..rows * cols).map(|p| !mask[p] && !boundary[p]).collect();
    let labels = label_components(&eligible, rows, cols);
    let label_grid = (0..rows * cols)
        .map(|p| {
            if mask[p] {
                NODATA
            } else if boundary[p] {
                BOUNDARY
            } else {
                labels.labels[p]
            }
        })
        .collect();
    let blobs = labels
        .members()
        .into_iter()
        .enumerate()
        .map(|(blob_id, pixels)| {
            let moments = (0..cube.bands())
                .map(|b| {
                    let band = cube.band(b);
                    Moments::of(&pixels.iter().map(|&p| band[p]).collect::<Vec<_>>())
                })
                .collect();
            Blob { blob_id, pixels, moments }
        })
        .collect();
    BlobCatalog {
        rows,
        cols,
        label_grid,
        blobs,
        merge_groups: Vec::new(),
    }
}

/// How a one-pixel blob, which has no variance estimate, is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonRule {
    /// Prediction t-test of the single spectrum against the other blob.
    PredictionTest,
    /// Dissimilar to every other blob.
    Dissimilar,
}

/// Fraction of bands whose Welch test rejects equal means at `alpha`.
/// Pairs without a usable test count as fully dissimilar (1.0).
pub fn significant_fraction(a: &Blob, b: &Blob, alpha: f64, singletons: SingletonRule) -> f64 {
    if singletons == SingletonRule::Dissimilar && (a.size() < 2 || b.size() < 2) {
        return 1.0;
    }
    let bands = a.moments.len();
    let mut significant = 0usize;
    for (ma, mb) in a.moments.iter().zip(&b.moments) {
        match welch_p_value(*ma, *mb) {
            Some(p) if p < alpha => significant += 1,
            Some(_) => {}
            None => return 1.0,
        }
    }
    significant as f64 / bands as f64
}

/// A pair is similar when fewer than this fraction of bands differ.
pub const SIMILAR_BELOW: f64 = 0.05;

pub fn similar(a: &Blob, b: &Blob, alpha: f64, singletons: SingletonRule) -> bool {
    significant_fraction(a, b, alpha, singletons) < SIMILAR_BELOW
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Single-linkage groups of the pairwise similarity graph, each sorted, in
/// order of their smallest blob id. Pairs already joined are not re-tested,
/// which leaves the components unchanged.
pub fn merge_similar(catalog: &BlobCatalog, alpha: f64, singletons: SingletonRule) -> Vec<Vec<usize>> {
    let n = catalog.blobs.len();
    let mut uf = UnionFind((0..n).collect());
    // larger blobs first so most pockets join the big groups early
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| catalog.blobs[b].size().cmp(&catalog.blobs[a].size()).then(a.cmp(&b)));
    for (oi, &i) in order.iter().enumerate() {
        for &j in &order[..oi] {
            if uf.find(i) == uf.find(j) {
                continue;
            }
            if similar(&catalog.blobs[i], &catalog.blobs[j], alpha, singletons) {
                uf.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let r = uf.find(i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobAnomaly {
    pub blob_id: usize,
    pub group_id: usize,
    pub pixel_set: Vec<Pixel>,
    pub pixel_count: usize,
    /// Mean significant-band fraction between the blob's group and all
    /// blobs outside it.
    pub dissimilarity: f64,
    pub score: u32,
    pub rank: usize,
    pub geo_bbox: Option<[f64; 4]>,
}

/// Blobs whose size lies in `sizes` and whose merge group holds no blob
/// larger than its upper end, ranked by group dissimilarity (descending,
/// ties by id).
pub fn anomalous_blobs(
    catalog: &BlobCatalog,
    sizes: std::ops::RangeInclusive<usize>,
    alpha: f64,
    singletons: SingletonRule,
) -> Vec<BlobAnomaly> {
    let max_size = *sizes.end();
    let mut out = Vec::new();
    for (group_id, group) in catalog.merge_groups.iter().enumerate() {
        if group.iter().any(|&b| catalog.blobs[b].size() > max_size) {
            continue;
        }
        let outside: Vec<usize> = (0..catalog.blobs.len()).filter(|b| !group.contains(b)).collect();
        let mut total = 0.0;
        for &i in group {
            for &j in &outside {
                total += significant_fraction(&catalog.blobs[i], &catalog.blobs[j], alpha, singletons);
            }
        }
        let pairs = group.len() * outside.len();
        let dissimilarity = if pairs == 0 { 0.0 } else { total / pairs as f64 };
        for &b in group {
            let blob = &catalog.blobs[b];
            if !sizes.contains(&blob.size()) {
                continue;
            }
            out.push(BlobAnomaly {
                blob_id: b,
                group_id,
                pixel_set: blob.pixels.iter().map(|&p| Pixel::from_index(p, catalog.cols)).collect(),
                pixel_count: blob.size(),
                dissimilarity,
                score: 0,
                rank: 0,
                geo_bbox: None,
            });
        }
    }
    if out.is_empty() {
        return out;
    }
    let pct = rank_percentiles(&out.iter().map(|a| a.dissimilarity).collect::<Vec<_>>());
    for (a, p) in out.iter_mut().zip(pct) {
        a.score = score_0_1000(p);
    }
    out.sort_by(|a, b| b.dissimilarity.total_cmp(&a.dissimilarity).then(a.blob_id.cmp(&b.blob_id)));
    for (i, a) in out.iter_mut().enumerate() {
        a.rank = i + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobsConfig {
    pub window: usize,
    pub threshold_quantile: f64,
    pub alpha: f64,
    /// Smallest blob reported. A lone pixel fenced in by boundary pixels is
    /// usually a noise spike that raised its neighbours' window spread.
    pub min_size: usize,
    pub max_size: usize,
    pub singleton_rule: SingletonRule,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        BlobsConfig {
            window: 3,
            threshold_quantile: 0.2,
            alpha: 0.01,
            min_size: 2,
            max_size: 25,
            singleton_rule: SingletonRule::PredictionTest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsOutput {
    pub bands_used: Vec<usize>,
    pub boundary_fraction: f64,
    pub blob_count: usize,
    pub anomalies: Vec<BlobAnomaly>,
    pub merge_groups: Vec<Vec<usize>>,
}

pub fn run_blobs(cube: &Cube<f64>, mask: &[bool], geo: Option<&GeoTransform>, cfg: &BlobsConfig) -> Result<(BlobsOutput, BlobCatalog)> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Config(format!("alpha {} outside (0, 1)", cfg.alpha)));
    }
    let bm = boundary_mask(cube, mask, cfg.window, cfg.threshold_quantile)?;
    let mut catalog = build_catalog(cube, mask, &bm.boundary);
    catalog.merge_groups = merge_similar(&catalog, cfg.alpha, cfg.singleton_rule);
    let mut anomalies = anomalous_blobs(&catalog, cfg.min_size..=cfg.max_size, cfg.alpha, cfg.singleton_rule);
    if let Some(g) = geo {
        for a in &mut anomalies {
            a.geo_bbox = g.bbox(&a.pixel_set);
        }
    }
    let valid = mask.iter().filter(|&&m| !m).count().max(1);
    let output = BlobsOutput {
        bands_used: (0..cube.bands()).collect(),
        boundary_fraction: bm.boundary.iter().filter(|&&b| b).count() as f64 / valid as f64,
        blob_count: catalog.blobs.len(),
        anomalies,
        merge_groups: catalog.merge_groups.clone(),
    };
    Ok((output, catalog))
}
