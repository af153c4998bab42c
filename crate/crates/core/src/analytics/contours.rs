//! Contours and Clusters: spectral clusters in PCA space, ranked by how far
//! they sit from the image's spectral centre, then contoured as contiguous
//! geographic regions of sufficient purity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::clustering::{kmeans, Points};
use crate::error::{Error, Result};
use crate::grid::{label_components, trace_rings, Ring};
use crate::radiometry::{BasisTag, FeatureCube, ReflectanceCube};
use crate::raster::{Cube, Pixel};
use crate::scene::GeoTransform;
use crate::stats::{rank_percentiles, score_0_1000, Mahalanobis};

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub scores: FeatureCube,
    /// `n x bands`, rows are unit eigenvectors in descending eigenvalue order.
    pub basis: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Mean-centred projection onto the top-`n` principal axes of the pixel
/// covariance. Each axis is signed so its largest-magnitude entry is
/// positive. When the covariance has rank below `n`, `n` drops to the rank.
pub fn pca_project(cube: &ReflectanceCube, n: usize) -> Result<PcaResult> {
    let bands = cube.values.bands();
    let valid: Vec<usize> = (0..cube.mask.len()).filter(|&p| !cube.mask[p]).collect();
    if n == 0 || n > bands {
        return Err(Error::Config(format!(
            "PCA component count {n} must be in 1..={bands}"
        )));
    }
    if valid.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} valid pixels for {n} components",
            valid.len()
        )));
    }
    let (mean, cov) = band_mean_covariance(&cube.values, &valid);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > 1e-12 * top.max(f64::MIN_POSITIVE))
        .count();
    let mut warnings = Vec::new();
    let keep = if rank < n {
        warnings.push(format!(
            "covariance rank {rank} below requested {n} components; using {}",
            rank.max(1)
        ));
        rank.max(1)
    } else {
        n
    };
    let mut basis = DMatrix::zeros(keep, bands);
    let mut eigenvalues = Vec::with_capacity(keep);
    for (row, &i) in order.iter().take(keep).enumerate() {
        let v = eig.eigenvectors.column(i);
        let pivot = (0..bands)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .expect("bands > 0");
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for b in 0..bands {
            basis[(row, b)] = sign * v[b];
        }
        eigenvalues.push(eig.eigenvalues[i].max(0.0));
    }
    let explained_variance = eigenvalues
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    let (rows, cols) = (cube.values.rows(), cube.values.cols());
    let mut scores = Cube::zeros(keep, rows, cols);
    let mut x = vec![0.0; bands];
    for &p in &valid {
        for (b, slot) in x.iter_mut().enumerate() {
            *slot = cube.values.at(b, p) - mean[b];
        }
        for k in 0..keep {
            let s: f64 = (0..bands).map(|b| basis[(k, b)] * x[b]).sum();
            scores.set(k, p / cols, p % cols, s);
        }
    }
    Ok(PcaResult {
        scores: FeatureCube {
            values: scores,
            basis_tag: BasisTag::PcaScores,
            mask: cube.mask.clone(),
        },
        basis,
        eigenvalues,
        explained_variance,
        warnings,
    })
}

/// Mean and (n-1)-normalised covariance of a band-major cube over `valid`
/// pixels.
pub fn band_mean_covariance(values: &Cube<f64>, valid: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let bands = values.bands();
    let n = valid.len() as f64;
    let mut centered: Vec<Vec<f64>> = Vec::with_capacity(bands);
    let mut mean = DVector::zeros(bands);
    for b in 0..bands {
        let band = values.band(b);
        let m = valid.iter().map(|&p| band[p]).sum::<f64>() / n;
        mean[b] = m;
        centered.push(valid.iter().map(|&p| band[p] - m).collect());
    }
    let denom = (valid.len().max(2) - 1) as f64;
    let mut cov = DMatrix::zeros(bands, bands);
    for i in 0..bands {
        for j in i..bands {
            let v: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>() / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub pca_basis: DMatrix<f64>,
    pub rows: usize,
    pub cols: usize,
    pub cluster_centers: Vec<Vec<f64>>,
    /// Per-pixel label in `[0, k)`, `None` for masked pixels.
    pub assignment: Vec<Option<usize>>,
    /// Per-pixel score vectors, row-major over all pixels (zeros when masked).
    pub scores: Points,
    pub image_center: DVector<f64>,
    pub image_covariance: DMatrix<f64>,
    pub init_inertia: f64,
    pub inertia: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.cluster_centers.len()
    }

    pub fn mahalanobis(&self) -> Result<Mahalanobis> {
        Mahalanobis::new(self.image_center.clone(), self.image_covariance.clone())
    }
}

/// k-means over the unmasked pixels of a score cube.
pub fn cluster_spectral(scores: &FeatureCube, basis: DMatrix<f64>, k: usize, seed: u64) -> Result<ClusterModel> {
    let dim = scores.components();
    let (rows, cols) = (scores.values.rows(), scores.values.cols());
    let valid = scores.valid_indices();
    let mut data = Vec::with_capacity(valid.len() * dim);
    for &p in &valid {
        data.extend((0..dim).map(|b| scores.values.at(b, p)));
    }
    let pts = Points::new(dim, data);
    let result = kmeans(&pts, k, seed)?;
    let (mean, cov, _) = crate::stats::mean_covariance(pts.iter(), dim);
    let mut assignment = vec![None; rows * cols];
    let mut all = vec![0.0; rows * cols * dim];
    for (i, &p) in valid.iter().enumerate() {
        assignment[p] = Some(result.assignment[i]);
        all[p * dim..(p + 1) * dim].copy_from_slice(pts.row(i));
    }
    Ok(ClusterModel {
        pca_basis: basis,
        rows,
        cols,
        cluster_centers: result.centers,
        assignment,
        scores: Points::new(dim, all),
        image_center: mean,
        image_covariance: cov,
        init_inertia: result.init_inertia,
        inertia: result.inertia,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCluster {
    pub cluster_id: usize,
    pub mahalanobis: f64,
    pub rank: usize,
}

/// Clusters ordered from most to least extreme by the Mahalanobis distance
/// of their centre from the image centre.
pub fn rank_clusters(model: &ClusterModel) -> Result<Vec<RankedCluster>> {
    let m = model.mahalanobis()?;
    let mut out: Vec<RankedCluster> = model
        .cluster_centers
        .iter()
        .enumerate()
        .map(|(cluster_id, c)| RankedCluster {
            cluster_id,
            mahalanobis: m.distance(c),
            rank: 0,
        })
        .collect();
    out.sort_by(|a, b| b.mahalanobis.total_cmp(&a.mahalanobis).then(a.cluster_id.cmp(&b.cluster_id)));
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(out)
}

/// GeoJSON-style polygon: rings of `[lon, lat]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPolygon {
    #[serde(rename = "type")]
    pub kind: String,
    pub coordinates: Vec<Vec<[f64; 2]>>,
}

impl GeoPolygon {
    pub fn from_rings(rings: &[Ring], geo: &GeoTransform) -> Self {
        GeoPolygon {
            kind: "Polygon".into(),
            coordinates: rings
                .iter()
                .map(|ring| {
                    ring.iter()
                        .map(|&(r, c)| {
                            let (lon, lat) = geo.to_geo(r, c);
                            [lon, lat]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Rings mapped back to fractional grid coordinates.
    pub fn grid_rings(&self, geo: &GeoTransform) -> Vec<Ring> {
        self.coordinates
            .iter()
            .map(|ring| ring.iter().map(|&[lon, lat]| geo.to_grid(lon, lat)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyCluster {
    pub cluster_id: usize,
    pub region_id: usize,
    pub score: u32,
    pub rank: usize,
    /// Mahalanobis distance of the region's member mean from the image centre.
    pub mahalanobis: f64,
    /// Image-level Mahalanobis distance of the cluster centre.
    pub cluster_mahalanobis: f64,
    pub cluster_rank: usize,
    /// Mean Mahalanobis distance of member pixels from their cluster centre.
    pub mean_member_distance: f64,
    pub purity: f64,
    pub pixel_count: usize,
    pub pixel_set: Vec<Pixel>,
    pub contour: GeoPolygon,
    pub geo_bbox: [f64; 4],
}

/// Morphological closing of `set` with a 3x3 element, restricted to
/// `allowed` pixels.
fn closing(set: &[bool], allowed: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let window = |grid: &[bool], p: usize, want_any: bool| {
        let (r, c) = (p / cols, p % cols);
        let mut any = false;
        let mut all = true;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if rr < 0 || cc < 0 || rr >= rows as i64 || cc >= cols as i64 {
                    continue;
                }
                let v = grid[rr as usize * cols + cc as usize];
                any |= v;
                all &= v;
            }
        }
        if want_any { any } else { all }
    };
    let dilated: Vec<bool> = (0..rows * cols).map(|p| window(set, p, true)).collect();
    (0..rows * cols)
        .map(|p| set[p] || (allowed[p] && window(&dilated, p, false)))
        .collect()
}

/// Contiguous regions per cluster label with purity and size thresholds.
///
/// A label's pixels are closed with a 3x3 element so that regions may
/// bridge single-pixel gaps; each 4-connected component of the closed set
/// is a candidate region with purity = label members / region area. Kept
/// regions are scored by the percentile of their Mahalanobis distance
/// among all kept regions of the scene, mapped to 0-1000.
pub fn contour_regions(
    model: &ClusterModel,
    geo: &GeoTransform,
    min_purity: f64,
    min_size: usize,
) -> Result<Vec<AnomalyCluster>> {
    let (rows, cols) = (model.rows, model.cols);
    let maha = model.mahalanobis()?;
    let ranked = rank_clusters(model)?;
    let allowed: Vec<bool> = model.assignment.iter().map(|a| a.is_some()).collect();
    let mut out = Vec::new();
    let mut region_id = 0;
    for info in &ranked {
        let rc = info.cluster_id;
        let set: Vec<bool> = model.assignment.iter().map(|a| *a == Some(rc)).collect();
        let closed = closing(&set, &allowed, rows, cols);
        let labels = label_components(&closed, rows, cols);
        for members in labels.members() {
            let area = members.len();
            let inside: Vec<usize> = members.iter().copied().filter(|&p| set[p]).collect();
            if inside.is_empty() {
                continue;
            }
            let purity = inside.len() as f64 / area as f64;
            if purity < min_purity || area < min_size {
                continue;
            }
            let dim = model.scores.dim;
            let mut mean = vec![0.0; dim];
            for &p in &inside {
                for (m, v) in mean.iter_mut().zip(model.scores.row(p)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= inside.len() as f64);
            let center = &model.cluster_centers[rc];
            let member_maha = Mahalanobis::new(DVector::from_column_slice(center), model.image_covariance.clone())?;
            let mean_member_distance =
                inside.iter().map(|&p| member_maha.distance(model.scores.row(p))).sum::<f64>() / inside.len() as f64;
            let pixel_set: Vec<Pixel> = members.iter().map(|&p| Pixel::from_index(p, cols)).collect();
            let rings = trace_rings(&pixel_set);
            out.push(AnomalyCluster {
                cluster_id: rc,
                region_id,
                score: 0,
                rank: 0,
                mahalanobis: maha.distance(&mean),
                cluster_mahalanobis: info.mahalanobis,
                cluster_rank: info.rank,
                mean_member_distance,
                purity,
                pixel_count: area,
                contour: GeoPolygon::from_rings(&rings, geo),
                geo_bbox: geo.bbox(&pixel_set).expect("non-empty region"),
                pixel_set,
            });
            region_id += 1;
        }
    }
    let values: Vec<f64> = out.iter().map(|a| a.mahalanobis).collect();
    for (a, pct) in out.iter_mut().zip(rank_percentiles(&values)) {
        a.score = score_0_1000(pct);
    }
    out.sort_by(|a, b| {
        b.score
            .cmp(&a.score)
            .then(b.mahalanobis.total_cmp(&a.mahalanobis))
            .then(a.region_id.cmp(&b.region_id))
    });
    for (i, a) in out.iter_mut().enumerate() {
        a.rank = i + 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContoursConfig {
    pub n_components: usize,
    pub k: usize,
    pub min_purity: f64,
    pub min_size: usize,
}

impl Default for ContoursConfig {
    fn default() -> Self {
        ContoursConfig {
            n_components: 5,
            k: 10,
            min_purity: 0.8,
            min_size: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub n: usize,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContoursOutput {
    pub clusters: Vec<AnomalyCluster>,
    pub pca: PcaSummary,
    pub ranked_clusters: Vec<RankedCluster>,
    pub warnings: Vec<String>,
}

pub fn run_contours(cube: &ReflectanceCube, geo: &GeoTransform, cfg: &ContoursConfig, seed: u64) -> Result<ContoursOutput> {
    let pca = pca_project(cube, cfg.n_components)?;
    let model = cluster_spectral(&pca.scores, pca.basis.clone(), cfg.k, seed)?;
    let ranked_clusters = rank_clusters(&model)?;
    let clusters = contour_regions(&model, geo, cfg.min_purity, cfg.min_size)?;
    Ok(ContoursOutput {
        clusters,
        pca: PcaSummary {
            n: pca.eigenvalues.len(),
            explained_variance: pca.explained_variance,
        },
        ranked_clusters,
        warnings: pca.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GeoBounds, Instrument};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cube_from_pixels(rows: usize, cols: usize, spectra: &[Vec<f64>]) -> ReflectanceCube {
        let bands = spectra[0].len();
        let mut values = Cube::zeros(bands, rows, cols);
        for (p, s) in spectra.iter().enumerate() {
            for (b, &v) in s.iter().enumerate() {
                values.set(b, p / cols, p % cols, v);
            }
        }
        ReflectanceCube {
            values,
            band_centers_nm: (0..bands).map(|b| 400.0 + b as f64).collect(),
            instrument: Instrument::Synthetic,
            mask: vec![false; rows * cols],
        }
    }

    fn geo(rows: usize, cols: usize) -> GeoTransform {
        GeoTransform::new(
            GeoBounds {
                north: 10.0,
                south: 9.0,
                west: 20.0,
                east: 21.0,
            },
            rows,
            cols,
        )
    }

    fn model_from_labels(labels: &[usize], rows: usize, cols: usize, k: usize) -> ClusterModel {
        let data: Vec<f64> = labels.iter().map(|&l| l as f64 * 10.0).collect();
        ClusterModel {
            pca_basis: DMatrix::identity(1, 1),
            rows,
            cols,
            cluster_centers: (0..k).map(|j| vec![j as f64 * 10.0]).collect(),
            assignment: labels.iter().map(|&l| Some(l)).collect(),
            scores: Points::new(1, data),
            image_center: DVector::from_vec(vec![5.0]),
            image_covariance: DMatrix::from_vec(1, 1, vec![25.0]),
            init_inertia: 0.0,
            inertia: 0.0,
        }
    }

    #[test]
    fn collinear_pixels_one_component_explains_all() {
        let spectra: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let pca = pca_project(&cube_from_pixels(2, 5, &spectra), 1).unwrap();
        assert!((pca.explained_variance[0] - 1.0).abs() < 1e-12);
        assert!(pca.warnings.is_empty());
    }

    #[test]
    fn rank_deficient_covariance_reduces_components() {
        let spectra: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64, 0.0]).collect();
        let pca = pca_project(&cube_from_pixels(2, 5, &spectra), 3).unwrap();
        assert_eq!(pca.eigenvalues.len(), 1);
        assert_eq!(pca.warnings.len(), 1);
    }

    /// Cyclic Jacobi eigenvalue iteration on the explicitly formed
    /// covariance.
    fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = a.len();
        let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let (vkp, vkq) = (v[k][p], v[k][q]);
                        v[k][p] = c * vkp - s * vkq;
                        v[k][q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[i][i]).collect(), v)
    }

    #[test]
    fn projection_matches_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let scales = [5.0, 3.0, 2.0, 1.0, 0.5, 0.2];
        let spectra: Vec<Vec<f64>> = (0..50)
            .map(|_| scales.iter().enumerate().map(|(b, s)| s * normal.sample(&mut rng) + 0.3 * b as f64).collect())
            .collect();
        let cube = cube_from_pixels(5, 10, &spectra);
        let pca = pca_project(&cube, 3).unwrap();

        let n = spectra.len() as f64;
        let mean: Vec<f64> = (0..6).map(|b| spectra.iter().map(|s| s[b]).sum::<f64>() / n).collect();
        let cov: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..6).map(|j| spectra.iter().map(|s| (s[i] - mean[i]) * (s[j] - mean[j])).sum::<f64>() / (n - 1.0)).collect())
            .collect();
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (k, &i) in order.iter().take(3).enumerate() {
            assert!((pca.eigenvalues[k] - vals[i]).abs() < 1e-9 * vals[i]);
            let mut col: Vec<f64> = (0..6).map(|b| vecs[b][i]).collect();
            let pivot = (0..6).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
            if col[pivot] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            for b in 0..6 {
                assert!((pca.basis[(k, b)] - col[b]).abs() < 1e-8);
            }
            for (p, s) in spectra.iter().enumerate() {
                let expect: f64 = (0..6).map(|b| col[b] * (s[b] - mean[b])).sum();
                assert!((pca.scores.values.at(k, p) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn isotropic_data_has_balanced_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let spectra: Vec<Vec<f64>> = (0..4000).map(|_| (0..4).map(|_| normal.sample(&mut rng)).collect()).collect();
        let pca = pca_project(&cube_from_pixels(40, 100, &spectra), 4).unwrap();
        for r in &pca.explained_variance {
            assert!((r - 0.25).abs() < 0.03, "{r}");
        }
    }

    #[test]
    fn identity_covariance_ranks_by_euclidean_distance() {
        let mut model = model_from_labels(&[0, 1, 2], 1, 3, 3);
        model.cluster_centers = vec![vec![1.0], vec![3.0], vec![0.0]];
        model.image_center = DVector::from_vec(vec![0.0]);
        model.image_covariance = DMatrix::identity(1, 1);
        let ranked = rank_clusters(&model).unwrap();
        assert_eq!(ranked.iter().map(|r| r.cluster_id).collect::<Vec<_>>(), vec![1, 0, 2]);
        assert_eq!(ranked[2].mahalanobis, 0.0);
    }

    #[test]
    fn ranking_matches_direct_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = (0..25).map(|_| normal.sample(&mut rng)).collect();
        let a = DMatrix::from_vec(5, 5, a);
        let cov = &a * a.transpose() + DMatrix::identity(5, 5);
        let center: Vec<f64> = (0..5).map(|_| normal.sample(&mut rng)).collect();
        let centers: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| 3.0 * normal.sample(&mut rng)).collect()).collect();
        let mut model = model_from_labels(&[0], 1, 1, 1);
        model.cluster_centers = centers.clone();
        model.image_center = DVector::from_vec(center.clone());
        model.image_covariance = cov.clone();
        let ranked = rank_clusters(&model).unwrap();
        let inv = cov.try_inverse().unwrap();
        for r in &ranked {
            let d = DVector::from_iterator(5, centers[r.cluster_id].iter().zip(&center).map(|(x, m)| x - m));
            let expect = (d.transpose() * &inv * &d)[(0, 0)].sqrt();
            assert!((r.mahalanobis - expect).abs() < 1e-9 * expect.max(1.0));
        }
        assert!(ranked.windows(2).all(|w| w[0].mahalanobis >= w[1].mahalanobis));
    }

    #[test]
    fn solid_block_is_one_pure_region() {
        let model = model_from_labels(&[1; 25], 5, 5, 2);
        let regions = contour_regions(&model, &geo(5, 5), 0.8, 9).unwrap();
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].purity, 1.0);
        assert_eq!(regions[0].score, 1000);
    }

    #[test]
    fn checkerboard_has_no_pure_region() {
        let labels: Vec<usize> = (0..36).map(|p| (p / 6 + p % 6) % 2).collect();
        let model = model_from_labels(&labels, 6, 6, 2);
        let regions = contour_regions(&model, &geo(6, 6), 0.8, 9).unwrap();
        assert!(regions.is_empty());
    }

    #[test]
    fn contours_rasterize_to_pixel_sets() {
        let labels: Vec<usize> = (0..100).map(|p| usize::from((2..7).contains(&(p / 10)) && (3..8).contains(&(p % 10)))).collect();
        let model = model_from_labels(&labels, 10, 10, 2);
        let g = geo(10, 10);
        let regions = contour_regions(&model, &g, 0.8, 9).unwrap();
        assert!(!regions.is_empty());
        for r in &regions {
            let back = crate::grid::rasterize_rings(&r.contour.grid_rings(&g), 10, 10);
            assert_eq!(back, r.pixel_set);
            assert!(r.score <= 1000);
        }
        assert!(regions.windows(2).all(|w| w[0].score >= w[1].score));
    }
}
