//! GMM-KNN: pixels that are improbable under a Gaussian mixture of the
//! scene's colour features seed clumps, which grow over the looser outlier
//! set and are then ranked by likelihood, nearest-neighbour and edge
//! features.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clustering::{kmeans_pp_init, sq_dist, Points};
use super::select_top_variance;
use crate::error::{Error, Result};
use crate::grid::flood_fill;
use crate::radiometry::FeatureCube;
use crate::raster::{BBox, Pixel};
use crate::scene::GeoTransform;
use crate::stats::{quantile, rank_percentiles, score_0_1000};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CovarianceKind {
    Diagonal,
    Full,
}

/// Feature vectors of the valid pixels, in pixel order.
#[derive(Debug, Clone)]
pub struct GmmFeatures {
    pub points: Points,
    pub pixel_index: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
    pub components_used: Vec<usize>,
}

impl GmmFeatures {
    pub fn from_cube(cube: &FeatureCube, components: &[usize]) -> Self {
        let pixel_index = cube.valid_indices();
        let mut data = Vec::with_capacity(pixel_index.len() * components.len());
        for &p in &pixel_index {
            data.extend(components.iter().map(|&c| cube.values.at(c, p)));
        }
        GmmFeatures {
            points: Points::new(components.len().max(1), data),
            pixel_index,
            rows: cube.values.rows(),
            cols: cube.values.cols(),
            components_used: components.to_vec(),
        }
    }

    /// Uses the `count` highest-variance components.
    pub fn auto(cube: &FeatureCube, count: usize) -> Self {
        let chosen = select_top_variance(&cube.values, &cube.mask, count);
        Self::from_cube(cube, &chosen)
    }

    /// Map from flat pixel index to row in `points` (`usize::MAX` if masked).
    pub fn row_of_pixel(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.rows * self.cols];
        for (i, &p) in self.pixel_index.iter().enumerate() {
            out[p] = i;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariances {
    Diagonal(Vec<Vec<f64>>),
    Full(Vec<Vec<Vec<f64>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Covariances,
    pub variance_floor: Vec<f64>,
    pub converged: bool,
    pub loglik: f64,
    pub iterations: usize,
    /// Total log-likelihood after each E-step.
    pub loglik_history: Vec<f64>,
    /// Iterations after which a collapsed component was re-spread.
    pub respread_at: Vec<usize>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    densities: Vec<ComponentDensity>,
}

/// Precomputed evaluation form of one component.
#[derive(Debug, Clone, PartialEq, Default)]
struct ComponentDensity {
    log_weight: f64,
    log_norm: f64,
    mean: Vec<f64>,
    inv_var: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl ComponentDensity {
    fn log_pdf(&self, x: &[f64]) -> f64 {
        let quad = match &self.chol {
            None => x
                .iter()
                .zip(&self.mean)
                .zip(&self.inv_var)
                .map(|((v, m), iv)| (v - m) * (v - m) * iv)
                .sum::<f64>(),
            Some(l) => {
                let d = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(v, m)| v - m));
                l.solve_lower_triangular(&d).expect("non-singular factor").norm_squared()
            }
        };
        self.log_weight + self.log_norm - 0.5 * quad
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    fn rebuild(&mut self) {
        let dim = self.means.first().map_or(0, Vec::len);
        self.densities = (0..self.k)
            .map(|j| {
                let mean = self.means[j].clone();
                let log_weight = self.weights[j].ln();
                match &self.covariances {
                    Covariances::Diagonal(vars) => ComponentDensity {
                        log_weight,
                        log_norm: -0.5 * (dim as f64 * LN_2PI + vars[j].iter().map(|v| v.ln()).sum::<f64>()),
                        mean,
                        inv_var: vars[j].iter().map(|v| 1.0 / v).collect(),
                        chol: None,
                    },
                    Covariances::Full(covs) => {
                        let m = DMatrix::from_fn(dim, dim, |r, c| covs[j][r][c]);
                        let l = m.cholesky().expect("regularised covariance").l();
                        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                        ComponentDensity {
                            log_weight,
                            log_norm: -0.5 * (dim as f64 * LN_2PI + log_det),
                            mean,
                            inv_var: Vec::new(),
                            chol: Some(l),
                        }
                    }
                }
            })
            .collect();
    }

    /// Log density of the mixture at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = self.densities.iter().map(|d| d.log_pdf(x)).collect();
        log_sum_exp(&terms)
    }

    pub fn nll(&self, x: &[f64]) -> f64 {
        -self.log_density(x)
    }

    /// Restores the evaluation caches after deserialisation.
    pub fn prepared(mut self) -> Self {
        self.rebuild();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub k: usize,
    pub covariance: CovarianceKind,
    pub max_iter: usize,
    /// Convergence threshold on the gain in mean per-pixel log-likelihood.
    pub tol: f64,
}

impl Default for GmmConfig {
    fn default() -> Self {
        GmmConfig {
            k: 20,
            covariance: CovarianceKind::Diagonal,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

fn weighted_moments(points: &Points, resp: &[f64], k: usize, j: usize, nk: f64, kind: CovarianceKind, floor: &[f64]) -> (Vec<f64>, CovEntry) {
    let dim = points.dim;
    let mut mean = vec![0.0; dim];
    for (i, x) in points.iter().enumerate() {
        let r = resp[i * k + j];
        if r != 0.0 {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += r * v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= nk);
    match kind {
        CovarianceKind::Diagonal => {
            let mut var = vec![0.0; dim];
            for (i, x) in points.iter().enumerate() {
                let r = resp[i * k + j];
                if r != 0.0 {
                    for d in 0..dim {
                        var[d] += r * (x[d] - mean[d]).powi(2);
                    }
                }
            }
            for d in 0..dim {
                var[d] = (var[d] / nk).max(floor[d]);
            }
            (mean, CovEntry::Diagonal(var))
        }
        CovarianceKind::Full => {
            let mut cov = vec![vec![0.0; dim]; dim];
            let mut diff = vec![0.0; dim];
            for (i, x) in points.iter().enumerate() {
                let r = resp[i * k + j];
                if r != 0.0 {
                    for d in 0..dim {
                        diff[d] = x[d] - mean[d];
                    }
                    for a in 0..dim {
                        for b in 0..=a {
                            cov[a][b] += r * diff[a] * diff[b];
                        }
                    }
                }
            }
            for a in 0..dim {
                for b in 0..=a {
                    cov[a][b] /= nk;
                    cov[b][a] = cov[a][b];
                }
            }
            (mean, CovEntry::Full(regularize_full(cov, floor)))
        }
    }
}

enum CovEntry {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

fn regularize_full(mut cov: Vec<Vec<f64>>, floor: &[f64]) -> Vec<Vec<f64>> {
    let dim = cov.len();
    for d in 0..dim {
        cov[d][d] = cov[d][d].max(floor[d]);
    }
    let mut bump = 1.0;
    loop {
        let m = DMatrix::from_fn(dim, dim, |r, c| cov[r][c]);
        if m.cholesky().is_some() {
            return cov;
        }
        for d in 0..dim {
            cov[d][d] += bump * floor[d];
        }
        bump *= 10.0;
    }
}

/// Expectation-maximisation fit from k-means++ seeds.
///
/// The log-likelihood is checked after every E-step; a decrease beyond
/// rounding is reported as an error unless it directly follows a
/// collapsed-component re-spread.
pub fn fit_gmm(features: &GmmFeatures, cfg: &GmmConfig, seed: u64) -> Result<GmmModel> {
    let points = &features.points;
    let n = points.len();
    let k = cfg.k;
    let dim = points.dim;
    if k == 0 {
        return Err(Error::Config("GMM needs k >= 1".into()));
    }
    if n < 10 * k {
        return Err(Error::InsufficientData(format!(
            "{n} pixels for a {k}-component mixture (need {})",
            10 * k
        )));
    }
    let global_mean: Vec<f64> = (0..dim).map(|d| points.iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
    let global_var: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|x| (x[d] - global_mean[d]).powi(2)).sum::<f64>() / n as f64)
        .collect();
    let floor: Vec<f64> = global_var.iter().map(|&v| if v > 0.0 { 1e-6 * v } else { 1e-12 }).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans_pp_init(points, k, &mut rng);
    // hard responsibilities from the seeds
    let mut resp = vec![0.0; n * k];
    for (i, x) in points.iter().enumerate() {
        let j = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .expect("k >= 1");
        resp[i * k + j] = 1.0;
    }

    let mut model = GmmModel {
        k,
        weights: vec![1.0 / k as f64; k],
        means: centers,
        covariances: match cfg.covariance {
            CovarianceKind::Diagonal => Covariances::Diagonal(vec![global_var.iter().zip(&floor).map(|(v, f)| v.max(*f)).collect(); k]),
            CovarianceKind::Full => Covariances::Full(vec![
                (0..dim)
                    .map(|a| (0..dim).map(|b| if a == b { global_var[a].max(floor[a]) } else { 0.0 }).collect())
                    .collect();
                k
            ]),
        },
        variance_floor: floor.clone(),
        converged: false,
        loglik: f64::NEG_INFINITY,
        iterations: 0,
        loglik_history: Vec::new(),
        respread_at: Vec::new(),
        warnings: Vec::new(),
        densities: Vec::new(),
    };
    let mut log_dens = vec![0.0; n];
    let mut terms = vec![0.0; k];
    m_step(&mut model, points, &resp, cfg.covariance, &floor, &log_dens, 0);

    for iter in 0..cfg.max_iter.max(1) {
        model.rebuild();
        // E-step
        let mut ll = 0.0;
        for (i, x) in points.iter().enumerate() {
            for (t, d) in terms.iter_mut().zip(&model.densities) {
                *t = d.log_pdf(x);
            }
            let lse = log_sum_exp(&terms);
            log_dens[i] = lse;
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (terms[j] - lse).exp();
            }
        }
        model.iterations = iter + 1;
        if let Some(&prev) = model.loglik_history.last() {
            let after_respread = model.respread_at.last() == Some(&iter);
            let slack = 1e-9 * prev.abs().max(1.0);
            if ll < prev - slack && !after_respread {
                return Err(Error::Analytic(format!(
                    "EM log-likelihood decreased at iteration {iter}: {prev} -> {ll}"
                )));
            }
            model.loglik_history.push(ll);
            model.loglik = ll;
            if !after_respread && (ll - prev) / (n as f64) < cfg.tol {
                model.converged = true;
                break;
            }
        } else {
            model.loglik_history.push(ll);
            model.loglik = ll;
        }
        if iter + 1 == cfg.max_iter {
            break;
        }
        m_step(&mut model, points, &resp, cfg.covariance, &floor, &log_dens, iter + 1);
    }
    if !model.converged {
        model.warnings.push(format!("EM stopped after {} iterations without converging", model.iterations));
    }
    model.rebuild();
    Ok(model)
}

fn m_step(model: &mut GmmModel, points: &Points, resp: &[f64], kind: CovarianceKind, floor: &[f64], log_dens: &[f64], next_iter: usize) {
    let n = points.len();
    let k = model.k;
    let mut nks = vec![0.0; k];
    for i in 0..n {
        for j in 0..k {
            nks[j] += resp[i * k + j];
        }
    }
    let collapse_limit = 1e-8 * n as f64;
    let mut used_for_respread: Vec<usize> = Vec::new();
    for j in 0..k {
        if nks[j] <= collapse_limit {
            // Re-spread the dead component onto the worst-explained pixel.
            let worst = (0..n)
                .filter(|i| !used_for_respread.contains(i))
                .min_by(|&a, &b| log_dens[a].total_cmp(&log_dens[b]).then(a.cmp(&b)))
                .expect("n > k");
            used_for_respread.push(worst);
            model.means[j] = points.row(worst).to_vec();
            match &mut model.covariances {
                Covariances::Diagonal(v) => v[j] = floor.iter().map(|f| f * 1e6).collect(),
                Covariances::Full(c) => {
                    c[j] = (0..floor.len())
                        .map(|a| (0..floor.len()).map(|b| if a == b { floor[a] * 1e6 } else { 0.0 }).collect())
                        .collect()
                }
            }
            model.weights[j] = 1.0 / n as f64;
            model.warnings.push(format!("component {j} collapsed; re-spread at iteration {next_iter}"));
            if model.respread_at.last() != Some(&next_iter) {
                model.respread_at.push(next_iter);
            }
            continue;
        }
        let (mean, cov) = weighted_moments(points, resp, k, j, nks[j], kind, floor);
        model.means[j] = mean;
        model.weights[j] = nks[j] / n as f64;
        match (&mut model.covariances, cov) {
            (Covariances::Diagonal(v), CovEntry::Diagonal(var)) => v[j] = var,
            (Covariances::Full(c), CovEntry::Full(m)) => c[j] = m,
            _ => unreachable!("covariance kind is fixed per fit"),
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights.iter_mut().for_each(|w| *w /= total);
}

#[derive(Debug, Clone)]
pub struct OutlierSeeds {
    /// Per-pixel negative log-likelihood, NaN where masked.
    pub nll: Vec<f64>,
    pub threshold: f64,
    /// Flat pixel indices, ascending.
    pub seeds: Vec<usize>,
}

pub fn pixel_nll(model: &GmmModel, features: &GmmFeatures) -> Vec<f64> {
    let mut nll = vec![f64::NAN; features.rows * features.cols];
    for (i, &p) in features.pixel_index.iter().enumerate() {
        nll[p] = model.nll(features.points.row(i));
    }
    nll
}

/// Seeds are pixels whose NLL exceeds the `1 - seed_quantile` empirical
/// quantile.
pub fn gmm_outlier_seeds(model: &GmmModel, features: &GmmFeatures, seed_quantile: f64) -> OutlierSeeds {
    let nll = pixel_nll(model, features);
    let valid: Vec<f64> = nll.iter().copied().filter(|v| !v.is_nan()).collect();
    let threshold = quantile(&valid, 1.0 - seed_quantile);
    let seeds = (0..nll.len()).filter(|&p| nll[p] > threshold).collect();
    OutlierSeeds { nll, threshold, seeds }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClumpFeatures {
    pub size: f64,
    pub mean_gmm_nll: f64,
    pub mean_knn_distance: f64,
    pub edge_contrast: f64,
    pub internal_spectral_variance: f64,
    pub bbox_aspect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clump {
    pub clump_id: usize,
    pub seed_pixels: Vec<Pixel>,
    pub pixel_set: Vec<Pixel>,
    pub features: ClumpFeatures,
    pub composite: f64,
    pub score: u32,
    pub rank: usize,
    pub selected: bool,
    pub geo_bbox: Option<[f64; 4]>,
}

/// Grows each seed over pixels whose NLL exceeds the `1 - expand_quantile`
/// quantile. Seeds reached by the same fill share one clump, so clumps are
/// disjoint 4-connected sets. Clumps are numbered by their first seed.
pub fn flood_fill_clumps(seeds: &[usize], nll: &[f64], rows: usize, cols: usize, expand_quantile: f64) -> Vec<Clump> {
    let valid: Vec<f64> = nll.iter().copied().filter(|v| !v.is_nan()).collect();
    if valid.is_empty() {
        return Vec::new();
    }
    let threshold = quantile(&valid, 1.0 - expand_quantile);
    let mut is_seed = vec![false; nll.len()];
    for &s in seeds {
        is_seed[s] = true;
    }
    let mut owner = vec![usize::MAX; nll.len()];
    let mut clumps = Vec::new();
    let mut sorted_seeds = seeds.to_vec();
    sorted_seeds.sort_unstable();
    for s in sorted_seeds {
        if owner[s] != usize::MAX {
            continue;
        }
        let id = clumps.len();
        let members = flood_fill(&[s], rows, cols, |p| is_seed[p] || nll[p] > threshold);
        for &p in &members {
            owner[p] = id;
        }
        clumps.push(Clump {
            clump_id: id,
            seed_pixels: members.iter().filter(|&&p| is_seed[p]).map(|&p| Pixel::from_index(p, cols)).collect(),
            pixel_set: members.iter().map(|&p| Pixel::from_index(p, cols)).collect(),
            features: ClumpFeatures::default(),
            composite: 0.0,
            score: 0,
            rank: 0,
            selected: false,
            geo_bbox: None,
        });
    }
    clumps
}

/// Uniform sample (without replacement) of valid pixels outside every clump.
pub fn background_sample(features: &GmmFeatures, clumps: &[Clump], size: usize, seed: u64) -> Points {
    let mut in_clump = vec![false; features.rows * features.cols];
    for c in clumps {
        for px in &c.pixel_set {
            in_clump[px.index(features.cols)] = true;
        }
    }
    let candidates: Vec<usize> = (0..features.pixel_index.len())
        .filter(|&i| !in_clump[features.pixel_index[i]])
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amount = size.min(candidates.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), amount).into_vec();
    picked.sort_unstable();
    let dim = features.points.dim;
    let mut data = Vec::with_capacity(amount * dim);
    for i in picked {
        data.extend_from_slice(features.points.row(candidates[i]));
    }
    Points::new(dim, data)
}

/// Distance from `x` to its `kappa`-th nearest point of `reference`.
pub fn kth_neighbor_distance(x: &[f64], reference: &Points, kappa: usize) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let mut d: Vec<f64> = reference.iter().map(|r| sq_dist(x, r)).collect();
    let kth = kappa.clamp(1, d.len()) - 1;
    let (_, v, _) = d.select_nth_unstable_by(kth, f64::total_cmp);
    v.sqrt()
}

pub fn clump_features(
    clump: &Clump,
    features: &GmmFeatures,
    row_of_pixel: &[usize],
    nll: &[f64],
    reference: &Points,
    kappa: usize,
) -> ClumpFeatures {
    let (rows, cols) = (features.rows, features.cols);
    let members: Vec<usize> = clump.pixel_set.iter().map(|p| p.index(cols)).collect();
    let vectors: Vec<&[f64]> = members
        .iter()
        .filter(|&&p| row_of_pixel[p] != usize::MAX)
        .map(|&p| features.points.row(row_of_pixel[p]))
        .collect();
    let size = members.len() as f64;
    let mean_gmm_nll = members.iter().map(|&p| nll[p]).sum::<f64>() / size;
    let mean_knn_distance = vectors.iter().map(|x| kth_neighbor_distance(x, reference, kappa)).sum::<f64>() / vectors.len().max(1) as f64;

    let mut inside = vec![false; rows * cols];
    for &p in &members {
        inside[p] = true;
    }
    let mut ring = std::collections::BTreeSet::new();
    for px in &clump.pixel_set {
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                let (r, c) = (px.row as i64 + dr, px.col as i64 + dc);
                if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
                    continue;
                }
                let q = r as usize * cols + c as usize;
                if !inside[q] && !nll[q].is_nan() {
                    ring.insert(q);
                }
            }
        }
    }
    let edge_contrast = if ring.is_empty() {
        0.0
    } else {
        mean_gmm_nll - ring.iter().map(|&q| nll[q]).sum::<f64>() / ring.len() as f64
    };

    let dim = features.points.dim;
    let internal_spectral_variance = if vectors.len() < 2 {
        0.0
    } else {
        let m = vectors.len() as f64;
        (0..dim)
            .map(|d| {
                let mean = vectors.iter().map(|x| x[d]).sum::<f64>() / m;
                vectors.iter().map(|x| (x[d] - mean).powi(2)).sum::<f64>() / m
            })
            .sum::<f64>()
            / dim as f64
    };
    let bbox = BBox::of(&clump.pixel_set).expect("clumps are non-empty");
    let (h, w) = (bbox.height() as f64, bbox.width() as f64);
    ClumpFeatures {
        size,
        mean_gmm_nll,
        mean_knn_distance,
        edge_contrast,
        internal_spectral_variance,
        bbox_aspect: h.max(w) / h.min(w),
    }
}

/// Composite = mean rank-percentile of NLL, KNN distance and edge contrast.
/// Clumps are re-ordered by composite (descending, ties by `clump_id`) and
/// the first `top_n` are selected.
pub fn select_candidates(clumps: &mut Vec<Clump>, top_n: usize) {
    if clumps.is_empty() {
        return;
    }
    let pick = |f: fn(&ClumpFeatures) -> f64| -> Vec<f64> { rank_percentiles(&clumps.iter().map(|c| f(&c.features)).collect::<Vec<_>>()) };
    let a = pick(|f| f.mean_gmm_nll);
    let b = pick(|f| f.mean_knn_distance);
    let c = pick(|f| f.edge_contrast);
    for (i, clump) in clumps.iter_mut().enumerate() {
        clump.composite = (a[i] + b[i] + c[i]) / 3.0;
        clump.score = score_0_1000(clump.composite);
    }
    clumps.sort_by(|x, y| y.composite.total_cmp(&x.composite).then(x.clump_id.cmp(&y.clump_id)));
    for (i, clump) in clumps.iter_mut().enumerate() {
        clump.rank = i + 1;
        clump.selected = i < top_n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmKnnConfig {
    #[serde(flatten)]
    pub gmm: GmmConfig,
    pub component_count: usize,
    pub seed_quantile: f64,
    pub expand_quantile: f64,
    pub knn_sample: usize,
    pub knn_k: usize,
    pub top_n: usize,
}

impl Default for GmmKnnConfig {
    fn default() -> Self {
        GmmKnnConfig {
            gmm: GmmConfig::default(),
            component_count: 20,
            seed_quantile: 0.001,
            expand_quantile: 0.01,
            knn_sample: 5000,
            knn_k: 5,
            top_n: 10,
        }
    }
}

impl GmmKnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_quantile > 0.0 && self.seed_quantile <= self.expand_quantile && self.expand_quantile < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < seed_quantile ({}) <= expand_quantile ({}) < 1",
                self.seed_quantile, self.expand_quantile
            )));
        }
        if self.knn_k == 0 || self.knn_sample == 0 {
            return Err(Error::Config("knn_k and knn_sample must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSummary {
    pub k: usize,
    pub converged: bool,
    pub loglik: f64,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmKnnOutput {
    pub gmm: GmmSummary,
    pub components_used: Vec<usize>,
    pub seed_threshold: f64,
    pub seed_count: usize,
    /// Ordered by rank.
    pub clumps: Vec<Clump>,
}

pub fn run_gmm_knn(cube: &FeatureCube, geo: Option<&GeoTransform>, cfg: &GmmKnnConfig, seed: u64) -> Result<(GmmKnnOutput, GmmModel)> {
    cfg.validate()?;
    let features = GmmFeatures::auto(cube, cfg.component_count);
    let model = fit_gmm(&features, &cfg.gmm, seed)?;
    let seeds = gmm_outlier_seeds(&model, &features, cfg.seed_quantile);
    let mut clumps = flood_fill_clumps(&seeds.seeds, &seeds.nll, features.rows, features.cols, cfg.expand_quantile);
    let reference = background_sample(&features, &clumps, cfg.knn_sample, seed ^ 0x6b6e_6e00);
    let row_of = features.row_of_pixel();
    for c in clumps.iter_mut() {
        c.features = clump_features(c, &features, &row_of, &seeds.nll, &reference, cfg.knn_k);
        c.geo_bbox = geo.and_then(|g| g.bbox(&c.pixel_set));
    }
    select_candidates(&mut clumps, cfg.top_n);
    let output = GmmKnnOutput {
        gmm: GmmSummary {
            k: model.k,
            converged: model.converged,
            loglik: model.loglik,
            iterations: model.iterations,
            warnings: model.warnings.clone(),
        },
        components_used: features.components_used.clone(),
        seed_threshold: seeds.threshold,
        seed_count: seeds.seeds.len(),
        clumps,
    };
    Ok((output, model))
}
