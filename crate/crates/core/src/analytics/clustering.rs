//! k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0);
        Points { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(1, |r| r.len());
        Points::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + Clone {
        self.data.chunks_exact(self.dim)
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub init_inertia: f64,
    pub inertia: f64,
    pub iterations: usize,
    pub reseeded: usize,
}

pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_RESTARTS: usize = 8;

/// Greedy k-means++ seeding: each new centre is the best (lowest potential)
/// of `2 + ln k` candidates drawn with probability proportional to squared
/// distance from the nearest existing centre.
pub fn kmeans_pp_init(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = vec![points.row(rng.random_range(0..n)).to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    let mut candidate_d = vec![0.0; n];
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let idx = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &d) in nearest.iter().enumerate() {
                    target -= d;
                    if target <= 0.0 {
                        chosen = i;
                        break;
                    }
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let c = points.row(idx);
            let mut potential = 0.0;
            for (i, p) in points.iter().enumerate() {
                candidate_d[i] = nearest[i].min(sq_dist(p, c));
                potential += candidate_d[i];
            }
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, idx, candidate_d.clone()));
            }
        }
        let (_, idx, d) = best.expect("at least one trial");
        centers.push(points.row(idx).to_vec());
        nearest = d;
    }
    centers
}

fn assign(points: &Points, centers: &[Vec<f64>], assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (best, d) = centers
            .iter()
            .enumerate()
            .map(|(j, c)| (j, sq_dist(p, c)))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        assignment[i] = best;
        inertia += d;
    }
    inertia
}

/// Best of `KMEANS_RESTARTS` seeded runs by final inertia; the earliest
/// run wins ties.
pub fn kmeans(points: &Points, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if k < 2 {
        return Err(Error::Config(format!("k-means needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InsufficientData(format!(
            "{n} points for {k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = kmeans_once(points, k, &mut rng);
    for _ in 1..KMEANS_RESTARTS {
        let r = kmeans_once(points, k, &mut rng);
        if r.inertia < best.inertia {
            best = r;
        }
    }
    Ok(best)
}

/// Lloyd iterations from k-means++ seeds until the largest centre move is
/// below `KMEANS_TOL` or `KMEANS_MAX_ITER` passes. A centre that loses all
/// its points is moved onto the point farthest from its assigned centre.
pub fn kmeans_once(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.len();
    let mut centers = kmeans_pp_init(points, k, rng);
    let mut assignment = vec![0usize; n];
    let init_inertia = assign(points, &centers, &mut assignment);
    let dim = points.dim;
    let mut iterations = 0;
    let mut reseeded = 0;
    let mut inertia = init_inertia;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for j in 0..k {
            let new = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                reseeded += 1;
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points.row(a), &centers[assignment[a]])
                            .total_cmp(&sq_dist(points.row(b), &centers[assignment[b]]))
                    })
                    .expect("n >= k >= 2");
                points.row(far).to_vec()
            };
            moved = moved.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        inertia = assign(points, &centers, &mut assignment);
        if moved < KMEANS_TOL {
            break;
        }
    }
    KMeansResult {
        centers,
        assignment,
        init_inertia,
        inertia,
        iterations,
        reseeded,
    }
}
