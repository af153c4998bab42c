//! Statistical building blocks shared by the analytics.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Sample mean and (n-1)-normalised covariance of `samples`, each of
/// length `dim`.
pub fn mean_covariance<'a, I>(samples: I, dim: usize) -> (DVector<f64>, DMatrix<f64>, usize)
where
    I: IntoIterator<Item = &'a [f64]> + Clone,
{
    let mut mean = DVector::zeros(dim);
    let mut n = 0usize;
    for s in samples.clone() {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
        n += 1;
    }
    if n == 0 {
        return (mean, DMatrix::zeros(dim, dim), 0);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    let mut centered = vec![0.0; dim];
    for s in samples {
        for i in 0..dim {
            centered[i] = s[i] - mean[i];
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov, n)
}

/// Mahalanobis distance from a fixed centre under a fixed covariance.
///
/// When the covariance is not positive definite it is regularised as
/// `cov + eps * I` with `eps = 1e-9 * trace / dim`, growing `eps` tenfold
/// until the factorisation succeeds.
#[derive(Debug, Clone)]
pub struct Mahalanobis {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    pub regularized: bool,
}

impl Mahalanobis {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let dim = cov.nrows();
        let scale = (cov.trace() / dim.max(1) as f64).abs().max(f64::MIN_POSITIVE);
        if let Some(chol) = Cholesky::new(cov.clone()) {
            if chol.l_dirty().diagonal().iter().all(|&d| d * d > 1e-12 * scale) {
                return Ok(Mahalanobis {
                    mean,
                    chol,
                    regularized: false,
                });
            }
        }
        let trace = cov.trace();
        let mut eps = 1e-9 * if trace > 0.0 { trace / dim as f64 } else { 1.0 };
        for _ in 0..20 {
            let reg = &cov + DMatrix::identity(dim, dim) * eps;
            if let Some(chol) = Cholesky::new(reg) {
                return Ok(Mahalanobis {
                    mean,
                    chol,
                    regularized: true,
                });
            }
            eps *= 10.0;
        }
        Err(Error::InsufficientData(
            "covariance could not be regularised".into(),
        ))
    }

    pub fn fit<'a, I>(samples: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let (mean, cov, n) = mean_covariance(samples, dim);
        if n == 0 {
            return Err(Error::InsufficientData("no samples".into()));
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.mean.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        // |L^-1 d|^2 = d^T Sigma^-1 d
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&d)
            .expect("Cholesky factor is non-singular");
        y.norm_squared().sqrt()
    }
}

/// Linear-interpolation empirical quantile (the common "type 7" rule) of
/// ascending data. `q` is clamped to `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let q = q.clamp(0.0, 1.0);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// For each value, the fraction of the *other* values strictly below it.
/// The maximum maps to 1, the minimum to 0; a single value maps to 1.
pub fn rank_percentiles(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n == 1 {
        return vec![1.0];
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| {
            let below = sorted.partition_point(|x| x < v);
            below as f64 / (n - 1) as f64
        })
        .collect()
}

/// Percentile mapped onto the shared 0-1000 anomaly score scale.
pub fn score_0_1000(percentile: f64) -> u32 {
    (1000.0 * percentile.clamp(0.0, 1.0)).round() as u32
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summary moments of one sample: count, mean, unbiased variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub var: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Moments { n, mean, var }
    }
}

fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Two-sided Welch t-test p-value for unequal means.
///
/// When one side has a single observation the test becomes a prediction
/// test of that observation against the other sample,
/// `t = (x - m) / sqrt(s^2 (1 + 1/n))` with `n - 1` degrees of freedom.
/// Returns `None` when neither side has a variance estimate.
pub fn welch_p_value(a: Moments, b: Moments) -> Option<f64> {
    match (a.n, b.n) {
        (0, _) | (_, 0) => None,
        (1, 1) => None,
        (1, _) | (_, 1) => {
            let (single, sample) = if a.n == 1 { (a, b) } else { (b, a) };
            let scale = (sample.var * (1.0 + 1.0 / sample.n as f64)).sqrt();
            let diff = single.mean - sample.mean;
            if scale == 0.0 {
                return Some(if diff == 0.0 { 1.0 } else { 0.0 });
            }
            Some(t_two_sided_p(diff / scale, (sample.n - 1) as f64))
        }
        _ => {
            let va = a.var / a.n as f64;
            let vb = b.var / b.n as f64;
            let se2 = va + vb;
            let diff = a.mean - b.mean;
            if se2 == 0.0 {
                return Some(if diff == 0.0 { 1.0 } else { 0.0 });
            }
            let df = se2 * se2
                / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
            Some(t_two_sided_p(diff / se2.sqrt(), df.max(1.0)))
        }
    }
}

/// Ordinary least squares fit of `y = slope * x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionStats {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval for the slope.
    pub slope_ci95: [f64; 2],
    /// Root mean square of `y - x`, the distance from the 1-1 line.
    pub rms_from_identity: f64,
    pub mean_abs_from_identity: f64,
}

pub fn ols(pairs: &[(f64, f64)]) -> Result<RegressionStats> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "regression needs at least 3 pairs, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "expected fractions are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pairs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_stderr = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .expect("n >= 3")
        .inverse_cdf(0.975);
    let rms_from_identity = (pairs.iter().map(|p| (p.1 - p.0).powi(2)).sum::<f64>() / nf).sqrt();
    let mean_abs_from_identity = pairs.iter().map(|p| (p.1 - p.0).abs()).sum::<f64>() / nf;
    Ok(RegressionStats {
        n,
        slope,
        intercept,
        r_squared,
        slope_stderr,
        slope_ci95: [slope - t * slope_stderr, slope + t * slope_stderr],
        rms_from_identity,
        mean_abs_from_identity,
    })
}
