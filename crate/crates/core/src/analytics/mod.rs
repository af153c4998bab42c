//! The five detection and classification analytics and the shared helpers
//! they use.

pub mod blobs;
pub mod builtin;
pub mod classifier;
pub mod clustering;
pub mod contours;
pub mod gmm_knn;
pub mod rpf;

use crate::raster::Cube;

/// Indices of the `count` highest-variance bands over unmasked pixels,
/// returned in ascending band order. Ties go to the lower band index.
pub fn select_top_variance(values: &Cube<f64>, mask: &[bool], count: usize) -> Vec<usize> {
    let bands = values.bands();
    if count >= bands {
        return (0..bands).collect();
    }
    let valid: Vec<usize> = (0..mask.len()).filter(|&p| !mask[p]).collect();
    let n = valid.len().max(1) as f64;
    let variances: Vec<f64> = (0..bands)
        .map(|b| {
            let band = values.band(b);
            let mean = valid.iter().map(|&p| band[p]).sum::<f64>() / n;
            valid.iter().map(|&p| (band[p] - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| variances[b].total_cmp(&variances[a]).then(a.cmp(&b)));
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_variance_picks_spread_bands() {
        let mut cube = Cube::zeros(4, 1, 3);
        for (b, spread) in [0.0, 5.0, 1.0, 5.0].iter().enumerate() {
            for c in 0..3 {
                cube.set(b, 0, c, spread * c as f64);
            }
        }
        assert_eq!(select_top_variance(&cube, &[false; 3], 2), vec![1, 3]);
        assert_eq!(select_top_variance(&cube, &[false; 3], 3), vec![1, 2, 3]);
        assert_eq!(select_top_variance(&cube, &[false; 3], 9), vec![0, 1, 2, 3]);
    }
}
