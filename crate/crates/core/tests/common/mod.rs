#![allow(dead_code)]

use statrs::distribution::{ContinuousCDF, Normal};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn lag1_autocorrelation(v: &[f64]) -> f64 {
    let m = mean(v);
    let num: f64 = v.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    let den: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    num / den
}

/// Two-sided one-sample Kolmogorov–Smirnov test against N(0, 1). Returns
/// the statistic and the asymptotic p-value (Stephens' small-sample
/// correction).
pub fn ks_standard_normal(values: &[f64]) -> (f64, f64) {
    let normal = Normal::standard();
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal.cdf(*x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (d, p.clamp(0.0, 1.0))
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means.
pub fn batch_means_se(v: &[f64], batches: usize) -> f64 {
    let size = v.len() / batches;
    let means: Vec<f64> = v.chunks_exact(size).map(mean).collect();
    (variance(&means) / means.len() as f64).sqrt()
}

/// Time-average variance (about the known mean 0) and its batch-means SE.
pub fn centred_second_moment(v: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
    (mean(&sq), batch_means_se(&sq, 100))
}
