//! Sample moments and bootstrap resampling.

use rand::Rng;
use rayon::prelude::*;

use crate::rng::{stream, Domain};

/// Population mean and variance (divisor `n`). Empty input yields zeros.
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Evaluates `statistic` on `resamples` bootstrap draws. Each draw
/// resamples every group independently with replacement: group `g` gets
/// `sizes[g]` indices into `0..sizes[g]`. Draw `k` uses its own stream, so
/// results do not depend on thread scheduling.
pub fn bootstrap<T, F>(sizes: &[usize], resamples: usize, seed: u64, statistic: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[Vec<usize>]) -> T + Sync,
{
    (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, Domain::Bootstrap, k as u64);
            let groups: Vec<Vec<usize>> = sizes
                .iter()
                .map(|&n| (0..n).map(|_| rng.random_range(0..n)).collect())
                .collect();
            statistic(&groups)
        })
        .collect()
}

/// Linear-interpolated quantile of unsorted data, `q ∈ [0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Sample standard deviation (divisor `n − 1`), used as a bootstrap SE.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let (_, var) = mean_var(values);
    (var * values.len() as f64 / (values.len() - 1) as f64).sqrt()
}
