//! Small statistics helpers used by the comparison harness and checks.

use rand::Rng;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile bootstrap interval for the mean of `xs`.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(xs: &[f64], resamples: usize, level: f64, rng: &mut R) -> (f64, f64) {
    assert!(!xs.is_empty() && resamples > 0);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(alpha), at(1.0 - alpha))
}

/// Counts of a paired comparison in which positive differences favour the
/// treatment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SignCounts {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl SignCounts {
    pub fn from_diffs(diffs: &[f64]) -> Self {
        let mut c = Self::default();
        for &d in diffs {
            match d.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => c.wins += 1,
                Some(std::cmp::Ordering::Less) => c.losses += 1,
                _ => c.ties += 1,
            }
        }
        c
    }
}
