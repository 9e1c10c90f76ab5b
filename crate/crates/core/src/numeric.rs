//! Small numerical helpers shared across modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual over the fitted points.
    pub max_residual: f64,
    /// Residual sum of squares.
    pub rss: f64,
    /// Standard error of the slope; zero for a perfect fit, NaN with two points.
    pub slope_se: f64,
}

impl LinearFit {
    /// `slope / slope_se`, infinite when the fit is exact and the slope nonzero.
    pub fn significance(&self) -> f64 {
        if self.slope_se > 0.0 {
            self.slope / self.slope_se
        } else if self.slope_se == 0.0 && self.slope != 0.0 {
            self.slope.signum() * f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Least-squares fit; `None` when fewer than two points or all `x` coincide.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = n as f64;
    let x_mean = compensated_sum(xs.iter().copied()) / nf;
    let y_mean = compensated_sum(ys.iter().copied()) / nf;
    let sxx = compensated_sum(xs.iter().map(|x| (x - x_mean).powi(2)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - x_mean) * (y - y_mean)));
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let residuals: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - (slope * x + intercept))
        .collect();
    let rss = compensated_sum(residuals.iter().map(|r| r * r));
    let max_residual = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    let slope_se = if n > 2 {
        (rss / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LinearFit {
        slope,
        intercept,
        max_residual,
        rss,
        slope_se,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    compensated_sum(xs.iter().copied()) / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator; zero for a single sample.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    compensated_sum(xs.iter().map(|x| (x - m).powi(2))) / (xs.len() - 1) as f64
}

/// Nonparametric bootstrap: `resamples` replicates of `statistic` over
/// with-replacement resamples of `samples`.
pub fn bootstrap<F>(samples: &[f64], statistic: F, resamples: usize, seed: u64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if samples.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch = vec![0.0; samples.len()];
    (0..resamples)
        .map(|_| {
            for slot in scratch.iter_mut() {
                *slot = samples[rng.random_range(0..samples.len())];
            }
            statistic(&scratch)
        })
        .collect()
}

/// Linear-interpolated quantile of an unsorted slice, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
