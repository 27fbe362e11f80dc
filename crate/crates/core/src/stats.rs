//! Histogram comparisons against exact 1D mixture laws and simple tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Result};
use crate::measures::GaussianMixture;

/// `bins` equal bins on `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bins {
    pub min: f64,
    pub max: f64,
    pub bins: usize,
}

impl Bins {
    pub fn new(min: f64, max: f64, bins: usize) -> Result<Self> {
        if !(max > min) || bins == 0 {
            return invalid("bins need max > min and at least one bin");
        }
        Ok(Self { min, max, bins })
    }

    pub fn edges(&self) -> Vec<f64> {
        let h = (self.max - self.min) / self.bins as f64;
        (0..=self.bins).map(|i| self.min + i as f64 * h).collect()
    }

    /// Empirical probabilities per bin, followed by the mass below `min` and
    /// the mass at or above `max`.
    pub fn empirical(&self, samples: &[f64]) -> Vec<f64> {
        let mut counts = vec![0usize; self.bins + 2];
        let h = (self.max - self.min) / self.bins as f64;
        for &x in samples {
            let slot = if x < self.min {
                self.bins
            } else if x >= self.max {
                self.bins + 1
            } else {
                (((x - self.min) / h) as usize).min(self.bins - 1)
            };
            counts[slot] += 1;
        }
        let n = samples.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    /// Exact probabilities in the same layout as [`Bins::empirical`].
    pub fn exact(&self, mixture: &GaussianMixture) -> Result<Vec<f64>> {
        let cdf = |x: f64| mixture_cdf_1d(mixture, x);
        let edges = self.edges();
        let mut out = Vec::with_capacity(self.bins + 2);
        for w in edges.windows(2) {
            out.push(cdf(w[1])? - cdf(w[0])?);
        }
        out.push(cdf(self.min)?);
        out.push(1.0 - cdf(self.max)?);
        Ok(out)
    }
}

/// CDF of a 1D mixture; zero-variance components are steps.
pub fn mixture_cdf_1d(mixture: &GaussianMixture, x: f64) -> Result<f64> {
    if mixture.dim() != 1 {
        return invalid("mixture CDF is only available in one dimension");
    }
    let mut total = 0.0;
    for c in mixture.components() {
        let m = c.mean[0];
        let v = c.covariance.trace();
        total += c.weight
            * if v <= 0.0 {
                f64::from(x >= m)
            } else {
                Normal::new(m, v.sqrt()).expect("positive variance").cdf(x)
            };
    }
    Ok(total)
}

/// L1 distance between the sample histogram and the exact bin masses of
/// `mixture`, tails included.
pub fn histogram_l1(samples: &[f64], mixture: &GaussianMixture, bins: &Bins) -> Result<f64> {
    let emp = bins.empirical(samples);
    let exact = bins.exact(mixture)?;
    Ok(emp.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum())
}

/// Plug-in `KL(sample histogram | mixture bin masses)`; empty bins contribute
/// nothing.
pub fn histogram_kl(samples: &[f64], mixture: &GaussianMixture, bins: &Bins) -> Result<f64> {
    let emp = bins.empirical(samples);
    let exact = bins.exact(mixture)?;
    let mut kl = 0.0;
    for (p, q) in emp.iter().zip(&exact) {
        if *p > 0.0 {
            if *q <= 0.0 {
                return Ok(f64::INFINITY);
            }
            kl += p * (p / q).ln();
        }
    }
    Ok(kl)
}

/// Pearson chi-square test of `counts` against the uniform distribution.
/// Returns `(statistic, p_value)`.
pub fn chi_square_uniform(counts: &[usize]) -> Result<(f64, f64)> {
    if counts.len() < 2 {
        return invalid("chi-square test needs at least two categories");
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return invalid("chi-square test needs at least one observation");
    }
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    Ok((stat, dist.sf(stat)))
}
