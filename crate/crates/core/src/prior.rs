//! Optimal Gaussian priors for the Brownian forward SDE, the KL bound on the
//! prior error, and KL estimates between mixtures and Gaussians.
//!
//! For Brownian noising `p_T = μ_data * N(0, T·I)`, and
//! `KL(p_T | N(m, C))` is minimized by `m = E[μ_data]`, `C = Cov(μ_data) + T·I`.
//! Restricted to `C = c·I` the minimizer is `c = tr(Cov(μ_data))/d + T`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Covariance;
use crate::measures::{GaussianMixture, Measure};
use crate::quadrature;
use crate::score::CompiledMixture;

/// Absolute tolerance requested from the KL quadrature.
pub const KL_QUADRATURE_TOLERANCE: f64 = 1e-9;
const DOMAIN_SIGMAS: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub enum PriorCovariance {
    Full(DMatrix<f64>),
    Isotropic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorFit {
    pub mean: DVector<f64>,
    pub covariance: PriorCovariance,
    pub t: f64,
    pub kl_bound: f64,
    /// Eigenvalues of `Cov(μ_data)`, ascending, clamped at 0.
    pub cov_eigenvalues: Vec<f64>,
}

impl PriorFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_mixture(&self) -> Result<GaussianMixture> {
        let cov = match &self.covariance {
            PriorCovariance::Full(m) => Covariance::dense(m.clone())?,
            PriorCovariance::Isotropic(c) => Covariance::isotropic(self.dim(), *c)?,
        };
        GaussianMixture::gaussian(self.mean.clone(), cov)
    }

    pub fn to_measure(&self) -> Result<Measure> {
        Ok(self.to_mixture()?.into())
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return invalid(format!("T must be positive, got {t}"));
    }
    Ok(())
}

/// Moment-matched Gaussian prior for the Brownian marginal at `T`.
pub fn optimal_gaussian_prior(measure: &Measure, t: f64, isotropic: bool) -> Result<PriorFit> {
    check_time(t)?;
    let d = measure.dim();
    let cov = measure.covariance();
    let eigenvalues = Covariance::dense(cov.clone())?.eigenvalues();
    let covariance = if isotropic {
        PriorCovariance::Isotropic(cov.trace() / d as f64 + t)
    } else {
        PriorCovariance::Full(cov + DMatrix::identity(d, d) * t)
    };
    Ok(PriorFit {
        mean: measure.mean(),
        covariance,
        t,
        kl_bound: kl_bound(&eigenvalues, t)?,
        cov_eigenvalues: eigenvalues,
    })
}

/// `½ Σ_i log(1 + c_i / T)`, an upper bound on `KL(p_T | optimal prior)`.
pub fn kl_bound(cov_eigenvalues: &[f64], t: f64) -> Result<f64> {
    check_time(t)?;
    if let Some(bad) = cov_eigenvalues.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
        return invalid(format!("covariance eigenvalues must be >= 0, got {bad}"));
    }
    Ok(0.5 * cov_eigenvalues.iter().map(|c| (c / t).ln_1p()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMethod {
    ClosedFormGaussian,
    Quadrature1d,
    Quadrature2d,
}

/// `KL(p | q)`. The closed form needs two single Gaussians; the quadrature
/// methods accept any nondegenerate mixtures in 1 or 2 dimensions.
pub fn kl_estimate(p: &GaussianMixture, q: &GaussianMixture, method: KlMethod) -> Result<f64> {
    if p.dim() != q.dim() {
        return invalid("KL arguments have different dimensions");
    }
    match method {
        KlMethod::ClosedFormGaussian => {
            if p.components().len() != 1 || q.components().len() != 1 {
                return invalid("closed-form KL needs two single Gaussians");
            }
            gaussian_kl(p, q)
        }
        KlMethod::Quadrature1d if p.dim() == 1 => kl_quadrature(p, q),
        KlMethod::Quadrature2d if p.dim() == 2 => kl_quadrature(p, q),
        _ => invalid(format!("{method:?} does not support dimension {}", p.dim())),
    }
}

/// `½ [tr(Σ_q⁻¹Σ_p) + (μ_q − μ_p)ᵀ Σ_q⁻¹ (μ_q − μ_p) − d + log det Σ_q − log det Σ_p]`.
fn gaussian_kl(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    let (p, q) = (&p.components()[0], &q.components()[0]);
    let d = p.mean.len();
    let (q_prec, q_logdet) = q.covariance.precision()?;
    let (_, p_logdet) = p.covariance.precision()?;
    let sp = p.covariance.to_matrix();
    let mut trace = 0.0;
    let mut col = vec![0.0; d];
    for j in 0..d {
        q_prec.apply(sp.column(j).as_slice(), &mut col);
        trace += col[j];
    }
    let diff: Vec<f64> = (&q.mean - &p.mean).iter().cloned().collect();
    let maha = q_prec.quadratic_form(&diff);
    // nonnegative in exact arithmetic; clamp rounding below zero
    Ok((0.5 * (trace + maha - d as f64 + q_logdet - p_logdet)).max(0.0))
}

/// Per-axis integration box: component means ± 8 standard deviations.
pub fn quadrature_box(p: &GaussianMixture) -> Vec<(f64, f64)> {
    (0..p.dim())
        .map(|i| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for c in p.components() {
                let sd = c.covariance.to_matrix()[(i, i)].sqrt();
                lo = lo.min(c.mean[i] - DOMAIN_SIGMAS * sd);
                hi = hi.max(c.mean[i] + DOMAIN_SIGMAS * sd);
            }
            (lo, hi)
        })
        .collect()
}

fn kl_quadrature(p: &GaussianMixture, q: &GaussianMixture) -> Result<f64> {
    let cp = CompiledMixture::new(p)?;
    let cq = CompiledMixture::new(q)?;
    let integrand = |x: &[f64]| {
        let lp = cp.log_density(x);
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        lp.exp() * (lp - cq.log_density(x))
    };
    let b = quadrature_box(p);
    match p.dim() {
        1 => quadrature::integrate_1d(|x| integrand(&[x]), b[0].0, b[0].1, KL_QUADRATURE_TOLERANCE),
        2 => quadrature::integrate_2d(|x, y| integrand(&[x, y]), b[0], b[1], KL_QUADRATURE_TOLERANCE),
        d => invalid(format!("quadrature KL supports d <= 2, got {d}")),
    }
}
