//! Exact marginal log-densities and scores, drift perturbations and the
//! reverse-time drift.
//!
//! For a mixture marginal `p_t = Σ_k w_k N(μ_k, C_k)` the score is evaluated
//! in posterior-mean form
//!
//! ```text
//! ∇log p_t(x) = Σ_k r_k(x) C_k⁻¹ (μ_k − x),   r_k = softmax_k(log w_k + log N(x; μ_k, C_k))
//! ```
//!
//! which for atom data (`C_k = Σ_t` for every k) is
//! `Σ_t⁻¹ (E[m_t(X_0) | X_t = x] − x)`. Responsibilities are computed in log
//! space, so at tiny `t` they collapse to the nearest component instead of
//! underflowing to 0/0.

use std::f64::consts::PI;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SgmError};
use crate::linalg::Precision;
use crate::measures::{GaussianMixture, Measure};
use crate::sde::{self, SdeSpec};

#[derive(Debug, Clone)]
struct CompiledComponent {
    mean: Vec<f64>,
    precision: Precision,
    /// `log w − ½ log det(2πC)`.
    log_norm: f64,
}

/// A Gaussian mixture with factorized precisions, ready for repeated
/// pointwise evaluation.
#[derive(Debug, Clone)]
pub struct CompiledMixture {
    dim: usize,
    comps: Vec<CompiledComponent>,
}

/// Reusable buffers for [`CompiledMixture::score_into`].
#[derive(Debug, Clone, Default)]
pub struct Scratch {
    terms: Vec<f64>,
    diff: Vec<f64>,
    pdiff: Vec<f64>,
}

impl Scratch {
    fn prepare(&mut self, k: usize, d: usize) {
        self.terms.resize(k, 0.0);
        self.diff.resize(d, 0.0);
        self.pdiff.resize(d, 0.0);
    }
}

impl CompiledMixture {
    /// Fails with invalid-argument when a component covariance is singular.
    pub fn new(mixture: &GaussianMixture) -> Result<Self> {
        let dim = mixture.dim();
        let half_log_2pi = 0.5 * dim as f64 * (2.0 * PI).ln();
        let mut comps = Vec::with_capacity(mixture.components().len());
        for c in mixture.components() {
            if c.weight == 0.0 {
                continue;
            }
            let (precision, log_det) = c.covariance.precision().map_err(|_| {
                SgmError::InvalidArgument("mixture has a singular component covariance; density undefined".into())
            })?;
            comps.push(CompiledComponent {
                mean: c.mean.iter().cloned().collect(),
                precision,
                log_norm: c.weight.ln() - half_log_2pi - 0.5 * log_det,
            });
        }
        Ok(Self { dim, comps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    #[inline]
    fn fill_terms(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (k, c) in self.comps.iter().enumerate() {
            for ((d, xi), mi) in scratch.diff.iter_mut().zip(x).zip(&c.mean) {
                *d = xi - mi;
            }
            let t = c.log_norm - 0.5 * c.precision.quadratic_form(&scratch.diff);
            scratch.terms[k] = t;
            if t > max {
                max = t;
            }
        }
        max
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut scratch = Scratch::default();
        self.log_density_with(x, &mut scratch)
    }

    pub fn log_density_with(&self, x: &[f64], scratch: &mut Scratch) -> f64 {
        scratch.prepare(self.comps.len(), self.dim);
        let max = self.fill_terms(x, scratch);
        if !max.is_finite() {
            return max;
        }
        max + scratch.terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::default();
        scratch.prepare(self.comps.len(), self.dim);
        let max = self.fill_terms(x, &mut scratch);
        if !max.is_finite() {
            let mut r = vec![0.0; self.comps.len()];
            r[self.nearest_component(x)] = 1.0;
            return r;
        }
        let mut r: Vec<f64> = scratch.terms.iter().map(|t| (t - max).exp()).collect();
        let sum: f64 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= sum);
        r
    }

    fn nearest_component(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.comps.iter().enumerate() {
            let d2: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best.0
    }

    /// `∇log p(x)` written into `out`.
    pub fn score_into(&self, x: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        scratch.prepare(self.comps.len(), self.dim);
        out.iter_mut().for_each(|o| *o = 0.0);
        let max = self.fill_terms(x, scratch);
        if !max.is_finite() {
            // every component underflowed: the limit is the nearest
            // component's single-Gaussian score
            let c = &self.comps[self.nearest_component(x)];
            for ((d, xi), mi) in scratch.diff.iter_mut().zip(x).zip(&c.mean) {
                *d = mi - xi;
            }
            c.precision.apply(&scratch.diff, out);
            return;
        }
        let mut total = 0.0;
        for t in scratch.terms.iter_mut() {
            *t = (*t - max).exp();
            total += *t;
        }
        for (k, c) in self.comps.iter().enumerate() {
            let r = scratch.terms[k] / total;
            if r == 0.0 {
                continue;
            }
            for ((d, xi), mi) in scratch.diff.iter_mut().zip(x).zip(&c.mean) {
                *d = mi - xi;
            }
            c.precision.apply(&scratch.diff, &mut scratch.pdiff);
            for (o, p) in out.iter_mut().zip(&scratch.pdiff) {
                *o += r * p;
            }
        }
    }

    pub fn score(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let mut scratch = Scratch::default();
        self.score_into(x, out.as_mut_slice(), &mut scratch);
        out
    }
}

fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return invalid(format!("point has dimension {}, expected {expected}", x.len()));
    }
    Ok(())
}

/// `log Σ_k w_k N(x; μ_k, C_k)` with log-sum-exp stabilization.
pub fn log_density(mixture: &GaussianMixture, x: &[f64]) -> Result<f64> {
    check_dim(mixture.dim(), x)?;
    Ok(CompiledMixture::new(mixture)?.log_density(x))
}

/// Compiled marginal `p_t` of `spec` started in `measure`. At `t = 0` this is
/// the data law itself, which only has a density when no component is
/// degenerate.
pub fn marginal_at(spec: &SdeSpec, measure: &Measure, t: f64) -> Result<CompiledMixture> {
    if t < 0.0 || !t.is_finite() {
        return invalid(format!("time must be >= 0, got {t}"));
    }
    if t == 0.0 {
        if measure.is_degenerate() {
            return Err(SgmError::Domain(
                "score undefined at t = 0 for degenerate data (drift explosion)".into(),
            ));
        }
        return CompiledMixture::new(&sde::to_state_space(spec, measure)?);
    }
    CompiledMixture::new(&sde::pushforward(spec, measure, t)?)
}

/// `∇log p_t(x)` for the forward marginal of `spec` started in `measure`.
pub fn score(spec: &SdeSpec, measure: &Measure, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    check_dim(spec.state_dim(), x)?;
    Ok(marginal_at(spec, measure, t)?.score(x))
}

/// Score of atom data in the explicit form `Σ_t⁻¹ (E[m_t(X_0) | X_t = x] − x)`.
/// Used to cross-check the general mixture route.
pub fn score_posterior_mean(spec: &SdeSpec, measure: &Measure, t: f64, x: &[f64]) -> Result<DVector<f64>> {
    let cloud = match measure.as_point_cloud() {
        Some(c) if spec.state_dim() == c.dim() => c,
        _ => return invalid("posterior-mean form needs a point cloud in state space"),
    };
    check_dim(spec.state_dim(), x)?;
    let kernel = sde::transition_kernel(spec, t)?;
    let marginal = CompiledMixture::new(&sde::pushforward(spec, measure, t)?)?;
    let r = marginal.responsibilities(x);
    let mut posterior_mean = DVector::zeros(x.len());
    for (p, rk) in cloud.points().iter().zip(&r) {
        posterior_mean += kernel.mean_map.apply(p) * *rk;
    }
    let residual = posterior_mean - DVector::from_column_slice(x);
    let (precision, _) = kernel.covariance.precision()?;
    let mut out = DVector::zeros(x.len());
    precision.apply(residual.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// Additive error `e(x, t)` in `s(x, t) = ∇log π_t(x) + e(x, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftPerturbation {
    #[default]
    None,
    /// `e ≡ vector`.
    Constant { vector: Vec<f64> },
    /// `e(x) = scale · x`.
    Radial { scale: f64 },
    /// `s` is the exact score of another data measure pushed through the same
    /// SDE, i.e. `e = ∇log π'_t − ∇log π_t`.
    ScoreOf { measure: Measure },
}

impl DriftPerturbation {
    pub fn constant(vector: Vec<f64>) -> Self {
        DriftPerturbation::Constant { vector }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, DriftPerturbation::None)
    }

    pub fn validate(&self, spec: &SdeSpec) -> Result<()> {
        match self {
            DriftPerturbation::Constant { vector } if vector.len() != spec.state_dim() => invalid(format!(
                "constant perturbation has dimension {}, state dimension is {}",
                vector.len(),
                spec.state_dim()
            )),
            DriftPerturbation::ScoreOf { measure } if sde::to_state_space(spec, measure).is_err() => {
                invalid("perturbation measure does not match the SDE dimension")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum CompiledPerturbation {
    None,
    Constant(Vec<f64>),
    Radial(f64),
    Score(CompiledMixture),
}

/// Data measure plus perturbation, ready to be frozen at any data time.
#[derive(Debug, Clone)]
pub struct ScoreModel {
    spec: SdeSpec,
    data: Measure,
    perturbation: DriftPerturbation,
}

impl ScoreModel {
    pub fn new(spec: &SdeSpec, data: &Measure, perturbation: &DriftPerturbation) -> Result<Self> {
        sde::to_state_space(spec, data)?;
        perturbation.validate(spec)?;
        Ok(Self {
            spec: *spec,
            data: data.clone(),
            perturbation: perturbation.clone(),
        })
    }

    pub fn spec(&self) -> &SdeSpec {
        &self.spec
    }

    /// Freezes the reference score and the perturbation at data time `t`.
    pub fn at(&self, t: f64) -> Result<DriftField> {
        let reference = marginal_at(&self.spec, &self.data, t)?;
        let perturbation = match &self.perturbation {
            DriftPerturbation::None => CompiledPerturbation::None,
            DriftPerturbation::Constant { vector } => CompiledPerturbation::Constant(vector.clone()),
            DriftPerturbation::Radial { scale } => CompiledPerturbation::Radial(*scale),
            DriftPerturbation::ScoreOf { measure } => CompiledPerturbation::Score(marginal_at(&self.spec, measure, t)?),
        };
        Ok(DriftField {
            spec: self.spec,
            reference,
            perturbation,
        })
    }
}

/// Reference score and perturbation at one fixed data time.
#[derive(Debug, Clone)]
pub struct DriftField {
    spec: SdeSpec,
    reference: CompiledMixture,
    perturbation: CompiledPerturbation,
}

impl DriftField {
    pub fn reference(&self) -> &CompiledMixture {
        &self.reference
    }

    /// Writes `e(x)` given the already evaluated reference score.
    #[inline]
    pub fn error_into(&self, x: &[f64], reference_score: &[f64], out: &mut [f64], scratch: &mut Scratch) {
        match &self.perturbation {
            CompiledPerturbation::None => out.iter_mut().for_each(|o| *o = 0.0),
            CompiledPerturbation::Constant(v) => out.copy_from_slice(v),
            CompiledPerturbation::Radial(s) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = s * xi;
                }
            }
            CompiledPerturbation::Score(alt) => {
                alt.score_into(x, out, scratch);
                for (o, r) in out.iter_mut().zip(reference_score) {
                    *o -= r;
                }
            }
        }
    }

    /// Reference score and error at `x`.
    #[inline]
    pub fn score_and_error(&self, x: &[f64], score_out: &mut [f64], error_out: &mut [f64], scratch: &mut Scratch) {
        self.reference.score_into(x, score_out, scratch);
        self.error_into(x, score_out, error_out, scratch);
    }

    /// Reverse drift `−β(y) + σσᵀ (∇log π(y) + e(y))`; the reference score is
    /// left in `score_out` and the error in `error_out`.
    #[inline]
    pub fn reverse_drift_into(
        &self,
        y: &[f64],
        drift_out: &mut [f64],
        score_out: &mut [f64],
        error_out: &mut [f64],
        scratch: &mut Scratch,
    ) {
        self.score_and_error(y, score_out, error_out, scratch);
        self.spec.drift_into(y, drift_out);
        for (i, d) in drift_out.iter_mut().enumerate() {
            let s = self.spec.noise_scale(i);
            *d = -*d + s * s * (score_out[i] + error_out[i]);
        }
    }
}

/// Drift of the (perturbed) reverse SDE at reverse time `t_reverse`, i.e.
/// with scores taken at data time `T − t_reverse`.
pub fn reverse_drift(
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
    t_reverse: f64,
    y: &[f64],
) -> Result<DVector<f64>> {
    if !(t_reverse >= 0.0 && t_reverse < spec.terminal_time) {
        return invalid(format!(
            "reverse time must lie in [0, {}), got {t_reverse}",
            spec.terminal_time
        ));
    }
    check_dim(spec.state_dim(), y)?;
    let field = ScoreModel::new(spec, measure, perturbation)?.at(spec.terminal_time - t_reverse)?;
    let n = spec.state_dim();
    let (mut drift, mut s, mut e) = (DVector::zeros(n), vec![0.0; n], vec![0.0; n]);
    field.reverse_drift_into(y, drift.as_mut_slice(), &mut s, &mut e, &mut Scratch::default());
    Ok(drift)
}
