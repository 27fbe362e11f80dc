//! Forward SDE families and their Gaussian transition kernels.
//!
//! All three families are linear with additive noise, so the law of `X_t`
//! given `X_0 = z` is `N(M_t z, Σ_t)` and the marginal of a Gaussian mixture
//! stays a Gaussian mixture with one component per input component.
//!
//! * Brownian: `dX = dW`; `M_t = I`, `Σ_t = t I`.
//! * Ornstein–Uhlenbeck: `dX = -X/2 dt + dW`; `M_t = e^{-t/2} I`,
//!   `Σ_t = (1 - e^{-t}) I`.
//! * Critically damped Langevin (CLD): state `(x, v)` with
//!   `dx = v dt`, `dv = (-x - 2v) dt + 2 dW`, velocity initialised `N(0, I)`.
//!
//! State vectors for CLD are laid out as `[x_1..x_d, v_1..v_d]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Covariance;
use crate::measures::{GaussianMixture, Measure, MixtureComponent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdeKind {
    Brownian,
    #[serde(rename = "ou")]
    OrnsteinUhlenbeck,
    Cld,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeSpec {
    pub kind: SdeKind,
    pub data_dim: usize,
    pub terminal_time: f64,
}

/// Scenario-file form: `{"sde": "brownian"|"ou"|"cld", "T": ...}`; the data
/// dimension comes from the data measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub sde: SdeKind,
    #[serde(rename = "T")]
    pub terminal_time: f64,
}

impl SdeConfig {
    pub fn with_dim(&self, data_dim: usize) -> Result<SdeSpec> {
        SdeSpec::new(self.sde, data_dim, self.terminal_time)
    }
}

impl SdeSpec {
    pub fn new(kind: SdeKind, data_dim: usize, terminal_time: f64) -> Result<Self> {
        if data_dim == 0 {
            return invalid("data dimension must be >= 1");
        }
        if !(terminal_time.is_finite() && terminal_time > 0.0) {
            return invalid(format!("terminal time must be positive, got {terminal_time}"));
        }
        Ok(Self {
            kind,
            data_dim,
            terminal_time,
        })
    }

    pub fn brownian(data_dim: usize, terminal_time: f64) -> Result<Self> {
        Self::new(SdeKind::Brownian, data_dim, terminal_time)
    }

    pub fn ou(data_dim: usize, terminal_time: f64) -> Result<Self> {
        Self::new(SdeKind::OrnsteinUhlenbeck, data_dim, terminal_time)
    }

    pub fn cld(data_dim: usize, terminal_time: f64) -> Result<Self> {
        Self::new(SdeKind::Cld, data_dim, terminal_time)
    }

    pub fn config(&self) -> SdeConfig {
        SdeConfig {
            sde: self.kind,
            terminal_time: self.terminal_time,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            SdeKind::Cld => 2 * self.data_dim,
            _ => self.data_dim,
        }
    }

    /// Forward drift `β(x)` written into `out`.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            SdeKind::Brownian => out.iter_mut().for_each(|o| *o = 0.0),
            SdeKind::OrnsteinUhlenbeck => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -0.5 * xi;
                }
            }
            SdeKind::Cld => {
                let d = self.data_dim;
                for i in 0..d {
                    out[i] = x[d + i];
                    out[d + i] = -x[i] - 2.0 * x[d + i];
                }
            }
        }
    }

    /// Diagonal of the (diagonal) diffusion matrix `σ`.
    #[inline]
    pub fn noise_scale(&self, coordinate: usize) -> f64 {
        match self.kind {
            SdeKind::Cld if coordinate < self.data_dim => 0.0,
            SdeKind::Cld => 2.0,
            _ => 1.0,
        }
    }

    pub fn noise_scales(&self) -> Vec<f64> {
        (0..self.state_dim()).map(|i| self.noise_scale(i)).collect()
    }

    /// Scalar noise amplitude on the driven coordinates (1 for Brownian/OU,
    /// 2 for CLD velocities).
    pub fn sigma(&self) -> f64 {
        match self.kind {
            SdeKind::Cld => 2.0,
            _ => 1.0,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t.is_finite() && t > 0.0) {
            return invalid(format!("time must be positive, got {t}"));
        }
        if t > self.terminal_time * (1.0 + 1e-12) {
            return invalid(format!("time {t} exceeds terminal time {}", self.terminal_time));
        }
        Ok(())
    }
}

/// Linear map `z ↦ M_t z` of a transition kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanMap {
    Scalar(f64),
    /// CLD: the same 2x2 block acts on every `(x_i, v_i)` pair.
    Block {
        block: [[f64; 2]; 2],
        data_dim: usize,
    },
}

impl MeanMap {
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        match self {
            MeanMap::Scalar(a) => z * *a,
            MeanMap::Block { block, data_dim } => {
                let d = *data_dim;
                let mut out = DVector::zeros(2 * d);
                for i in 0..d {
                    let (x, v) = (z[i], z[d + i]);
                    out[i] = block[0][0] * x + block[0][1] * v;
                    out[d + i] = block[1][0] * x + block[1][1] * v;
                }
                out
            }
        }
    }

    pub fn to_matrix(&self, dim: usize) -> DMatrix<f64> {
        match self {
            MeanMap::Scalar(a) => DMatrix::identity(dim, dim) * *a,
            MeanMap::Block { block, data_dim } => block_kron(block, *data_dim),
        }
    }
}

/// `block ⊗ I_d` in the `[x.., v..]` layout.
fn block_kron(block: &[[f64; 2]; 2], d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        m[(i, i)] = block[0][0];
        m[(i, d + i)] = block[0][1];
        m[(d + i, i)] = block[1][0];
        m[(d + i, d + i)] = block[1][1];
    }
    m
}

/// Gaussian law `N(M_t z, Σ_t)` of `X_t` given `X_0 = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    pub t: f64,
    pub mean_map: MeanMap,
    pub covariance: Covariance,
}

/// CLD mean block `exp(A t)` with `A = [[0, 1], [-1, -2]]`. `A + I` is
/// nilpotent, so `exp(At) = e^{-t} (I + t (A + I))`.
pub fn cld_mean_block(t: f64) -> [[f64; 2]; 2] {
    let e = (-t).exp();
    [[e * (1.0 + t), e * t], [-e * t, e * (1.0 - t)]]
}

/// CLD covariance block `∫_0^t exp(As) diag(0, 4) exp(Aᵀs) ds`.
pub fn cld_covariance_block(t: f64) -> [[f64; 2]; 2] {
    let e2 = (-2.0 * t).exp();
    // 1 - e^{-2t}(...) loses digits for small t; use the series there.
    let (xx, vv) = if t < 1e-3 {
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        let t5 = t4 * t;
        (
            4.0 / 3.0 * t3 - 2.0 * t4 + 1.6 * t5,
            4.0 * t - 8.0 * t2 + 28.0 / 3.0 * t3 - 22.0 / 3.0 * t4,
        )
    } else {
        (
            1.0 - e2 * (2.0 * t * t + 2.0 * t + 1.0),
            1.0 - e2 * (2.0 * t * t - 2.0 * t + 1.0),
        )
    };
    let xv = 2.0 * t * t * e2;
    [[xx, xv], [xv, vv]]
}

pub fn transition_kernel(spec: &SdeSpec, t: f64) -> Result<TransitionKernel> {
    spec.check_time(t)?;
    let d = spec.data_dim;
    Ok(match spec.kind {
        SdeKind::Brownian => TransitionKernel {
            t,
            mean_map: MeanMap::Scalar(1.0),
            covariance: Covariance::isotropic(d, t)?,
        },
        // Unit-rate OU with drift -x/2: m_t = e^{-t/2} z, Σ_t = (1 - e^{-t}) I.
        SdeKind::OrnsteinUhlenbeck => TransitionKernel {
            t,
            mean_map: MeanMap::Scalar((-0.5 * t).exp()),
            covariance: Covariance::isotropic(d, -(-t).exp_m1())?,
        },
        SdeKind::Cld => TransitionKernel {
            t,
            mean_map: MeanMap::Block {
                block: cld_mean_block(t),
                data_dim: d,
            },
            covariance: Covariance::dense(block_kron(&cld_covariance_block(t), d))?,
        },
    })
}

/// Lifts a data-space measure to the CLD state space with an independent
/// `N(0, I)` velocity block.
pub fn augment_with_velocity(measure: &Measure) -> Result<GaussianMixture> {
    let g = measure.to_mixture();
    let d = g.dim();
    let velocity = Covariance::isotropic(d, 1.0)?;
    let comps = g
        .components()
        .iter()
        .map(|c| {
            let mut mean = DVector::zeros(2 * d);
            mean.rows_mut(0, d).copy_from(&c.mean);
            Ok(MixtureComponent {
                mean,
                covariance: c.covariance.block_diagonal(&velocity)?,
                weight: c.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(comps)
}

/// Lifts `measure` into the state space of `spec` (identity except for CLD
/// data-space measures).
pub fn to_state_space(spec: &SdeSpec, measure: &Measure) -> Result<GaussianMixture> {
    let dim = measure.dim();
    if dim == spec.state_dim() {
        return Ok(measure.to_mixture());
    }
    if spec.kind == SdeKind::Cld && dim == spec.data_dim {
        return augment_with_velocity(measure);
    }
    invalid(format!(
        "measure dimension {dim} does not match SDE data dimension {}",
        spec.data_dim
    ))
}

/// Marginal of `X_t` when `X_0 ~ measure`: one output component per input
/// component with mean `M_t μ` and covariance `M_t C M_tᵀ + Σ_t`.
///
/// For CLD, data-space measures are first augmented with `N(0, I)`
/// velocities; measures already in the state space are pushed as given.
pub fn pushforward(spec: &SdeSpec, measure: &Measure, t: f64) -> Result<GaussianMixture> {
    let kernel = transition_kernel(spec, t)?;
    let mixture = to_state_space(spec, measure)?;
    pushforward_with_kernel(&kernel, &mixture)
}

pub fn pushforward_with_kernel(kernel: &TransitionKernel, mixture: &GaussianMixture) -> Result<GaussianMixture> {
    let dim = mixture.dim();
    if dim != kernel.covariance.dim() {
        return invalid("mixture dimension does not match the kernel");
    }
    let map_matrix = match &kernel.mean_map {
        MeanMap::Scalar(_) => None,
        m @ MeanMap::Block { .. } => Some(m.to_matrix(dim)),
    };
    let comps = mixture
        .components()
        .iter()
        .map(|c| {
            let pushed = match (&kernel.mean_map, &map_matrix) {
                (MeanMap::Scalar(a), _) => c.covariance.scaled(*a)?,
                (_, Some(m)) => c.covariance.congruence(m)?,
                _ => unreachable!(),
            };
            Ok(MixtureComponent {
                mean: kernel.mean_map.apply(&c.mean),
                covariance: pushed.add(&kernel.covariance)?,
                weight: c.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(comps)
}
