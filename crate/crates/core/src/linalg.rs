//! Covariance storage with isotropic, diagonal and dense representations.
//!
//! Dense covariances keep a clamped eigendecomposition next to the matrix so
//! that sampling, log-determinants and inverses never refactorize.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};

/// Eigenvalues down to this value are accepted as zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Symmetric positive semi-definite covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `variance * I`.
    Isotropic {
        dim: usize,
        variance: f64,
    },
    Diagonal(DVector<f64>),
    Dense(Box<DenseCovariance>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseCovariance {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl DenseCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }
}

/// Inverse of a covariance in the representation used by density kernels.
#[derive(Debug, Clone)]
pub enum Precision {
    Scalar(f64),
    Diagonal(Vec<f64>),
    /// Row-major `dim x dim`.
    Dense(Vec<f64>),
}

impl Precision {
    /// `out = P * v`.
    #[inline]
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Precision::Scalar(p) => {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = p * x;
                }
            }
            Precision::Diagonal(p) => {
                for ((o, x), p) in out.iter_mut().zip(v).zip(p) {
                    *o = p * x;
                }
            }
            Precision::Dense(m) => {
                let d = v.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let row = &m[i * d..(i + 1) * d];
                    *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
        }
    }

    /// `vᵀ P v`.
    #[inline]
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        match self {
            Precision::Scalar(p) => p * v.iter().map(|x| x * x).sum::<f64>(),
            Precision::Diagonal(p) => v.iter().zip(p).map(|(x, p)| p * x * x).sum(),
            Precision::Dense(m) => {
                let d = v.len();
                let mut acc = 0.0;
                for i in 0..d {
                    let row = &m[i * d..(i + 1) * d];
                    let mv: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                    acc += v[i] * mv;
                }
                acc
            }
        }
    }
}

impl Covariance {
    pub fn zeros(dim: usize) -> Self {
        Covariance::Isotropic { dim, variance: 0.0 }
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance >= -PSD_TOLERANCE) {
            return invalid(format!("isotropic variance must be >= 0, got {variance}"));
        }
        Ok(Covariance::Isotropic {
            dim,
            variance: variance.max(0.0),
        })
    }

    pub fn diagonal(diag: DVector<f64>) -> Result<Self> {
        if let Some(bad) = diag.iter().find(|v| !(v.is_finite() && **v >= -PSD_TOLERANCE)) {
            return invalid(format!("diagonal covariance entry must be >= 0, got {bad}"));
        }
        Ok(Covariance::Diagonal(diag.map(|v| v.max(0.0))))
    }

    /// Validates symmetry and positive semi-definiteness; eigenvalues in
    /// `[-1e-10, 0)` are clamped to zero.
    pub fn dense(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return invalid("covariance matrix must be square");
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return invalid("covariance matrix has non-finite entries");
        }
        let n = matrix.nrows();
        let scale = matrix.amax().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * scale {
                    return invalid(format!(
                        "covariance matrix not symmetric at ({i}, {j}): {} vs {}",
                        matrix[(i, j)],
                        matrix[(j, i)]
                    ));
                }
            }
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
            if min < -PSD_TOLERANCE {
                return invalid(format!(
                    "covariance matrix not positive semi-definite (eigenvalue {min})"
                ));
            }
        }
        Ok(Covariance::Dense(Box::new(DenseCovariance {
            matrix: sym,
            eigenvalues: eig.eigenvalues.map(|v| v.max(0.0)),
            eigenvectors: eig.eigenvectors,
        })))
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Isotropic { dim, .. } => *dim,
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense(m) => m.matrix.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Isotropic { dim, variance } => DMatrix::identity(*dim, *dim) * *variance,
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense(m) => m.matrix.clone(),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = match self {
            Covariance::Isotropic { dim, variance } => vec![*variance; *dim],
            Covariance::Diagonal(d) => d.iter().cloned().collect(),
            Covariance::Dense(m) => m.eigenvalues.iter().cloned().collect(),
        };
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().cloned().unwrap_or(0.0)
    }

    pub fn trace(&self) -> f64 {
        match self {
            Covariance::Isotropic { dim, variance } => *dim as f64 * variance,
            Covariance::Diagonal(d) => d.sum(),
            Covariance::Dense(m) => m.matrix.trace(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Covariance::Isotropic { variance, .. } => *variance == 0.0,
            Covariance::Diagonal(d) => d.iter().all(|v| *v == 0.0),
            Covariance::Dense(m) => m.matrix.iter().all(|v| *v == 0.0),
        }
    }

    /// `self + variance * I`, keeping the cheapest representation.
    pub fn add_isotropic(&self, variance: f64) -> Result<Self> {
        match self {
            Covariance::Isotropic { dim, variance: v } => Covariance::isotropic(*dim, v + variance),
            Covariance::Diagonal(d) => Covariance::diagonal(d.map(|v| v + variance)),
            Covariance::Dense(m) => {
                let n = m.matrix.nrows();
                Covariance::dense(&m.matrix + DMatrix::identity(n, n) * variance)
            }
        }
    }

    pub fn add(&self, other: &Covariance) -> Result<Self> {
        if self.dim() != other.dim() {
            return invalid("covariance dimension mismatch");
        }
        match (self, other) {
            (Covariance::Isotropic { variance, .. }, _) => other.add_isotropic(*variance),
            (_, Covariance::Isotropic { variance, .. }) => self.add_isotropic(*variance),
            (Covariance::Diagonal(a), Covariance::Diagonal(b)) => Covariance::diagonal(a + b),
            _ => Covariance::dense(self.to_matrix() + other.to_matrix()),
        }
    }

    /// `scale² * self`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        let s2 = scale * scale;
        match self {
            Covariance::Isotropic { dim, variance } => Covariance::isotropic(*dim, s2 * variance),
            Covariance::Diagonal(d) => Covariance::diagonal(d * s2),
            Covariance::Dense(m) => Covariance::dense(&m.matrix * s2),
        }
    }

    /// `map * self * mapᵀ`.
    pub fn congruence(&self, map: &DMatrix<f64>) -> Result<Self> {
        if map.ncols() != self.dim() {
            return invalid("linear map does not match covariance dimension");
        }
        let m = map * self.to_matrix() * map.transpose();
        Covariance::dense(m)
    }

    /// Block-diagonal `diag(self, other)`.
    pub fn block_diagonal(&self, other: &Covariance) -> Result<Self> {
        let (a, b) = (self.dim(), other.dim());
        match (self, other) {
            (Covariance::Isotropic { variance: va, .. }, Covariance::Isotropic { variance: vb, .. }) if va == vb => {
                Covariance::isotropic(a + b, *va)
            }
            (Covariance::Dense(_), _) | (_, Covariance::Dense(_)) => {
                let mut m = DMatrix::zeros(a + b, a + b);
                m.view_mut((0, 0), (a, a)).copy_from(&self.to_matrix());
                m.view_mut((a, a), (b, b)).copy_from(&other.to_matrix());
                Covariance::dense(m)
            }
            _ => {
                let mut d = DVector::zeros(a + b);
                d.rows_mut(0, a).copy_from(&self.to_matrix().diagonal());
                d.rows_mut(a, b).copy_from(&other.to_matrix().diagonal());
                Covariance::diagonal(d)
            }
        }
    }

    /// Writes `L z` into `out`, where `L Lᵀ = self`; used for sampling.
    pub fn transform_standard_normal(&self, z: &[f64], out: &mut [f64]) {
        match self {
            Covariance::Isotropic { variance, .. } => {
                let s = variance.sqrt();
                for (o, zi) in out.iter_mut().zip(z) {
                    *o = s * zi;
                }
            }
            Covariance::Diagonal(d) => {
                for ((o, zi), v) in out.iter_mut().zip(z).zip(d.iter()) {
                    *o = v.sqrt() * zi;
                }
            }
            Covariance::Dense(m) => {
                let n = z.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += m.eigenvectors[(i, k)] * m.eigenvalues[k].sqrt() * z[k];
                    }
                    *o = acc;
                }
            }
        }
    }

    /// Inverse and log-determinant; fails for singular covariances.
    pub fn precision(&self) -> Result<(Precision, f64)> {
        match self {
            Covariance::Isotropic { dim, variance } => {
                if *variance <= 0.0 {
                    return invalid("singular covariance (zero variance)");
                }
                Ok((Precision::Scalar(1.0 / variance), *dim as f64 * variance.ln()))
            }
            Covariance::Diagonal(d) => {
                if d.iter().any(|v| *v <= 0.0) {
                    return invalid("singular diagonal covariance");
                }
                Ok((
                    Precision::Diagonal(d.iter().map(|v| 1.0 / v).collect()),
                    d.iter().map(|v| v.ln()).sum(),
                ))
            }
            Covariance::Dense(m) => {
                if m.eigenvalues.iter().any(|v| *v <= 0.0) {
                    return invalid("singular dense covariance");
                }
                let inv_diag = DMatrix::from_diagonal(&m.eigenvalues.map(|v| 1.0 / v));
                let inv = &m.eigenvectors * inv_diag * m.eigenvectors.transpose();
                let n = inv.nrows();
                let mut row_major = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        // symmetrize away eigensolver round-off
                        row_major.push(0.5 * (inv[(i, j)] + inv[(j, i)]));
                    }
                }
                Ok((Precision::Dense(row_major), m.eigenvalues.iter().map(|v| v.ln()).sum()))
            }
        }
    }
}
