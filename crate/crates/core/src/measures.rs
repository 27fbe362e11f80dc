//! Data measures: weighted point clouds and Gaussian mixtures.
//!
//! Every in-scope data law is a (possibly degenerate) Gaussian mixture; a
//! point cloud is the special case with zero covariances. Measures are
//! immutable after construction.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SgmError};
use crate::linalg::Covariance;
use crate::rng;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

fn validate_weights(weights: &[f64], expected_len: usize) -> Result<()> {
    if weights.len() != expected_len {
        return invalid(format!("expected {expected_len} weights, got {}", weights.len()));
    }
    if weights.is_empty() {
        return invalid("measure needs at least one atom or component");
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return invalid(format!("weights must be nonnegative, got {w}"));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return invalid(format!("weights must sum to 1, got {sum}"));
    }
    Ok(())
}

fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Picks an index from `weights` (which sum to one) with one uniform draw.
fn pick_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // round-off in the cumulative sum: fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Weighted finite point set.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return invalid("point cloud must contain at least one point"),
        };
        if dim == 0 {
            return invalid("points must have dimension >= 1");
        }
        if points.iter().any(|p| p.len() != dim) {
            return invalid("all points must share the same dimension");
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return invalid("points must be finite");
        }
        validate_weights(&weights, points.len())?;
        Ok(Self { dim, points, weights })
    }

    pub fn uniform(points: Vec<DVector<f64>>) -> Result<Self> {
        let w = uniform_weights(points.len());
        Self::new(points, w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max_i ‖x_i‖`.
    pub fn bounding_radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn to_mixture(&self) -> GaussianMixture {
        GaussianMixture {
            dim: self.dim,
            components: self
                .points
                .iter()
                .zip(&self.weights)
                .map(|(p, w)| MixtureComponent {
                    mean: p.clone(),
                    covariance: Covariance::zeros(self.dim),
                    weight: *w,
                })
                .collect(),
        }
    }
}

/// `n` points equally spaced on the circle of the given radius in the plane,
/// at angles `2πk/n`, with uniform weights.
pub fn make_circle_points(n: usize, radius: f64) -> Result<PointCloud> {
    if n == 0 {
        return invalid("circle needs n >= 1 points");
    }
    if !(radius.is_finite() && radius > 0.0) {
        return invalid(format!("circle radius must be positive, got {radius}"));
    }
    let points = (0..n)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n as f64;
            DVector::from_vec(vec![radius * a.cos(), radius * a.sin()])
        })
        .collect();
    PointCloud::uniform(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub mean: DVector<f64>,
    pub covariance: Covariance,
    pub weight: f64,
}

/// Weighted Gaussian components; zero covariances are allowed (Dirac atoms).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        let dim = match components.first() {
            Some(c) => c.mean.len(),
            None => return invalid("mixture must contain at least one component"),
        };
        if dim == 0 {
            return invalid("mixture dimension must be >= 1");
        }
        for c in &components {
            if c.mean.len() != dim || c.covariance.dim() != dim {
                return invalid("all mixture components must share dimension");
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return invalid("component means must be finite");
            }
        }
        let w: Vec<f64> = components.iter().map(|c| c.weight).collect();
        validate_weights(&w, components.len())?;
        Ok(Self { dim, components })
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: DVector<f64>, covariance: Covariance) -> Result<Self> {
        Self::new(vec![MixtureComponent {
            mean,
            covariance,
            weight: 1.0,
        }])
    }

    /// `N(0, I)` in `dim` dimensions.
    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(DVector::zeros(dim), Covariance::Isotropic { dim, variance: 1.0 })
            .expect("standard normal is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// True when every covariance is strictly positive definite.
    pub fn is_nondegenerate(&self) -> bool {
        self.components.iter().all(|c| c.covariance.min_eigenvalue() > 0.0)
    }
}

/// Any in-scope data measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureDoc", into = "MeasureDoc")]
pub enum Measure {
    Points(PointCloud),
    Mixture(GaussianMixture),
}

impl From<PointCloud> for Measure {
    fn from(p: PointCloud) -> Self {
        Measure::Points(p)
    }
}

impl From<GaussianMixture> for Measure {
    fn from(m: GaussianMixture) -> Self {
        Measure::Mixture(m)
    }
}

impl Measure {
    pub fn dim(&self) -> usize {
        match self {
            Measure::Points(p) => p.dim(),
            Measure::Mixture(m) => m.dim(),
        }
    }

    pub fn to_mixture(&self) -> GaussianMixture {
        match self {
            Measure::Points(p) => p.to_mixture(),
            Measure::Mixture(m) => m.clone(),
        }
    }

    /// True for point clouds and mixtures containing a singular component;
    /// such measures have no density at t = 0.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Measure::Points(_) => true,
            Measure::Mixture(m) => !m.is_nondegenerate(),
        }
    }

    pub fn as_point_cloud(&self) -> Option<&PointCloud> {
        match self {
            Measure::Points(p) => Some(p),
            Measure::Mixture(_) => None,
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        match self {
            Measure::Points(p) => {
                for (x, w) in p.points.iter().zip(&p.weights) {
                    m += x * *w;
                }
            }
            Measure::Mixture(g) => {
                for c in &g.components {
                    m += &c.mean * c.weight;
                }
            }
        }
        m
    }

    /// Covariance matrix of the measure (law of total covariance for mixtures).
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        match self {
            Measure::Points(p) => {
                for (x, w) in p.points.iter().zip(&p.weights) {
                    let r = x - &mean;
                    cov += &r * r.transpose() * *w;
                }
            }
            Measure::Mixture(g) => {
                for c in &g.components {
                    let r = &c.mean - &mean;
                    cov += (c.covariance.to_matrix() + &r * r.transpose()) * c.weight;
                }
            }
        }
        (&cov + cov.transpose()) * 0.5
    }

    /// Draws one sample into `out` using `rng`: one uniform for the atom or
    /// component, then `dim` standard normals for mixtures.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Measure::Points(p) => {
                let k = pick_index(rng, &p.weights);
                out.copy_from_slice(p.points[k].as_slice());
            }
            Measure::Mixture(g) => {
                let weights: Vec<f64> = g.components.iter().map(|c| c.weight).collect();
                let k = pick_index(rng, &weights);
                let c = &g.components[k];
                let mut z = vec![0.0; g.dim];
                rng::fill_normals(rng, &mut z);
                c.covariance.transform_standard_normal(&z, out);
                for (o, m) in out.iter_mut().zip(c.mean.iter()) {
                    *o += m;
                }
            }
        }
    }
}

/// `n` i.i.d. draws; draw `i` uses the random stream `(seed, i)`, so the
/// output is bit-identical for identical `(measure, n, seed)`.
pub fn sample_measure(measure: &Measure, n: usize, seed: u64) -> Vec<DVector<f64>> {
    let d = measure.dim();
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let mut out = vec![0.0; d];
            measure.sample_into(&mut rng, &mut out);
            DVector::from_vec(out)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// JSON document form
// ---------------------------------------------------------------------------

/// Covariance as written in measure documents: a scalar variance, a diagonal,
/// or a full matrix (list of rows).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CovarianceDoc {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ComponentDoc {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<CovarianceDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum EntryDoc {
    Point(Vec<f64>),
    Component(ComponentDoc),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Points,
    Mixture,
    /// Generator shorthand: `n` equally spaced points on a circle.
    Circle,
}

/// `{"kind": "points"|"mixture", "dim": d, "entries": [...], "weights": [...]}`;
/// weights default to uniform. `{"kind": "circle", "n": 9, "radius": 1}` is
/// accepted as input and expands to a point cloud.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MeasureDoc {
    pub kind: MeasureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<EntryDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

fn covariance_from_doc(doc: Option<&CovarianceDoc>, dim: usize) -> Result<Covariance> {
    match doc {
        None => Ok(Covariance::zeros(dim)),
        Some(CovarianceDoc::Scalar(v)) => Covariance::isotropic(dim, *v),
        Some(CovarianceDoc::Diagonal(d)) => {
            if d.len() != dim {
                return invalid(format!("diagonal covariance has {} entries, dim is {dim}", d.len()));
            }
            Covariance::diagonal(DVector::from_column_slice(d))
        }
        Some(CovarianceDoc::Full(rows)) => {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return invalid(format!("full covariance must be {dim}x{dim}"));
            }
            let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
            Covariance::dense(DMatrix::from_row_slice(dim, dim, &flat))
        }
    }
}

fn covariance_to_doc(c: &Covariance) -> Option<CovarianceDoc> {
    match c {
        Covariance::Isotropic { variance, .. } if *variance == 0.0 => None,
        Covariance::Isotropic { variance, .. } => Some(CovarianceDoc::Scalar(*variance)),
        Covariance::Diagonal(d) => Some(CovarianceDoc::Diagonal(d.iter().cloned().collect())),
        Covariance::Dense(m) => {
            let m = m.matrix();
            Some(CovarianceDoc::Full(
                (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect(),
            ))
        }
    }
}

impl TryFrom<MeasureDoc> for Measure {
    type Error = SgmError;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        match doc.kind {
            MeasureKind::Circle => {
                let n = doc
                    .n
                    .ok_or_else(|| SgmError::InvalidArgument("circle measure needs `n`".into()))?;
                Ok(make_circle_points(n, doc.radius.unwrap_or(1.0))?.into())
            }
            MeasureKind::Points => {
                let mut points = Vec::with_capacity(doc.entries.len());
                for e in doc.entries {
                    match e {
                        EntryDoc::Point(p) => points.push(DVector::from_vec(p)),
                        EntryDoc::Component(_) => return invalid("point measure entries must be coordinate lists"),
                    }
                }
                if let (Some(d), Some(p)) = (doc.dim, points.first()) {
                    if p.len() != d {
                        return invalid(format!("declared dim {d} but points have dim {}", p.len()));
                    }
                }
                let weights = doc.weights.unwrap_or_else(|| uniform_weights(points.len()));
                Ok(PointCloud::new(points, weights)?.into())
            }
            MeasureKind::Mixture => {
                let n = doc.entries.len();
                let weights = doc.weights.unwrap_or_else(|| uniform_weights(n));
                if weights.len() != n {
                    return invalid(format!("expected {n} weights, got {}", weights.len()));
                }
                let mut comps = Vec::with_capacity(n);
                for (e, w) in doc.entries.into_iter().zip(weights) {
                    let (mean, cov) = match e {
                        EntryDoc::Point(p) => (p, None),
                        EntryDoc::Component(c) => (c.mean, c.cov),
                    };
                    let dim = mean.len();
                    if let Some(d) = doc.dim {
                        if d != dim {
                            return invalid(format!("declared dim {d} but component has dim {dim}"));
                        }
                    }
                    comps.push(MixtureComponent {
                        covariance: covariance_from_doc(cov.as_ref(), dim)?,
                        mean: DVector::from_vec(mean),
                        weight: w,
                    });
                }
                Ok(GaussianMixture::new(comps)?.into())
            }
        }
    }
}

impl From<Measure> for MeasureDoc {
    fn from(m: Measure) -> Self {
        match m {
            Measure::Points(p) => MeasureDoc {
                kind: MeasureKind::Points,
                dim: Some(p.dim),
                entries: p
                    .points
                    .iter()
                    .map(|x| EntryDoc::Point(x.iter().cloned().collect()))
                    .collect(),
                weights: Some(p.weights),
                n: None,
                radius: None,
            },
            Measure::Mixture(g) => MeasureDoc {
                kind: MeasureKind::Mixture,
                dim: Some(g.dim),
                entries: g
                    .components
                    .iter()
                    .map(|c| {
                        EntryDoc::Component(ComponentDoc {
                            mean: c.mean.iter().cloned().collect(),
                            cov: covariance_to_doc(&c.covariance),
                        })
                    })
                    .collect(),
                weights: Some(g.components.iter().map(|c| c.weight).collect()),
                n: None,
                radius: None,
            },
        }
    }
}

impl Measure {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
