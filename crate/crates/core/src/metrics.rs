//! Support and distribution diagnostics: nearest-training-point distances,
//! Gaussian-kernel density fields, the small-time score explosion and the
//! De Bruijn identity.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{sample_measure, GaussianMixture, Measure, PointCloud};
use crate::quadrature;
use crate::rng;
use crate::score::{CompiledMixture, Scratch};
use crate::sde::{self, SdeSpec};

/// Training sets above this size are searched through a k-d tree.
pub const BRUTE_FORCE_LIMIT: usize = 10_000;

/// Default kernel sharpness `β` in `k(x, y) = exp(−β‖x − y‖²)`.
pub const DEFAULT_KDE_BETA: f64 = 1000.0;

/// Kernel contributions below `exp(−KDE_CUTOFF)` are skipped.
const KDE_CUTOFF: f64 = 70.0;

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-neighbour search over a fixed point set.
pub struct KdTree<'a> {
    points: &'a [DVector<f64>],
    dim: usize,
    nodes: Vec<KdNode>,
}

struct KdNode {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [DVector<f64>]) -> Self {
        let dim = points.first().map(|p| p.len()).unwrap_or(0);
        let mut tree = Self {
            points,
            dim,
            nodes: Vec::with_capacity(points.len()),
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.build(&mut idx, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % self.dim;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |a, b| pts[*a][axis].total_cmp(&pts[*b][axis]));
        let node = self.nodes.len();
        self.nodes.push(KdNode {
            point: idx[mid],
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut rest[1..], depth + 1);
        self.nodes[node].left = left;
        self.nodes[node].right = right;
        Some(node)
    }

    /// Squared distance to the nearest point.
    pub fn nearest_squared(&self, q: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        if !self.nodes.is_empty() {
            self.search(0, q, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: &[f64], best: &mut f64) {
        let n = &self.nodes[node];
        let d2 = squared_distance(q, self.points[n.point].as_slice());
        if d2 < *best {
            *best = d2;
        }
        let delta = q[n.axis] - self.points[n.point][n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, q, best);
        }
        if let Some(c) = far {
            if delta * delta <= *best {
                self.search(c, q, best);
            }
        }
    }
}

/// Euclidean distance from each state to its closest training point.
pub fn nearest_distance(states: &[DVector<f64>], training: &PointCloud) -> Result<Vec<f64>> {
    if training.is_empty() {
        return invalid("training set is empty");
    }
    if let Some(s) = states.iter().find(|s| s.len() != training.dim()) {
        return invalid(format!(
            "state has dimension {}, training set has dimension {}",
            s.len(),
            training.dim()
        ));
    }
    let pts = training.points();
    if pts.len() <= BRUTE_FORCE_LIMIT {
        Ok(states.par_iter().map(|s| brute_nearest(s.as_slice(), pts)).collect())
    } else {
        let tree = KdTree::new(pts);
        Ok(states
            .par_iter()
            .map(|s| tree.nearest_squared(s.as_slice()).sqrt())
            .collect())
    }
}

pub fn brute_nearest(q: &[f64], pts: &[DVector<f64>]) -> f64 {
    pts.iter()
        .map(|p| squared_distance(q, p.as_slice()))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Index of the closest training point for each state.
pub fn nearest_index(states: &[DVector<f64>], training: &PointCloud) -> Result<Vec<usize>> {
    if training.is_empty() {
        return invalid("training set is empty");
    }
    Ok(states
        .iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (k, p) in training.points().iter().enumerate() {
                let d = squared_distance(s.as_slice(), p.as_slice());
                if d < best.1 {
                    best = (k, d);
                }
            }
            best.0
        })
        .collect())
}

/// `nearest_distance.csv`: `index,distance`.
pub fn write_distance_csv<W: Write>(distances: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "index,distance")?;
    for (i, d) in distances.iter().enumerate() {
        writeln!(w, "{i},{d}")?;
    }
    Ok(())
}

/// `count` equally spaced points from `min` to `max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 2 || !(max > min) {
            return invalid("grid axis needs max > min and at least 2 points");
        }
        Ok(Self { min, max, count })
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.count - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.count).map(|i| self.min + i as f64 * h).collect()
    }
}

/// Axis-aligned lattice in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridSpec {
    pub axes: Vec<GridAxis>,
}

impl GridSpec {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return invalid(format!("grids support 1 or 2 axes, got {}", axes.len()));
        }
        for a in &axes {
            GridAxis::new(a.min, a.max, a.count)?;
        }
        Ok(Self { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(GridAxis::step).product()
    }

    /// Grid points in row-major order (last axis fastest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        match self.axes.as_slice() {
            [x] => x.points().into_iter().map(|v| vec![v]).collect(),
            [x, y] => {
                let ys = y.points();
                x.points()
                    .into_iter()
                    .flat_map(|a| ys.iter().map(move |b| vec![a, *b]))
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// Nonnegative values on a [`GridSpec`], row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl DensityField {
    /// Rescales to unit Riemann mass; an all-zero field is left unchanged.
    pub fn normalized(mut self) -> Self {
        let mass = self.values.iter().sum::<f64>() * self.grid.cell_volume();
        if mass > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= mass);
        }
        self
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// `x[,y],value`; with `sqrt_contrast` the exported values are square
    /// roots of the stored ones.
    pub fn write_csv<W: Write>(&self, mut w: W, sqrt_contrast: bool) -> Result<()> {
        match self.grid.dim() {
            1 => writeln!(w, "x,value")?,
            _ => writeln!(w, "x,y,value")?,
        }
        for (p, v) in self.grid.points().iter().zip(&self.values) {
            let v = if sqrt_contrast { v.sqrt() } else { *v };
            match p.as_slice() {
                [x] => writeln!(w, "{x},{v}")?,
                [x, y] => writeln!(w, "{x},{y},{v}")?,
                _ => unreachable!("grids have one or two axes"),
            }
        }
        Ok(())
    }
}

/// `h(x) = Σ_i exp(−β‖x − y_i‖²)` on every grid point. Contributions below
/// `e^{−70}` per state are skipped; cells are summed over states in input order.
pub fn kde_grid(states: &[DVector<f64>], beta: f64, grid: &GridSpec, normalize: bool) -> Result<DensityField> {
    if !(beta > 0.0 && beta.is_finite()) {
        return invalid(format!("bandwidth beta must be positive, got {beta}"));
    }
    let d = grid.dim();
    if d > 2 {
        return invalid("KDE grids support at most 2 dimensions");
    }
    if let Some(s) = states.iter().find(|s| s.len() != d) {
        return invalid(format!("state dimension {} does not match grid dimension {d}", s.len()));
    }
    let reach = (KDE_CUTOFF / beta).sqrt();
    let xs = grid.axes[0].points();
    let values: Vec<f64> = if d == 1 {
        xs.par_iter()
            .map(|x| {
                states
                    .iter()
                    .map(|s| {
                        let dx = x - s[0];
                        if dx.abs() > reach {
                            0.0
                        } else {
                            (-beta * dx * dx).exp()
                        }
                    })
                    .sum()
            })
            .collect()
    } else {
        let ys = grid.axes[1].points();
        let rows: Vec<Vec<f64>> = xs
            .par_iter()
            .map(|x| {
                let mut row = vec![0.0; ys.len()];
                for s in states {
                    let dx = x - s[0];
                    if dx.abs() > reach {
                        continue;
                    }
                    let kx = (-beta * dx * dx).exp();
                    for (r, y) in row.iter_mut().zip(&ys) {
                        let dy = y - s[1];
                        if dy.abs() <= reach {
                            *r += kx * (-beta * dy * dy).exp();
                        }
                    }
                }
                row
            })
            .collect();
        rows.into_iter().flatten().collect()
    };
    let field = DensityField {
        grid: grid.clone(),
        values,
    };
    Ok(if normalize { field.normalized() } else { field })
}

/// Exact density of a mixture on the grid.
pub fn density_grid(mixture: &GaussianMixture, grid: &GridSpec) -> Result<DensityField> {
    if mixture.dim() != grid.dim() {
        return invalid("mixture and grid dimensions differ");
    }
    let c = CompiledMixture::new(mixture)?;
    let values = grid.points().par_iter().map(|p| c.log_density(p).exp()).collect();
    Ok(DensityField {
        grid: grid.clone(),
        values,
    })
}

/// Pearson correlation of two fields on the same grid.
pub fn field_correlation(a: &DensityField, b: &DensityField) -> Result<f64> {
    if a.grid != b.grid {
        return invalid("fields live on different grids");
    }
    let n = a.values.len() as f64;
    let ma = a.values.iter().sum::<f64>() / n;
    let mb = b.values.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Result of [`drift_explosion_slope`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(t, E‖∇log p_t(X_t)‖)` per grid time.
    pub mean_norms: Vec<(f64, f64)>,
}

/// Least-squares fit of `log E‖∇log p_t(X_t)‖` against `log t`, with
/// `X_t ~ p_t` sampled exactly from the pushforward mixture. Grid time `j`
/// uses the seed `derive_seed(seed, j)`.
pub fn drift_explosion_slope(
    spec: &SdeSpec,
    measure: &PointCloud,
    t_grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<SlopeFit> {
    if t_grid.len() < 4 {
        return invalid(format!("slope fit needs at least 4 times, got {}", t_grid.len()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0 && **t <= spec.terminal_time)) {
        return invalid(format!("time {t} outside (0, T]"));
    }
    let (lo, hi) = t_grid
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), t| (a.min(*t), b.max(*t)));
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return invalid("slope fit times must span at least two decades");
    }
    if n == 0 {
        return invalid("slope fit needs n >= 1");
    }
    let data: Measure = measure.clone().into();
    let mut mean_norms = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let marginal = sde::pushforward(spec, &data, t)?;
        let compiled = CompiledMixture::new(&marginal)?;
        let samples = sample_measure(&marginal.into(), n, rng::derive_seed(seed, j as u64));
        let total: f64 = samples
            .par_iter()
            .map_init(
                || (Scratch::default(), vec![0.0; spec.state_dim()]),
                |(scratch, out), x| {
                    compiled.score_into(x.as_slice(), out, scratch);
                    out.iter().map(|v| v * v).sum::<f64>().sqrt()
                },
            )
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        mean_norms.push((t, total / n as f64));
    }
    let xs: Vec<f64> = mean_norms.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = mean_norms.iter().map(|(_, m)| m.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    Ok(SlopeFit {
        slope,
        intercept,
        mean_norms,
    })
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `t_count` log-spaced times from `t_min` to `t_max`.
pub fn log_spaced(t_min: f64, t_max: f64, t_count: usize) -> Vec<f64> {
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..t_count)
        .map(|i| (a + (b - a) * i as f64 / (t_count - 1) as f64).exp())
        .collect()
}

const ENTROPY_TOLERANCE: f64 = 1e-12;

/// Differential entropy `H(p_t)` of the Brownian marginal of a 1D measure.
pub fn entropy_1d(measure: &Measure, t: f64) -> Result<f64> {
    let marginal = brownian_marginal_1d(measure, t)?;
    let c = CompiledMixture::new(&marginal)?;
    let (a, b) = crate::prior::quadrature_box(&marginal)[0];
    quadrature::integrate_1d(
        |x| {
            let lp = c.log_density(&[x]);
            if lp == f64::NEG_INFINITY {
                0.0
            } else {
                -lp.exp() * lp
            }
        },
        a,
        b,
        ENTROPY_TOLERANCE,
    )
}

/// Fisher information `E_{p_t} |∂_x log p_t|²` of the Brownian marginal.
pub fn fisher_information_1d(measure: &Measure, t: f64) -> Result<f64> {
    let marginal = brownian_marginal_1d(measure, t)?;
    let c = CompiledMixture::new(&marginal)?;
    let (a, b) = crate::prior::quadrature_box(&marginal)[0];
    quadrature::integrate_1d(
        |x| {
            let p = c.log_density(&[x]).exp();
            let s = c.score(&[x])[0];
            p * s * s
        },
        a,
        b,
        ENTROPY_TOLERANCE,
    )
}

fn brownian_marginal_1d(measure: &Measure, t: f64) -> Result<GaussianMixture> {
    if measure.dim() != 1 {
        return invalid("entropy quadrature is restricted to one dimension");
    }
    let spec = SdeSpec::brownian(1, t.max(1.0))?;
    if t == 0.0 {
        return Ok(measure.to_mixture());
    }
    sde::pushforward(&spec, measure, t)
}

/// `|(H(p_{t+h}) − H(p_{t−h}))/(2h) − ½ E|∇log p_t|²|` under Brownian noising.
pub fn de_bruijn_residual(measure: &Measure, t: f64, h: f64) -> Result<f64> {
    if measure.dim() != 1 {
        return invalid("De Bruijn residual is restricted to one dimension");
    }
    if !(h > 0.0 && t - h > 0.0) {
        return invalid(format!("need h > 0 and t − h > 0, got t = {t}, h = {h}"));
    }
    let dh = (entropy_1d(measure, t + h)? - entropy_1d(measure, t - h)?) / (2.0 * h);
    Ok((dh - 0.5 * fisher_information_1d(measure, t)?).abs())
}
