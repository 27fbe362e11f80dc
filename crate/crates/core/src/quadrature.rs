//! Composite Gauss–Legendre quadrature with panel doubling.
//!
//! Integrands here (mixture densities times logs) are smooth, so a fixed
//! 20-point rule per panel converges spectrally; the panel count is doubled
//! until two successive estimates agree to the requested absolute tolerance.

use crate::error::{Result, SgmError};

const NODES_PER_PANEL: usize = 20;
const START_PANELS: usize = 16;
const MAX_PANELS_1D: usize = 1 << 14;
const MAX_PANELS_2D: usize = 1 << 9;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// found by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn panel_rule(a: f64, b: f64, panels: usize, nodes: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * nodes.len());
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let mid = lo + 0.5 * h;
        for (x, w) in nodes.iter().zip(weights) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// `∫_a^b f` to absolute tolerance `tol`.
pub fn integrate_1d<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let (nodes, weights) = gauss_legendre(NODES_PER_PANEL);
    let eval = |panels: usize| -> f64 {
        panel_rule(a, b, panels, &nodes, &weights)
            .into_iter()
            .map(|(x, w)| w * f(x))
            .sum()
    };
    let mut panels = START_PANELS;
    let mut prev = eval(panels);
    while panels < MAX_PANELS_1D {
        panels *= 2;
        let next = eval(panels);
        if !next.is_finite() {
            return Err(SgmError::Numerical("integrand is not finite on the domain".into()));
        }
        if (next - prev).abs() <= tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(SgmError::Numerical(format!(
        "1D quadrature did not reach tolerance {tol} with {MAX_PANELS_1D} panels"
    )))
}

/// `∫∫ f(x, y)` over `[ax, bx] × [ay, by]` to absolute tolerance `tol`.
pub fn integrate_2d<F: Fn(f64, f64) -> f64 + Sync>(
    f: F,
    (ax, bx): (f64, f64),
    (ay, by): (f64, f64),
    tol: f64,
) -> Result<f64> {
    use rayon::prelude::*;
    let (nodes, weights) = gauss_legendre(NODES_PER_PANEL);
    let eval = |panels: usize| -> f64 {
        let xs = panel_rule(ax, bx, panels, &nodes, &weights);
        let ys = panel_rule(ay, by, panels, &nodes, &weights);
        // row sums in parallel, combined in row order
        let rows: Vec<f64> = xs
            .par_iter()
            .map(|&(x, wx)| wx * ys.iter().map(|&(y, wy)| wy * f(x, y)).sum::<f64>())
            .collect();
        rows.iter().sum()
    };
    let mut panels = START_PANELS / 2;
    let mut prev = eval(panels);
    while panels < MAX_PANELS_2D {
        panels *= 2;
        let next = eval(panels);
        if !next.is_finite() {
            return Err(SgmError::Numerical("integrand is not finite on the domain".into()));
        }
        if (next - prev).abs() <= tol {
            return Ok(next);
        }
        prev = next;
    }
    Err(SgmError::Numerical(format!(
        "2D quadrature did not reach tolerance {tol} with {MAX_PANELS_2D}² panels"
    )))
}
