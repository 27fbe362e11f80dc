//! Girsanov log-weights, Novikov integrals, path losses and drift-distance
//! curves along Euler–Maruyama ensembles.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result, SgmError};
use crate::integrate::{self, Direction, PathEnsemble};
use crate::measures::Measure;
use crate::score::{DriftPerturbation, ScoreModel, Scratch};
use crate::sde::SdeSpec;

/// Past this exponent `exp` overflows; estimates switch to log scale.
const LOG_OVERFLOW: f64 = 700.0;

/// Per path and record time: `ito = Σ σᵀe · ΔW` and `quad = Σ ‖σᵀe‖² dt`,
/// both evaluated at the left end of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovAccumulator {
    pub record_times: Vec<f64>,
    n_paths: usize,
    ito: Vec<f64>,
    quad: Vec<f64>,
}

impl GirsanovAccumulator {
    /// From per-path blocks of `(ito, quad)` pairs, one pair per record.
    pub(crate) fn from_interleaved(record_times: Vec<f64>, n_paths: usize, side: &[f64]) -> Self {
        let n_rec = record_times.len();
        let mut ito = Vec::with_capacity(n_paths * n_rec);
        let mut quad = Vec::with_capacity(n_paths * n_rec);
        for pair in side.chunks_exact(2) {
            ito.push(pair[0]);
            quad.push(pair[1]);
        }
        Self {
            record_times,
            n_paths,
            ito,
            quad,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    fn idx(&self, path: usize, record: usize) -> usize {
        path * self.record_times.len() + record
    }

    pub fn ito(&self, path: usize, record: usize) -> f64 {
        self.ito[self.idx(path, record)]
    }

    pub fn quad(&self, path: usize, record: usize) -> f64 {
        self.quad[self.idx(path, record)]
    }

    /// `log Z = ito − ½ quad`.
    pub fn log_weight(&self, path: usize, record: usize) -> f64 {
        self.ito(path, record) - 0.5 * self.quad(path, record)
    }

    pub fn log_weights_at(&self, record: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.log_weight(p, record)).collect()
    }

    pub fn quad_at(&self, record: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.quad(p, record)).collect()
    }

    pub fn record_index(&self, t: f64) -> Result<usize> {
        let scale = self.record_times.last().copied().unwrap_or(1.0).max(1.0);
        self.record_times
            .iter()
            .position(|r| (r - t).abs() <= 1e-9 * scale)
            .ok_or_else(|| SgmError::InvalidArgument(format!("{t} is not a record time")))
    }
}

fn check_reverse_provenance(
    ensemble: &PathEnsemble,
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
) -> Result<()> {
    let pv = &ensemble.provenance;
    if ensemble.direction != Direction::Reverse {
        return invalid("Girsanov weights need a reverse ensemble");
    }
    if pv.spec != *spec {
        return invalid("ensemble was simulated with a different SDE");
    }
    if pv.data.as_ref() != Some(measure) {
        return invalid("ensemble was simulated with a different data measure");
    }
    if pv.perturbation != *perturbation {
        return invalid("ensemble was simulated with a different perturbation");
    }
    Ok(())
}

/// Girsanov integrals of the ensemble's own perturbation. Uses the audit
/// recorded during simulation when present, otherwise regenerates the
/// normals from the ensemble seed.
pub fn girsanov_log_weights(
    ensemble: &PathEnsemble,
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
) -> Result<GirsanovAccumulator> {
    check_reverse_provenance(ensemble, spec, measure, perturbation)?;
    if let Some(acc) = &ensemble.girsanov {
        return Ok(acc.clone());
    }
    change_of_measure_log_weights(ensemble, perturbation)
}

/// Girsanov integrals of an arbitrary error field `audit` along the paths of
/// `ensemble`. `exp(log Z_T)` reweights the ensemble's path law to the law of
/// the reverse SDE whose drift carries the additional `σσᵀ audit` term.
pub fn change_of_measure_log_weights(
    ensemble: &PathEnsemble,
    audit: &DriftPerturbation,
) -> Result<GirsanovAccumulator> {
    if ensemble.direction != Direction::Reverse {
        return invalid("Girsanov weights need a reverse ensemble");
    }
    audit.validate(&ensemble.provenance.spec)?;
    let side = integrate::replay_reverse_audit(ensemble, audit)?;
    Ok(GirsanovAccumulator::from_interleaved(
        ensemble.record_times.clone(),
        ensemble.n_paths,
        &side,
    ))
}

/// Monte-Carlo mean of `exp(a_i)` from log samples `a_i`, with jackknife
/// standard error. In log scale `estimate` and `std_error` refer to
/// `log mean exp(a)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpMeanEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub log_scale: bool,
    pub max_log_sample: f64,
    pub log_mean_exp: f64,
    pub n: usize,
}

/// Mean of `exp(a_i)` with leave-one-out (jackknife) error. Leave-one-out
/// sums are prefix/suffix log-sum-exps, so dropping a dominant sample does
/// not cancel catastrophically.
pub fn exp_mean(log_samples: &[f64]) -> ExpMeanEstimate {
    let n = log_samples.len();
    if n == 0 {
        return ExpMeanEstimate {
            estimate: f64::NAN,
            std_error: f64::NAN,
            log_scale: false,
            max_log_sample: f64::NAN,
            log_mean_exp: f64::NAN,
            n,
        };
    }
    let max = log_samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_samples.iter().map(|a| (a - max).exp()).sum();
    let log_mean_exp = max + total.ln() - (n as f64).ln();
    let log_scale = !(log_mean_exp < LOG_OVERFLOW && max < LOG_OVERFLOW);
    let std_error = if n < 2 {
        0.0
    } else {
        let mut prefix = vec![f64::NEG_INFINITY; n + 1];
        for i in 0..n {
            prefix[i + 1] = log_add_exp(prefix[i], log_samples[i]);
        }
        let mut suffix = vec![f64::NEG_INFINITY; n + 1];
        for i in (0..n).rev() {
            suffix[i] = log_add_exp(suffix[i + 1], log_samples[i]);
        }
        let log_m = ((n - 1) as f64).ln();
        let loo: Vec<f64> = (0..n)
            .map(|i| {
                let rest = log_add_exp(prefix[i], suffix[i + 1]) - log_m;
                if log_scale {
                    rest
                } else {
                    rest.exp()
                }
            })
            .collect();
        let m = (n - 1) as f64;
        let mean = loo.iter().sum::<f64>() / n as f64;
        let ss: f64 = loo.iter().map(|v| (v - mean) * (v - mean)).sum();
        (m / n as f64 * ss).sqrt()
    };
    let estimate = if log_scale {
        log_mean_exp
    } else {
        log_samples.iter().map(|a| a.exp()).sum::<f64>() / n as f64
    };
    ExpMeanEstimate {
        estimate,
        std_error,
        log_scale,
        max_log_sample: max,
        log_mean_exp,
        n,
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `E[Z_t]` at record time `t`; equals 1 while `Z` is a martingale.
pub fn mean_weight(acc: &GirsanovAccumulator, t: f64) -> Result<ExpMeanEstimate> {
    Ok(exp_mean(&acc.log_weights_at(acc.record_index(t)?)))
}

/// Novikov integral `N_t = E[exp(½ ∫₀ᵗ ‖σᵀe‖² ds)]` at record time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NovikovEstimate {
    pub t: f64,
    #[serde(flatten)]
    pub value: ExpMeanEstimate,
}

pub fn novikov_estimate(
    ensemble: &PathEnsemble,
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
    t: f64,
) -> Result<NovikovEstimate> {
    let acc = girsanov_log_weights(ensemble, spec, measure, perturbation)?;
    novikov_from_accumulator(&acc, t)
}

pub fn novikov_from_accumulator(acc: &GirsanovAccumulator, t: f64) -> Result<NovikovEstimate> {
    let r = acc.record_index(t)?;
    let half: Vec<f64> = acc.quad_at(r).iter().map(|q| 0.5 * q).collect();
    Ok(NovikovEstimate {
        t,
        value: exp_mean(&half),
    })
}

/// Novikov estimates at every record time of the accumulator.
pub fn novikov_curve(acc: &GirsanovAccumulator) -> Vec<NovikovEstimate> {
    acc.record_times
        .iter()
        .map(|&t| novikov_from_accumulator(acc, t).expect("record time of the accumulator"))
        .collect()
}

/// `novikov.csv`: `t,estimate,stderr,log_scale`.
pub fn write_novikov_csv<W: Write>(rows: &[NovikovEstimate], mut w: W) -> Result<()> {
    writeln!(w, "t,estimate,stderr,log_scale")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.t, r.value.estimate, r.value.std_error, r.value.log_scale
        )?;
    }
    Ok(())
}

/// `novikov_tails.csv`: heavy-tail diagnostics next to each estimate.
pub fn write_novikov_tails_csv<W: Write>(rows: &[NovikovEstimate], mut w: W) -> Result<()> {
    writeln!(w, "t,max_log_sample,log_mean_exp,n")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.t, r.value.max_log_sample, r.value.log_mean_exp, r.value.n
        )?;
    }
    Ok(())
}

/// Weighting of the squared drift error in [`path_losses`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFn {
    Uniform,
}

impl std::str::FromStr for WeightFn {
    type Err = SgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightFn::Uniform),
            other => invalid(format!("unknown weight function `{other}` (known: uniform)")),
        }
    }
}

/// `L2 = E Σ w ‖e‖² dt` and `L_exp = E exp((σ/2) Σ ‖e‖² dt)` along a forward
/// ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathLosses {
    pub l2: f64,
    pub l_exp: ExpMeanEstimate,
}

/// Evaluates the drift error of `perturbation` (relative to the scores of
/// `measure`) along the full paths of a forward ensemble. The error is taken
/// at the right end of each step so it is never evaluated at data time 0.
pub fn path_losses(
    ensemble: &PathEnsemble,
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
    weight_fn_id: &str,
) -> Result<PathLosses> {
    let WeightFn::Uniform = weight_fn_id.parse::<WeightFn>()?;
    if ensemble.direction != Direction::Forward {
        return invalid("path losses are evaluated along a forward ensemble");
    }
    if ensemble.provenance.spec != *spec {
        return invalid("ensemble was simulated with a different SDE");
    }
    let losses = integrate::replay_forward_losses(ensemble, measure, perturbation)?;
    let n = losses.len();
    let l2 = if n == 0 {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / n as f64
    };
    let half_sigma = 0.5 * spec.sigma();
    let exponents: Vec<f64> = losses.iter().map(|l| half_sigma * l).collect();
    Ok(PathLosses {
        l2,
        l_exp: exp_mean(&exponents),
    })
}

/// `losses.csv`: `L2,L_exp,log_scale`.
pub fn write_losses_csv<W: Write>(losses: &PathLosses, mut w: W) -> Result<()> {
    writeln!(w, "L2,L_exp,log_scale")?;
    writeln!(w, "{},{},{}", losses.l2, losses.l_exp.estimate, losses.l_exp.log_scale)?;
    Ok(())
}

/// Mean of `‖s − ∇log p̂_t‖ = ‖e‖` over paths at each record time, where `s`
/// is the drift under test written as a perturbation of the scores of
/// `measure_ref`. Reverse records are evaluated at data time
/// `T − state_time`.
pub fn drift_distance_curve(
    ensemble: &PathEnsemble,
    spec: &SdeSpec,
    measure_ref: &Measure,
    drift_under_test: &DriftPerturbation,
) -> Result<Vec<(f64, f64)>> {
    if ensemble.provenance.spec != *spec {
        return invalid("ensemble was simulated with a different SDE");
    }
    let model = ScoreModel::new(spec, measure_ref, drift_under_test)?;
    let d = spec.state_dim();
    let mut out = Vec::with_capacity(ensemble.n_records());
    for (r, (&t, &ts)) in ensemble.record_times.iter().zip(&ensemble.state_times).enumerate() {
        let data_time = match ensemble.direction {
            Direction::Reverse => spec.terminal_time - ts,
            Direction::Forward => ts,
        };
        let field = model.at(data_time)?;
        let (mut s, mut e, mut scratch) = (vec![0.0; d], vec![0.0; d], Scratch::default());
        let mut total = 0.0;
        for p in 0..ensemble.n_paths {
            field.score_and_error(ensemble.state(p, r), &mut s, &mut e, &mut scratch);
            total += e.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        out.push((t, total / ensemble.n_paths as f64));
    }
    Ok(out)
}

/// `drift_distance.csv`: `t,mean_norm`.
pub fn write_drift_distance_csv<W: Write>(curve: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "t,mean_norm")?;
    for (t, v) in curve {
        writeln!(w, "{t},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{simulate_forward, simulate_reverse, StepSchedule};
    use crate::measures::{make_circle_points, GaussianMixture};
    use approx::assert_abs_diff_eq;

    fn circle_setup() -> (SdeSpec, Measure, Measure, StepSchedule) {
        (
            SdeSpec::brownian(2, 1.0).unwrap(),
            make_circle_points(9, 1.0).unwrap().into(),
            GaussianMixture::standard_normal(2).into(),
            StepSchedule::uniform(1.0, 100).unwrap(),
        )
    }

    #[test]
    fn exp_mean_matches_direct_formulas() {
        let a = [0.1, -0.3, 0.7, 0.0];
        let est = exp_mean(&a);
        let x: Vec<f64> = a.iter().map(|v: &f64| v.exp()).collect();
        let mean = x.iter().sum::<f64>() / 4.0;
        let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0).sqrt();
        assert_abs_diff_eq!(est.estimate, mean, epsilon = 1e-14);
        // jackknife of a mean is the usual standard error
        assert_abs_diff_eq!(est.std_error, sd / 2.0, epsilon = 1e-14);
        assert!(!est.log_scale);
    }

    #[test]
    fn exp_mean_switches_to_log_scale() {
        let est = exp_mean(&[800.0, 1.0, 2.0]);
        assert!(est.log_scale);
        assert_abs_diff_eq!(est.estimate, 800.0 - 3f64.ln(), epsilon = 1e-9);
        assert!(est.std_error.is_finite());
    }

    #[test]
    fn no_perturbation_gives_unit_weights() {
        let (spec, data, prior, s) = circle_setup();
        let none = DriftPerturbation::None;
        let e = simulate_reverse(&spec, &data, &none, &prior, &s, 16, 1, &[0.5, 1.0], true).unwrap();
        let acc = girsanov_log_weights(&e, &spec, &data, &none).unwrap();
        assert!(acc.log_weights_at(1).iter().all(|w| *w == 0.0));
        let n = novikov_estimate(&e, &spec, &data, &none, 1.0).unwrap();
        assert_eq!(n.value.estimate, 1.0);
    }

    #[test]
    fn constant_error_quadratic_variation_is_exact() {
        let (spec, data, prior, s) = circle_setup();
        let p = DriftPerturbation::constant(vec![0.6, -0.8]);
        let e = simulate_reverse(&spec, &data, &p, &prior, &s, 8, 2, &[0.5, 0.99], true).unwrap();
        let acc = girsanov_log_weights(&e, &spec, &data, &p).unwrap();
        for path in 0..8 {
            assert_abs_diff_eq!(acc.quad(path, 0), 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(acc.quad(path, 1), 0.99, epsilon = 1e-12);
        }
        let n = novikov_from_accumulator(&acc, 0.99).unwrap();
        assert_abs_diff_eq!(n.value.estimate, (0.495f64).exp(), epsilon = 1e-12);
        assert!(n.value.std_error < 1e-12);
    }

    #[test]
    fn replay_reproduces_recorded_audit() {
        let (spec, data, prior, s) = circle_setup();
        let p = DriftPerturbation::Radial { scale: 0.3 };
        let audited = simulate_reverse(&spec, &data, &p, &prior, &s, 12, 9, &[0.25, 1.0], true).unwrap();
        let mut plain = audited.clone();
        plain.girsanov = None;
        let a = girsanov_log_weights(&audited, &spec, &data, &p).unwrap();
        let b = girsanov_log_weights(&plain, &spec, &data, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn provenance_mismatch_is_rejected() {
        let (spec, data, prior, s) = circle_setup();
        let p = DriftPerturbation::constant(vec![0.0, -1.0]);
        let e = simulate_reverse(&spec, &data, &p, &prior, &s, 4, 0, &[1.0], false).unwrap();
        assert!(girsanov_log_weights(&e, &spec, &data, &DriftPerturbation::None).is_err());
        let other = SdeSpec::brownian(2, 2.0).unwrap();
        assert!(girsanov_log_weights(&e, &other, &data, &p).is_err());
        let moved: Measure = make_circle_points(8, 1.0).unwrap().into();
        assert!(girsanov_log_weights(&e, &spec, &moved, &p).is_err());
    }

    #[test]
    fn constant_path_losses_are_exact() {
        let spec = SdeSpec::brownian(2, 1.0).unwrap();
        let data: Measure = make_circle_points(9, 1.0).unwrap().into();
        let s = StepSchedule::uniform(1.0, 50).unwrap();
        let fwd = simulate_forward(&spec, &data, &s, 10, 4, &[1.0]).unwrap();
        let zero = path_losses(&fwd, &spec, &data, &DriftPerturbation::None, "uniform").unwrap();
        assert_eq!(zero.l2, 0.0);
        assert_eq!(zero.l_exp.estimate, 1.0);
        let c = path_losses(
            &fwd,
            &spec,
            &data,
            &DriftPerturbation::constant(vec![1.0, 1.0]),
            "uniform",
        )
        .unwrap();
        assert_abs_diff_eq!(c.l2, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.l_exp.estimate, 1f64.exp(), epsilon = 1e-12);
        assert!(path_losses(&fwd, &spec, &data, &DriftPerturbation::None, "cosine").is_err());
    }

    #[test]
    fn drift_distance_of_constant_error_is_its_norm() {
        let (spec, data, prior, s) = circle_setup();
        let p = DriftPerturbation::constant(vec![0.0, -1.0]);
        let e = simulate_reverse(&spec, &data, &p, &prior, &s, 8, 3, &[0.0, 0.5, 1.0], false).unwrap();
        for (_, v) in drift_distance_curve(&e, &spec, &data, &p).unwrap() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        }
        for (_, v) in drift_distance_curve(&e, &spec, &data, &DriftPerturbation::None).unwrap() {
            assert_eq!(v, 0.0);
        }
    }
}
