use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use sgmlab::girsanov;
use sgmlab::integrate::{self, Segment};
use sgmlab::linalg::Covariance;
use sgmlab::measures::{self as measures, make_circle_points};
use sgmlab::prior::{self, PriorCovariance};
use sgmlab::scenario::{self, RunOptions, ScenarioConfig, PRESETS};
use sgmlab::score as sc;
use sgmlab::{metrics, sde, SgmError};

fn err(e: SgmError) -> PyErr {
    match e {
        SgmError::Numerical(_) | SgmError::Domain(_) => PyRuntimeError::new_err(e.to_string()),
        SgmError::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_row_slice(n, n, &rows.concat()))
}

/// Forward SDE: kind is "brownian", "ou" or "cld".
#[pyclass(name = "Sde", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySde(sgmlab::SdeSpec);

#[pymethods]
impl PySde {
    #[new]
    #[pyo3(signature = (kind, data_dim, terminal_time = 1.0))]
    fn new(kind: &str, data_dim: usize, terminal_time: f64) -> PyResult<Self> {
        let kind: sgmlab::SdeKind = serde_json::from_value(kind.into())
            .map_err(|_| PyValueError::new_err(format!("unknown SDE kind `{kind}`")))?;
        Ok(Self(sgmlab::SdeSpec::new(kind, data_dim, terminal_time).map_err(err)?))
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }

    #[getter]
    fn data_dim(&self) -> usize {
        self.0.data_dim
    }

    #[getter]
    fn terminal_time(&self) -> f64 {
        self.0.terminal_time
    }

    /// `(M_t, Σ_t)` of the Gaussian transition kernel, as nested lists.
    fn kernel(&self, t: f64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let k = sde::transition_kernel(&self.0, t).map_err(err)?;
        let d = self.0.state_dim();
        Ok((rows(&k.mean_map.to_matrix(d)), rows(&k.covariance.to_matrix())))
    }

    fn __repr__(&self) -> String {
        format!(
            "Sde({:?}, data_dim={}, T={})",
            self.0.kind, self.0.data_dim, self.0.terminal_time
        )
    }
}

/// Point cloud or Gaussian mixture.
#[pyclass(name = "Measure", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMeasure(sgmlab::Measure);

#[pymethods]
impl PyMeasure {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self(sgmlab::Measure::from_json(text).map_err(err)?))
    }

    #[staticmethod]
    #[pyo3(signature = (points, weights = None))]
    fn points(points: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let pts: Vec<DVector<f64>> = points.into_iter().map(DVector::from_vec).collect();
        let cloud = match weights {
            Some(w) => sgmlab::PointCloud::new(pts, w),
            None => sgmlab::PointCloud::uniform(pts),
        }
        .map_err(err)?;
        Ok(Self(cloud.into()))
    }

    #[staticmethod]
    #[pyo3(signature = (n, radius = 1.0))]
    fn circle(n: usize, radius: f64) -> PyResult<Self> {
        Ok(Self(make_circle_points(n, radius).map_err(err)?.into()))
    }

    /// Mixture from means, full covariances and weights.
    #[staticmethod]
    fn mixture(means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>, weights: Vec<f64>) -> PyResult<Self> {
        if means.len() != covariances.len() || means.len() != weights.len() {
            return Err(PyValueError::new_err("means, covariances and weights differ in length"));
        }
        let mut comps = Vec::with_capacity(means.len());
        for ((m, c), w) in means.into_iter().zip(covariances).zip(weights) {
            comps.push(sgmlab::MixtureComponent {
                mean: DVector::from_vec(m),
                covariance: Covariance::dense(matrix(&c)?).map_err(err)?,
                weight: w,
            });
        }
        Ok(Self(sgmlab::GaussianMixture::new(comps).map_err(err)?.into()))
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn mean(&self) -> Vec<f64> {
        self.0.mean().iter().cloned().collect()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.0.covariance())
    }

    fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        measures::sample_measure(&self.0, n, seed)
            .into_iter()
            .map(|x| x.iter().cloned().collect())
            .collect()
    }

    fn log_density(&self, x: Vec<f64>) -> PyResult<f64> {
        sc::log_density(&self.0.to_mixture(), &x).map_err(err)
    }

    /// Exact law of `X_t` when `X_0` follows this measure.
    fn pushforward(&self, sde: &PySde, t: f64) -> PyResult<Self> {
        Ok(Self(sde::pushforward(&sde.0, &self.0, t).map_err(err)?.into()))
    }

    fn __repr__(&self) -> String {
        match &self.0 {
            sgmlab::Measure::Points(p) => format!("Measure(points={}, dim={})", p.len(), p.dim()),
            sgmlab::Measure::Mixture(g) => format!("Measure(components={}, dim={})", g.components().len(), g.dim()),
        }
    }
}

/// Piecewise-constant Euler–Maruyama step sizes.
#[pyclass(name = "Schedule", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySchedule(sgmlab::StepSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    fn new(segments: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let segs = segments
            .into_iter()
            .map(|(start, end, dt)| Segment { start, end, dt })
            .collect();
        Ok(Self(sgmlab::StepSchedule::new(segs).map_err(err)?))
    }

    #[staticmethod]
    fn uniform(terminal_time: f64, n: usize) -> PyResult<Self> {
        Ok(Self(sgmlab::StepSchedule::uniform(terminal_time, n).map_err(err)?))
    }

    #[staticmethod]
    fn three_segment(terminal_time: f64) -> PyResult<Self> {
        Ok(Self(sgmlab::StepSchedule::three_segment(terminal_time).map_err(err)?))
    }

    fn grid(&self) -> Vec<f64> {
        self.0.grid()
    }

    #[getter]
    fn last_dt(&self) -> f64 {
        self.0.last_dt()
    }

    #[getter]
    fn n_steps(&self) -> usize {
        self.0.n_steps()
    }
}

/// Additive drift error `e(x, t)`.
#[pyclass(name = "Perturbation", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPerturbation(sgmlab::DriftPerturbation);

#[pymethods]
impl PyPerturbation {
    #[staticmethod]
    fn none() -> Self {
        Self(sgmlab::DriftPerturbation::None)
    }

    #[staticmethod]
    fn constant(vector: Vec<f64>) -> Self {
        Self(sgmlab::DriftPerturbation::constant(vector))
    }

    #[staticmethod]
    fn radial(scale: f64) -> Self {
        Self(sgmlab::DriftPerturbation::Radial { scale })
    }

    /// Drift equal to the exact score of `measure` instead of the data.
    #[staticmethod]
    fn score_of(measure: &PyMeasure) -> Self {
        Self(sgmlab::DriftPerturbation::ScoreOf {
            measure: measure.0.clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Perturbation({:?})", self.0)
    }
}

#[pyclass(name = "Ensemble", frozen, skip_from_py_object)]
struct PyEnsemble(sgmlab::PathEnsemble);

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn n_paths(&self) -> usize {
        self.0.n_paths
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim
    }

    #[getter]
    fn record_times(&self) -> Vec<f64> {
        self.0.record_times.clone()
    }

    #[getter]
    fn state_times(&self) -> Vec<f64> {
        self.0.state_times.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    /// States at record time `t`, one list per path.
    fn states(&self, t: f64) -> PyResult<Vec<Vec<f64>>> {
        let r = self.0.record_index(t).map_err(err)?;
        Ok((0..self.0.n_paths).map(|p| self.0.state(p, r).to_vec()).collect())
    }

    fn final_states(&self) -> Vec<Vec<f64>> {
        self.0
            .final_states()
            .into_iter()
            .map(|x| x.iter().cloned().collect())
            .collect()
    }

    /// Girsanov log-weights `log Z_t` per path; needs an audited run.
    fn log_weights(&self, t: f64) -> PyResult<Vec<f64>> {
        let acc = self.audit()?;
        Ok(acc.log_weights_at(acc.record_index(t).map_err(err)?))
    }

    /// `E[Z_t]` with its standard error.
    fn mean_weight<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        estimate_dict(py, &girsanov::mean_weight(self.audit()?, t).map_err(err)?)
    }

    /// Novikov integral `E exp(½ ∫‖σᵀe‖²)` up to `t`.
    fn novikov<'py>(&self, py: Python<'py>, t: f64) -> PyResult<Bound<'py, PyDict>> {
        let n = girsanov::novikov_from_accumulator(self.audit()?, t).map_err(err)?;
        estimate_dict(py, &n.value)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.0.write_csv(std::io::BufWriter::new(f)).map_err(err)
    }
}

impl PyEnsemble {
    fn audit(&self) -> PyResult<&girsanov::GirsanovAccumulator> {
        self.0
            .girsanov
            .as_ref()
            .ok_or_else(|| PyValueError::new_err("ensemble was simulated without audit=True"))
    }
}

fn estimate_dict<'py>(py: Python<'py>, e: &girsanov::ExpMeanEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("estimate", e.estimate)?;
    d.set_item("std_error", e.std_error)?;
    d.set_item("log_scale", e.log_scale)?;
    d.set_item("log_mean_exp", e.log_mean_exp)?;
    d.set_item("max_log_sample", e.max_log_sample)?;
    d.set_item("n", e.n)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(name = "score")]
fn score_at(sde: &PySde, measure: &PyMeasure, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(sc::score(&sde.0, &measure.0, t, &x)
        .map_err(err)?
        .iter()
        .cloned()
        .collect())
}

#[pyfunction]
#[pyo3(signature = (sde, measure, t_reverse, y, perturbation = None))]
fn reverse_drift(
    sde: &PySde,
    measure: &PyMeasure,
    t_reverse: f64,
    y: Vec<f64>,
    perturbation: Option<&PyPerturbation>,
) -> PyResult<Vec<f64>> {
    let pert = perturbation.map(|p| p.0.clone()).unwrap_or_default();
    Ok(sc::reverse_drift(&sde.0, &measure.0, &pert, t_reverse, &y)
        .map_err(err)?
        .iter()
        .cloned()
        .collect())
}

#[pyfunction]
fn simulate_forward(
    py: Python<'_>,
    sde: &PySde,
    init: &PyMeasure,
    schedule: &PySchedule,
    n: usize,
    seed: u64,
    record_times: Vec<f64>,
) -> PyResult<PyEnsemble> {
    let ens = py
        .detach(|| integrate::simulate_forward(&sde.0, &init.0, &schedule.0, n, seed, &record_times))
        .map_err(err)?;
    Ok(PyEnsemble(ens))
}

#[pyfunction]
#[pyo3(signature = (sde, data, prior, schedule, n, seed, record_times, perturbation = None, audit = false))]
#[allow(clippy::too_many_arguments)]
fn simulate_reverse(
    py: Python<'_>,
    sde: &PySde,
    data: &PyMeasure,
    prior: &PyMeasure,
    schedule: &PySchedule,
    n: usize,
    seed: u64,
    record_times: Vec<f64>,
    perturbation: Option<&PyPerturbation>,
    audit: bool,
) -> PyResult<PyEnsemble> {
    let pert = perturbation.map(|p| p.0.clone()).unwrap_or_default();
    let ens = py
        .detach(|| {
            integrate::simulate_reverse(
                &sde.0,
                &data.0,
                &pert,
                &prior.0,
                &schedule.0,
                n,
                seed,
                &record_times,
                audit,
            )
        })
        .map_err(err)?;
    Ok(PyEnsemble(ens))
}

/// `(L2, L_exp)` of `perturbation` along a forward ensemble.
#[pyfunction]
fn path_losses<'py>(
    py: Python<'py>,
    ensemble: &PyEnsemble,
    sde: &PySde,
    measure: &PyMeasure,
    perturbation: &PyPerturbation,
) -> PyResult<Bound<'py, PyDict>> {
    let l = girsanov::path_losses(&ensemble.0, &sde.0, &measure.0, &perturbation.0, "uniform").map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("L2", l.l2)?;
    d.set_item("L_exp", estimate_dict(py, &l.l_exp)?)?;
    Ok(d)
}

/// Mean `‖e‖` over paths at each record time, as `(t, value)` pairs.
#[pyfunction]
fn drift_distance(
    ensemble: &PyEnsemble,
    sde: &PySde,
    measure: &PyMeasure,
    perturbation: &PyPerturbation,
) -> PyResult<Vec<(f64, f64)>> {
    girsanov::drift_distance_curve(&ensemble.0, &sde.0, &measure.0, &perturbation.0).map_err(err)
}

#[pyfunction]
fn nearest_distance(states: Vec<Vec<f64>>, training: &PyMeasure) -> PyResult<Vec<f64>> {
    let cloud = training
        .0
        .as_point_cloud()
        .ok_or_else(|| PyValueError::new_err("training set must be a point cloud"))?;
    let states: Vec<DVector<f64>> = states.into_iter().map(DVector::from_vec).collect();
    metrics::nearest_distance(&states, cloud).map_err(err)
}

/// Optimal Gaussian prior for Brownian noising up to `T`.
#[pyfunction]
#[pyo3(signature = (measure, terminal_time, isotropic = false))]
fn optimal_prior<'py>(
    py: Python<'py>,
    measure: &PyMeasure,
    terminal_time: f64,
    isotropic: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = prior::optimal_gaussian_prior(&measure.0, terminal_time, isotropic).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean", fit.mean.iter().cloned().collect::<Vec<_>>())?;
    match &fit.covariance {
        PriorCovariance::Full(c) => d.set_item("covariance", rows(c))?,
        PriorCovariance::Isotropic(c) => d.set_item("covariance", *c)?,
    }
    d.set_item("kl_bound", fit.kl_bound)?;
    d.set_item("measure", PyMeasure(fit.to_measure().map_err(err)?))?;
    Ok(d)
}

#[pyfunction]
fn kl_bound(cov_eigenvalues: Vec<f64>, terminal_time: f64) -> PyResult<f64> {
    prior::kl_bound(&cov_eigenvalues, terminal_time).map_err(err)
}

/// Runs a scenario (file path, preset name or JSON text) and returns the
/// manifest as a dict.
#[pyfunction]
#[pyo3(signature = (config, out_dir, seed = None, full = false, n_paths = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: PathBuf,
    seed: Option<u64>,
    full: bool,
    n_paths: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = if PRESETS.iter().any(|(n, _)| *n == config) {
        ScenarioConfig::preset(config)
    } else if config.trim_start().starts_with('{') {
        ScenarioConfig::from_json(config)
    } else {
        ScenarioConfig::from_path(config.as_ref())
    }
    .map_err(err)?;
    let opts = RunOptions { seed, full, n_paths };
    let manifest = py
        .detach(|| scenario::run_scenario(&cfg, &out_dir, &opts))
        .map_err(err)?;
    let text = serde_json::to_string(&manifest).map_err(|e| err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyfunction]
fn list_presets() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

#[pymodule]
#[pyo3(name = "sgmlab")]
fn sgmlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySde>()?;
    m.add_class::<PyMeasure>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyPerturbation>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_function(wrap_pyfunction!(score_at, m)?)?;
    m.add_function(wrap_pyfunction!(reverse_drift, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_forward, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_reverse, m)?)?;
    m.add_function(wrap_pyfunction!(path_losses, m)?)?;
    m.add_function(wrap_pyfunction!(drift_distance, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_distance, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_prior, m)?)?;
    m.add_function(wrap_pyfunction!(kl_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    Ok(())
}
