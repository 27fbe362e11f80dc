//! JSON scenario files and the pipeline that turns one into CSV artifacts
//! plus a `manifest.json` with checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, SgmError};
use crate::girsanov;
use crate::integrate::{self, PathEnsemble, StepSchedule};
use crate::measures::{GaussianMixture, Measure};
use crate::metrics::{self, GridSpec, DEFAULT_KDE_BETA};
use crate::prior::{self, KlMethod, PriorCovariance};
use crate::rng::{self, RNG_ALGORITHM};
use crate::score::DriftPerturbation;
use crate::sde::{self, SdeConfig, SdeKind, SdeSpec};

/// Presets shipped with the crate, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../../../scenarios/fig1.json")),
    ("fig2b", include_str!("../../../scenarios/fig2b.json")),
    ("novikov_desk", include_str!("../../../scenarios/novikov_desk.json")),
    ("losses_desk", include_str!("../../../scenarios/losses_desk.json")),
    ("explosion_desk", include_str!("../../../scenarios/explosion_desk.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorName {
    /// Moment-matched Gaussian for Brownian noising, `N(0, I)` otherwise.
    Optimal,
    /// The exact forward marginal `p_T`.
    Pushforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorChoice {
    Named(PriorName),
    Explicit(Measure),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleChoice {
    Preset(String),
    Explicit(StepSchedule),
}

fn default_beta() -> f64 {
    DEFAULT_KDE_BETA
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdeOutput {
    pub times: Vec<f64>,
    pub grid: GridSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_true")]
    pub sqrt_contrast: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeOutput {
    pub t_min: f64,
    pub t_max: f64,
    pub count: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forward_kde: Option<KdeOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reverse_kde: Option<KdeOutput>,
    /// Grid for `final_density.csv` (sample KDE next to the smoothed data density).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_density: Option<GridSpec>,
    pub nearest_distance: bool,
    pub novikov: bool,
    pub drift_distance: bool,
    pub losses: bool,
    /// Terminal times for `prior_table.csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_table: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope_fit: Option<SlopeOutput>,
    pub ensemble_csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub sde: SdeConfig,
    pub data: Measure,
    pub prior: PriorChoice,
    #[serde(default)]
    pub perturbation: DriftPerturbation,
    pub schedule: ScheduleChoice,
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full_n_paths: Option<usize>,
    pub seed: u64,
    /// Reverse times at which the reverse ensemble is recorded (Novikov,
    /// drift distance, ensemble CSV); `T` is always added.
    #[serde(default)]
    pub record_times: Vec<f64>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ScenarioConfig {
    /// Parses a scenario; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            SgmError::config(
                if field == "." || field == "?" {
                    "<root>".into()
                } else {
                    field
                },
                e.inner().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let text = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| SgmError::config("preset", format!("unknown preset `{name}`")))?;
        Self::from_json(text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn spec(&self) -> Result<SdeSpec> {
        self.sde
            .with_dim(self.data.dim())
            .map_err(|e| SgmError::config("sde", e.to_string()))
    }

    pub fn step_schedule(&self) -> Result<StepSchedule> {
        match &self.schedule {
            ScheduleChoice::Preset(name) => StepSchedule::preset(name, self.sde.terminal_time),
            ScheduleChoice::Explicit(s) => Ok(s.clone()),
        }
        .and_then(|s| s.check_span(self.sde.terminal_time).map(|_| s))
        .map_err(|e| SgmError::config("schedule", e.to_string()))
    }

    /// Checks cross-field consistency without running anything.
    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        let schedule = self.step_schedule()?;
        self.perturbation
            .validate(&spec)
            .map_err(|e| SgmError::config("perturbation", e.to_string()))?;
        if let PriorChoice::Explicit(m) = &self.prior {
            if m.dim() != spec.state_dim() && m.dim() != spec.data_dim {
                return Err(SgmError::config("prior", "prior dimension does not match the SDE"));
            }
        }
        let grid = schedule.grid();
        integrate::record_indices(&grid, &self.reverse_record_times())
            .map_err(|e| SgmError::config("record_times", e.to_string()))?;
        if let Some(k) = &self.outputs.forward_kde {
            integrate::record_indices(&grid, &k.times)
                .map_err(|e| SgmError::config("outputs.forward_kde.times", e.to_string()))?;
            check_grid(&k.grid, spec.data_dim, "outputs.forward_kde.grid")?;
        }
        if let Some(k) = &self.outputs.reverse_kde {
            check_grid(&k.grid, spec.data_dim, "outputs.reverse_kde.grid")?;
        }
        if let Some(g) = &self.outputs.final_density {
            check_grid(g, spec.data_dim, "outputs.final_density")?;
        }
        if self.outputs.nearest_distance && self.data.as_point_cloud().is_none() {
            return Err(SgmError::config("outputs.nearest_distance", "needs point-cloud data"));
        }
        if self.outputs.slope_fit.is_some() && self.data.as_point_cloud().is_none() {
            return Err(SgmError::config("outputs.slope_fit", "needs point-cloud data"));
        }
        if self.outputs.prior_table.is_some() && spec.kind != SdeKind::Brownian {
            return Err(SgmError::config(
                "outputs.prior_table",
                "optimal priors are defined for Brownian noising",
            ));
        }
        Ok(())
    }

    /// Union of `record_times`, reverse KDE times and `T`, sorted.
    pub fn reverse_record_times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.record_times.clone();
        if let Some(k) = &self.outputs.reverse_kde {
            t.extend(&k.times);
        }
        t.push(self.sde.terminal_time);
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        t
    }

    fn needs_reverse(&self) -> bool {
        let o = &self.outputs;
        o.reverse_kde.is_some()
            || o.final_density.is_some()
            || o.nearest_distance
            || o.novikov
            || o.drift_distance
            || o.ensemble_csv
    }
}

fn check_grid(grid: &GridSpec, dim: usize, field: &str) -> Result<()> {
    GridSpec::new(grid.axes.clone()).map_err(|e| SgmError::config(field, e.to_string()))?;
    if grid.dim() != dim {
        return Err(SgmError::config(
            field,
            format!("grid has {} axes, data dimension is {dim}", grid.dim()),
        ));
    }
    Ok(())
}

/// Resolves the prior choice to a measure in data or state space.
pub fn resolve_prior(choice: &PriorChoice, spec: &SdeSpec, data: &Measure) -> Result<Measure> {
    match choice {
        PriorChoice::Explicit(m) => Ok(m.clone()),
        PriorChoice::Named(PriorName::Pushforward) => Ok(sde::pushforward(spec, data, spec.terminal_time)?.into()),
        PriorChoice::Named(PriorName::Optimal) => match spec.kind {
            SdeKind::Brownian => prior::optimal_gaussian_prior(data, spec.terminal_time, false)?.to_measure(),
            _ => Ok(GaussianMixture::standard_normal(spec.state_dim()).into()),
        },
    }
}

/// Command-line adjustments applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub full: bool,
    pub n_paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n_paths: usize,
    pub rng_algorithm: String,
    pub versions: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
    /// Scalar results (slope, losses, …) keyed by name.
    pub summary: BTreeMap<String, f64>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        fs::write(self.dir.join(name), &bytes)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}

fn with_context(name: &str, stage: &str) -> impl Fn(SgmError) -> SgmError {
    let (name, stage) = (name.to_string(), stage.to_string());
    move |e| match e {
        SgmError::Numerical(m) => SgmError::Numerical(format!("scenario `{name}`, {stage}: {m}")),
        SgmError::Domain(m) => SgmError::Domain(format!("scenario `{name}`, {stage}: {m}")),
        other => other,
    }
}

fn kde_files(w: &mut Writer, prefix: &str, ensemble: &PathEnsemble, kde: &KdeOutput, data_dim: usize) -> Result<()> {
    for &t in &kde.times {
        let r = ensemble.record_index(t)?;
        let states: Vec<_> = ensemble
            .states_at(r)
            .into_iter()
            .map(|s| s.rows(0, data_dim).into_owned())
            .collect();
        let field = metrics::kde_grid(&states, kde.beta, &kde.grid, false)?;
        let mut buf = Vec::new();
        field.write_csv(&mut buf, kde.sqrt_contrast)?;
        w.write(&format!("{prefix}_t{t}.csv"), buf)?;
    }
    Ok(())
}

/// Runs every requested output of `config` into `out_dir` and writes
/// `manifest.json`. Files are byte-identical across runs with equal inputs.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<Manifest> {
    let mut cfg = config.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if opts.full {
        if let Some(n) = cfg.full_n_paths {
            cfg.n_paths = n;
        }
    }
    if let Some(n) = opts.n_paths {
        cfg.n_paths = n;
    }
    cfg.validate()?;
    let spec = cfg.spec()?;
    let schedule = cfg.step_schedule()?;
    let name = cfg.name.clone();
    fs::create_dir_all(out_dir)?;
    let mut w = Writer {
        dir: out_dir.to_path_buf(),
        files: Vec::new(),
    };
    let mut summary = BTreeMap::new();
    let n = cfg.n_paths;
    let o = &cfg.outputs;

    if let Some(kde) = &o.forward_kde {
        let fwd = integrate::simulate_forward(
            &spec,
            &cfg.data,
            &schedule,
            n,
            rng::derive_seed(cfg.seed, 1),
            &kde.times,
        )
        .map_err(with_context(&name, "forward ensemble"))?;
        kde_files(&mut w, "forward_kde", &fwd, kde, spec.data_dim)?;
    }

    if cfg.needs_reverse() {
        let prior_measure = resolve_prior(&cfg.prior, &spec, &cfg.data)?;
        let times = cfg.reverse_record_times();
        let rev = integrate::simulate_reverse(
            &spec,
            &cfg.data,
            &cfg.perturbation,
            &prior_measure,
            &schedule,
            n,
            cfg.seed,
            &times,
            o.novikov,
        )
        .map_err(with_context(&name, "reverse ensemble"))?;
        if let Some(kde) = &o.reverse_kde {
            kde_files(&mut w, "reverse_kde", &rev, kde, spec.data_dim)?;
        }
        let finals: Vec<_> = rev
            .final_states()
            .into_iter()
            .map(|s| s.rows(0, spec.data_dim).into_owned())
            .collect();
        if let Some(grid) = &o.final_density {
            let beta = o.reverse_kde.as_ref().map(|k| k.beta).unwrap_or(DEFAULT_KDE_BETA);
            let sample = metrics::kde_grid(&finals, beta, grid, true)?;
            // data smoothed by N(0, dt_last I), the law the last reverse record targets
            let smoothing = SdeSpec::brownian(spec.data_dim, spec.terminal_time)?;
            let smoothed = sde::pushforward(&smoothing, &cfg.data, schedule.last_dt())?;
            let exact = metrics::density_grid(&smoothed, grid)?;
            let mut buf = Vec::new();
            write_final_density(&mut buf, &sample, &exact)?;
            w.write("final_density.csv", buf)?;
        }
        if o.nearest_distance {
            let cloud = cfg.data.as_point_cloud().expect("validated");
            let d = metrics::nearest_distance(&finals, cloud)?;
            summary.insert(
                "mean_nearest_distance".into(),
                d.iter().sum::<f64>() / d.len().max(1) as f64,
            );
            let mut buf = Vec::new();
            metrics::write_distance_csv(&d, &mut buf)?;
            w.write("nearest_distance.csv", buf)?;
        }
        if o.novikov {
            let acc = rev.girsanov.as_ref().expect("audited run");
            let rows = girsanov::novikov_curve(acc);
            let mut buf = Vec::new();
            girsanov::write_novikov_csv(&rows, &mut buf)?;
            w.write("novikov.csv", buf)?;
            let mut buf = Vec::new();
            girsanov::write_novikov_tails_csv(&rows, &mut buf)?;
            w.write("novikov_tails.csv", buf)?;
        }
        if o.drift_distance {
            let curve = girsanov::drift_distance_curve(&rev, &spec, &cfg.data, &cfg.perturbation)
                .map_err(with_context(&name, "drift distance"))?;
            let mut buf = Vec::new();
            girsanov::write_drift_distance_csv(&curve, &mut buf)?;
            w.write("drift_distance.csv", buf)?;
        }
        if o.ensemble_csv {
            let mut buf = Vec::new();
            rev.write_csv(&mut buf)?;
            w.write("reverse_ensemble.csv", buf)?;
        }
    }

    if o.losses {
        let end = [spec.terminal_time];
        let fwd = integrate::simulate_forward(&spec, &cfg.data, &schedule, n, rng::derive_seed(cfg.seed, 2), &end)?;
        let losses = girsanov::path_losses(&fwd, &spec, &cfg.data, &cfg.perturbation, "uniform")
            .map_err(with_context(&name, "path losses"))?;
        summary.insert("L2".into(), losses.l2);
        let mut buf = Vec::new();
        girsanov::write_losses_csv(&losses, &mut buf)?;
        w.write("losses.csv", buf)?;
    }

    if let Some(ts) = &o.prior_table {
        let rows = prior_table(&cfg.data, ts, false)?;
        let mut buf = Vec::new();
        write_prior_table(&rows, &mut buf)?;
        w.write("prior_table.csv", buf)?;
    }

    if let Some(s) = &o.slope_fit {
        let cloud = cfg.data.as_point_cloud().expect("validated");
        let grid = metrics::log_spaced(s.t_min, s.t_max, s.count);
        let fit = metrics::drift_explosion_slope(&spec, cloud, &grid, s.n, rng::derive_seed(cfg.seed, 3))?;
        summary.insert("slope".into(), fit.slope);
        summary.insert("intercept".into(), fit.intercept);
        let mut buf = Vec::new();
        std::io::Write::write_all(&mut buf, b"t,mean_norm\n")?;
        for (t, m) in &fit.mean_norms {
            std::io::Write::write_all(&mut buf, format!("{t},{m}\n").as_bytes())?;
        }
        w.write("slope_fit.csv", buf)?;
    }

    w.files.sort_by(|a, b| a.path.cmp(&b.path));
    let config_json = serde_json::to_string(&cfg)?;
    let manifest = Manifest {
        name,
        config_sha256: hex::encode(Sha256::digest(config_json.as_bytes())),
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        versions: BTreeMap::from([("sgmlab".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
        files: w.files,
        summary,
    };
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

fn write_final_density<W: std::io::Write>(
    mut w: W,
    sample: &metrics::DensityField,
    data: &metrics::DensityField,
) -> Result<()> {
    match sample.grid.dim() {
        1 => writeln!(w, "x,sample,data")?,
        _ => writeln!(w, "x,y,sample,data")?,
    }
    for ((p, s), d) in sample.grid.points().iter().zip(&sample.values).zip(&data.values) {
        for c in p {
            write!(w, "{c},")?;
        }
        writeln!(w, "{s},{d}")?;
    }
    Ok(())
}

/// One line of the prior table.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorRow {
    pub fit: prior::PriorFit,
    /// `KL(p_T | fitted prior)` by quadrature, when `d <= 2`.
    pub quadrature_kl: Option<f64>,
}

/// Optimal priors and KL values for Brownian noising at each `T`.
pub fn prior_table(data: &Measure, ts: &[f64], isotropic: bool) -> Result<Vec<PriorRow>> {
    let d = data.dim();
    ts.iter()
        .map(|&t| {
            let fit = prior::optimal_gaussian_prior(data, t, isotropic)?;
            let quadrature_kl = if d <= 2 {
                let p_t = sde::pushforward(&SdeSpec::brownian(d, t)?, data, t)?;
                let method = if d == 1 {
                    KlMethod::Quadrature1d
                } else {
                    KlMethod::Quadrature2d
                };
                Some(prior::kl_estimate(&p_t, &fit.to_mixture()?, method)?)
            } else {
                None
            };
            Ok(PriorRow { fit, quadrature_kl })
        })
        .collect()
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// `prior_table.csv`: `T,mean,covariance,kl_bound,quadrature_kl`; vectors and
/// matrices (row-major) are `;`-separated.
pub fn write_prior_table<W: std::io::Write>(rows: &[PriorRow], mut w: W) -> Result<()> {
    writeln!(w, "T,mean,covariance,kl_bound,quadrature_kl")?;
    for r in rows {
        let cov = match &r.fit.covariance {
            PriorCovariance::Isotropic(c) => c.to_string(),
            PriorCovariance::Full(m) => join(m.transpose().iter().cloned()),
        };
        let kl = r.quadrature_kl.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.fit.t,
            join(r.fit.mean.iter().cloned()),
            cov,
            r.fit.kl_bound,
            kl
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, _) in PRESETS {
            let cfg = ScenarioConfig::preset(name).unwrap();
            assert_eq!(&cfg.name, name);
            let back = ScenarioConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn config_errors_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["n_paths"] = serde_json::json!("many");
        match ScenarioConfig::from_json(&v.to_string()) {
            Err(SgmError::Config { field, .. }) => assert_eq!(field, "n_paths"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["schedule"] = serde_json::json!("nonexistent");
        match ScenarioConfig::from_json(&v.to_string()) {
            Err(SgmError::Config { field, .. }) => assert_eq!(field, "schedule"),
            other => panic!("unexpected {other:?}"),
        }
        let mut v: serde_json::Value = serde_json::from_str(PRESETS[0].1).unwrap();
        v["perturbation"] = serde_json::json!({"kind": "constant", "vector": [1.0, 2.0]});
        match ScenarioConfig::from_json(&v.to_string()) {
            Err(SgmError::Config { field, .. }) => assert_eq!(field, "perturbation"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(ScenarioConfig::preset("nope").is_err());
    }
}
