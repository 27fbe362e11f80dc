//! Euler–Maruyama ensembles on piecewise-constant step schedules.
//!
//! Random-number order: path `i` draws from the stream `(seed, i)`; it first
//! samples its initial state from the initial law, then consumes one standard
//! normal per state coordinate per step (CLD position coordinates included,
//! even though their noise scale is zero). Paths never share state, so the
//! ensemble is bit-identical however rayon schedules them.
//!
//! Reverse runs evaluate the drift at the left end of each step and stop one
//! step short of `T`: the score of point-cloud data does not exist at data
//! time 0. The state reached at `T − dt_last` is reported as the record at
//! `T`; `state_times` keeps the time the state actually sits at.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SgmError};
use crate::girsanov::GirsanovAccumulator;
use crate::measures::Measure;
use crate::rng::{self, RNG_ALGORITHM};
use crate::score::{DriftField, DriftPerturbation, ScoreModel, Scratch};
use crate::sde::{self, SdeSpec};

const SCHEDULE_TOLERANCE: f64 = 1e-12;
const RECORD_TOLERANCE: f64 = 1e-9;

/// One constant-step piece `[start, end]` with step `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub dt: f64,
}

impl Segment {
    fn steps(&self) -> usize {
        ((self.end - self.start) / self.dt).round() as usize
    }
}

/// Contiguous segments covering `[0, T]`. Serialized as `[[t0, t1, dt], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct StepSchedule {
    segments: Vec<Segment>,
}

impl TryFrom<Vec<[f64; 3]>> for StepSchedule {
    type Error = SgmError;

    fn try_from(rows: Vec<[f64; 3]>) -> Result<Self> {
        StepSchedule::new(
            rows.into_iter()
                .map(|[start, end, dt]| Segment { start, end, dt })
                .collect(),
        )
    }
}

impl From<StepSchedule> for Vec<[f64; 3]> {
    fn from(s: StepSchedule) -> Self {
        s.segments.iter().map(|g| [g.start, g.end, g.dt]).collect()
    }
}

/// Named schedules usable from scenario files.
pub const SCHEDULE_PRESETS: &[&str] = &["uniform_2000", "three_segment"];

impl StepSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return invalid("schedule needs at least one segment");
        }
        if segments[0].start.abs() > SCHEDULE_TOLERANCE {
            return invalid(format!("schedule must start at 0, starts at {}", segments[0].start));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.dt > 0.0 && s.dt.is_finite()) {
                return invalid(format!("segment {i}: dt must be positive, got {}", s.dt));
            }
            if !(s.end > s.start) {
                return invalid(format!("segment {i}: end {} not after start {}", s.end, s.start));
            }
            let len = s.end - s.start;
            let n = (len / s.dt).round();
            if n < 1.0 || (n * s.dt - len).abs() > SCHEDULE_TOLERANCE * len.max(1.0) {
                return invalid(format!(
                    "segment {i}: length {len} is not an integer multiple of dt {}",
                    s.dt
                ));
            }
            if i > 0 && (segments[i - 1].end - s.start).abs() > SCHEDULE_TOLERANCE {
                return invalid(format!("segment {i} does not start where segment {} ends", i - 1));
            }
        }
        Ok(Self { segments })
    }

    /// `n` equal steps on `[0, T]`.
    pub fn uniform(terminal_time: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return invalid("uniform schedule needs at least one step");
        }
        Self::new(vec![Segment {
            start: 0.0,
            end: terminal_time,
            dt: terminal_time / n as f64,
        }])
    }

    /// 1000 steps on each of `[0, 0.9T]`, `[0.9T, 0.99T]`, `[0.99T, T]`.
    pub fn three_segment(terminal_time: f64) -> Result<Self> {
        let (a, b, t) = (0.9 * terminal_time, 0.99 * terminal_time, terminal_time);
        Self::new(vec![
            Segment {
                start: 0.0,
                end: a,
                dt: a / 1000.0,
            },
            Segment {
                start: a,
                end: b,
                dt: (b - a) / 1000.0,
            },
            Segment {
                start: b,
                end: t,
                dt: (t - b) / 1000.0,
            },
        ])
    }

    pub fn preset(name: &str, terminal_time: f64) -> Result<Self> {
        match name {
            "uniform_2000" => Self::uniform(terminal_time, 2000),
            "three_segment" => Self::three_segment(terminal_time),
            other => invalid(format!(
                "unknown schedule preset `{other}` (known: {})",
                SCHEDULE_PRESETS.join(", ")
            )),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn end(&self) -> f64 {
        self.segments.last().map(|s| s.end).unwrap_or(0.0)
    }

    pub fn n_steps(&self) -> usize {
        self.segments.iter().map(Segment::steps).sum()
    }

    pub fn last_dt(&self) -> f64 {
        let s = self.segments.last().expect("validated schedule is non-empty");
        (s.end - s.start) / s.steps() as f64
    }

    /// All grid times `t_0 = 0 < t_1 < … < t_n = T`.
    pub fn grid(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_steps() + 1);
        out.push(0.0);
        for s in &self.segments {
            let n = s.steps();
            let h = (s.end - s.start) / n as f64;
            for j in 1..n {
                out.push(s.start + j as f64 * h);
            }
            out.push(s.end);
        }
        out
    }

    /// Errors unless the schedule ends at `terminal_time`.
    pub fn check_span(&self, terminal_time: f64) -> Result<()> {
        if (self.end() - terminal_time).abs() > SCHEDULE_TOLERANCE * terminal_time.max(1.0) {
            return invalid(format!(
                "schedule ends at {}, SDE terminal time is {terminal_time}",
                self.end()
            ));
        }
        Ok(())
    }
}

/// Maps each record time to its grid index; record times must be strictly
/// increasing grid points.
pub fn record_indices(grid: &[f64], record_times: &[f64]) -> Result<Vec<usize>> {
    let scale = grid.last().copied().unwrap_or(1.0).max(1.0);
    let mut out = Vec::with_capacity(record_times.len());
    for (j, &t) in record_times.iter().enumerate() {
        if j > 0 && !(t > record_times[j - 1]) {
            return invalid("record times must be strictly increasing");
        }
        let pos = grid.partition_point(|g| *g < t - RECORD_TOLERANCE * scale);
        match grid.get(pos) {
            Some(g) if (g - t).abs() <= RECORD_TOLERANCE * scale => out.push(pos),
            _ => return invalid(format!("record time {t} is not a schedule grid point")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Everything needed to regenerate an ensemble bit-for-bit.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub spec: SdeSpec,
    pub schedule: StepSchedule,
    /// Initial law (data for forward runs, prior for reverse runs).
    pub init: Measure,
    /// Data measure defining the reference score (reverse runs).
    pub data: Option<Measure>,
    pub perturbation: DriftPerturbation,
}

/// Recorded states of `n_paths` Euler–Maruyama paths.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub direction: Direction,
    pub seed: u64,
    pub rng_algorithm: &'static str,
    pub dim: usize,
    pub n_paths: usize,
    pub record_times: Vec<f64>,
    /// Time each recorded state actually sits at; equal to `record_times`
    /// except for a reverse record at `T`, which holds the state at `T − dt_last`.
    pub state_times: Vec<f64>,
    pub provenance: Provenance,
    /// Present when the run was audited (see [`simulate_reverse`]).
    pub girsanov: Option<GirsanovAccumulator>,
    record_grid: Vec<usize>,
    /// Path-major: `states[(path * n_records + record) * dim + coord]`.
    states: Vec<f64>,
}

impl PathEnsemble {
    pub fn n_records(&self) -> usize {
        self.record_times.len()
    }

    pub fn state(&self, path: usize, record: usize) -> &[f64] {
        let i = (path * self.n_records() + record) * self.dim;
        &self.states[i..i + self.dim]
    }

    pub fn states_at(&self, record: usize) -> Vec<DVector<f64>> {
        (0..self.n_paths)
            .map(|p| DVector::from_column_slice(self.state(p, record)))
            .collect()
    }

    /// One coordinate of every path at a record.
    pub fn coordinate_at(&self, record: usize, coord: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, record)[coord]).collect()
    }

    /// Index of the record at time `t`.
    pub fn record_index(&self, t: f64) -> Result<usize> {
        let scale = self.provenance.spec.terminal_time.max(1.0);
        self.record_times
            .iter()
            .position(|r| (r - t).abs() <= RECORD_TOLERANCE * scale)
            .ok_or_else(|| SgmError::InvalidArgument(format!("{t} is not a record time of the ensemble")))
    }

    pub fn final_states(&self) -> Vec<DVector<f64>> {
        match self.n_records() {
            0 => Vec::new(),
            n => self.states_at(n - 1),
        }
    }

    /// CSV with header `path_id,time,x_0,…` ordered by path, then time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "path_id,time")?;
        for i in 0..self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths {
            for (r, t) in self.record_times.iter().enumerate() {
                write!(w, "{p},{t}")?;
                for v in self.state(p, r) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Brings a measure to state space: CLD laws given in data space gain
/// `V ~ N(0, I)`; anything already in state space is used as is.
fn state_law(spec: &SdeSpec, measure: &Measure, what: &str) -> Result<Measure> {
    if measure.dim() == spec.state_dim() {
        return Ok(measure.clone());
    }
    if measure.dim() == spec.data_dim {
        return Ok(Measure::Mixture(sde::to_state_space(spec, measure)?));
    }
    invalid(format!(
        "{what} has dimension {}, SDE state dimension is {}",
        measure.dim(),
        spec.state_dim()
    ))
}

/// Per-path buffers for one Euler–Maruyama run.
struct Work {
    x: Vec<f64>,
    drift: Vec<f64>,
    score: Vec<f64>,
    error: Vec<f64>,
    audit_error: Vec<f64>,
    z: Vec<f64>,
    scratch: Scratch,
}

impl Work {
    fn new(d: usize) -> Self {
        Self {
            x: vec![0.0; d],
            drift: vec![0.0; d],
            score: vec![0.0; d],
            error: vec![0.0; d],
            audit_error: vec![0.0; d],
            z: vec![0.0; d],
            scratch: Scratch::default(),
        }
    }
}

struct Plan {
    grid: Vec<f64>,
    record_grid: Vec<usize>,
    /// Grid index after which the run stops.
    last_index: usize,
}

impl Plan {
    /// Record slots filled once the state reaches grid index `k`.
    fn slots_at(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.record_grid
            .iter()
            .enumerate()
            .filter(move |(_, g)| (**g).min(self.last_index) == k)
            .map(|(j, _)| j)
    }
}

fn for_each_path<F>(n: usize, stride: usize, extra: usize, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(usize, &mut [f64], &mut [f64]) + Sync,
{
    let mut states = vec![0.0; n * stride];
    let mut side = vec![0.0; n * extra];
    if stride == 0 && extra == 0 {
        let mut a: [f64; 0] = [];
        let mut b: [f64; 0] = [];
        (0..n).for_each(|p| f(p, &mut a, &mut b));
        return (states, side);
    }
    // chunk sizes must be nonzero; pad with a dummy slot when one side is empty
    let stride_eff = stride.max(1);
    let extra_eff = extra.max(1);
    if stride == 0 {
        states = vec![0.0; n];
    }
    if extra == 0 {
        side = vec![0.0; n];
    }
    states
        .par_chunks_mut(stride_eff)
        .zip(side.par_chunks_mut(extra_eff))
        .enumerate()
        .for_each(|(p, (s, e))| f(p, &mut s[..stride], &mut e[..extra]));
    if stride == 0 {
        states.clear();
    }
    if extra == 0 {
        side.clear();
    }
    (states, side)
}

fn check_finite(states: &[f64], what: &str) -> Result<()> {
    let bad = states.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(SgmError::Numerical(format!(
            "{what} ensemble diverged: {bad} non-finite coordinates"
        )));
    }
    Ok(())
}

/// Forward Euler–Maruyama `X_{k+1} = X_k + β(X_k) dt + σ √dt Z_k` from `init`.
pub fn simulate_forward(
    spec: &SdeSpec,
    init: &Measure,
    schedule: &StepSchedule,
    n: usize,
    seed: u64,
    record_times: &[f64],
) -> Result<PathEnsemble> {
    let law = state_law(spec, init, "initial measure")?;
    schedule.check_span(spec.terminal_time)?;
    let grid = schedule.grid();
    let record_grid = record_indices(&grid, record_times)?;
    let plan = Plan {
        last_index: grid.len() - 1,
        grid,
        record_grid,
    };
    let (states, _) = forward_paths(spec, &law, &plan, n, seed, None)?;
    check_finite(&states, "forward")?;
    Ok(PathEnsemble {
        direction: Direction::Forward,
        seed,
        rng_algorithm: RNG_ALGORITHM,
        dim: spec.state_dim(),
        n_paths: n,
        record_times: record_times.to_vec(),
        state_times: record_times.to_vec(),
        provenance: Provenance {
            spec: *spec,
            schedule: schedule.clone(),
            init: init.clone(),
            data: None,
            perturbation: DriftPerturbation::None,
        },
        girsanov: None,
        record_grid: plan.record_grid,
        states,
    })
}

/// Runs forward paths; with `loss_fields` (error fields at the right end of
/// every step) also returns per path `Σ_k ‖e(X_{k+1}, t_{k+1})‖² dt_k`.
fn forward_paths(
    spec: &SdeSpec,
    law: &Measure,
    plan: &Plan,
    n: usize,
    seed: u64,
    loss_fields: Option<&[DriftField]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = spec.state_dim();
    let n_rec = plan.record_grid.len();
    let scales = spec.noise_scales();
    let extra = usize::from(loss_fields.is_some());
    Ok(for_each_path(n, n_rec * d, extra, |p, out, loss| {
        let mut rng = rng::stream(seed, p as u64);
        let mut w = Work::new(d);
        law.sample_into(&mut rng, &mut w.x);
        let mut acc = 0.0;
        for j in plan.slots_at(0) {
            out[j * d..(j + 1) * d].copy_from_slice(&w.x);
        }
        for k in 0..plan.last_index {
            let dt = plan.grid[k + 1] - plan.grid[k];
            let sq = dt.sqrt();
            spec.drift_into(&w.x, &mut w.drift);
            rng::fill_normals(&mut rng, &mut w.z);
            for i in 0..d {
                w.x[i] += w.drift[i] * dt + scales[i] * sq * w.z[i];
            }
            if let Some(fields) = loss_fields {
                let f = &fields[k];
                f.score_and_error(&w.x, &mut w.score, &mut w.error, &mut w.scratch);
                acc += w.error.iter().map(|e| e * e).sum::<f64>() * dt;
            }
            for j in plan.slots_at(k + 1) {
                out[j * d..(j + 1) * d].copy_from_slice(&w.x);
            }
        }
        if extra == 1 {
            loss[0] = acc;
        }
    }))
}

/// Reverse Euler–Maruyama for the (perturbed) reverse SDE
/// `dY = [−β(Y) + σσᵀ(∇log p_{T−t}(Y) + e(Y, T−t))] dt + σ dW` started in
/// `prior`. Record times are reverse times in `[0, T]`.
///
/// With `audit` set, the Girsanov integrals `∫ σᵀe · dW` and `∫ ‖σᵀe‖² dt`
/// of the run's own perturbation are accumulated from the very normals that
/// drive the paths.
#[allow(clippy::too_many_arguments)]
pub fn simulate_reverse(
    spec: &SdeSpec,
    measure: &Measure,
    perturbation: &DriftPerturbation,
    prior: &Measure,
    schedule: &StepSchedule,
    n: usize,
    seed: u64,
    record_times: &[f64],
    audit: bool,
) -> Result<PathEnsemble> {
    let law = state_law(spec, prior, "prior")?;
    schedule.check_span(spec.terminal_time)?;
    let model = ScoreModel::new(spec, measure, perturbation)?;
    let grid = schedule.grid();
    let record_grid = record_indices(&grid, record_times)?;
    let plan = Plan {
        last_index: grid.len() - 2,
        grid,
        record_grid,
    };
    let fields = reverse_fields(&model, &plan)?;
    let mode = if audit { Audit::Own } else { Audit::Off };
    let (states, side) = reverse_paths(spec, &law, &fields, mode, &plan, n, seed);
    check_finite(&states, "reverse")?;
    let state_times: Vec<f64> = plan
        .record_grid
        .iter()
        .map(|&g| plan.grid[g.min(plan.last_index)])
        .collect();
    let girsanov = audit.then(|| GirsanovAccumulator::from_interleaved(record_times.to_vec(), n, &side));
    Ok(PathEnsemble {
        direction: Direction::Reverse,
        seed,
        rng_algorithm: RNG_ALGORITHM,
        dim: spec.state_dim(),
        n_paths: n,
        record_times: record_times.to_vec(),
        state_times,
        provenance: Provenance {
            spec: *spec,
            schedule: schedule.clone(),
            init: prior.clone(),
            data: Some(measure.clone()),
            perturbation: perturbation.clone(),
        },
        girsanov,
        record_grid: plan.record_grid,
        states,
    })
}

/// Drift fields frozen at data time `T − t_k` for every step taken.
fn reverse_fields(model: &ScoreModel, plan: &Plan) -> Result<Vec<DriftField>> {
    let t_end = model.spec().terminal_time;
    (0..plan.last_index)
        .into_par_iter()
        .map(|k| model.at(t_end - plan.grid[k]))
        .collect()
}

/// Which error field the Girsanov integrals are accumulated for.
#[derive(Clone, Copy)]
enum Audit<'a> {
    Off,
    Own,
    Other(&'a [DriftField]),
}

/// Returns states and, when auditing, per path and record the pair
/// `(ito, quad)` interleaved.
fn reverse_paths(
    spec: &SdeSpec,
    law: &Measure,
    fields: &[DriftField],
    audit: Audit<'_>,
    plan: &Plan,
    n: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let d = spec.state_dim();
    let n_rec = plan.record_grid.len();
    let scales = spec.noise_scales();
    let extra = if matches!(audit, Audit::Off) { 0 } else { 2 * n_rec };
    for_each_path(n, n_rec * d, extra, |p, out, side| {
        let mut rng = rng::stream(seed, p as u64);
        let mut w = Work::new(d);
        law.sample_into(&mut rng, &mut w.x);
        let (mut ito, mut quad) = (0.0, 0.0);
        let store = |k: usize, x: &[f64], ito: f64, quad: f64, out: &mut [f64], side: &mut [f64]| {
            for j in plan.slots_at(k) {
                out[j * d..(j + 1) * d].copy_from_slice(x);
                if !side.is_empty() {
                    side[2 * j] = ito;
                    side[2 * j + 1] = quad;
                }
            }
        };
        store(0, &w.x, 0.0, 0.0, out, side);
        for k in 0..plan.last_index {
            let dt = plan.grid[k + 1] - plan.grid[k];
            let sq = dt.sqrt();
            fields[k].reverse_drift_into(&w.x, &mut w.drift, &mut w.score, &mut w.error, &mut w.scratch);
            rng::fill_normals(&mut rng, &mut w.z);
            let e = match audit {
                Audit::Off => None,
                Audit::Own => Some(&w.error),
                Audit::Other(af) => {
                    af[k].error_into(&w.x, &w.score, &mut w.audit_error, &mut w.scratch);
                    Some(&w.audit_error)
                }
            };
            if let Some(e) = e {
                for i in 0..d {
                    let u = scales[i] * e[i];
                    ito += u * sq * w.z[i];
                    quad += u * u * dt;
                }
            }
            for i in 0..d {
                w.x[i] += w.drift[i] * dt + scales[i] * sq * w.z[i];
            }
            store(k + 1, &w.x, ito, quad, out, side);
        }
    })
}

/// Regenerates a reverse ensemble from its provenance and accumulates the
/// Girsanov integrals of `audit` instead of the run's own perturbation.
pub(crate) fn replay_reverse_audit(ensemble: &PathEnsemble, audit: &DriftPerturbation) -> Result<Vec<f64>> {
    let pv = &ensemble.provenance;
    let data = pv
        .data
        .as_ref()
        .ok_or_else(|| SgmError::InvalidArgument("ensemble has no reverse provenance".into()))?;
    let spec = &pv.spec;
    let law = state_law(spec, &pv.init, "prior")?;
    let grid = pv.schedule.grid();
    let plan = Plan {
        last_index: grid.len() - 2,
        grid,
        record_grid: ensemble.record_grid.clone(),
    };
    let fields = reverse_fields(&ScoreModel::new(spec, data, &pv.perturbation)?, &plan)?;
    let (_, side) = if *audit == pv.perturbation {
        reverse_paths(spec, &law, &fields, Audit::Own, &plan, ensemble.n_paths, ensemble.seed)
    } else {
        let audit_fields = reverse_fields(&ScoreModel::new(spec, data, audit)?, &plan)?;
        reverse_paths(
            spec,
            &law,
            &fields,
            Audit::Other(&audit_fields),
            &plan,
            ensemble.n_paths,
            ensemble.seed,
        )
    };
    Ok(side)
}

/// Regenerates a forward ensemble and returns per path `Σ_k ‖e‖² dt_k` with
/// `e` evaluated at the right end of every step (data time `t_{k+1} > 0`).
pub(crate) fn replay_forward_losses(
    ensemble: &PathEnsemble,
    measure: &Measure,
    perturbation: &DriftPerturbation,
) -> Result<Vec<f64>> {
    let pv = &ensemble.provenance;
    let spec = &pv.spec;
    let law = state_law(spec, &pv.init, "initial measure")?;
    let grid = pv.schedule.grid();
    let model = ScoreModel::new(spec, measure, perturbation)?;
    let fields: Vec<DriftField> = (1..grid.len())
        .into_par_iter()
        .map(|k| model.at(grid[k]))
        .collect::<Result<_>>()?;
    let plan = Plan {
        last_index: grid.len() - 1,
        grid,
        record_grid: Vec::new(),
    };
    let (_, losses) = forward_paths(spec, &law, &plan, ensemble.n_paths, ensemble.seed, Some(&fields))?;
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_circle_points, GaussianMixture, PointCloud};

    #[test]
    fn schedule_validation() {
        let s = StepSchedule::three_segment(1.0).unwrap();
        assert_eq!(s.n_steps(), 3000);
        assert!((s.last_dt() - 1e-5).abs() < 1e-15);
        let g = s.grid();
        assert_eq!(g.len(), 3001);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));

        let bad = |rows: Vec<[f64; 3]>| StepSchedule::try_from(rows).is_err();
        assert!(bad(vec![]));
        assert!(bad(vec![[0.0, 1.0, 0.3]]));
        assert!(bad(vec![[0.0, 0.5, 0.1], [0.6, 1.0, 0.1]]));
        assert!(bad(vec![[0.1, 1.0, 0.1]]));
        assert!(bad(vec![[0.0, 1.0, -0.1]]));
        assert!(!bad(vec![[0.0, 0.5, 0.1], [0.5, 1.0, 0.05]]));
    }

    #[test]
    fn schedule_json_form() {
        let s: StepSchedule = serde_json::from_str("[[0, 0.5, 0.25], [0.5, 1, 0.125]]").unwrap();
        assert_eq!(s.n_steps(), 6);
        let back: StepSchedule = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn record_times_must_be_on_grid() {
        let g = StepSchedule::uniform(1.0, 4).unwrap().grid();
        assert_eq!(record_indices(&g, &[0.0, 0.5, 1.0]).unwrap(), vec![0, 2, 4]);
        assert!(record_indices(&g, &[0.3]).is_err());
        assert!(record_indices(&g, &[0.5, 0.25]).is_err());
    }

    #[test]
    fn single_brownian_step_is_a_normal_draw() {
        let spec = SdeSpec::brownian(1, 1.0).unwrap();
        let origin: Measure = PointCloud::uniform(vec![DVector::zeros(1)]).unwrap().into();
        let e = simulate_forward(&spec, &origin, &StepSchedule::uniform(1.0, 1).unwrap(), 3, 5, &[1.0]).unwrap();
        for p in 0..3 {
            let mut rng = rng::stream(5, p as u64);
            let mut x = [0.0];
            origin.sample_into(&mut rng, &mut x);
            let mut z = [0.0];
            rng::fill_normals(&mut rng, &mut z);
            assert_eq!(e.state(p, 0), &z);
        }
    }

    #[test]
    fn empty_ensemble_keeps_metadata() {
        let spec = SdeSpec::ou(2, 1.0).unwrap();
        let init: Measure = GaussianMixture::standard_normal(2).into();
        let s = StepSchedule::uniform(1.0, 10).unwrap();
        let e = simulate_forward(&spec, &init, &s, 0, 1, &[0.0, 1.0]).unwrap();
        assert_eq!(e.n_paths, 0);
        assert_eq!(e.record_times, vec![0.0, 1.0]);
        assert!(e.final_states().is_empty());
        let r = simulate_reverse(&spec, &init, &DriftPerturbation::None, &init, &s, 0, 1, &[1.0], true).unwrap();
        assert_eq!(r.girsanov.unwrap().n_paths(), 0);
    }

    #[test]
    fn reverse_final_record_sits_one_step_short() {
        let spec = SdeSpec::brownian(2, 1.0).unwrap();
        let data: Measure = make_circle_points(4, 1.0).unwrap().into();
        let prior: Measure = GaussianMixture::standard_normal(2).into();
        let s = StepSchedule::uniform(1.0, 8).unwrap();
        let e = simulate_reverse(
            &spec,
            &data,
            &DriftPerturbation::None,
            &prior,
            &s,
            4,
            3,
            &[0.875, 1.0],
            false,
        )
        .unwrap();
        assert_eq!(e.state_times, vec![0.875, 0.875]);
        for p in 0..4 {
            assert_eq!(e.state(p, 0), e.state(p, 1));
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let spec = SdeSpec::brownian(2, 1.0).unwrap();
        let data: Measure = make_circle_points(9, 1.0).unwrap().into();
        let prior: Measure = GaussianMixture::standard_normal(2).into();
        let s = StepSchedule::uniform(1.0, 50).unwrap();
        let run = || {
            simulate_reverse(
                &spec,
                &data,
                &DriftPerturbation::None,
                &prior,
                &s,
                64,
                11,
                &[0.5, 1.0],
                false,
            )
            .unwrap()
        };
        let a = run();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(run);
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn csv_layout() {
        let spec = SdeSpec::brownian(2, 1.0).unwrap();
        let init: Measure = make_circle_points(4, 1.0).unwrap().into();
        let e = simulate_forward(&spec, &init, &StepSchedule::uniform(1.0, 2).unwrap(), 2, 0, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path_id,time,x_0,x_1");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,0,"));
        assert!(lines[4].starts_with("1,1,"));
    }
}
