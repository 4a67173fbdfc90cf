//! Command orchestration shared by the binary and the test suites. Every command reads a
//! [`RunConfig`], writes its artifacts under `out` and returns the manifest it saved there.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::config::{RunConfig, TargetKind};
use crate::domain::{MultiPatchDomain, PointSample};
use crate::error::{Error, Result};
use crate::geometry::LensShape;
use crate::io::{save_field_csv, save_gradient_csv, save_history_csv, save_probe_csv, save_shapes_csv, save_snapshots, Manifest, StoredSeries};
use crate::optimizer::{optimize as descend, OptimizationHistory};
use crate::problem::{synthetic_target, LensProblem, Setup, TRACKING_PATCH};
use crate::state::{solve_state, TimeSeriesField};
use crate::target::TargetField;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub deterministic: bool,
    pub workers: usize,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions { out: out.into(), deterministic: true, workers: 1 }
    }
}

struct Recorder {
    manifest: Manifest,
    out: PathBuf,
    clock: Instant,
}

impl Recorder {
    fn new(command: &str, cfg: &RunConfig, opts: &RunOptions) -> Result<Self> {
        std::fs::create_dir_all(&opts.out).map_err(|e| Error::io(&opts.out, e))?;
        Ok(Recorder { manifest: Manifest::new(command, cfg, opts.deterministic, opts.workers)?, out: opts.out.clone(), clock: Instant::now() })
    }

    fn lap(&mut self, phase: &str) {
        let t = self.clock.elapsed().as_secs_f64();
        self.manifest.timings.insert(phase.into(), t);
        self.clock = Instant::now();
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.manifest.outputs.push(name.into());
        self.out.join(name)
    }

    fn note(&mut self, key: &str, v: serde_json::Value) {
        self.manifest.summary.insert(key.into(), v);
    }

    fn finish(self) -> Result<Manifest> {
        self.manifest.save(&self.out.join(MANIFEST))?;
        Ok(self.manifest)
    }
}

/// Tracking data described by the target section.
pub fn build_target(cfg: &RunConfig, setup: &Setup<f64>) -> Result<TargetField<f64>> {
    let t = &cfg.target;
    match t.kind {
        TargetKind::Synthetic => synthetic_target(setup, &t.goal.params()?, t.factor, t.noise, cfg.seed),
        TargetKind::Gaussian => Ok(TargetField::Gaussian(t.gaussian()?)),
        TargetKind::Stored => {
            let path = t.path.as_deref().ok_or_else(|| Error::Config("a stored target needs target.path".into()))?;
            let s = StoredSeries::load(path)?;
            Ok(TargetField::Stored { grid: s.grid()?, values: s.block("x")?.to_vec() })
        }
    }
}

/// Builds the problem and records the goal lens when the data are synthetic.
pub fn build_problem(cfg: &RunConfig) -> Result<LensProblem<f64>> {
    let setup = cfg.setup::<f64>()?;
    let target = build_target(cfg, &setup)?;
    let p = LensProblem::new(setup, &target)?;
    match cfg.target.kind {
        TargetKind::Synthetic => p.with_goal(&cfg.target.goal.params()?),
        _ => Ok(p),
    }
}

fn probes(cfg: &RunConfig, domain: &MultiPatchDomain<f64>) -> Result<Vec<PointSample<f64>>> {
    cfg.output.probes.iter().map(|&p| domain.sample_at(p)).collect()
}

fn write_fields(
    rec: &mut Recorder,
    cfg: &RunConfig,
    snapshot_every: usize,
    stem: &str,
    domain: &MultiPatchDomain<f64>,
    field: &TimeSeriesField<f64>,
) -> Result<()> {
    let probes = probes(cfg, domain)?;
    if !probes.is_empty() {
        let p = rec.path(&format!("{stem}_probes.csv"));
        save_probe_csv(&p, &probes, field)?;
    }
    let dir = rec.out.join("snapshots");
    for name in save_snapshots(&dir, stem, domain, field, snapshot_every)? {
        rec.manifest.outputs.push(format!("snapshots/{name}"));
    }
    let last = field.x.last().ok_or_else(|| Error::Precondition("empty history".into()))?;
    let p = rec.path(&format!("{stem}_final.csv"));
    save_field_csv(&p, domain, last)
}

/// Forward solve on the initial lens; `save_state` also stores the full history for `adjoint`.
pub fn simulate(cfg: &RunConfig, opts: &RunOptions, save_state: bool) -> Result<Manifest> {
    let mut rec = Recorder::new("simulate", cfg, opts)?;
    let setup = cfg.setup::<f64>()?;
    let domain = setup.domain()?;
    let sys = setup.assemble(&domain)?;
    rec.lap("assembly");
    let (u, stats) = solve_state(&sys, &setup.grid, &setup.alpha, &setup.state)?;
    rec.lap("state");
    write_fields(&mut rec, cfg, cfg.output.snapshot_every, "state", &domain, &u)?;
    if save_state {
        let p = rec.path("state.bin");
        StoredSeries::from_field(&u).save(&p)?;
    }
    rec.lap("output");
    rec.note("n_dofs", json!(domain.n_global()));
    rec.note("n_steps", json!(setup.grid.n_steps));
    rec.note("mean_inner_iterations", json!(stats.mean()));
    rec.note("max_abs_pressure", json!(u.max_abs()));
    rec.finish()
}

/// Adjoint and shape gradient on the initial lens. The forward history is read from
/// `forward` when given and recomputed otherwise.
pub fn adjoint(cfg: &RunConfig, opts: &RunOptions, forward: Option<&Path>) -> Result<Manifest> {
    let mut rec = Recorder::new("adjoint", cfg, opts)?;
    let problem = build_problem(cfg)?;
    rec.lap("target");
    let shape = problem.initial_shape()?;
    let eval = problem.evaluate_with(&shape, forward.map(StoredSeries::load).transpose()?.map(|s| s.to_field()).transpose()?)?;
    rec.lap("state");
    let (g, p, stats) = problem.gradient(&eval)?;
    rec.lap("adjoint");
    write_fields(&mut rec, cfg, cfg.output.snapshot_every, "adjoint", &eval.domain, &p)?;
    let path = rec.path("gradient.csv");
    save_gradient_csv(&path, &shape, &g)?;
    rec.lap("output");
    rec.note("cost", json!(eval.cost));
    rec.note("gradient_norm", json!(g.norm()));
    rec.note("mean_adjoint_iterations", json!(stats.mean()));
    rec.finish()
}

/// Full descent; writes the iteration table and the boundary rows of every iterate.
pub fn optimize(cfg: &RunConfig, opts: &RunOptions) -> Result<(Manifest, OptimizationHistory<f64, LensShape<f64>>)> {
    let mut rec = Recorder::new("optimize", cfg, opts)?;
    let problem = build_problem(cfg)?;
    rec.lap("target");
    let hist = descend(&problem, problem.initial_shape()?, &cfg.optimizer)?;
    rec.lap("optimize");
    let p = rec.path("history.csv");
    save_history_csv(&p, &hist)?;
    let p = rec.path("shapes.csv");
    save_shapes_csv(&p, &hist.shapes)?;
    rec.lap("output");
    let first = hist.records.first().map_or(0.0, |r| r.cost);
    rec.note("stop", json!(format!("{:?}", hist.stop)));
    rec.note("initial_cost", json!(first));
    rec.note("final_cost", json!(hist.final_cost()));
    rec.note("accepted_steps", json!(hist.accepted_steps()));
    if let Some(e) = hist.records.last().and_then(|r| r.shape_error) {
        rec.note("final_shape_error", json!(e));
    }
    Ok((rec.finish()?, hist))
}

/// Writes the tracking history on the run's own grid to `target.path`, or to
/// `<out>/target.bin` when no path is set.
pub fn make_target(cfg: &RunConfig, opts: &RunOptions) -> Result<Manifest> {
    let mut rec = Recorder::new("make-target", cfg, opts)?;
    let setup = cfg.setup::<f64>()?;
    let target = build_target(cfg, &setup)?;
    let domain = setup.domain()?;
    let sys = setup.assemble(&domain)?;
    let values = target.history(&domain, &sys, TRACKING_PATCH, &setup.grid)?;
    rec.lap("target");
    let path = match &cfg.target.path {
        Some(p) => {
            rec.manifest.outputs.push(p.display().to_string());
            p.clone()
        }
        None => rec.path("target.bin"),
    };
    StoredSeries::from_values(&setup.grid, &values).save(&path)?;
    rec.lap("output");
    rec.note("n_dofs", json!(domain.n_global()));
    rec.note("n_steps", json!(setup.grid.n_steps));
    rec.finish()
}

/// One sampled design dof of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckRow {
    pub dof: usize,
    pub adjoint: f64,
    pub volume: f64,
    /// Central differences, one per step size.
    pub fd: Vec<f64>,
}

impl GradcheckRow {
    /// |g − fd| / |fd| for the smallest step.
    pub fn mismatch(&self) -> f64 {
        rel(self.adjoint, *self.fd.last().unwrap_or(&f64::NAN))
    }

    pub fn volume_mismatch(&self) -> f64 {
        rel(self.volume, *self.fd.last().unwrap_or(&f64::NAN))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub taus: Vec<f64>,
    pub rows: Vec<GradcheckRow>,
    pub cost: f64,
}

impl GradcheckReport {
    pub fn max_mismatch(&self) -> f64 {
        self.rows.iter().map(GradcheckRow::mismatch).fold(0.0, f64::max)
    }
}

/// Movable dofs at a quarter, half and three quarters of the movable list (or `n` evenly
/// spread picks).
pub fn sample_dofs(problem: &LensProblem<f64>, n: usize) -> Vec<usize> {
    let movable: Vec<usize> = (0..problem.dofs.len()).filter(|&k| !problem.dofs[k].pinned).collect();
    let mut picks: Vec<usize> = (1..=n).map(|j| movable[(j * movable.len()) / (n + 1)]).collect();
    picks.dedup();
    picks
}

/// Adjoint gradient against central differences for `dofs`, with step sizes relative to the
/// domain height.
pub fn gradient_check(problem: &LensProblem<f64>, dofs: &[usize], rel_taus: &[f64]) -> Result<GradcheckReport> {
    let shape = problem.initial_shape()?;
    let eval = problem.evaluate(&shape)?;
    let (g, p, _) = problem.gradient(&eval)?;
    let vol = problem.volume_gradient(&eval, &p)?;
    let scale = problem.setup.params.l;
    let taus: Vec<f64> = rel_taus.iter().map(|t| t * scale).collect();
    let mut rows = Vec::new();
    for &k in dofs {
        let fd = taus.iter().map(|&t| problem.finite_difference(&shape, k, t)).collect::<Result<Vec<_>>>()?;
        rows.push(GradcheckRow { dof: k, adjoint: g.values[k], volume: vol.values[k], fd });
    }
    Ok(GradcheckReport { taus, rows, cost: eval.cost })
}

pub fn gradcheck(cfg: &RunConfig, opts: &RunOptions, n_samples: usize, rel_taus: &[f64]) -> Result<(Manifest, GradcheckReport)> {
    let mut rec = Recorder::new("gradcheck", cfg, opts)?;
    let problem = build_problem(cfg)?;
    rec.lap("target");
    let dofs = sample_dofs(&problem, n_samples);
    let report = gradient_check(&problem, &dofs, rel_taus)?;
    rec.lap("gradcheck");
    let path = rec.path("gradcheck.csv");
    let mut text = String::from("dof,row,index,tau,adjoint,volume,fd,mismatch,volume_mismatch\n");
    for r in &report.rows {
        let d = &problem.dofs[r.dof];
        for (t, fd) in report.taus.iter().zip(&r.fd) {
            text += &format!(
                "{},{:?},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.dof,
                d.row,
                d.index,
                t,
                r.adjoint,
                r.volume,
                fd,
                rel(r.adjoint, *fd),
                rel(r.volume, *fd)
            );
        }
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    rec.note("cost", json!(report.cost));
    rec.note("max_mismatch", json!(report.max_mismatch()));
    Ok((rec.finish()?, report))
}
