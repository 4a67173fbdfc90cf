//! File formats: field snapshots, optimization and gradient tables, shape histories, probe
//! traces, stored time series and the run manifest.
//!
//! Decimal output uses `{:.16e}` (17 significant digits), which reproduces every `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::domain::{MultiPatchDomain, PointSample};
use crate::error::{Error, Result};
use crate::geometry::{LensShape, Row};
use crate::gradient::ShapeGradient;
use crate::optimizer::OptimizationHistory;
use crate::scalar::Real;
use crate::state::{TimeGrid, TimeSeriesField};

const MAGIC: &[u8; 8] = b"LNSOPTTS";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn num<T: Real>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per patch control point: `patch,i1,i2,x,y,value`.
pub fn write_field_csv<T: Real>(out: &mut impl Write, domain: &MultiPatchDomain<T>, values: &[T]) -> std::io::Result<()> {
    writeln!(out, "patch,i1,i2,x,y,value")?;
    for (k, patch) in domain.patches.iter().enumerate() {
        for a in 0..patch.n_basis() {
            let (i1, i2) = patch.basis.multi_index(a);
            let c = patch.control[a];
            let v = values[domain.dofs.local_to_global[k][a]];
            writeln!(out, "{},{},{},{},{},{}", patch.id, i1, i2, num(c[0]), num(c[1]), num(v))?;
        }
    }
    Ok(())
}

pub fn save_field_csv<T: Real>(path: &Path, domain: &MultiPatchDomain<T>, values: &[T]) -> Result<()> {
    if values.len() != domain.n_global() {
        return Err(Error::Dimension { expected: domain.n_global(), got: values.len() });
    }
    let mut w = create(path)?;
    write_field_csv(&mut w, domain, values).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Snapshots of `x` every `every` steps (and the last one) as `<stem>_<step>.csv` in `dir`.
pub fn save_snapshots<T: Real>(dir: &Path, stem: &str, domain: &MultiPatchDomain<T>, field: &TimeSeriesField<T>, every: usize) -> Result<Vec<String>> {
    let mut names = Vec::new();
    if every == 0 {
        return Ok(names);
    }
    let last = field.x.len().saturating_sub(1);
    for n in (0..field.x.len()).filter(|&n| n % every == 0 || n == last) {
        let name = format!("{stem}_{n:06}.csv");
        save_field_csv(&dir.join(&name), domain, &field.x[n])?;
        names.push(name);
    }
    Ok(names)
}

pub const HISTORY_HEADER: &str = "step,J,J/J0,gradnorm,gradnorm/gradnorm0,alpha,accepted,repeats,shape_error_l2,eta";

pub fn write_history_csv<T: Real, S>(out: &mut impl Write, history: &OptimizationHistory<T, S>) -> std::io::Result<()> {
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in &history.records {
        let err = r.shape_error.map(num).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            num(r.cost),
            num(r.rel_cost),
            num(r.grad_norm),
            num(r.rel_grad),
            num(r.alpha),
            u8::from(r.accepted),
            r.repeats,
            err,
            num(r.eta)
        )?;
    }
    Ok(())
}

pub fn save_history_csv<T: Real, S>(path: &Path, history: &OptimizationHistory<T, S>) -> Result<()> {
    let mut w = create(path)?;
    write_history_csv(&mut w, history).map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Reads the cost column of a history file.
pub fn read_history_costs(path: &Path) -> Result<Vec<f64>> {
    let mut costs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if i == 0 {
            if line != HISTORY_HEADER {
                return Err(Error::Parse(format!("{}: unexpected header `{line}`", path.display())));
            }
            continue;
        }
        let j = line.split(',').nth(1).ok_or_else(|| Error::Parse(format!("{}:{}: missing cost", path.display(), i + 1)))?;
        costs.push(j.parse().map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(costs)
}

/// `dof,row,index,x,y,pinned,value` for every design dof.
pub fn save_gradient_csv<T: Real>(path: &Path, shape: &LensShape<T>, grad: &ShapeGradient<T>) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "dof,row,index,x,y,pinned,value")?;
        for (d, &g) in grad.dofs.iter().zip(&grad.values) {
            let c = shape.row(d.row)[d.index];
            writeln!(w, "{},{},{},{},{},{},{}", d.global, row_name(d.row), d.index, num(c[0]), num(c[1]), u8::from(d.pinned), num(g))?;
        }
        Ok(())
    };
    body().map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

fn row_name(r: Row) -> &'static str {
    match r {
        Row::Lower => "lower",
        Row::Upper => "upper",
    }
}

/// `step,row,index,x,y` for both boundary rows of every shape.
pub fn save_shapes_csv<T: Real>(path: &Path, shapes: &[LensShape<T>]) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "step,row,index,x,y")?;
        for (s, shape) in shapes.iter().enumerate() {
            for row in [Row::Lower, Row::Upper] {
                for (i, c) in shape.row(row).iter().enumerate() {
                    writeln!(w, "{s},{},{i},{},{}", row_name(row), num(c[0]), num(c[1]))?;
                }
            }
        }
        Ok(())
    };
    body().map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// `t,probe0,probe1,...` with the field value at every probe and time level.
pub fn save_probe_csv<T: Real>(path: &Path, probes: &[PointSample<T>], field: &TimeSeriesField<T>) -> Result<()> {
    let mut w = create(path)?;
    let mut body = || -> std::io::Result<()> {
        let names: Vec<String> = probes.iter().map(|p| format!("u({};{})", p.point[0], p.point[1])).collect();
        writeln!(w, "t,{}", names.join(","))?;
        for (n, x) in field.x.iter().enumerate() {
            let vals: Vec<String> = probes.iter().map(|p| num(p.eval(x))).collect();
            writeln!(w, "{},{}", num(field.grid.time(n)), vals.join(","))?;
        }
        Ok(())
    };
    body().map_err(|e| Error::io(path, e))?;
    finish(path, w)
}

/// Named blocks of per-step vectors on one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSeries {
    pub t_final: f64,
    pub n_steps: usize,
    pub blocks: Vec<(String, Vec<Vec<f64>>)>,
}

impl StoredSeries {
    pub fn grid<T: Real>(&self) -> Result<TimeGrid<T>> {
        TimeGrid::new(T::lit(self.t_final), self.n_steps)
    }

    pub fn block(&self, name: &str) -> Result<&[Vec<f64>]> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice()).ok_or_else(|| Error::Parse(format!("stored series has no `{name}` block")))
    }

    pub fn from_field<T: Real>(f: &TimeSeriesField<T>) -> Self {
        let conv = |b: &[Vec<T>]| b.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect();
        StoredSeries {
            t_final: f.grid.t_final.as_f64(),
            n_steps: f.grid.n_steps,
            blocks: vec![("x".into(), conv(&f.x)), ("xd".into(), conv(&f.xd)), ("xdd".into(), conv(&f.xdd))],
        }
    }

    pub fn to_field<T: Real>(&self) -> Result<TimeSeriesField<T>> {
        let conv = |name: &str| -> Result<Vec<Vec<T>>> { Ok(self.block(name)?.iter().map(|v| v.iter().map(|&x| T::lit(x)).collect()).collect()) };
        Ok(TimeSeriesField { grid: self.grid()?, x: conv("x")?, xd: conv("xd")?, xdd: conv("xdd")? })
    }

    pub fn from_values<T: Real>(grid: &TimeGrid<T>, values: &[Vec<T>]) -> Self {
        StoredSeries {
            t_final: grid.t_final.as_f64(),
            n_steps: grid.n_steps,
            blocks: vec![("x".into(), values.iter().map(|v| v.iter().map(|x| x.as_f64()).collect()).collect())],
        }
    }

    fn check(&self) -> Result<usize> {
        let n = self.blocks.first().and_then(|(_, b)| b.first()).map_or(0, Vec::len);
        for (name, b) in &self.blocks {
            if b.len() != self.n_steps || b.iter().any(|v| v.len() != n) {
                return Err(Error::Parse(format!("block `{name}` is not {} vectors of length {n}", self.n_steps)));
            }
        }
        Ok(n)
    }

    /// Binary when the extension is `bin`, CSV otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.check()?;
        let mut w = create(path)?;
        let binary = path.extension().is_some_and(|e| e == "bin");
        let mut body = || -> std::io::Result<()> {
            if binary {
                w.write_all(MAGIC)?;
                for v in [self.n_steps as u64, n as u64, self.blocks.len() as u64] {
                    w.write_all(&v.to_le_bytes())?;
                }
                w.write_all(&self.t_final.to_le_bytes())?;
                for (name, b) in &self.blocks {
                    w.write_all(&(name.len() as u64).to_le_bytes())?;
                    w.write_all(name.as_bytes())?;
                    for x in b.iter().flatten() {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            } else {
                writeln!(w, "# t_final={:.16e} n_steps={} n_dofs={n}", self.t_final, self.n_steps)?;
                writeln!(w, "block,step,values")?;
                for (name, b) in &self.blocks {
                    for (s, v) in b.iter().enumerate() {
                        let vals: Vec<String> = v.iter().map(|&x| num(x)).collect();
                        writeln!(w, "{name},{s},{}", vals.join(","))?;
                    }
                }
            }
            Ok(())
        };
        body().map_err(|e| Error::io(path, e))?;
        finish(path, w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = open(path)?;
        let bad = |m: String| Error::Parse(format!("{}: {m}", path.display()));
        if path.extension().is_some_and(|e| e == "bin") {
            let mut buf = Vec::new();
            r.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
            let mut at = 0usize;
            let mut take = |k: usize| -> Result<&[u8]> {
                let s = buf.get(at..at + k).ok_or_else(|| bad("truncated file".into()))?;
                at += k;
                Ok(s)
            };
            if take(8)? != MAGIC {
                return Err(bad("not a stored time series".into()));
            }
            let mut u = || -> Result<usize> { Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize) };
            let (n_steps, n, nb) = (u()?, u()?, u()?);
            let t_final = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            let mut blocks = Vec::with_capacity(nb);
            for _ in 0..nb {
                let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
                let name = String::from_utf8(take(len)?.to_vec()).map_err(|e| bad(e.to_string()))?;
                let raw = take(n_steps * n * 8)?;
                let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                blocks.push((name, vals.chunks(n.max(1)).map(<[f64]>::to_vec).take(n_steps).collect::<Vec<_>>()));
            }
            let s = StoredSeries { t_final, n_steps, blocks };
            s.check()?;
            return Ok(s);
        }
        let mut lines = r.by_ref().lines();
        let mut next = || lines.next().transpose().map_err(|e| Error::io(path, e));
        let head = next()?.ok_or_else(|| bad("empty file".into()))?;
        let field = |key: &str| -> Result<&str> {
            head.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('='))).ok_or_else(|| bad(format!("header lacks `{key}`")))
        };
        let t_final: f64 = field("t_final")?.parse().map_err(|e| bad(format!("t_final: {e}")))?;
        let n_steps: usize = field("n_steps")?.parse().map_err(|e| bad(format!("n_steps: {e}")))?;
        if next()?.as_deref() != Some("block,step,values") {
            return Err(bad("missing column header".into()));
        }
        let mut blocks: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        let mut line_no = 2;
        while let Some(line) = next()? {
            line_no += 1;
            let mut it = line.split(',');
            let name = it.next().unwrap_or_default().to_string();
            it.next();
            let vals = it.map(str::parse).collect::<std::result::Result<Vec<f64>, _>>().map_err(|e| bad(format!("line {line_no}: {e}")))?;
            match blocks.last_mut() {
                Some((n, b)) if *n == name => b.push(vals),
                _ => blocks.push((name, vec![vals])),
            }
        }
        let s = StoredSeries { t_final, n_steps, blocks };
        s.check()?;
        Ok(s)
    }
}

/// Machine-readable record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub deterministic: bool,
    pub workers: usize,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig, deterministic: bool, workers: usize) -> Result<Self> {
        Ok(Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash()?,
            config: config.clone(),
            deterministic,
            workers,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            summary: BTreeMap::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        finish(path, w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_reader(open(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
