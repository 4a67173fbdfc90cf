//! Run configuration: a TOML document whose missing keys take the reference parameter
//! values, with `LENSOPT__SECTION__KEY=value` environment overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adjoint::{AdjointParams, TensorSource};
use crate::assembly::{Excitation, Material, Materials, TrackingBox};
use crate::domain::{DomainParams, Refinement};
use crate::error::{Error, Result};
use crate::geometry::{Moving, ThicknessConstraint};
use crate::optimizer::OptConfig;
use crate::problem::{GradientForm, Setup};
use crate::scalar::Real;
use crate::state::{AlphaParams, StateOptions, TimeGrid};
use crate::target::Gaussian;

/// Prefix of environment variables that override config keys; `__` separates path segments.
pub const ENV_PREFIX: &str = "LENSOPT__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub degree: usize,
    pub domain: DomainSpec,
    pub refinement: RefinementConfig,
    pub materials: MaterialsConfig,
    pub excitation: ExcitationConfig,
    pub time: TimeConfig,
    pub state: StateConfig,
    pub adjoint: AdjointConfig,
    pub target: TargetConfig,
    pub design: DesignConfig,
    pub optimizer: OptConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            degree: 2,
            domain: DomainSpec::Preset("upper_straight".into()),
            refinement: RefinementConfig::default(),
            materials: MaterialsConfig::default(),
            excitation: ExcitationConfig::default(),
            time: TimeConfig::default(),
            state: StateConfig::default(),
            adjoint: AdjointConfig::default(),
            target: TargetConfig::default(),
            design: DesignConfig::default(),
            optimizer: OptConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Lens measurements, by preset name or given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Preset(String),
    Explicit(DomainValues),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainValues {
    pub l: f64,
    pub b: f64,
    pub k: f64,
    pub w: f64,
    pub p: f64,
    pub s: f64,
    pub r: f64,
}

pub const DOMAIN_PRESETS: [&str; 5] = ["upper_straight", "upper_curved", "both_perturbed", "both_down", "gauss"];

impl DomainSpec {
    pub fn params<T: Real>(&self) -> Result<DomainParams<T>> {
        let p = match self {
            DomainSpec::Preset(name) => match name.as_str() {
                "upper_straight" => DomainParams::upper_straight(),
                "upper_curved" => DomainParams::upper_curved(),
                "both_perturbed" => DomainParams::both_perturbed(),
                "both_down" => DomainParams::both_down(),
                "gauss" => DomainParams::gauss(),
                other => return Err(Error::Config(format!("unknown lens preset `{other}`, expected one of {DOMAIN_PRESETS:?}"))),
            },
            DomainSpec::Explicit(v) => DomainParams::from_f64(v.l, v.b, v.k, v.w, v.p, v.s, v.r),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Element counts: a grouped description, explicit per-patch counts, or the reference
/// density when neither is given. `scale` multiplies every count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    /// `[nx_inner, nx_outer, ny_lower, ny_lens, ny_mid, ny_top]`
    pub grouped: Option<[usize; 6]>,
    pub elements: Option<[[usize; 2]; 7]>,
    pub scale: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig { grouped: None, elements: None, scale: 1 }
    }
}

impl RefinementConfig {
    pub fn resolve(&self, degree: usize) -> Result<Refinement> {
        if self.scale == 0 {
            return Err(Error::Config("refinement.scale must be at least 1".into()));
        }
        let r = match (self.grouped, self.elements) {
            (Some(_), Some(_)) => return Err(Error::Config("give either refinement.grouped or refinement.elements".into())),
            (Some(g), None) => Refinement::grouped(g[0], g[1], g[2], g[3], g[4], g[5]),
            (None, Some(elements)) => Refinement { elements },
            (None, None) => Refinement::standard(degree),
        }
        .scaled(self.scale);
        r.validate()?;
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub c: f64,
    pub b: f64,
    pub rho: f64,
    pub b_over_a: f64,
}

impl MaterialConfig {
    fn of(m: Material<f64>) -> Self {
        MaterialConfig { c: m.c, b: m.b, rho: m.rho, b_over_a: m.b_over_a }
    }

    fn material<T: Real>(&self) -> Material<T> {
        Material { c: T::lit(self.c), b: T::lit(self.b), rho: T::lit(self.rho), b_over_a: T::lit(self.b_over_a) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialsConfig {
    pub fluid: MaterialConfig,
    pub lens: MaterialConfig,
    /// Give the lens the fluid's coefficients.
    pub homogeneous: bool,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        MaterialsConfig { fluid: MaterialConfig::of(Material::water()), lens: MaterialConfig::of(Material::lens()), homogeneous: false }
    }
}

impl MaterialsConfig {
    pub fn materials<T: Real>(&self) -> Result<Materials<T>> {
        let m = Materials { lens: self.lens.material(), fluid: self.fluid.material() };
        let m = if self.homogeneous { m.homogeneous() } else { m };
        m.lens.validate()?;
        m.fluid.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExcitationKind {
    Modulated,
    Sine,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExcitationConfig {
    pub kind: ExcitationKind,
    /// Source amplitude in Pa.
    pub g0: f64,
    /// Frequency in Hz.
    pub frequency: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        ExcitationConfig { kind: ExcitationKind::Modulated, g0: 4e9, frequency: 70e3 }
    }
}

impl ExcitationConfig {
    pub fn excitation<T: Real>(&self) -> Result<Excitation<T>> {
        if !(self.g0.is_finite() && self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::Config("excitation needs a finite amplitude and a positive frequency".into()));
        }
        let omega = T::lit(2.0 * std::f64::consts::PI * self.frequency);
        Ok(match self.kind {
            ExcitationKind::Modulated => Excitation::Modulated { g0: T::lit(self.g0), omega },
            ExcitationKind::Sine => Excitation::Sine { g0: T::lit(self.g0), omega },
            ExcitationKind::Zero => Excitation::Zero,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t_final: f64,
    /// Number of time levels including `t = 0`.
    pub n_steps: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t_final: 90e-6, n_steps: 3801 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub alpha_m: f64,
    pub alpha_f: f64,
    pub beta: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StateConfig {
    fn default() -> Self {
        StateConfig { alpha_m: 0.5, alpha_f: 1.0 / 3.0, beta: 0.45, gamma: 0.75, tol: 1e-6, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdjointConfig {
    pub gamma: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tensor_source: TensorSource,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        AdjointConfig { gamma: 0.5, beta: 0.25, tol: 1e-8, max_iter: 50, tensor_source: TensorSource::State }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// Forward solution on the goal lens, finer grid, with noise.
    Synthetic,
    Gaussian,
    /// History written by `make-target`.
    Stored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub kind: TargetKind,
    pub goal: DomainSpec,
    /// Mesh and time refinement of the synthetic data.
    pub factor: usize,
    /// Noise level relative to the peak amplitude.
    pub noise: f64,
    pub path: Option<PathBuf>,
    /// `[[x0, x1], [y0, y1]]`; the whole tracking patch when absent.
    pub tracking: Option<[[f64; 2]; 2]>,
    pub amplitude: f64,
    pub y_fp: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        let g = Gaussian::<f64>::focus();
        TargetConfig {
            kind: TargetKind::Synthetic,
            goal: DomainSpec::Preset("upper_curved".into()),
            factor: 2,
            noise: 0.02,
            path: None,
            tracking: None,
            amplitude: g.amplitude,
            y_fp: g.y_fp,
            sigma_x: g.sigma_x,
            sigma_y: g.sigma_y,
        }
    }
}

impl TargetConfig {
    pub fn gaussian<T: Real>(&self) -> Result<Gaussian<T>> {
        let g = Gaussian { amplitude: T::lit(self.amplitude), y_fp: T::lit(self.y_fp), sigma_x: T::lit(self.sigma_x), sigma_y: T::lit(self.sigma_y) };
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThicknessConfig {
    pub enabled: bool,
    pub c0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for ThicknessConfig {
    fn default() -> Self {
        let t = ThicknessConstraint::<f64>::default();
        ThicknessConfig { enabled: t.enabled, c0: t.c0, r1: t.r1, r2: t.r2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub moving: Moving,
    pub gradient: GradientForm,
    pub thickness: ThicknessConfig,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig { moving: Moving::Upper, gradient: GradientForm::Boundary, thickness: ThicknessConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write a field snapshot every this many steps; zero writes none.
    pub snapshot_every: usize,
    /// Points where time traces are recorded.
    pub probes: Vec<[f64; 2]>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { snapshot_every: 0, probes: vec![[0.0, 0.105]] }
    }
}

impl RunConfig {
    /// Reads `path`, applies environment overrides and validates.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::parse_with_env(&text, std::env::vars())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_env(text, std::iter::empty())
    }

    /// Parses `text` after applying every `(key, value)` pair whose key carries [`ENV_PREFIX`].
    pub fn parse_with_env(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        // deserializing the text itself keeps line and column in schema errors
        let from_text: RunConfig = toml::from_str(text).map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        let overrides_applied = !overrides.is_empty();
        for (key, value) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_ascii_lowercase()).collect();
            set_path(&mut doc, &path, parse_value(&value)).map_err(|m| Error::Config(format!("{key}: {m}")))?;
        }
        let cfg: RunConfig = if overrides_applied {
            toml::Value::Table(doc).try_into().map_err(|e: toml::de::Error| Error::Parse(format!("after environment overrides: {e}")))?
        } else {
            from_text
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree == 0 {
            return Err(Error::Config("degree must be at least 1".into()));
        }
        self.setup::<f64>()?;
        self.initial_params::<f64>()?;
        if self.target.kind == TargetKind::Synthetic {
            self.target.goal.params::<f64>()?;
            if self.target.factor == 0 {
                return Err(Error::Config("target.factor must be at least 1".into()));
            }
            if !(self.target.noise >= 0.0 && self.target.noise.is_finite()) {
                return Err(Error::Config("target.noise must be non-negative".into()));
            }
        }
        if let Some([x, y]) = self.target.tracking {
            let d = self.initial_params::<f64>()?;
            if !(0.0 <= x[0] && x[0] < x[1] && x[1] <= d.w && d.s <= y[0] && y[0] < y[1] && y[1] <= d.l) {
                return Err(Error::Config(format!("target.tracking must be a box inside [0, {}] x [{}, {}]", d.w, d.s, d.l)));
            }
        }
        if self.target.kind == TargetKind::Gaussian {
            self.target.gaussian::<f64>()?;
        }
        if self.target.kind == TargetKind::Stored && self.target.path.is_none() {
            return Err(Error::Config("a stored target needs target.path".into()));
        }
        let t = &self.design.thickness;
        if t.enabled && !(t.r1 > 0.0 && t.r2 > 0.0) {
            return Err(Error::Config("thickness radii must be positive".into()));
        }
        self.optimizer.validate()
    }

    pub fn initial_params<T: Real>(&self) -> Result<DomainParams<T>> {
        self.domain.params()
    }

    /// Solver setup on the initial lens.
    pub fn setup<T: Real>(&self) -> Result<Setup<T>> {
        let s = &self.state;
        let alpha = AlphaParams { alpha_m: T::lit(s.alpha_m), alpha_f: T::lit(s.alpha_f), beta: T::lit(s.beta), gamma: T::lit(s.gamma) };
        alpha.validate()?;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return Err(Error::Config("state tolerance and iteration cap must be positive".into()));
        }
        let a = &self.adjoint;
        if !(a.tol > 0.0) || a.max_iter == 0 || !(a.beta > 0.0 && a.gamma > 0.0) {
            return Err(Error::Config("adjoint parameters, tolerance and iteration cap must be positive".into()));
        }
        let t = &self.design.thickness;
        Ok(Setup {
            params: self.initial_params()?,
            degree: self.degree,
            refinement: self.refinement.resolve(self.degree)?,
            materials: self.materials.materials()?,
            excitation: self.excitation.excitation()?,
            grid: TimeGrid::new(T::lit(self.time.t_final), self.time.n_steps)?,
            alpha,
            state: StateOptions { tol: T::lit(s.tol), max_iter: s.max_iter },
            adjoint: AdjointParams { gamma: T::lit(a.gamma), beta: T::lit(a.beta), tol: T::lit(a.tol), max_iter: a.max_iter, tensor_source: a.tensor_source },
            moving: self.design.moving,
            thickness: ThicknessConstraint { enabled: t.enabled, c0: T::lit(t.c0), r1: T::lit(t.r1), r2: T::lit(t.r2) },
            gradient: self.design.gradient,
            tracking: self.target.tracking.map(|[x, y]| TrackingBox { x: x.map(T::lit), y: y.map(T::lit) }),
        })
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}").parse::<toml::Table>().ok().and_then(|mut t| t.remove("v")).unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, path: &[String], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut table = doc;
    for p in parents {
        let entry = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| format!("`{p}` is not a table"))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        let s = c.setup::<f64>().unwrap();
        assert_eq!(s.materials.fluid.c, 1500.0);
        assert_eq!(s.materials.lens.c, 1100.0);
        assert_eq!(s.materials.lens.rho, 1250.0);
        assert_eq!(s.grid.n_steps, 3801);
        assert!((s.grid.dt() - 23.684e-9).abs() < 1e-12);
        assert_eq!((s.alpha.beta, s.alpha.gamma), (0.45, 0.75));
        assert_eq!((s.adjoint.beta, s.adjoint.gamma, s.adjoint.tol), (0.25, 0.5, 1e-8));
        assert_eq!(c.optimizer.tol_grad, 1e-4);
    }

    #[test]
    fn restating_a_default_is_idempotent() {
        let c = RunConfig::parse("[materials.fluid]\nc = 1500.0\nb = 6e-9\nrho = 1000.0\nb_over_a = 5.0\n").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let e = RunConfig::parse("[time]\nn_step = 10\n").unwrap_err().to_string();
        assert!(e.contains("n_step") && e.contains("line"), "{e}");
        assert!(RunConfig::parse("[time]\nn_steps = 0\n").is_err());
        assert!(RunConfig::parse("domain = \"flat\"\n").is_err());
        assert!(RunConfig::parse("[optimizer]\nshrink = 1.5\n").is_err());
    }

    #[test]
    fn environment_overrides_nested_keys() {
        let env = vec![
            ("LENSOPT__TIME__N_STEPS".to_string(), "401".to_string()),
            ("LENSOPT__DESIGN__MOVING".to_string(), "both".to_string()),
            ("LENSOPT__REFINEMENT__GROUPED".to_string(), "[6, 2, 6, 2, 5, 5]".to_string()),
            ("OTHER".to_string(), "x".to_string()),
        ];
        let c = RunConfig::parse_with_env("[time]\nn_steps = 11\n", env).unwrap();
        assert_eq!(c.time.n_steps, 401);
        assert_eq!(c.design.moving, Moving::Both);
        assert_eq!(c.refinement.grouped, Some([6, 2, 6, 2, 5, 5]));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut c = RunConfig::default();
        c.domain = DomainSpec::Explicit(DomainValues { l: 0.12, b: 0.05, k: 0.06, w: 0.04, p: 0.018, s: 0.09, r: 0.04 });
        c.state.alpha_f = 1.0 / 3.0;
        let back = RunConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
        assert_ne!(RunConfig::default().hash().unwrap(), c.hash().unwrap());
    }
}
