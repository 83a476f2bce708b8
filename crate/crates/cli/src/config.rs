//! Run configuration: a TOML file with named sections.
//!
//! Only `[grid]`, `[model]` and `[time]` are required. Every other key has the default
//! listed in `README.md`; misspelled or unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use polytherm_core::march::step_count;
use polytherm_core::{
    GridSpec, HeatSupply, InitialData, ModelSpec, PaperEnergy, QuadraticEnergy, StepConfig,
    WaveParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Points {
    Cube(usize),
    Axes([usize; 3]),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: Points,
    #[serde(default = "unit_lengths")]
    pub lengths: [f64; 3],
}

fn unit_lengths() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Paper,
    Quadratic,
}

/// Model parameters; keys that do not apply to the chosen model are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: ModelName,
    pub beta_zeta: Option<f64>,
    pub beta_w: Option<f64>,
    pub beta_eta: Option<f64>,
    pub delta: Option<f64>,
    pub q: Option<f64>,
    pub rho: Option<f64>,
    pub ell: Option<f64>,
    pub convexity_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Equilibrium,
    #[default]
    SmoothWave,
    OffsetDrift,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub preset: PresetName,
    pub amplitude: Option<f64>,
    pub velocity: Option<f64>,
    pub mix: Option<f64>,
    pub wavenumber: Option<f64>,
    pub eta: Option<f64>,
    pub offset: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HeatKind {
    #[default]
    Zero,
    Constant,
    Bump,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HeatSection {
    #[serde(default)]
    pub kind: HeatKind,
    pub value: Option<f64>,
    pub amplitude: Option<f64>,
    pub width: Option<f64>,
    pub center: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub newton_tol: Option<f64>,
    pub newton_max: Option<usize>,
    pub cg_tol: Option<f64>,
    pub cg_max: Option<usize>,
    pub backtrack_factor: Option<f64>,
    pub armijo: Option<f64>,
    pub max_halvings: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub checkpoint: bool,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out(),
            checkpoint: true,
            kappa: default_kappa(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

fn default_kappa() -> f64 {
    polytherm_core::diagnostics::DEFAULT_KAPPA
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(default = "default_h_levels")]
    pub h_levels: Vec<f64>,
    #[serde(default)]
    pub dx_levels: Vec<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            h_levels: default_h_levels(),
            dx_levels: Vec::new(),
        }
    }
}

fn default_h_levels() -> Vec<f64> {
    vec![4e-3, 2e-3, 1e-3]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Reference step is the finest study step divided by this.
    #[serde(default = "default_factor")]
    pub factor: usize,
    /// Bound `M` on `|F|, |v|, |eta|` of the reference.
    #[serde(default = "default_m")]
    pub m: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            factor: default_factor(),
            m: default_m(),
        }
    }
}

fn default_factor() -> usize {
    8
}

fn default_m() -> f64 {
    3.0
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub grid: GridSection,
    pub model: ModelSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub heat: HeatSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub reference: ReferenceSection,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub model: ModelSpec,
    pub initial: InitialData,
    pub heat: HeatSupply,
    pub t_final: f64,
    pub steps: usize,
    pub step: StepConfig,
    pub out_dir: PathBuf,
    pub checkpoint: bool,
    pub kappa: f64,
    pub h_levels: Vec<f64>,
    pub dx_levels: Vec<usize>,
    pub reference_factor: usize,
    pub m: f64,
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    raw.validate()
}

fn positive(key: &'static str, x: f64) -> Result<f64, ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(key, format!("must be positive, got {x}")))
    }
}

fn unused(key: &'static str, present: bool, context: &str) -> Result<(), ConfigError> {
    if present {
        Err(invalid(key, format!("not used by {context}")))
    } else {
        Ok(())
    }
}

impl ModelSection {
    fn build(&self) -> Result<ModelSpec, ConfigError> {
        let spec = match self.name {
            ModelName::Paper => {
                let d = PaperEnergy::default();
                ModelSpec::Paper(PaperEnergy {
                    beta_zeta: self.beta_zeta.unwrap_or(d.beta_zeta),
                    beta_w: self.beta_w.unwrap_or(d.beta_w),
                    beta_eta: self.beta_eta.unwrap_or(d.beta_eta),
                    delta: self.delta.unwrap_or(d.delta),
                    q: self.q.unwrap_or(d.q),
                    rho: self.rho.unwrap_or(d.rho),
                    ell: self.ell.unwrap_or(d.ell),
                    convexity_radius: self.convexity_radius.unwrap_or(d.convexity_radius),
                })
            }
            ModelName::Quadratic => {
                let ctx = "the quadratic model";
                unused("model.beta_zeta", self.beta_zeta.is_some(), ctx)?;
                unused("model.beta_w", self.beta_w.is_some(), ctx)?;
                unused("model.beta_eta", self.beta_eta.is_some(), ctx)?;
                unused("model.q", self.q.is_some(), ctx)?;
                unused("model.rho", self.rho.is_some(), ctx)?;
                unused("model.ell", self.ell.is_some(), ctx)?;
                unused(
                    "model.convexity_radius",
                    self.convexity_radius.is_some(),
                    ctx,
                )?;
                ModelSpec::Quadratic(QuadraticEnergy {
                    delta: self.delta.unwrap_or(QuadraticEnergy::default().delta),
                })
            }
        };
        spec.validate().map_err(|e| match e {
            polytherm_core::ModelError::BadParameter { name, .. } => invalid(
                match name {
                    "beta_zeta" => "model.beta_zeta",
                    "beta_w" => "model.beta_w",
                    "beta_eta" => "model.beta_eta",
                    "delta" => "model.delta",
                    "q" => "model.q",
                    "rho" => "model.rho",
                    "ell" => "model.ell",
                    "convexity_radius" => "model.convexity_radius",
                    _ => "model",
                },
                e.to_string(),
            ),
            other => invalid("model", other.to_string()),
        })?;
        Ok(spec)
    }
}

impl InitialSection {
    fn build(&self) -> Result<InitialData, ConfigError> {
        let d = WaveParams::default();
        let wave = WaveParams {
            amplitude: self.amplitude.unwrap_or(d.amplitude),
            velocity: self.velocity.unwrap_or(d.velocity),
            mix: self.mix.unwrap_or(d.mix),
            wavenumber: self.wavenumber.unwrap_or(d.wavenumber),
            eta: self.eta.unwrap_or(d.eta),
        };
        let eta = wave.eta;
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(invalid("initial.eta", "must be nonnegative"));
        }
        let w = wave.wavenumber;
        if !(w >= 1.0 && w.fract() == 0.0) {
            return Err(invalid(
                "initial.wavenumber",
                "must be a positive integer for periodicity",
            ));
        }
        Ok(match self.preset {
            PresetName::Equilibrium => {
                let ctx = "the equilibrium preset";
                unused("initial.amplitude", self.amplitude.is_some(), ctx)?;
                unused("initial.velocity", self.velocity.is_some(), ctx)?;
                unused("initial.mix", self.mix.is_some(), ctx)?;
                unused("initial.wavenumber", self.wavenumber.is_some(), ctx)?;
                unused("initial.offset", self.offset.is_some(), ctx)?;
                InitialData::Equilibrium { eta }
            }
            PresetName::SmoothWave => {
                unused(
                    "initial.offset",
                    self.offset.is_some(),
                    "the smooth-wave preset",
                )?;
                InitialData::SmoothWave(wave)
            }
            PresetName::OffsetDrift => InitialData::OffsetDrift {
                wave,
                offset: self.offset.unwrap_or(0.05),
            },
        })
    }
}

impl HeatSection {
    fn build(&self) -> Result<HeatSupply, ConfigError> {
        let ctx = match self.kind {
            HeatKind::Zero => "zero heating",
            HeatKind::Constant => "constant heating",
            HeatKind::Bump => "bump heating",
        };
        let bump = matches!(self.kind, HeatKind::Bump);
        unused(
            "heat.value",
            self.value.is_some() && !matches!(self.kind, HeatKind::Constant),
            ctx,
        )?;
        unused("heat.amplitude", self.amplitude.is_some() && !bump, ctx)?;
        unused("heat.width", self.width.is_some() && !bump, ctx)?;
        unused("heat.center", self.center.is_some() && !bump, ctx)?;
        Ok(match self.kind {
            HeatKind::Zero => HeatSupply::Zero,
            HeatKind::Constant => {
                HeatSupply::Constant(self.value.filter(|v| v.is_finite()).ok_or_else(|| {
                    invalid("heat.value", "required (finite) for constant heating")
                })?)
            }
            HeatKind::Bump => HeatSupply::Bump {
                amplitude: self.amplitude.unwrap_or(1.0),
                width: positive("heat.width", self.width.unwrap_or(0.2))?,
                center: self.center.unwrap_or([0.5; 3]),
            },
        })
    }
}

impl RawConfig {
    pub fn validate(&self) -> Result<RunConfig, ConfigError> {
        let n = match self.grid.n {
            Points::Cube(n) => [n; 3],
            Points::Axes(n) => n,
        };
        let grid = GridSpec::new(n, self.grid.lengths).map_err(|e| {
            let key = if matches!(e, polytherm_core::GridError::BadLength { .. }) {
                "grid.lengths"
            } else {
                "grid.n"
            };
            invalid(key, e.to_string())
        })?;
        let h = positive("time.h", self.time.h)?;
        if !(self.time.t_final.is_finite() && self.time.t_final >= 0.0) {
            return Err(invalid("time.t_final", "must be nonnegative"));
        }
        let steps =
            step_count(self.time.t_final, h).map_err(|e| invalid("time.t_final", e.to_string()))?;

        let d = StepConfig::with_h(h);
        let s = &self.solver;
        let step = StepConfig {
            h,
            newton_tol: positive("solver.newton_tol", s.newton_tol.unwrap_or(d.newton_tol))?,
            newton_max: s.newton_max.unwrap_or(d.newton_max),
            cg_tol: positive("solver.cg_tol", s.cg_tol.unwrap_or(d.cg_tol))?,
            cg_max: s.cg_max.unwrap_or(d.cg_max),
            backtrack_factor: s.backtrack_factor.unwrap_or(d.backtrack_factor),
            armijo: s.armijo.unwrap_or(d.armijo),
            max_halvings: s.max_halvings.unwrap_or(d.max_halvings),
        };
        if step.newton_max == 0 {
            return Err(invalid("solver.newton_max", "must be at least 1"));
        }
        if step.cg_max == 0 {
            return Err(invalid("solver.cg_max", "must be at least 1"));
        }
        if !(step.backtrack_factor > 0.0 && step.backtrack_factor < 1.0) {
            return Err(invalid("solver.backtrack_factor", "must lie in (0, 1)"));
        }
        if !(step.armijo > 0.0 && step.armijo < 0.5) {
            return Err(invalid("solver.armijo", "must lie in (0, 1/2)"));
        }

        let h_levels = self.study.h_levels.clone();
        for &x in &h_levels {
            positive("study.h_levels", x)?;
        }
        if self
            .study
            .dx_levels
            .iter()
            .any(|&n| n < GridSpec::MIN_POINTS)
        {
            return Err(invalid(
                "study.dx_levels",
                format!("every level needs at least {} points", GridSpec::MIN_POINTS),
            ));
        }
        if self.reference.factor < 2 {
            return Err(invalid("reference.factor", "must be at least 2"));
        }

        Ok(RunConfig {
            grid,
            model: self.model.build()?,
            initial: self.initial.build()?,
            heat: self.heat.build()?,
            t_final: self.time.t_final,
            steps,
            step,
            out_dir: self.output.dir.clone(),
            checkpoint: self.output.checkpoint,
            kappa: positive("output.kappa", self.output.kappa)?,
            h_levels,
            dx_levels: self.study.dx_levels.clone(),
            reference_factor: self.reference.factor,
            m: positive("reference.m", self.reference.m)?,
        })
    }
}
