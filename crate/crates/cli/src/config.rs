//! Run configuration: TOML parsing, defaults and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use exciton_pimc::model::{AlexanderModel, AlexanderParams, DimerParams, DisplacedHarmonicModel, TabulatedModel};
use exciton_pimc::oracle::{GridAxis, GridSpec};
use exciton_pimc::sampler::{default_warmup, Kernel};
use exciton_pimc::stats::{default_batch_size, DEFAULT_LJUNG_BOX_LAGS};
use exciton_pimc::{ModelError, ModelSystem};
use serde::{Deserialize, Deserializer, Serialize};

pub const DEFAULT_HISTOGRAM_BINS: usize = 50;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Io { path: PathBuf, message: String },
    Syntax { line: Option<usize>, message: String },
    UnknownKey { line: Option<usize>, message: String },
    Range { line: Option<usize>, key: String, message: String },
}

impl ConfigError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Io { .. } => None,
            ConfigError::Syntax { line, .. } | ConfigError::UnknownKey { line, .. } | ConfigError::Range { line, .. } => {
                *line
            }
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |line: &Option<usize>| line.map(|l| format!("line {l}: ")).unwrap_or_default();
        match self {
            ConfigError::Io { path, message } => write!(f, "cannot read {}: {message}", path.display()),
            ConfigError::Syntax { line, message } => write!(f, "{}syntax error: {message}", at(line)),
            ConfigError::UnknownKey { line, message } => write!(f, "{}{message}", at(line)),
            ConfigError::Range { line, key, message } => write!(f, "{}invalid value for `{key}`: {message}", at(line)),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Alexander,
    Dimer,
    ExternalSpec,
}

/// `[model]` section. Only the parameter table matching `kind` may appear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Tabulated surfaces (JSON), for `external-spec`. Relative paths are
    /// resolved against the config file's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alexander: Option<AlexanderParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimer: Option<DimerParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// One temperature or a sweep.
    #[serde(rename = "temperature_K", deserialize_with = "one_or_many")]
    pub temperature_k: Vec<f64>,
    pub n_beads: usize,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    pub n_steps: u64,
    #[serde(default = "one_usize")]
    pub n_chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<u64>,
    /// Initial step size; suggested from the model when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_warmup: Option<u64>,
    #[serde(default = "one_u64")]
    pub thin: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_acceptance: Option<f64>,
    #[serde(default = "yes")]
    pub tune: bool,
    #[serde(default = "default_lags")]
    pub ljung_box_lags: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Bins per phonon coordinate.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Explicit bounds per coordinate; auto-sized from warm-up when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            bins: DEFAULT_HISTOGRAM_BINS,
            lo: None,
            hi: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

/// Grid for the `oracle` and `verify` commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_points: Vec<usize>,
}

impl OracleConfig {
    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        if self.lo.len() != self.hi.len() || self.lo.len() != self.n_points.len() {
            return Err(ConfigError::Range {
                line: None,
                key: "oracle".into(),
                message: "lo, hi and n_points must have equal length".into(),
            });
        }
        let axes = self
            .lo
            .iter()
            .zip(&self.hi)
            .zip(&self.n_points)
            .map(|((&lo, &hi), &n_points)| GridAxis { lo, hi, n_points })
            .collect();
        GridSpec::new(axes).map_err(|e| ConfigError::Range {
            line: None,
            key: "oracle".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub run: RunSection,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(f64),
        Many(Vec<f64>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(ts) => ts,
    })
}

fn default_kernel() -> Kernel {
    Kernel::Mala
}

fn one_usize() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_lags() -> usize {
    DEFAULT_LJUNG_BOX_LAGS
}

fn default_bins() -> usize {
    DEFAULT_HISTOGRAM_BINS
}

fn default_dir() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, for error messages.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = header.trim().to_string();
            if current == format!("{section}.{key}") {
                return Some(n + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(n + 1);
                }
            }
        }
    }
    None
}

fn range(text: &str, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Range {
        line: locate(text, section, key),
        key: format!("{section}.{key}"),
        message: message.into(),
    }
}

/// Parses and validates a config, filling every default so the result
/// echoes completely.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut config: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_at(text, s.start));
        let message = e.message().trim().to_string();
        if message.starts_with("unknown field") {
            ConfigError::UnknownKey { line, message }
        } else {
            ConfigError::Syntax { line, message }
        }
    })?;
    validate(&mut config, text)?;
    Ok(config)
}

/// Reads `path` and parses it; relative `model.file` paths are rewritten
/// against the config's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut config = parse_config(&text)?;
    if let Some(file) = &config.model.file {
        if file.is_relative() {
            if let Some(dir) = path.parent() {
                config.model.file = Some(dir.join(file));
            }
        }
    }
    Ok(config)
}

fn validate(c: &mut RunConfig, text: &str) -> Result<(), ConfigError> {
    let r = &mut c.run;
    if r.temperature_k.is_empty() {
        return Err(range(text, "run", "temperature_K", "at least one temperature required"));
    }
    if let Some(t) = r.temperature_k.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(range(text, "run", "temperature_K", format!("{t} K is not a positive temperature")));
    }
    let positive = [
        ("n_beads", r.n_beads as u64),
        ("n_steps", r.n_steps),
        ("n_chains", r.n_chains as u64),
        ("thin", r.thin),
        ("ljung_box_lags", r.ljung_box_lags as u64),
    ];
    for (key, v) in positive {
        if v == 0 {
            return Err(range(text, "run", key, "must be at least 1"));
        }
    }
    if let Some(dt) = r.dt {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(range(text, "run", "dt", format!("{dt} is not a positive step size")));
        }
    }
    if r.batch_size == Some(0) {
        return Err(range(text, "run", "batch_size", "must be at least 1"));
    }
    if let Some(a) = r.target_acceptance {
        if !(a > 0.0 && a < 1.0) {
            return Err(range(text, "run", "target_acceptance", format!("{a} is not in (0, 1)")));
        }
    }
    let kept = r.n_steps / r.thin;
    if kept == 0 {
        return Err(range(text, "run", "thin", "larger than n_steps; no samples would be kept"));
    }
    r.batch_size.get_or_insert(default_batch_size(kept));
    r.n_warmup.get_or_insert(default_warmup(r.n_steps));
    r.target_acceptance.get_or_insert(r.kernel.default_target());

    let h = &c.histogram;
    if h.bins == 0 {
        return Err(range(text, "histogram", "bins", "must be at least 1"));
    }
    match (&h.lo, &h.hi) {
        (Some(lo), Some(hi)) => {
            if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                return Err(range(text, "histogram", "lo", "lo and hi must have equal length with lo < hi"));
            }
        }
        (None, None) => {}
        _ => return Err(range(text, "histogram", "lo", "lo and hi must be given together")),
    }

    let m = &mut c.model;
    let stray = |key: &str| range(text, "model", key, format!("not used by model kind {:?}", m.kind));
    match m.kind {
        ModelKind::Alexander => {
            if m.dimer.is_some() {
                return Err(stray("dimer"));
            }
            if m.file.is_some() {
                return Err(stray("file"));
            }
            let p = m.alexander.get_or_insert_with(AlexanderParams::default);
            AlexanderModel::new(p.clone()).map_err(|e| range(text, "model", "alexander", e.to_string()))?;
        }
        ModelKind::Dimer => {
            if m.alexander.is_some() {
                return Err(stray("alexander"));
            }
            if m.file.is_some() {
                return Err(stray("file"));
            }
            let p = m.dimer.get_or_insert_with(DimerParams::default);
            DisplacedHarmonicModel::dimer(p).map_err(|e| range(text, "model", "dimer", e.to_string()))?;
        }
        ModelKind::ExternalSpec => {
            if m.alexander.is_some() {
                return Err(stray("alexander"));
            }
            if m.dimer.is_some() {
                return Err(stray("dimer"));
            }
            if m.file.is_none() {
                return Err(range(text, "model", "file", "external-spec needs a surfaces file"));
            }
        }
    }

    if let Some(o) = &c.oracle {
        o.grid().map_err(|e| match e {
            ConfigError::Range { message, .. } => range(text, "oracle", "lo", message),
            other => other,
        })?;
    }
    Ok(())
}

/// A constructed model, owned.
pub enum BuiltModel {
    Alexander(AlexanderModel),
    Harmonic(DisplacedHarmonicModel),
    Tabulated(TabulatedModel),
}

impl BuiltModel {
    pub fn as_dyn(&self) -> &dyn ModelSystem {
        match self {
            BuiltModel::Alexander(m) => m,
            BuiltModel::Harmonic(m) => m,
            BuiltModel::Tabulated(m) => m,
        }
    }
}

impl RunConfig {
    /// Serialises back to TOML; `parse_config` of the result reproduces
    /// `self` exactly.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn build_model(&self) -> Result<BuiltModel, ConfigError> {
        let invalid = |key: &str, e: ModelError| ConfigError::Range {
            line: None,
            key: format!("model.{key}"),
            message: e.to_string(),
        };
        let model = match self.model.kind {
            ModelKind::Alexander => BuiltModel::Alexander(
                AlexanderModel::new(self.model.alexander.clone().unwrap_or_default())
                    .map_err(|e| invalid("alexander", e))?,
            ),
            ModelKind::Dimer => BuiltModel::Harmonic(
                DisplacedHarmonicModel::dimer(&self.model.dimer.clone().unwrap_or_default())
                    .map_err(|e| invalid("dimer", e))?,
            ),
            ModelKind::ExternalSpec => {
                let path = self.model.file.as_deref().unwrap_or(Path::new(""));
                let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                })?;
                BuiltModel::Tabulated(TabulatedModel::from_json(&text).map_err(|e| invalid("file", e))?)
            }
        };
        let n_dof = model.as_dyn().n_dof();
        if let Some(lo) = &self.histogram.lo {
            if lo.len() != n_dof {
                return Err(ConfigError::Range {
                    line: None,
                    key: "histogram.lo".into(),
                    message: format!("{} bounds given for {n_dof} phonon coordinates", lo.len()),
                });
            }
        }
        Ok(model)
    }

    /// Model and grid used by the exact reference. The dimer is reduced to
    /// its single coupled mode first.
    pub fn oracle_setup(&self, model: &BuiltModel) -> Result<(BuiltModel, GridSpec), ConfigError> {
        let reference = match model {
            BuiltModel::Harmonic(m) => BuiltModel::Harmonic(m.effective_mode().map_err(|e| ConfigError::Range {
                line: None,
                key: "model".into(),
                message: e.to_string(),
            })?),
            BuiltModel::Alexander(m) => BuiltModel::Alexander(m.clone()),
            BuiltModel::Tabulated(m) => BuiltModel::Tabulated(m.clone()),
        };
        let grid = match (&self.oracle, self.model.kind) {
            (Some(o), _) => o.grid()?,
            (None, ModelKind::Alexander) => GridSpec::uniform_1d(-6.0, 24.0, 301).expect("valid default grid"),
            (None, ModelKind::Dimer) => GridSpec::uniform_1d(-6.0, 6.0, 799).expect("valid default grid"),
            (None, ModelKind::ExternalSpec) => {
                return Err(ConfigError::Range {
                    line: None,
                    key: "oracle".into(),
                    message: "external-spec models need an [oracle] grid".into(),
                })
            }
        };
        if grid.n_dof() != reference.as_dyn().n_dof() {
            return Err(ConfigError::Range {
                line: None,
                key: "oracle".into(),
                message: format!(
                    "grid has {} axes but the reference model has {} coordinates",
                    grid.n_dof(),
                    reference.as_dyn().n_dof()
                ),
            });
        }
        Ok((reference, grid))
    }
}
