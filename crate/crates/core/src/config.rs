//! TOML run configuration for the `ddbranch` binary.
//!
//! ```toml
//! [model]
//! family = "ricker"        # geometric | ricker | binary_splitting | density_independent
//! rho = 2.0
//! base = "poisson"         # optional: poisson | geometric | binary
//!
//! [validate]
//! x_max = 3.0
//! step = 0.05
//! t_max = 50
//! tol = 1e-12
//!
//! [conjugacy]
//! x_max = 4.0
//! step = 0.01
//! tol = 1e-10
//!
//! [simulate]
//! k = 1000
//! steps = 20               # optional, defaults to n1(K)
//! replicates = 1
//! seed = 0
//! population_cap = 100000000
//! z0 = 1
//!
//! [experiment]
//! k_grid = [1024, 4096, 16384, 65536, 262144, 1048576]
//! replicates = 2000
//! c = 0.625
//! quantile_levels = [0.5, 0.9]
//! master_seed = 0
//! output_dir = "out"
//! w_extra_generations = 0
//! ```
//!
//! Every section and key is optional. Unknown keys are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::experiments::{DEFAULT_C, DEFAULT_QUANTILE_LEVELS};
use crate::offspring::{BaseLaw, Family, OffspringModel};
use crate::simulate::DEFAULT_POPULATION_CAP;

/// TOML integers are signed 64-bit.
const MAX_TOML_INT: u64 = i64::MAX as u64;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// Dotted key path, e.g. `experiment.c`; empty when unknown.
    pub key: String,
    /// 1-based line in the config text, when the key appears there.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.key.is_empty(), self.line) {
            (true, Some(line)) => write!(f, "line {line}: {}", self.message),
            (true, None) => write!(f, "{}", self.message),
            (false, Some(line)) => write!(f, "{} (line {line}): {}", self.key, self.message),
            (false, None) => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub validate: ValidateSection,
    pub conjugacy: ConjugacySection,
    pub simulate: SimulateSection,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseLaw>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            family: Family::Ricker,
            rho: 2.0,
            base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateSection {
    pub x_max: f64,
    pub step: f64,
    pub t_max: u64,
    pub tol: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            x_max: 3.0,
            step: 0.05,
            t_max: 50,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConjugacySection {
    pub x_max: f64,
    pub step: f64,
    pub tol: f64,
}

impl Default for ConjugacySection {
    fn default() -> Self {
        Self {
            x_max: 4.0,
            step: 0.01,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub k: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    pub replicates: u64,
    pub seed: u64,
    pub population_cap: u64,
    pub z0: u64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            k: 1000,
            steps: None,
            replicates: 1,
            seed: 0,
            population_cap: DEFAULT_POPULATION_CAP,
            z0: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub k_grid: Vec<u64>,
    pub replicates: u64,
    pub c: f64,
    pub quantile_levels: Vec<f64>,
    pub master_seed: u64,
    pub output_dir: String,
    pub w_extra_generations: u32,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            k_grid: (0..6).map(|i| 1u64 << (10 + 2 * i)).collect(),
            replicates: 2000,
            c: DEFAULT_C,
            quantile_levels: DEFAULT_QUANTILE_LEVELS.to_vec(),
            master_seed: 0,
            output_dir: "out".into(),
            w_extra_generations: 0,
        }
    }
}

impl RunConfig {
    pub fn offspring_model(&self) -> crate::Result<OffspringModel> {
        OffspringModel::new(self.model.family, self.model.rho, self.model.base)
    }

    /// Checks every invariant; the error names the first offending key.
    pub fn check(&self) -> Result<(), (String, String)> {
        fn bad(key: &str, msg: impl Into<String>) -> Result<(), (String, String)> {
            Err((key.to_string(), msg.into()))
        }
        let m = &self.model;
        if !(m.rho > 1.0) || !m.rho.is_finite() {
            return bad("model.rho", format!("rho > 1 required, got {}", m.rho));
        }
        if let Err(e) = self.offspring_model() {
            let key = if m.base.is_some() { "model.base" } else { "model.family" };
            return bad(key, e.to_string());
        }

        let v = &self.validate;
        if !(v.x_max > 0.0) || !v.x_max.is_finite() {
            return bad("validate.x_max", "must be positive and finite");
        }
        if !(v.step > 0.0) || v.step > v.x_max {
            return bad("validate.step", "must lie in (0, x_max]");
        }
        if v.t_max == 0 {
            return bad("validate.t_max", "must be positive");
        }
        if !(v.tol > 0.0) {
            return bad("validate.tol", "tol > 0 required");
        }

        let c = &self.conjugacy;
        if !(c.x_max > 0.0) || !c.x_max.is_finite() {
            return bad("conjugacy.x_max", "must be positive and finite");
        }
        if !(c.step > 0.0) || c.step > c.x_max {
            return bad("conjugacy.step", "must lie in (0, x_max]");
        }
        if !(c.tol > 0.0) || c.tol >= 1.0 {
            return bad("conjugacy.tol", "tol must lie in (0, 1)");
        }

        let s = &self.simulate;
        if s.seed > MAX_TOML_INT {
            return bad("simulate.seed", "must be below 2^63");
        }
        if s.k < 2 {
            return bad("simulate.k", "K >= 2 required");
        }
        if s.replicates == 0 {
            return bad("simulate.replicates", "must be positive");
        }
        if s.z0 == 0 {
            return bad("simulate.z0", "must be positive");
        }
        if s.population_cap < s.z0 {
            return bad("simulate.population_cap", "must be at least z0");
        }

        let e = &self.experiment;
        if e.master_seed > MAX_TOML_INT {
            return bad("experiment.master_seed", "must be below 2^63");
        }
        if e.k_grid.is_empty() {
            return bad("experiment.k_grid", "must not be empty");
        }
        if e.k_grid[0] < 2 {
            return bad("experiment.k_grid", "K >= 2 required");
        }
        if e.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("experiment.k_grid", "must be strictly ascending");
        }
        if e.replicates == 0 {
            return bad("experiment.replicates", "must be positive");
        }
        if !(e.c > 0.5 && e.c < 1.0) {
            return bad("experiment.c", format!("c must lie in the open interval (0.5, 1), got {}", e.c));
        }
        if e.quantile_levels.is_empty() || e.quantile_levels.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return bad("experiment.quantile_levels", "levels must lie in (0, 1)");
        }
        if e.output_dir.is_empty() {
            return bad("experiment.output_dir", "must not be empty");
        }
        Ok(())
    }
}

/// Parses and validates a config document, with defaults for anything missing.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &[])
}

/// As [`parse_config`], then applies `section.key=value` overrides in order.
/// Values are read as TOML literals, falling back to bare strings.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut config: RunConfig = toml::from_str(text).map_err(|e| from_toml_error(text, &e))?;
    let mut overridden = Vec::new();
    if !overrides.is_empty() {
        let mut table: toml::Table = toml::Table::try_from(&config).map_err(|e| ConfigError {
            key: String::new(),
            line: None,
            message: e.to_string(),
        })?;
        for item in overrides {
            let key = apply_override(&mut table, item)?;
            overridden.push(key);
        }
        config = table.try_into().map_err(|e: toml::de::Error| ConfigError {
            key: overridden.last().cloned().unwrap_or_default(),
            line: None,
            message: format!("override rejected: {}", e.message()),
        })?;
    }
    config.check().map_err(|(key, message)| {
        let line = if overridden.contains(&key) { None } else { locate_key(text, &key) };
        ConfigError { key, line, message }
    })?;
    Ok(config)
}

/// Renders a config as a TOML document that parses back to the same value.
pub fn render_config(config: &RunConfig) -> String {
    toml::to_string(config).expect("config is always representable")
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<String, ConfigError> {
    let fail = |key: &str, message: String| ConfigError {
        key: key.to_string(),
        line: None,
        message,
    };
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| fail("", format!("override `{item}` is not of the form section.key=value")))?;
    let path = path.trim();
    let (section, key) = path
        .split_once('.')
        .ok_or_else(|| fail(path, "override key must be section.key".into()))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match entry {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
        }
        _ => return Err(fail(path, format!("`{section}` is not a section"))),
    }
    Ok(path.to_string())
}

fn from_toml_error(text: &str, err: &toml::de::Error) -> ConfigError {
    let (key, line) = match err.span() {
        Some(span) => (key_path_at(text, span.start), Some(line_of(text, span.start))),
        None => (String::new(), None),
    };
    ConfigError {
        key,
        line,
        message: err.message().trim().to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn section_header(line: &str) -> Option<&str> {
    let t = line.trim();
    t.strip_prefix('[')?.strip_suffix(']').map(str::trim)
}

fn line_key(line: &str) -> Option<&str> {
    let (k, _) = line.split_once('=')?;
    let k = k.trim();
    (!k.is_empty() && !k.starts_with('#')).then_some(k)
}

/// Best-effort dotted path of the key on the line containing `offset`.
fn key_path_at(text: &str, offset: usize) -> String {
    let target = line_of(text, offset);
    let mut section = "";
    for (i, line) in text.lines().enumerate() {
        if let Some(s) = section_header(line) {
            section = s;
        }
        if i + 1 == target {
            return match (section_header(line), line_key(line)) {
                (Some(s), _) => s.to_string(),
                (None, Some(k)) if section.is_empty() => k.to_string(),
                (None, Some(k)) => format!("{section}.{k}"),
                (None, None) => section.to_string(),
            };
        }
    }
    String::new()
}

fn locate_key(text: &str, path: &str) -> Option<usize> {
    let (want_section, want_key) = path.split_once('.')?;
    let mut section = "";
    for (i, line) in text.lines().enumerate() {
        if let Some(s) = section_header(line) {
            section = s;
        } else if section == want_section && line_key(line) == Some(want_key) {
            return Some(i + 1);
        }
    }
    None
}
