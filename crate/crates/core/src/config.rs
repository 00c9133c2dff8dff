//! Run configuration (TOML) with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::bilevel::CcgOptions;
use crate::devices::DeviceParams;
use crate::market::Formulation;
use crate::milp::SolverOptions;
use crate::screening::ScreeningOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("bad override `{0}` (expected key=value)")]
    Override(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Candidate list: explicit branch ids or "auto" (derived by screening).
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Candidates {
    Auto,
    Ids(Vec<usize>),
}

impl Default for Candidates {
    fn default() -> Self {
        Self::Auto
    }
}

impl<'de> Deserialize<'de> for Candidates {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Ids(Vec<usize>),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "auto" => Ok(Self::Auto),
            Raw::Word(w) => Err(serde::de::Error::custom(format!("expected \"auto\" or a list of branch ids, got `{w}`"))),
            Raw::Ids(ids) => Ok(Self::Ids(ids)),
        }
    }
}

impl Candidates {
    pub fn ids(&self) -> Option<Vec<usize>> {
        match self {
            Self::Auto => None,
            Self::Ids(v) => Some(v.clone()),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub case: Option<PathBuf>,
    /// Scenario table; takes precedence over the profiles.
    pub scenarios: Option<PathBuf>,
    pub load_profile: Option<PathBuf>,
    pub wind_profile: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub vsr: usize,
    pub pst: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self { vsr: 2, pst: 2 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Economics {
    /// α, $/MWh of spilled wind.
    pub spill_cost: f64,
    /// β, $/MWh of shed load.
    pub shed_cost: f64,
}

impl Default for Economics {
    fn default() -> Self {
        Self { spill_cost: 50.0, shed_cost: 5000.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Finance {
    pub rate: f64,
    pub lifetime: f64,
}

impl Default for Finance {
    fn default() -> Self {
        Self { rate: 0.05, lifetime: 5.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct VsrSection {
    pub candidates: Candidates,
    pub comp_min_frac: f64,
    pub comp_max_frac: f64,
}

impl Default for VsrSection {
    fn default() -> Self {
        Self { candidates: Candidates::Auto, comp_min_frac: -0.7, comp_max_frac: 0.2 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PstSection {
    pub candidates: Candidates,
    pub angle_deg: f64,
}

impl Default for PstSection {
    fn default() -> Self {
        Self { candidates: Candidates::Auto, angle_deg: 10.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub pst_per_kva: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { pst_per_kva: 100.0 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct BigM {
    pub m1_scale: f64,
    pub m2_scale: f64,
    pub m_lambda: f64,
}

impl Default for BigM {
    fn default() -> Self {
        Self { m1_scale: 2.0, m2_scale: 3.5, m_lambda: 1e5 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningSection {
    pub top_n: usize,
    pub threshold: f64,
    pub dead_band: f64,
    pub step: f64,
    pub fix_directions: bool,
    pub monitor: bool,
}

impl Default for ScreeningSection {
    fn default() -> Self {
        Self { top_n: 10, threshold: 0.6, dead_band: 1e-3, step: 0.01, fix_directions: true, monitor: true }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    /// Clusters formed from the non-extreme hours.
    pub clusters: usize,
    pub seed: u64,
    /// Per-farm intensity multipliers; defaults to each farm's `intensity_scale`.
    pub farm_scaling: Option<Vec<f64>>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self { clusters: 18, seed: 2015, farm_scaling: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct Algorithm {
    pub epsilon: f64,
    pub max_iter: usize,
    pub mp_time_limit_s: Option<f64>,
    pub formulation: Formulation,
}

impl Default for Algorithm {
    fn default() -> Self {
        Self { epsilon: 1e-3, max_iter: 50, mp_time_limit_s: Some(10_800.0), formulation: Formulation::ShiftFactor }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub mip_gap: f64,
    pub time_limit_s: Option<f64>,
    /// Worker threads for scenario solves; 1 runs sequentially.
    pub threads: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { mip_gap: 1e-6, time_limit_s: None, threads: None }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub budget: Budget,
    pub economics: Economics,
    pub finance: Finance,
    pub vsr: VsrSection,
    pub pst: PstSection,
    pub cost: CostSection,
    pub bigm: BigM,
    pub screening: ScreeningSection,
    pub scenarios: ScenarioSection,
    pub algorithm: Algorithm,
    pub solver: SolverSection,
}

/// Set `a.b.c = value` in a TOML table, parsing `value` as a TOML literal and
/// falling back to a bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.into()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.into()));
    }
    let raw = raw.trim();
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ConfigError::Override(format!("{spec}: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse TOML text, apply overrides, and validate. Relative paths are
    /// resolved against `base`.
    pub fn from_str_with(text: &str, overrides: &[String], origin: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse { path: origin.into(), message: e.to_string() })?;
        if let Some(base) = base {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_str_with(&text, overrides, &path.display().to_string(), Some(base))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        fix(&mut self.paths.case);
        fix(&mut self.paths.scenarios);
        fix(&mut self.paths.load_profile);
        fix(&mut self.paths.wind_profile);
        if self.paths.output_dir.is_relative() {
            self.paths.output_dir = base.join(&self.paths.output_dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.algorithm.epsilon >= 1e-6) {
            return bad(format!("algorithm.epsilon = {} is below the minimum 1e-6", self.algorithm.epsilon));
        }
        if self.algorithm.max_iter == 0 {
            return bad("algorithm.max_iter must be at least 1".into());
        }
        for (name, v) in [
            ("economics.spill_cost", self.economics.spill_cost),
            ("economics.shed_cost", self.economics.shed_cost),
            ("finance.rate", self.finance.rate),
            ("cost.pst_per_kva", self.cost.pst_per_kva),
            ("screening.threshold", self.screening.threshold),
            ("screening.dead_band", self.screening.dead_band),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        for (name, v) in [
            ("bigm.m1_scale", self.bigm.m1_scale),
            ("bigm.m2_scale", self.bigm.m2_scale),
            ("bigm.m_lambda", self.bigm.m_lambda),
            ("screening.step", self.screening.step),
            ("solver.mip_gap", self.solver.mip_gap),
            ("pst.angle_deg", self.pst.angle_deg),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.finance.lifetime >= 1.0) {
            return bad(format!("finance.lifetime must be at least 1, got {}", self.finance.lifetime));
        }
        if self.vsr.comp_min_frac <= -1.0 {
            return bad("vsr.comp_min_frac must exceed -1 (total reactance nonpositive)".into());
        }
        if self.vsr.comp_min_frac > self.vsr.comp_max_frac {
            return bad("vsr.comp_min_frac exceeds vsr.comp_max_frac".into());
        }
        if self.screening.top_n == 0 {
            return bad("screening.top_n must be at least 1".into());
        }
        if self.solver.threads == Some(0) {
            return bad("solver.threads must be at least 1".into());
        }
        Ok(())
    }

    pub fn device_params(&self) -> DeviceParams {
        DeviceParams {
            comp_min_frac: self.vsr.comp_min_frac,
            comp_max_frac: self.vsr.comp_max_frac,
            pst_angle_deg: self.pst.angle_deg,
            pst_per_kva: self.cost.pst_per_kva,
            rate: self.finance.rate,
            lifetime: self.finance.lifetime,
            m1_scale: self.bigm.m1_scale,
            m2_scale: self.bigm.m2_scale,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { mip_gap: self.solver.mip_gap, time_limit_s: self.solver.time_limit_s, ..Default::default() }
    }

    pub fn ccg_options(&self) -> CcgOptions {
        CcgOptions {
            epsilon: self.algorithm.epsilon,
            max_iter: self.algorithm.max_iter,
            mp_time_limit_s: self.algorithm.mp_time_limit_s,
            m_lambda: self.bigm.m_lambda,
            solver: self.solver_options(),
            parallel: self.solver.threads != Some(1),
        }
    }

    pub fn screening_options(&self) -> ScreeningOptions {
        ScreeningOptions {
            top_n: self.screening.top_n,
            threshold: self.screening.threshold,
            dead_band: self.screening.dead_band,
            step: self.screening.step,
            shedding_cost: self.economics.shed_cost,
            spill_cost: self.economics.spill_cost,
        }
    }
}
