//! Scenario configuration: every static parameter of a run, the on-disk
//! key-value format, `key=value` overrides and invariant validation.
//!
//! The file format is TOML restricted to flat keys. Per-SU and per-PU fields
//! accept either a scalar (broadcast to every user) or an array with one
//! entry per user. Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema tag every scenario file must carry.
pub const SCHEMA: &str = "cogsched-scenario-v1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario document: {0}")]
    Parse(String),
    #[error("bad override `{0}`: expected key=value")]
    Override(String),
    #[error("unsupported schema `{found}`, expected `{SCHEMA}`")]
    Schema { found: String },
}

/// A per-user parameter: one value for everybody, or one value per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerUser {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerUser {
    pub fn at(&self, i: usize) -> f64 {
        match self {
            PerUser::Scalar(x) => *x,
            PerUser::List(v) => v[i],
        }
    }

    /// Expands to exactly `n` values. Lists of the wrong length are truncated
    /// or padded with their last entry; validation reports the mismatch.
    pub fn expand(&self, n: usize) -> Vec<f64> {
        match self {
            PerUser::Scalar(x) => vec![*x; n],
            PerUser::List(v) => (0..n)
                .map(|i| v.get(i).or(v.last()).copied().unwrap_or(0.0))
                .collect(),
        }
    }

    fn len_matches(&self, n: usize) -> bool {
        match self {
            PerUser::Scalar(_) => true,
            PerUser::List(v) => v.len() == n,
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            PerUser::Scalar(x) => vec![*x],
            PerUser::List(v) => v.clone(),
        }
    }
}

impl From<f64> for PerUser {
    fn from(x: f64) -> Self {
        PerUser::Scalar(x)
    }
}

impl From<Vec<f64>> for PerUser {
    fn from(v: Vec<f64>) -> Self {
        PerUser::List(v)
    }
}

/// Which PU queue the allocator weighs: the true backlog or the CBS-side
/// over-estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Mode {
    #[default]
    #[serde(rename = "coca")]
    Coca,
    #[serde(rename = "coca-e")]
    CocaE,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Coca => f.write_str("coca"),
            Mode::CocaE => f.write_str("coca-e"),
        }
    }
}

/// How the PBS picks the subcarriers each busy PU occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PuPolicy {
    /// PU k always uses the same contiguous block of `pu_subcarriers[k]`.
    #[default]
    Fixed,
    /// Each subcarrier is occupied with probability `pu_occupancy_fraction`
    /// by a uniformly chosen busy PU.
    Random,
}

/// Multiplier update rule of the dual loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepRule {
    /// Step scaled to the multiplier range, doubled while the subgradient
    /// keeps its sign and halved when it flips.
    #[default]
    Adaptive,
    /// Fixed step `step_size`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,

    pub num_subcarriers: usize,
    pub num_sus: usize,
    pub num_pus: usize,
    pub slot_count: usize,

    /// Peak CBS power per slot (W).
    pub p_max: f64,
    /// Long-term average CBS power budget (W).
    pub p_avg: f64,
    /// Drift-plus-penalty trade-off parameter.
    pub v: f64,

    /// Private-data throughput weights.
    pub theta: PerUser,
    /// Open-data throughput weights.
    pub phi: PerUser,
    pub lambda_open: PerUser,
    pub lambda_private: PerUser,
    /// Average queueing-delay bound of open data (slots).
    pub delay_bound: PerUser,
    /// Peak open-data arrivals per slot.
    pub mu_max: f64,
    /// Peak private-data arrivals per slot.
    pub d_max: f64,
    pub q_max_open: f64,
    pub q_max_private: f64,

    pub lambda_pu: PerUser,
    pub d_max_pu: f64,

    /// Log-domain centre of the direct SU C/I (linear).
    pub su_mean_ci: f64,
    /// Log-domain centre of the direct PU C/I (linear).
    pub pu_mean_ci: f64,
    pub shadowing_std_db: f64,
    /// Mean CBS -> PU cross C/I.
    pub cross_cbs_to_pu: f64,
    /// Mean PBS -> SU cross C/I.
    pub cross_pbs_to_su: f64,
    /// Log-normal jitter applied to the cross links (dB std, 0 = constant).
    pub cross_jitter_db: f64,
    /// PBS transmit power on each occupied subcarrier (W).
    pub pbs_power: f64,
    pub pu_policy: PuPolicy,
    /// Block size per PU for the fixed policy.
    pub pu_subcarriers: Vec<usize>,
    pub pu_occupancy_fraction: f64,

    pub step_rule: StepRule,
    pub step_size: f64,
    pub dual_tolerance: f64,
    pub delta_init: f64,
    pub max_dual_iterations: usize,
    pub power_grid_points: usize,

    /// Over-estimation slack of the PU queue estimator.
    pub iota: f64,
    pub mode: Mode,
    pub rng_seed: u64,
}

impl Default for ScenarioConfig {
    /// The eight-SU, 64-subcarrier, single-PU reference scenario.
    fn default() -> Self {
        let n = 8;
        let mu_max = 50.0;
        let d_max = 20.0;
        ScenarioConfig {
            schema: SCHEMA.to_string(),
            num_subcarriers: 64,
            num_sus: n,
            num_pus: 1,
            slot_count: 4500,
            p_max: 1.0,
            p_avg: 0.8,
            v: 50.0,
            theta: PerUser::Scalar(1.0),
            phi: PerUser::Scalar(0.8),
            lambda_open: PerUser::List((1..=n).map(|i| i as f64 * mu_max / 10.0).collect()),
            lambda_private: PerUser::List((1..=n).map(|i| i as f64 * d_max / 10.0).collect()),
            delay_bound: PerUser::Scalar(60.0),
            mu_max,
            d_max,
            q_max_open: 200.0,
            q_max_private: 1000.0,
            lambda_pu: PerUser::Scalar(140.0),
            d_max_pu: 200.0,
            su_mean_ci: 1000.0,
            pu_mean_ci: 1000.0,
            shadowing_std_db: 10.0,
            cross_cbs_to_pu: 0.35,
            cross_pbs_to_su: 21.0,
            cross_jitter_db: 0.0,
            pbs_power: 0.1,
            pu_policy: PuPolicy::Fixed,
            pu_subcarriers: vec![32],
            pu_occupancy_fraction: 0.5,
            step_rule: StepRule::Adaptive,
            step_size: 0.01,
            dual_tolerance: 1e-3,
            delta_init: 0.0,
            max_dual_iterations: 500,
            power_grid_points: 256,
            iota: 0.01,
            mode: Mode::Coca,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(text, &[] as &[&str])
    }

    /// Parses a scenario document and applies `key=value` overrides before
    /// deserialising, so overrides go through the same unknown-key and type
    /// checks as the file itself.
    pub fn from_toml_with_overrides<S: AsRef<str>>(
        text: &str,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for ov in overrides {
            let (key, value) = parse_override(ov.as_ref())?;
            table.insert(key, value);
        }
        let cfg: ScenarioConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        if cfg.schema != SCHEMA {
            return Err(ConfigError::Schema { found: cfg.schema });
        }
        Ok(cfg)
    }

    pub fn load<P: AsRef<Path>, S: AsRef<str>>(
        path: P,
        overrides: &[S],
    ) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serialises")
    }

    /// Returns a copy with one more `key=value` override applied.
    pub fn with_override(&self, ov: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_overrides(&self.to_toml_string(), &[ov])
    }

    pub fn theta_of(&self, n: usize) -> f64 {
        self.theta.at(n)
    }
    pub fn phi_of(&self, n: usize) -> f64 {
        self.phi.at(n)
    }
    pub fn rho_of(&self, n: usize) -> f64 {
        self.delay_bound.at(n)
    }
}

/// Splits `key=value`; the value is parsed as a TOML value and falls back to
/// a bare string (so `mode=coca-e` works). Keys are lower-cased, which maps
/// the usual symbols (`V`, `P_avg`) onto field names.
fn parse_override(ov: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(ov.to_string()))?;
    let key = key.trim().to_lowercase();
    if key.is_empty() {
        return Err(ConfigError::Override(ov.to_string()));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key, value))
}

// ============================================================================
// Validation
// ============================================================================

/// Outcome of [`validate_config`]. Errors make a scenario unusable;
/// warnings flag configurations that run but void a performance guarantee.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    fn err(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            writeln!(f, "pass")?;
        } else {
            writeln!(f, "fail")?;
        }
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

pub fn validate_config(cfg: &ScenarioConfig) -> ValidationReport {
    let mut r = ValidationReport::default();
    let n = cfg.num_sus;
    let k = cfg.num_pus;

    if cfg.schema != SCHEMA {
        r.err(format!("schema must be `{SCHEMA}`"));
    }
    if cfg.num_subcarriers == 0 {
        r.err("num_subcarriers must be positive");
    }
    if n == 0 {
        r.err("num_sus must be positive");
    }
    if k == 0 {
        r.err("num_pus must be positive");
    }

    let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
    for (name, x) in [
        ("p_max", cfg.p_max),
        ("p_avg", cfg.p_avg),
        ("v", cfg.v),
        ("mu_max", cfg.mu_max),
        ("d_max", cfg.d_max),
        ("d_max_pu", cfg.d_max_pu),
        ("q_max_open", cfg.q_max_open),
        ("q_max_private", cfg.q_max_private),
        ("pbs_power", cfg.pbs_power),
        ("shadowing_std_db", cfg.shadowing_std_db),
        ("cross_jitter_db", cfg.cross_jitter_db),
        ("iota", cfg.iota),
        ("delta_init", cfg.delta_init),
    ] {
        if !finite_nonneg(x) {
            r.err(format!("{name} must be finite and nonnegative (got {x})"));
        }
    }
    for (name, x) in [
        ("su_mean_ci", cfg.su_mean_ci),
        ("pu_mean_ci", cfg.pu_mean_ci),
        ("cross_cbs_to_pu", cfg.cross_cbs_to_pu),
        ("cross_pbs_to_su", cfg.cross_pbs_to_su),
    ] {
        if !(x.is_finite() && x > 0.0) {
            r.err(format!("{name} must be positive (got {x})"));
        }
    }
    if cfg.p_max <= 0.0 {
        r.err("p_max must be positive");
    }
    if cfg.p_avg > cfg.p_max {
        r.err(format!(
            "p_avg ({}) must not exceed p_max ({})",
            cfg.p_avg, cfg.p_max
        ));
    }
    if !(cfg.step_size.is_finite() && cfg.step_size > 0.0) {
        r.err("step_size must be positive");
    }
    if !(cfg.dual_tolerance.is_finite() && cfg.dual_tolerance > 0.0) {
        r.err("dual_tolerance must be positive");
    }
    if cfg.max_dual_iterations == 0 {
        r.err("max_dual_iterations must be positive");
    }
    if cfg.power_grid_points < 3 {
        r.err("power_grid_points must be at least 3");
    }
    if !(0.0..=1.0).contains(&cfg.pu_occupancy_fraction) {
        r.err("pu_occupancy_fraction must lie in [0, 1]");
    }

    if cfg.q_max_open <= cfg.mu_max {
        r.err(format!(
            "q_max_open ({}) must exceed mu_max ({})",
            cfg.q_max_open, cfg.mu_max
        ));
    }
    if cfg.q_max_private < cfg.d_max {
        r.err(format!(
            "q_max_private ({}) must be at least d_max ({})",
            cfg.q_max_private, cfg.d_max
        ));
    }

    let per_su: [(&str, &PerUser); 5] = [
        ("theta", &cfg.theta),
        ("phi", &cfg.phi),
        ("lambda_open", &cfg.lambda_open),
        ("lambda_private", &cfg.lambda_private),
        ("delay_bound", &cfg.delay_bound),
    ];
    for (name, p) in per_su {
        if !p.len_matches(n) {
            r.err(format!("{name} must have one entry per SU ({n})"));
        }
        if p.values().iter().any(|x| !finite_nonneg(*x)) {
            r.err(format!("{name} entries must be finite and nonnegative"));
        }
    }
    if !cfg.lambda_pu.len_matches(k) {
        r.err(format!("lambda_pu must have one entry per PU ({k})"));
    }
    if cfg.lambda_pu.values().iter().any(|x| !finite_nonneg(*x)) {
        r.err("lambda_pu entries must be finite and nonnegative");
    }

    for (i, l) in cfg.lambda_open.expand(n).iter().enumerate() {
        if *l > cfg.mu_max {
            r.err(format!("lambda_open[{i}] = {l} exceeds mu_max = {}", cfg.mu_max));
        }
    }
    for (i, l) in cfg.lambda_private.expand(n).iter().enumerate() {
        if *l > cfg.d_max {
            r.err(format!("lambda_private[{i}] = {l} exceeds d_max = {}", cfg.d_max));
        }
    }
    for (i, l) in cfg.lambda_pu.expand(k).iter().enumerate() {
        if *l > cfg.d_max_pu {
            r.err(format!("lambda_pu[{i}] = {l} exceeds d_max_pu = {}", cfg.d_max_pu));
        }
    }

    if cfg.pu_policy == PuPolicy::Fixed {
        if cfg.pu_subcarriers.len() != k {
            r.err(format!("pu_subcarriers must have one entry per PU ({k})"));
        }
        let total: usize = cfg.pu_subcarriers.iter().sum();
        if total > cfg.num_subcarriers {
            r.err(format!(
                "PU blocks need {total} subcarriers but only {} exist",
                cfg.num_subcarriers
            ));
        }
    }

    // Buffer sizing against the drift argument: q_max^o > mu_max + (C^2 + mu^2) / (2 eps)
    // needs eps above eps_min. When eps_min exceeds every open arrival rate the
    // slack cannot come from any feasible rate vector and the B/V guarantee is void.
    if r.is_ok() {
        let c_open = open_rate_ceiling(cfg);
        let eps_open = (c_open * c_open + cfg.mu_max * cfg.mu_max)
            / (2.0 * (cfg.q_max_open - cfg.mu_max));
        let lam_max = cfg
            .lambda_open
            .expand(n)
            .into_iter()
            .fold(0.0_f64, f64::max);
        if eps_open >= lam_max.max(f64::MIN_POSITIVE) {
            r.warnings.push(format!(
                "q_max_open = {} needs slack eps > {eps_open:.3} (rate ceiling {c_open:.1}); \
                 no open arrival rate reaches it, so the throughput bound is vacuous",
                cfg.q_max_open
            ));
        }
        let c_priv = c_open;
        let eps_priv = (c_priv * c_priv + cfg.d_max * cfg.d_max)
            / (2.0 * (cfg.q_max_private - cfg.d_max).max(f64::MIN_POSITIVE));
        let lam_p = cfg
            .lambda_private
            .expand(n)
            .into_iter()
            .fold(0.0_f64, f64::max);
        if eps_priv >= lam_p.max(f64::MIN_POSITIVE) {
            r.warnings.push(format!(
                "q_max_private = {} needs slack eps >= {eps_priv:.3}; \
                 no private arrival rate reaches it, so the throughput bound is vacuous",
                cfg.q_max_private
            ));
        }
    }
    r
}

/// A-priori per-slot rate ceiling of one SU: every subcarrier at full power
/// with a +3 sigma shadowing draw and a 10x Rayleigh peak.
pub fn open_rate_ceiling(cfg: &ScenarioConfig) -> f64 {
    let shadow = 10f64.powf(3.0 * cfg.shadowing_std_db / 10.0);
    let peak_ci = cfg.su_mean_ci * shadow * 10.0;
    cfg.num_subcarriers as f64 * (1.0 + cfg.p_max * peak_ci).log2()
}
