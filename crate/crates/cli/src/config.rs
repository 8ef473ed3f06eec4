//! Run configuration: flat JSON file with per-problem defaults filled in.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use pathtrace_core::deflation::DeflationParams;
use pathtrace_core::robust::SafeguardParams;
use pathtrace_core::stepper::StepControl;
use pathtrace_core::StopRule;

/// All problem ids the CLI accepts.
pub const PROBLEM_IDS: [&str; 8] =
    ["fa", "fb", "fc", "fd", "fe", "fe_inv", "bratu", "manufactured"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Standard,
    Improved,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode, String> {
        match s {
            "standard" => Ok(Mode::Standard),
            "improved" => Ok(Mode::Improved),
            other => Err(format!("mode must be `standard` or `improved`, got `{other}`")),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::Standard => "standard",
            Mode::Improved => "improved",
        }
    }
}

/// Configuration errors carry every violation found, not just the first.
#[derive(Debug)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: String,
    pub mode: Mode,
    pub lambda0: f64,
    pub u0: f64,
    /// Sign of the initial tangent's lambda component.
    pub direction: f64,
    pub step: StepControl,
    pub stop: StopRule,
    pub safeguards: SafeguardParams,
    pub deflation: DeflationParams,
    pub mesh_elems: usize,
    pub gamma: f64,
    pub zeta: f64,
    pub eta: f64,
    pub seed: u64,
    /// Write every k-th full nodal field for FEM problems.
    pub field_every: Option<usize>,
}

struct Defaults {
    lambda0: f64,
    u0: f64,
    h0: f64,
    window: (f64, f64),
    // (delta_max_lambda, delta_max_u, delta_crit)
    deltas: (f64, f64, f64),
}

/// Reference starts, windows and per-problem distance thresholds. Where no
/// reference thresholds exist the values follow the span-based guideline
/// over the problem's difficult region.
fn defaults_for(problem: &str) -> Option<Defaults> {
    Some(match problem {
        "fa" => Defaults {
            lambda0: 10.0,
            u0: 0.31,
            h0: 0.5,
            window: (2.0, 310.0),
            deltas: (30.0, 1.6, 2.0),
        },
        "fb" => Defaults {
            lambda0: -10.0,
            u0: -73.7,
            h0: 0.5,
            window: (-11.0, 2.0),
            deltas: (1.0, 12.0, 15.0),
        },
        "fc" => Defaults {
            lambda0: 0.0,
            u0: 50.0,
            h0: 0.1,
            window: (-1.0, 3.0),
            deltas: (1.0, 10.0, 12.5),
        },
        "fd" => Defaults {
            lambda0: -10.86,
            u0: -5.0,
            h0: 0.5,
            window: (-20.0, 25.0),
            deltas: (4.0, 1.6, 3.0),
        },
        "fe" => Defaults {
            lambda0: 9.14,
            u0: 9.14,
            h0: 0.5,
            window: (8.0, 60.0),
            deltas: (2.0, 4.0, 5.0),
        },
        "fe_inv" => Defaults {
            lambda0: 9.14,
            u0: 9.14,
            h0: 0.5,
            window: (2.0, 42.0),
            deltas: (2.0, 4.0, 5.0),
        },
        "bratu" => Defaults {
            lambda0: 1.0,
            u0: 0.0,
            h0: 0.1,
            window: (0.5, 4.0),
            deltas: (0.1, 0.02, 0.025),
        },
        "manufactured" => Defaults {
            lambda0: 0.2,
            u0: 0.0,
            h0: 0.02,
            window: (0.0, 1.001),
            deltas: (0.02, 0.2, 0.25),
        },
        _ => return None,
    })
}

const KNOWN_KEYS: [&str; 31] = [
    "problem",
    "mode",
    "lambda0",
    "u0",
    "direction",
    "h0",
    "h_min",
    "h_inc",
    "h_dec",
    "k_min",
    "k_max",
    "corrector_max_iters",
    "tol_f",
    "tol_x",
    "max_points",
    "lambda_window",
    "c_min",
    "delta_max_u",
    "delta_max_lambda",
    "delta_crit",
    "eps_lambda",
    "eps_lambda_star",
    "delta_lambda",
    "eps_diff",
    "deflation_period",
    "deflation_power",
    "deflation_shift",
    "mesh_elems",
    "gamma",
    "zeta",
    "eta",
];
const KNOWN_KEYS_EXTRA: [&str; 4] = ["seed", "field_every", "difficult_region_u", "difficult_region_lambda"];

fn key_known(k: &str) -> bool {
    KNOWN_KEYS.contains(&k) || KNOWN_KEYS_EXTRA.contains(&k)
}

struct Raw<'a> {
    map: &'a serde_json::Map<String, serde_json::Value>,
    errors: Vec<String>,
}

impl<'a> Raw<'a> {
    fn f64_opt(&mut self, key: &str) -> Option<f64> {
        match self.map.get(key) {
            None => None,
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => Some(x),
                _ => {
                    self.errors.push(format!("`{key}` must be a finite number"));
                    None
                }
            },
        }
    }

    fn usize_opt(&mut self, key: &str) -> Option<usize> {
        match self.map.get(key) {
            None => None,
            Some(v) => match v.as_u64() {
                Some(x) => Some(x as usize),
                None => {
                    self.errors.push(format!("`{key}` must be a non-negative integer"));
                    None
                }
            },
        }
    }

    fn str_opt(&mut self, key: &str) -> Option<String> {
        match self.map.get(key) {
            None => None,
            Some(v) => match v.as_str() {
                Some(s) => Some(s.to_string()),
                None => {
                    self.errors.push(format!("`{key}` must be a string"));
                    None
                }
            },
        }
    }

    fn pair_opt(&mut self, key: &str) -> Option<(f64, f64)> {
        match self.map.get(key) {
            None => None,
            Some(serde_json::Value::Array(a)) if a.len() == 2 => {
                match (a[0].as_f64(), a[1].as_f64()) {
                    (Some(lo), Some(hi)) if lo.is_finite() && hi.is_finite() && lo < hi => {
                        Some((lo, hi))
                    }
                    _ => {
                        self.errors
                            .push(format!("`{key}` must be [lo, hi] with finite lo < hi"));
                        None
                    }
                }
            }
            Some(_) => {
                self.errors.push(format!("`{key}` must be a two-element array"));
                None
            }
        }
    }
}

/// Parses and validates a configuration document, filling in defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError {
        violations: vec![format!("not valid JSON: {e}")],
    })?;
    let map = value.as_object().ok_or_else(|| ConfigError {
        violations: vec!["top level must be a JSON object".into()],
    })?;

    let mut raw = Raw { map, errors: Vec::new() };
    for k in map.keys() {
        if !key_known(k) {
            raw.errors.push(format!("unknown key `{k}`"));
        }
    }

    let problem = raw.str_opt("problem");
    let defaults = match &problem {
        Some(id) => match defaults_for(id) {
            Some(d) => Some(d),
            None => {
                raw.errors.push(format!(
                    "unknown problem id `{id}` (known: {})",
                    PROBLEM_IDS.join(", ")
                ));
                None
            }
        },
        None => {
            if !map.contains_key("problem") {
                raw.errors.push("missing required key `problem`".into());
            }
            None
        }
    };

    let mode = match raw.str_opt("mode") {
        Some(s) => match Mode::parse(&s) {
            Ok(m) => m,
            Err(e) => {
                raw.errors.push(e);
                Mode::Improved
            }
        },
        None => Mode::Improved,
    };

    // Reference stepping parameters, overridable per key.
    let h0_cfg = raw.f64_opt("h0");
    let mut step = StepControl::reference(0.1);
    if let Some(v) = raw.f64_opt("h_min") {
        step.h_min = v;
    }
    if let Some(v) = raw.f64_opt("h_inc") {
        step.h_inc = v;
    }
    if let Some(v) = raw.f64_opt("h_dec") {
        step.h_dec = v;
    }
    if let Some(v) = raw.usize_opt("k_min") {
        step.fast_iters = v;
    }
    if let Some(v) = raw.usize_opt("k_max") {
        step.slow_iters = v;
    }
    if let Some(v) = raw.usize_opt("corrector_max_iters") {
        step.max_iters = v;
    }
    if let Some(v) = raw.f64_opt("tol_f") {
        step.tol_f = v;
    }
    if let Some(v) = raw.f64_opt("tol_x") {
        step.tol_x = v;
    }

    let lambda0_cfg = raw.f64_opt("lambda0");
    let u0_cfg = raw.f64_opt("u0");
    let direction = raw.f64_opt("direction").unwrap_or(1.0);
    let max_points = raw.usize_opt("max_points").unwrap_or(10_000);
    let window_cfg = raw.pair_opt("lambda_window");

    let c_min = raw.f64_opt("c_min");
    let delta_max_u = raw.f64_opt("delta_max_u");
    let delta_max_lambda = raw.f64_opt("delta_max_lambda");
    let delta_crit = raw.f64_opt("delta_crit");
    let eps_lambda = raw.f64_opt("eps_lambda");
    let eps_lambda_star = raw.f64_opt("eps_lambda_star");
    let delta_lambda = raw.f64_opt("delta_lambda");
    let eps_diff = raw.f64_opt("eps_diff");
    let difficult_u = raw.pair_opt("difficult_region_u");
    let difficult_lambda = raw.pair_opt("difficult_region_lambda");

    let mut deflation = DeflationParams::default();
    if let Some(v) = raw.usize_opt("deflation_period") {
        deflation.scan_period = v;
    }
    if let Some(v) = raw.f64_opt("deflation_power") {
        deflation.power = v;
    }
    if let Some(v) = raw.f64_opt("deflation_shift") {
        deflation.shift = v;
    }

    let mesh_elems = raw.usize_opt("mesh_elems").unwrap_or(20);
    let gamma = raw.f64_opt("gamma").unwrap_or(100.0);
    let zeta = raw.f64_opt("zeta").unwrap_or(20.0);
    let eta = raw.f64_opt("eta").unwrap_or(50.0);
    let seed = raw.usize_opt("seed").unwrap_or(0) as u64;
    let field_every = raw.usize_opt("field_every");

    let mut errors = std::mem::take(&mut raw.errors);
    // With the problem id unknown there are no reference values to fill in,
    // but the explicitly given values can still be range-checked so every
    // violation is reported in one pass.
    let problem_known = defaults.is_some();
    let defaults = defaults.unwrap_or_else(|| defaults_for("fa").expect("fa is registered"));

    step.h = h0_cfg.unwrap_or(defaults.h0);
    let (win_lo, win_hi) = window_cfg.unwrap_or(defaults.window);
    let stop = StopRule {
        max_points,
        lambda_min: Some(win_lo),
        lambda_max: Some(win_hi),
    };

    // Threshold precedence: explicit values, then the span guideline over a
    // declared difficult region, then the per-problem reference values.
    let guideline = match (difficult_u, difficult_lambda) {
        (Some((ulo, uhi)), Some((llo, lhi))) => {
            Some(SafeguardParams::from_difficult_region(uhi - ulo, lhi - llo))
        }
        _ => None,
    };
    let base = guideline.unwrap_or(SafeguardParams::new(
        defaults.deltas.0,
        defaults.deltas.1,
        defaults.deltas.2,
    ));
    let mut safeguards = base;
    if let Some(v) = c_min {
        safeguards.c_min = v;
    }
    if let Some(v) = delta_max_u {
        safeguards.delta_max_u = v;
    }
    if let Some(v) = delta_max_lambda {
        safeguards.delta_max_lambda = v;
    }
    if let Some(v) = delta_crit {
        safeguards.delta_crit = v;
    }
    if let Some(v) = eps_lambda {
        safeguards.eps_lambda = v;
        safeguards.delta_lambda = 10.0 * v;
    }
    if let Some(v) = eps_lambda_star {
        safeguards.eps_lambda_star = v;
    }
    if let Some(v) = delta_lambda {
        safeguards.delta_lambda = v;
    }
    if let Some(v) = eps_diff {
        safeguards.eps_diff = v;
    }

    let cfg = RunConfig {
        problem: problem.unwrap_or_default(),
        mode,
        lambda0: lambda0_cfg.unwrap_or(defaults.lambda0),
        u0: u0_cfg.unwrap_or(defaults.u0),
        direction: if direction < 0.0 { -1.0 } else { 1.0 },
        step,
        stop,
        safeguards,
        deflation,
        mesh_elems,
        gamma,
        zeta,
        eta,
        seed,
        field_every,
    };

    if let Err(e) = cfg.step.validate() {
        errors.push(strip_core_prefix(&e));
    }
    if let Err(e) = cfg.safeguards.validate() {
        errors.push(strip_core_prefix(&e));
    }
    if let Err(e) = cfg.deflation.validate() {
        errors.push(strip_core_prefix(&e));
    }
    if cfg.mesh_elems == 0 {
        errors.push("mesh_elems must be at least 1".into());
    }
    if cfg.gamma <= 0.0 {
        errors.push("gamma must be positive".into());
    }
    if cfg.eta < 1.0 {
        errors.push("eta must be at least 1".into());
    }
    if cfg.stop.lambda_out_of_range(cfg.lambda0) {
        errors.push(format!(
            "lambda0 = {} lies outside the lambda window [{win_lo}, {win_hi}]",
            cfg.lambda0
        ));
    }

    if errors.is_empty() && problem_known {
        Ok(cfg)
    } else {
        Err(ConfigError { violations: errors })
    }
}

/// Loads a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        violations: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_config(&text)
}

/// Command-line overrides applied on top of a parsed configuration.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub mode: Option<String>,
    pub seed: Option<u64>,
    pub mesh_elems: Option<usize>,
    pub gamma: Option<f64>,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    pub deflation_period: Option<usize>,
    pub deflation_power: Option<f64>,
    pub deflation_shift: Option<f64>,
    pub c_min: Option<f64>,
    pub delta_max_u: Option<f64>,
    pub delta_max_lambda: Option<f64>,
    pub delta_crit: Option<f64>,
    pub eps_lambda: Option<f64>,
    pub eps_lambda_star: Option<f64>,
    pub delta_lambda: Option<f64>,
    pub eps_diff: Option<f64>,
}

/// Applies overrides, then the `PATHTRACE_SEED` environment variable (a CLI
/// `--seed` flag still wins), and re-validates what changed.
pub fn apply_overrides(
    mut cfg: RunConfig,
    ov: &Overrides,
    env_seed: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let mut errors = Vec::new();
    if let Some(m) = &ov.mode {
        match Mode::parse(m) {
            Ok(m) => cfg.mode = m,
            Err(e) => errors.push(e),
        }
    }
    if let Some(s) = env_seed {
        cfg.seed = s;
    }
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(v) = ov.mesh_elems {
        cfg.mesh_elems = v;
    }
    if let Some(v) = ov.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = ov.zeta {
        cfg.zeta = v;
    }
    if let Some(v) = ov.eta {
        cfg.eta = v;
    }
    if let Some(v) = ov.deflation_period {
        cfg.deflation.scan_period = v;
    }
    if let Some(v) = ov.deflation_power {
        cfg.deflation.power = v;
    }
    if let Some(v) = ov.deflation_shift {
        cfg.deflation.shift = v;
    }
    if let Some(v) = ov.c_min {
        cfg.safeguards.c_min = v;
    }
    if let Some(v) = ov.delta_max_u {
        cfg.safeguards.delta_max_u = v;
    }
    if let Some(v) = ov.delta_max_lambda {
        cfg.safeguards.delta_max_lambda = v;
    }
    if let Some(v) = ov.delta_crit {
        cfg.safeguards.delta_crit = v;
    }
    if let Some(v) = ov.eps_lambda {
        cfg.safeguards.eps_lambda = v;
        cfg.safeguards.delta_lambda = 10.0 * v;
    }
    if let Some(v) = ov.eps_lambda_star {
        cfg.safeguards.eps_lambda_star = v;
    }
    if let Some(v) = ov.delta_lambda {
        cfg.safeguards.delta_lambda = v;
    }
    if let Some(v) = ov.eps_diff {
        cfg.safeguards.eps_diff = v;
    }
    if let Err(e) = cfg.safeguards.validate() {
        errors.push(strip_core_prefix(&e));
    }
    if let Err(e) = cfg.deflation.validate() {
        errors.push(strip_core_prefix(&e));
    }
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { violations: errors })
    }
}

fn strip_core_prefix(e: &pathtrace_core::Error) -> String {
    let text = e.to_string();
    text.strip_prefix("invalid configuration: ").map(str::to_string).unwrap_or(text)
}

/// Ordered map of event-kind counts, used in summaries.
pub fn event_counts(trace: &pathtrace_core::Trace) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in &trace.events {
        *counts.entry(e.kind.name().to_string()).or_insert(0) += 1;
    }
    counts
}
