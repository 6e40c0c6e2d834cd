//! Scenario configuration: JSON schema, defaults and parse-time validation.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use floquet_core::growth_fragmentation::GFParams;
use floquet_core::selection_mutation::{FitnessField, MutationKernel, SMModel};
use floquet_core::{Error as CoreError, Method, SpaceGrid, StepScheme};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    pub experiment: ExperimentConfig,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    GrowthFragmentation(GFParams),
    SelectionMutation {
        fitness: FitnessField,
        kernel: MutationKernel,
    },
    /// `M_{s,t}f(x) = f(x + t − s) e^{(t−s) sin(x − s)}`.
    SinExact {
        #[serde(default = "two_pi")]
        period: f64,
    },
}

fn two_pi() -> f64 {
    2.0 * PI
}

impl ModelConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::GrowthFragmentation(_) => "growth_fragmentation",
            ModelConfig::SelectionMutation { .. } => "selection_mutation",
            ModelConfig::SinExact { .. } => "sin_exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "one")]
    pub dt_max: f64,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            method: Method::Euler,
            dt_max: 1.0,
            cfl_safety: 0.9,
        }
    }
}

fn default_method() -> Method {
    Method::Euler
}
fn one() -> f64 {
    1.0
}
fn default_safety() -> f64 {
    0.9
}

/// Minorizing measure on the small set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuConfig {
    #[default]
    Uniform,
    /// Window from the Doeblin constants (growth-fragmentation only).
    Doeblin,
    Window {
        lo: f64,
        hi: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Floquet(FloquetKnobs),
    #[serde(alias = "harris_A")]
    HarrisA(HarrisAKnobs),
    #[serde(alias = "harris_B")]
    HarrisB(HarrisBKnobs),
    Convergence(ConvergenceKnobs),
    Gabriel(GabrielKnobs),
    CounterexampleB4(CounterexampleKnobs),
    Doeblin(DoeblinKnobs),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Floquet(_) => "floquet",
            ExperimentConfig::HarrisA(_) => "harris_a",
            ExperimentConfig::HarrisB(_) => "harris_b",
            ExperimentConfig::Convergence(_) => "convergence",
            ExperimentConfig::Gabriel(_) => "gabriel",
            ExperimentConfig::CounterexampleB4(_) => "counterexample_b4",
            ExperimentConfig::Doeblin(_) => "doeblin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloquetKnobs {
    #[serde(default = "d_family_samples")]
    pub n_samples: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_mono_steps")]
    pub mono_steps: usize,
    /// Allowed gap between the monodromy and power-iteration eigenvalues.
    #[serde(default = "d_cross_tol")]
    pub cross_tol: f64,
    #[serde(default)]
    pub expected_lambda_f: Option<f64>,
    #[serde(default = "d_expected_tol")]
    pub expected_tol: f64,
}

fn d_family_samples() -> usize {
    9
}
fn d_tol() -> f64 {
    1e-12
}
fn d_max_iter() -> usize {
    200_000
}
fn d_mono_steps() -> usize {
    2000
}
fn d_cross_tol() -> f64 {
    5e-3
}
fn d_expected_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarrisAKnobs {
    /// `P = M_{0,kT}`.
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_a_n_max")]
    pub n_max: usize,
    pub small_set: [f64; 2],
    #[serde(default)]
    pub nu: NuConfig,
    /// Bump centre of the selection-mutation Lyapunov pair.
    #[serde(default = "d_x0")]
    pub x0: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
}

fn d_k() -> usize {
    1
}
fn d_a_n_max() -> usize {
    10
}
fn d_x0() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarrisBKnobs {
    #[serde(default)]
    pub s0: f64,
    /// Defaults to the model period.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "d_b_n_max")]
    pub n_max: usize,
    #[serde(default = "d_time_samples")]
    pub time_samples: usize,
    pub small_set: [f64; 2],
    #[serde(default)]
    pub nu: NuConfig,
    #[serde(default = "d_x0")]
    pub x0: f64,
    #[serde(default = "d_b5_points")]
    pub b5_points: usize,
    #[serde(default = "d_b5_depth")]
    pub b5_depth: u32,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
}

fn d_b_n_max() -> usize {
    8
}
fn d_time_samples() -> usize {
    4
}
fn d_b5_points() -> usize {
    5
}
fn d_b5_depth() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceKnobs {
    #[serde(default = "d_horizon")]
    pub horizon_periods: usize,
    #[serde(default = "d_checkpoints")]
    pub checkpoints_per_period: usize,
    pub diracs: Vec<f64>,
    #[serde(default = "d_conv_samples")]
    pub n_samples: usize,
    /// Weighted-TV bound between the final normalized profiles.
    #[serde(default = "d_profile_tol")]
    pub profile_tol: f64,
    #[serde(default = "d_tol")]
    pub tol: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
}

fn d_horizon() -> usize {
    15
}
fn d_checkpoints() -> usize {
    4
}
fn d_conv_samples() -> usize {
    5
}
fn d_profile_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GabrielKnobs {
    #[serde(default = "d_gabriel_samples")]
    pub n_samples: usize,
    #[serde(default = "d_mono_steps")]
    pub mono_steps: usize,
    /// Spread allowed between the three eigenvalues when g0 is constant.
    #[serde(default = "d_cross_tol")]
    pub collapse_tol: f64,
}

fn d_gabriel_samples() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleKnobs {
    #[serde(default = "d_sin_set")]
    pub small_set: [f64; 2],
    #[serde(default = "d_sin_n_max")]
    pub n_max: usize,
    #[serde(default = "d_sin_time_samples")]
    pub time_samples: usize,
    /// Compositions checked against the closed-form ratio.
    #[serde(default = "d_k_max")]
    pub k_max: u32,
    /// `(x, s, u)` points for the ratio check.
    #[serde(default = "d_triples")]
    pub triples: Vec<[f64; 3]>,
    #[serde(default = "d_ratio_tol")]
    pub ratio_tol: f64,
}

fn d_sin_set() -> [f64; 2] {
    [0.5, 2.5]
}
fn d_sin_n_max() -> usize {
    6
}
fn d_sin_time_samples() -> usize {
    8
}
fn d_k_max() -> u32 {
    8
}
fn d_triples() -> Vec<[f64; 3]> {
    vec![[0.4, 0.0, 1.0], [2.0, 0.5, 3.0], [PI / 2.0, 0.0, PI]]
}
fn d_ratio_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoeblinKnobs {
    #[serde(default)]
    pub s: f64,
    #[serde(default = "d_durations")]
    pub durations: Vec<f64>,
    #[serde(default = "d_r")]
    pub r: f64,
    /// Relative tolerance on `c(h₁)/c(h₂) = h₁/h₂` for the two shortest durations.
    #[serde(default = "d_scaling_tol")]
    pub scaling_tol: f64,
}

fn d_durations() -> Vec<f64> {
    vec![1.0, 0.01, 0.005]
}
fn d_r() -> f64 {
    6.0
}
fn d_scaling_tol() -> f64 {
    0.05
}

/// One violated constraint, anchored to a line of the source when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub path: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.path, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Syntax {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {} violation(s)\n{}", .violations.len(), list(.violations))]
    Invalid {
        path: String,
        violations: Vec<Violation>,
    },
}

fn list(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("  {x}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            ConfigError::Invalid { violations, .. } => violations,
            _ => &[],
        }
    }
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parse and validate; `origin` names the source in messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<ScenarioConfig, ConfigError> {
    let syntax = |e: serde_json::Error| ConfigError::Syntax {
        path: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    };
    let raw: Value = serde_json::from_str(text).map_err(syntax)?;
    let cfg: ScenarioConfig = match serde_json::from_value(raw.clone()) {
        Ok(c) => c,
        Err(e) => {
            // Re-run on the text so the error carries a position.
            let e = serde_json::from_str::<ScenarioConfig>(text)
                .err()
                .unwrap_or(e);
            return Err(syntax(e));
        }
    };
    let mut violations = Vec::new();
    let typed = serde_json::to_value(&cfg).expect("config serializes");
    unknown_keys(&raw, &typed, &mut Vec::new(), &mut |path| {
        violations.push(Violation {
            line: locate(text, path),
            path: path.join("."),
            message: "unknown key".into(),
        })
    });
    for (path, message) in constraint_violations(&cfg) {
        let segs: Vec<&str> = path.iter().map(String::as_str).collect();
        violations.push(Violation {
            line: locate(text, &segs),
            path: path.join("."),
            message,
        });
    }
    violations.sort_by_key(|v| v.line.unwrap_or(usize::MAX));
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid {
            path: origin.to_string(),
            violations,
        })
    }
}

fn unknown_keys<'a>(
    raw: &'a Value,
    typed: &Value,
    path: &mut Vec<&'a str>,
    report: &mut dyn FnMut(&[&str]),
) {
    match (raw, typed) {
        (Value::Object(r), Value::Object(t)) => {
            for (k, v) in r {
                path.push(k);
                match t.get(k) {
                    Some(tv) => unknown_keys(v, tv, path, report),
                    None => report(path),
                }
                path.pop();
            }
        }
        (Value::Array(r), Value::Array(t)) => {
            for (v, tv) in r.iter().zip(t) {
                unknown_keys(v, tv, path, report);
            }
        }
        _ => {}
    }
}

/// Line of the deepest key of `path` found by a forward text search.
fn locate(text: &str, path: &[&str]) -> Option<usize> {
    let mut pos = None;
    let mut from = 0;
    for seg in path {
        let pat = format!("\"{seg}\"");
        let mut hit = None;
        let mut start = from;
        while let Some(off) = text[start..].find(&pat) {
            let at = start + off;
            let rest = text[at + pat.len()..].trim_start();
            if rest.starts_with(':') {
                hit = Some(at);
                break;
            }
            start = at + pat.len();
        }
        match hit {
            Some(at) => {
                pos = Some(at);
                from = at + pat.len();
            }
            None => break,
        }
    }
    pos.map(|p| text[..p].matches('\n').count() + 1)
}

fn core_violation(prefix: &[&str], e: &CoreError) -> (Vec<String>, String) {
    let mut path: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    if let CoreError::InvalidParameter { name, .. } = e {
        let head = name.split_whitespace().next().unwrap_or("");
        path.extend(head.split('.').filter(|s| !s.is_empty()).map(String::from));
    }
    (path, e.to_string())
}

fn p(segs: &[&str]) -> Vec<String> {
    segs.iter().map(|s| s.to_string()).collect()
}

/// Every constraint violated by a structurally valid config.
pub fn constraint_violations(cfg: &ScenarioConfig) -> Vec<(Vec<String>, String)> {
    let mut out = Vec::new();
    let grid = match SpaceGrid::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.n_nodes) {
        Ok(g) => Some(g),
        Err(e) => {
            out.push((p(&["grid"]), e.to_string()));
            None
        }
    };
    let s = cfg.scheme;
    if let Err(e) = StepScheme::new(s.dt_max, s.method, s.cfl_safety) {
        out.push(core_violation(&["scheme"], &e));
    }
    let period = match &cfg.model {
        ModelConfig::GrowthFragmentation(params) => {
            if let Some(g) = grid {
                for e in params.violations(&g) {
                    let prefix: &[&str] = if matches!(e, CoreError::InvalidGrid(_)) {
                        &["grid"]
                    } else {
                        &["model"]
                    };
                    out.push(core_violation(prefix, &e));
                }
            }
            params.period()
        }
        ModelConfig::SelectionMutation { fitness, kernel } => {
            let mut ok = true;
            if let Err(e) = fitness.validate() {
                out.push(core_violation(&["model", "fitness"], &e));
                ok = false;
            }
            if let Err(e) = kernel.validate() {
                out.push(core_violation(&["model", "kernel"], &e));
                ok = false;
            }
            if let (true, Some(g)) = (ok, grid) {
                if let Err(e) = SMModel::new(fitness.clone(), kernel.clone(), g) {
                    out.push(core_violation(&["grid"], &e));
                }
            }
            fitness.period()
        }
        ModelConfig::SinExact { period } => {
            let m = period / (2.0 * PI);
            if !(m >= 1.0 && (m - m.round()).abs() < 1e-12) {
                out.push((
                    p(&["model", "period"]),
                    format!("must be a positive multiple of 2π, got {period}"),
                ));
            }
            *period
        }
    };
    experiment_violations(cfg, grid, period, &mut out);
    out
}

fn experiment_violations(
    cfg: &ScenarioConfig,
    grid: Option<SpaceGrid>,
    period: f64,
    out: &mut Vec<(Vec<String>, String)>,
) {
    let model = cfg.model.kind();
    let exp = cfg.experiment.kind();
    let allowed: &[&str] = match &cfg.experiment {
        ExperimentConfig::Floquet(_)
        | ExperimentConfig::HarrisA(_)
        | ExperimentConfig::HarrisB(_)
        | ExperimentConfig::Convergence(_) => &["growth_fragmentation", "selection_mutation"],
        ExperimentConfig::Gabriel(_) | ExperimentConfig::Doeblin(_) => &["growth_fragmentation"],
        ExperimentConfig::CounterexampleB4(_) => &["sin_exact"],
    };
    if !allowed.contains(&model) {
        out.push((
            p(&["experiment", "kind"]),
            format!("experiment {exp} is not available for model {model}"),
        ));
        return;
    }
    let mut need = |ok: bool, field: &str, msg: String| {
        if !ok {
            out.push((p(&["experiment", field]), msg));
        }
    };
    let inside = |a: f64, b: f64| match grid {
        Some(g) => a < b && g.x_min() <= a && b <= g.x_max() && !g.indices_in(a, b).is_empty(),
        None => true,
    };
    let set_msg = |s: [f64; 2]| {
        format!(
            "[{}, {}] must be an ordered interval inside the grid containing a node",
            s[0], s[1]
        )
    };
    let nu_ok = |nu: &NuConfig, set: [f64; 2]| match *nu {
        NuConfig::Uniform => Ok(()),
        NuConfig::Doeblin if model != "growth_fragmentation" => {
            Err("the doeblin window needs a growth-fragmentation model".to_string())
        }
        NuConfig::Doeblin => Ok(()),
        NuConfig::Window { lo, hi } => {
            if lo < hi && lo < set[1] && hi > set[0] {
                Ok(())
            } else {
                Err(format!("window [{lo}, {hi}] must overlap the small set"))
            }
        }
    };
    match &cfg.experiment {
        ExperimentConfig::Floquet(k) => {
            need(k.n_samples >= 2, "n_samples", "at least 2".into());
            need(k.tol > 0.0, "tol", "must be > 0".into());
            need(k.max_iter >= 1, "max_iter", "must be ≥ 1".into());
            need(k.mono_steps >= 1, "mono_steps", "must be ≥ 1".into());
            need(k.cross_tol > 0.0, "cross_tol", "must be > 0".into());
            need(k.expected_tol > 0.0, "expected_tol", "must be > 0".into());
        }
        ExperimentConfig::HarrisA(k) => {
            need(k.k >= 1, "k", "must be ≥ 1".into());
            need(
                k.n_max >= 3,
                "n_max",
                "at least 3 iterates for a trend".into(),
            );
            need(
                inside(k.small_set[0], k.small_set[1]),
                "small_set",
                set_msg(k.small_set),
            );
            if let Err(m) = nu_ok(&k.nu, k.small_set) {
                need(false, "nu", m);
            }
            need(k.tol > 0.0, "tol", "must be > 0".into());
        }
        ExperimentConfig::HarrisB(k) => {
            need(
                k.n_max >= 3,
                "n_max",
                "at least 3 iterates for a trend".into(),
            );
            need(k.time_samples >= 1, "time_samples", "must be ≥ 1".into());
            need(
                inside(k.small_set[0], k.small_set[1]),
                "small_set",
                set_msg(k.small_set),
            );
            if let Err(m) = nu_ok(&k.nu, k.small_set) {
                need(false, "nu", m);
            }
            if let Some(tau) = k.tau {
                let m = tau / period;
                need(
                    tau > 0.0 && (m - m.round()).abs() < 1e-9,
                    "tau",
                    format!("must be a positive multiple of the period {period}"),
                );
            }
            need(k.b5_points >= 1, "b5_points", "must be ≥ 1".into());
            need(k.b5_depth >= 1, "b5_depth", "must be ≥ 1".into());
            need(k.tol > 0.0, "tol", "must be > 0".into());
        }
        ExperimentConfig::Convergence(k) => {
            need(
                k.horizon_periods >= 2,
                "horizon_periods",
                "at least 2".into(),
            );
            need(
                k.checkpoints_per_period >= 1,
                "checkpoints_per_period",
                "must be ≥ 1".into(),
            );
            need(k.n_samples >= 2, "n_samples", "at least 2".into());
            need(
                !k.diracs.is_empty(),
                "diracs",
                "at least one initial point".into(),
            );
            for &x in &k.diracs {
                if let Some(g) = grid {
                    need(
                        g.x_min() <= x && x <= g.x_max(),
                        "diracs",
                        format!("{x} lies outside the grid"),
                    );
                }
            }
            need(k.profile_tol > 0.0, "profile_tol", "must be > 0".into());
        }
        ExperimentConfig::Gabriel(k) => {
            need(k.n_samples >= 2, "n_samples", "at least 2".into());
            need(k.mono_steps >= 1, "mono_steps", "must be ≥ 1".into());
            if let ModelConfig::GrowthFragmentation(gp) = &cfg.model {
                if !gp.g1.is_zero() || !gp.b0.is_zero() || !gp.b1.is_constant() {
                    out.push((
                        p(&["model"]),
                        "gabriel comparison needs g1 ≡ 0, b0 ≡ 0 and constant b1".into(),
                    ));
                }
            }
        }
        ExperimentConfig::CounterexampleB4(k) => {
            need(
                inside(k.small_set[0], k.small_set[1]),
                "small_set",
                set_msg(k.small_set),
            );
            need(
                k.n_max >= 3,
                "n_max",
                "at least 3 iterates for a trend".into(),
            );
            need(k.time_samples >= 1, "time_samples", "must be ≥ 1".into());
            need(k.k_max >= 1, "k_max", "must be ≥ 1".into());
            need(
                !k.triples.is_empty(),
                "triples",
                "at least one point".into(),
            );
        }
        ExperimentConfig::Doeblin(k) => {
            need(
                !k.durations.is_empty(),
                "durations",
                "at least one duration".into(),
            );
            need(
                k.durations.iter().all(|&h| h > 0.0),
                "durations",
                "durations must be > 0".into(),
            );
            need(k.r > 0.0, "r", "must be > 0".into());
            if let Some(g) = grid {
                need(
                    k.r <= g.x_max(),
                    "r",
                    format!("must not exceed x_max = {}", g.x_max()),
                );
            }
            need(k.scaling_tol > 0.0, "scaling_tol", "must be > 0".into());
        }
    }
}
