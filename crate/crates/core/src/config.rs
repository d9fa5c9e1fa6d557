//! Experiment configuration, read from a small TOML file.
//!
//! ```toml
//! seed = 42
//! start = 0.0
//! backend = "surrogate"          # exact | surrogate | bridge_mc
//! envelope_constants = "stated"  # stated | corrected
//! output_dir = "out"
//!
//! [q]
//! family = "sinusoidal"
//! a = 2.0
//! b = 0.5
//! omega = 1.0
//! delta = 0.39
//! l = 0.51
//!
//! [p]
//! family = "constant"
//! c = 2.0
//! delta = 0.49
//! l = 0.01
//!
//! [scale]
//! n_list = [8, 16, 32, 64]
//! n_paths = 10000
//! ```
//!
//! Every other section and key is optional; see [`ExperimentConfig`] for
//! defaults. Unknown and duplicate keys are rejected with the line and key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSpec, ConstantSet, Family, Interval};
use crate::error::{Error, Result};
use crate::kernels::KernelChoice;

#[derive(Debug, Clone, PartialEq)]
pub struct Scale {
    /// Grid resolutions for the convergence and QV studies, increasing.
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    /// Euler substeps per coarse step of the finest grid.
    pub substeps: usize,
    /// Bridge samples per Monte Carlo density evaluation.
    pub n_inner: usize,
    /// Bridge discretization steps.
    pub bridge_steps: usize,
}

impl Default for Scale {
    fn default() -> Self {
        Self {
            n_list: vec![8, 16, 32, 64],
            n_paths: 10_000,
            substeps: 32,
            n_inner: 400,
            bridge_steps: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub n_time: usize,
    pub mass_tol: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n_time: crate::kernels::fd::DEFAULT_N_TIME,
            mass_tol: crate::kernels::fd::DEFAULT_MASS_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateConfig {
    pub domain: Interval,
    pub grid_points: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            domain: Interval { lo: -10.0, hi: 10.0 },
            grid_points: 2001,
        }
    }
}

/// Sweep of the density check: every `t` and `x`, with `y = x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityConfig {
    pub t_list: Vec<f64>,
    pub x_list: Vec<f64>,
    pub offsets: Vec<f64>,
    /// Slack added to the PDE error budget when testing envelope membership.
    pub slack: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            t_list: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            x_list: vec![-1.0, 0.0, 1.0],
            offsets: (0..13).map(|i| -1.0 + i as f64 / 6.0).collect(),
            slack: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SllnConfig {
    pub n_max: usize,
    /// Independent runs.
    pub reps: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Samples per `k` for the variance diagnostic.
    pub k_reps: usize,
}

impl Default for SllnConfig {
    fn default() -> Self {
        Self {
            n_max: 200,
            reps: 1,
            k_min: 8,
            k_max: 128,
            k_reps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Coefficient of the reference law `Q`.
    pub spec_q: CoefficientSpec,
    /// Coefficient of `P`.
    pub spec_p: CoefficientSpec,
    pub start: f64,
    pub seed: u64,
    pub backend: KernelChoice,
    pub envelope_constants: ConstantSet,
    pub output_dir: PathBuf,
    pub scale: Scale,
    pub mesh: MeshConfig,
    pub validate: ValidateConfig,
    pub density: DensityConfig,
    pub slln: SllnConfig,
    /// The text the config was parsed from.
    pub source: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<i64>,
    start: Option<f64>,
    backend: Option<KernelChoice>,
    envelope_constants: Option<ConstantSet>,
    output_dir: Option<String>,
    q: RawSpec,
    p: RawSpec,
    scale: Option<RawScale>,
    mesh: Option<RawMesh>,
    validate: Option<RawValidate>,
    density: Option<RawDensity>,
    slln: Option<RawSlln>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    family: String,
    name: Option<String>,
    c: Option<f64>,
    a: Option<f64>,
    b: Option<f64>,
    omega: Option<f64>,
    delta: f64,
    l: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScale {
    n_list: Option<Vec<i64>>,
    n_paths: Option<i64>,
    substeps: Option<i64>,
    n_inner: Option<i64>,
    bridge_steps: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    n_time: Option<i64>,
    mass_tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidate {
    domain: Option<[f64; 2]>,
    grid_points: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDensity {
    t_list: Option<Vec<f64>>,
    x_list: Option<Vec<f64>>,
    offsets: Option<Vec<f64>>,
    slack: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlln {
    n_max: Option<i64>,
    reps: Option<i64>,
    k_min: Option<i64>,
    k_max: Option<i64>,
    k_reps: Option<i64>,
}

/// 1-based line of `key` inside `[section]` (or at top level), if present.
fn line_of(text: &str, section: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = Some(rest.trim_end_matches(']').trim().to_string());
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    None
}

struct Checker<'a> {
    text: &'a str,
    section: Option<&'static str>,
}

impl Checker<'_> {
    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        let full = match self.section {
            Some(s) => format!("{s}.{key}"),
            None => key.to_string(),
        };
        Error::Config {
            line: line_of(self.text, self.section, key),
            key: Some(full),
            message: message.into(),
        }
    }

    fn count(&self, key: &str, v: Option<i64>, default: usize) -> Result<usize> {
        match v {
            None => Ok(default),
            Some(v) if v > 0 => Ok(v as usize),
            Some(v) => Err(self.err(key, format!("must be a positive integer, got {v}"))),
        }
    }

    fn positive(&self, key: &str, v: Option<f64>, default: f64) -> Result<f64> {
        match v {
            None => Ok(default),
            Some(v) if v > 0.0 && v.is_finite() => Ok(v),
            Some(v) => Err(self.err(key, format!("must be positive, got {v}"))),
        }
    }
}

fn from_toml_error(text: &str, e: toml::de::Error) -> Error {
    let span = e.span().filter(|s| s.end <= text.len());
    let line = span.clone().map(|s| text[..s.start].matches('\n').count() + 1);
    let message = e.message().to_string();
    // serde quotes the offending key in backticks; otherwise the span may
    // cover a bare key (e.g. a duplicate)
    let key = message.split('`').nth(1).map(str::to_string).or_else(|| {
        span.map(|s| text[s].trim().to_string())
            .filter(|k| !k.is_empty() && k.chars().all(|c| c.is_alphanumeric() || c == '_'))
    });
    Error::Config { line, key, message }
}

fn build_spec(text: &str, section: &'static str, raw: RawSpec) -> Result<CoefficientSpec> {
    let ck = Checker {
        text,
        section: Some(section),
    };
    let need = |key: &str, v: Option<f64>| v.ok_or_else(|| ck.err(key, format!("required by family `{}`", raw.family)));
    let allowed: &[&str] = match raw.family.as_str() {
        "constant" => &["c"],
        "sinusoidal" => &["a", "b", "omega"],
        "tanh" => &["a", "b"],
        other => {
            return Err(ck.err(
                "family",
                format!("unknown family `{other}` (expected constant, sinusoidal or tanh)"),
            ))
        }
    };
    for (key, v) in [("c", raw.c), ("a", raw.a), ("b", raw.b), ("omega", raw.omega)] {
        if v.is_some() && !allowed.contains(&key) {
            return Err(ck.err(key, format!("not a parameter of family `{}`", raw.family)));
        }
    }
    let family = match raw.family.as_str() {
        "constant" => Family::Constant { c: need("c", raw.c)? },
        "sinusoidal" => Family::Sinusoidal {
            a: need("a", raw.a)?,
            b: need("b", raw.b)?,
            omega: need("omega", raw.omega)?,
        },
        _ => Family::Tanh {
            a: need("a", raw.a)?,
            b: need("b", raw.b)?,
        },
    };
    let spec = CoefficientSpec::new(family, raw.delta, raw.l).map_err(|e| ck.err("delta", e.to_string()))?;
    Ok(match raw.name {
        Some(n) => spec.with_name(n),
        None => spec,
    })
}

/// Parses and validates a config. Coefficient bounds are certified later,
/// when a study runs.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| from_toml_error(text, e))?;
    let top = Checker { text, section: None };
    let seed = match raw.seed {
        None => 0,
        Some(s) if s >= 0 => s as u64,
        Some(s) => return Err(top.err("seed", format!("must be nonnegative, got {s}"))),
    };
    let start = raw.start.unwrap_or(0.0);
    if !start.is_finite() {
        return Err(top.err("start", "must be finite"));
    }
    let spec_q = build_spec(text, "q", raw.q)?;
    let spec_p = build_spec(text, "p", raw.p)?;

    let ck = Checker {
        text,
        section: Some("scale"),
    };
    let d = Scale::default();
    let scale = match raw.scale {
        None => d,
        Some(s) => {
            let n_list = match s.n_list {
                None => d.n_list,
                Some(list) => {
                    if list.is_empty() || list.iter().any(|&n| n <= 0) {
                        return Err(ck.err("n_list", "must be a nonempty list of positive integers"));
                    }
                    if list.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(ck.err("n_list", "must be strictly increasing"));
                    }
                    list.into_iter().map(|n| n as usize).collect()
                }
            };
            Scale {
                n_list,
                n_paths: ck.count("n_paths", s.n_paths, d.n_paths)?,
                substeps: ck.count("substeps", s.substeps, d.substeps)?,
                n_inner: ck.count("n_inner", s.n_inner, d.n_inner)?,
                bridge_steps: ck.count("bridge_steps", s.bridge_steps, d.bridge_steps)?,
            }
        }
    };

    let ck = Checker {
        text,
        section: Some("mesh"),
    };
    let d = MeshConfig::default();
    let mesh = match raw.mesh {
        None => d,
        Some(m) => MeshConfig {
            n_time: ck.count("n_time", m.n_time, d.n_time)?,
            mass_tol: ck.positive("mass_tol", m.mass_tol, d.mass_tol)?,
        },
    };

    let ck = Checker {
        text,
        section: Some("validate"),
    };
    let d = ValidateConfig::default();
    let validate = match raw.validate {
        None => d,
        Some(v) => ValidateConfig {
            domain: match v.domain {
                None => d.domain,
                Some([lo, hi]) => Interval::new(lo, hi).map_err(|e| ck.err("domain", e.to_string()))?,
            },
            grid_points: match ck.count("grid_points", v.grid_points, d.grid_points)? {
                1 => return Err(ck.err("grid_points", "need at least 2 points")),
                n => n,
            },
        },
    };

    let ck = Checker {
        text,
        section: Some("density"),
    };
    let d = DensityConfig::default();
    let density = match raw.density {
        None => d,
        Some(v) => {
            let t_list = v.t_list.unwrap_or(d.t_list);
            if t_list.is_empty() || t_list.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
                return Err(ck.err("t_list", "times must lie in (0, 1]"));
            }
            let x_list = v.x_list.unwrap_or(d.x_list);
            let offsets = v.offsets.unwrap_or(d.offsets);
            if x_list.is_empty() || offsets.is_empty() {
                return Err(ck.err(if x_list.is_empty() { "x_list" } else { "offsets" }, "must be nonempty"));
            }
            DensityConfig {
                t_list,
                x_list,
                offsets,
                slack: match v.slack {
                    None => d.slack,
                    Some(s) if s >= 0.0 && s.is_finite() => s,
                    Some(s) => return Err(ck.err("slack", format!("must be nonnegative, got {s}"))),
                },
            }
        }
    };

    let ck = Checker {
        text,
        section: Some("slln"),
    };
    let d = SllnConfig::default();
    let slln = match raw.slln {
        None => d,
        Some(s) => {
            let c = SllnConfig {
                n_max: ck.count("n_max", s.n_max, d.n_max)?,
                reps: ck.count("reps", s.reps, d.reps)?,
                k_min: ck.count("k_min", s.k_min, d.k_min)?,
                k_max: ck.count("k_max", s.k_max, d.k_max)?,
                k_reps: ck.count("k_reps", s.k_reps, d.k_reps)?,
            };
            if c.k_min > c.k_max {
                return Err(ck.err("k_max", "must be at least k_min"));
            }
            if c.k_reps < 2 {
                return Err(ck.err("k_reps", "need at least 2 samples per k"));
            }
            c
        }
    };

    Ok(ExperimentConfig {
        spec_q,
        spec_p,
        start,
        seed,
        backend: raw.backend.unwrap_or(KernelChoice::Surrogate),
        envelope_constants: raw.envelope_constants.unwrap_or_default(),
        output_dir: PathBuf::from(raw.output_dir.unwrap_or_else(|| "out".into())),
        scale,
        mesh,
        validate,
        density,
        slln,
        source: text.to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Echo of the settings that determine a run's output, for the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ScaleEcho {
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    pub substeps: usize,
    pub n_inner: usize,
    pub bridge_steps: usize,
    pub n_time: usize,
    pub slln_n_max: usize,
    pub slln_reps: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub k_reps: usize,
}

impl ExperimentConfig {
    pub fn scale_echo(&self) -> ScaleEcho {
        ScaleEcho {
            n_list: self.scale.n_list.clone(),
            n_paths: self.scale.n_paths,
            substeps: self.scale.substeps,
            n_inner: self.scale.n_inner,
            bridge_steps: self.scale.bridge_steps,
            n_time: self.mesh.n_time,
            slln_n_max: self.slln.n_max,
            slln_reps: self.slln.reps,
            k_min: self.slln.k_min,
            k_max: self.slln.k_max,
            k_reps: self.slln.k_reps,
        }
    }
}
