//! Experiment configuration: one JSON document per run.

use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use renyi::exact::{Boundary, Branch, MAX_DENSE_SITES};
use renyi::optimizer::StartProtocol;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

const COMMANDS: &str = "exact-sweep | gaussian-dos | umps-optimize | evolve";
const MAX_EVOLVE_SITES: usize = 10;

/// Grid points, given as an explicit array,
/// `{"from": a, "to": b, "points": n}`, or the shorthand `"[a, b] x n"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Grid(pub Vec<f64>);

impl Grid {
    pub fn linspace(from: f64, to: f64, points: usize) -> Self {
        match points {
            0 => Grid(vec![]),
            1 => Grid(vec![from]),
            _ => Grid(
                (0..points)
                    .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
                    .collect(),
            ),
        }
    }

    fn parse_shorthand(s: &str) -> Option<Self> {
        let (range, count) = s.split_once(['x', '×'])?;
        let inner = range.trim().strip_prefix('[')?.strip_suffix(']')?;
        let (a, b) = inner.split_once(',')?;
        let points = count.trim().trim_end_matches("points").trim().parse().ok()?;
        Some(Self::linspace(a.trim().parse().ok()?, b.trim().parse().ok()?, points))
    }

    fn check(&self, key: &str, lo: f64, hi: f64, open_lo: bool) -> Result<()> {
        if self.0.is_empty() {
            bail!("`{key}` must contain at least one point");
        }
        for &x in &self.0 {
            let below = if open_lo { x <= lo } else { x < lo };
            if !x.is_finite() || below || x > hi {
                let l = if open_lo { '(' } else { '[' };
                bail!("`{key}` value {x} is outside the accepted range {l}{lo}, {hi}]");
            }
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Grid {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Range {
            from: f64,
            to: f64,
            points: usize,
        }
        match Value::deserialize(d)? {
            Value::Array(items) => items
                .into_iter()
                .map(|v| v.as_f64().ok_or_else(|| D::Error::custom(format!("grid entry {v} is not a number"))))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Grid),
            Value::String(s) => Grid::parse_shorthand(&s)
                .ok_or_else(|| D::Error::custom(format!("cannot read grid shorthand {s:?}; expected \"[a, b] x n\""))),
            Value::Number(n) => Ok(Grid(vec![n.as_f64().unwrap_or(f64::NAN)])),
            v @ Value::Object(_) => {
                let r: Range = serde_json::from_value(v).map_err(D::Error::custom)?;
                Ok(Grid::linspace(r.from, r.to, r.points))
            }
            other => Err(D::Error::custom(format!("expected a grid, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            format: Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainModel {
    pub n: usize,
    #[serde(default = "periodic")]
    pub boundary: Boundary,
    pub h_x: f64,
    pub h_z: f64,
}

fn periodic() -> Boundary {
    Boundary::Periodic
}

impl ChainModel {
    fn check(&self, max_n: usize) -> Result<()> {
        if self.n < 2 || self.n > max_n {
            bail!("`model.n` = {} is outside the accepted range [2, {max_n}]", self.n);
        }
        if !self.h_x.is_finite() || !self.h_z.is_finite() {
            bail!("`model.h_x` and `model.h_z` must be finite");
        }
        Ok(())
    }
}

/// Infinite-chain fields for the uniform-MPS commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldModel {
    pub h_x: f64,
    pub h_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactSweep {
    pub model: ChainModel,
    #[serde(default = "default_alphas")]
    pub alpha: Vec<f64>,
    /// Multiplier grid. Exactly one of the three point grids is given.
    pub beta_r: Option<Grid>,
    /// Mean energy per site.
    pub energy: Option<Grid>,
    /// Mean energy as a fraction `f` of the spectral width `W`. Each point is
    /// evaluated twice, at `E_mid + f W` and at `E_ground + |f| W`.
    pub width_fraction: Option<Grid>,
    #[serde(default = "positive")]
    pub branch: Branch,
    /// Emit per-level `(E, p_Gibbs, p_MRE)` tables.
    #[serde(default = "yes")]
    pub ensembles: bool,
    pub dos_bins: Option<usize>,
}

fn default_alphas() -> Vec<f64> {
    vec![2.0]
}

fn positive() -> Branch {
    Branch::Positive
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianDosSweep {
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<f64>,
    #[serde(default = "default_gaussian_grid")]
    pub beta_r: Grid,
}

fn one() -> f64 {
    1.0
}

fn default_sizes() -> Vec<f64> {
    vec![1e2, 1e3, 1e4]
}

fn default_gaussian_grid() -> Grid {
    Grid::linspace(0.1, 2.0, 20)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UmpsMode {
    #[default]
    Renyi,
    EnergyTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UmpsOptimize {
    pub model: FieldModel,
    #[serde(default)]
    pub mode: UmpsMode,
    #[serde(default = "default_beta_grid")]
    pub beta_r: Grid,
    /// Target energies per site for `energy-target`.
    pub energy: Option<Grid>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_bonds")]
    pub bonds: Vec<usize>,
    /// Defaults to the top-level seed.
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "two")]
    pub d_anc: usize,
    #[serde(default = "warm")]
    pub protocol: StartProtocol,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_memory")]
    pub memory: usize,
    /// Ring size of an exact thermal reference at `beta = beta_R`.
    pub reference_sites: Option<usize>,
    #[serde(default)]
    pub checkpoints: bool,
}

fn default_beta_grid() -> Grid {
    Grid::linspace(0.0, 2.0, 21)
}

fn default_lambda() -> f64 {
    10.0
}

fn default_bonds() -> Vec<usize> {
    vec![2, 4, 8]
}

fn two() -> usize {
    2
}

fn warm() -> StartProtocol {
    StartProtocol::Warm
}

fn default_grad_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    5000
}

fn default_memory() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Start {
    /// Real Wishart matrix; keeps the flow real for real Hamiltonians.
    #[default]
    Random,
    RandomComplex,
    MaximallyMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Evolve {
    pub model: ChainModel,
    #[serde(default = "default_evolve_grid")]
    pub beta_r: Grid,
    pub dtau: Option<f64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "yes")]
    pub renormalize: bool,
    #[serde(default = "default_monitor")]
    pub monitor_every: usize,
    #[serde(default = "default_rate_tol")]
    pub rate_tol: f64,
    #[serde(default = "default_stationarity_tol")]
    pub stationarity_tol: f64,
    #[serde(default)]
    pub start: Start,
    /// Write the final density matrices.
    #[serde(default)]
    pub states: bool,
}

fn default_evolve_grid() -> Grid {
    Grid::linspace(0.25, 2.0, 8)
}

fn default_max_steps() -> usize {
    200_000
}

fn default_monitor() -> usize {
    10
}

fn default_rate_tol() -> f64 {
    1e-10
}

fn default_stationarity_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Method {
    ExactSweep(ExactSweep),
    GaussianDos(GaussianDosSweep),
    UmpsOptimize(UmpsOptimize),
    Evolve(Evolve),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ExactSweep(_) => "exact-sweep",
            Method::GaussianDos(_) => "gaussian-dos",
            Method::UmpsOptimize(_) => "umps-optimize",
            Method::Evolve(_) => "evolve",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub method: Method,
    pub output: Output,
    pub seed: u64,
    pub threads: Option<usize>,
}

fn required_keys(command: Option<&str>) -> &'static str {
    match command {
        Some("exact-sweep") => "model, and one of beta_r / energy",
        Some("evolve") | Some("umps-optimize") => "model",
        Some("gaussian-dos") => "none beyond command",
        _ => "command (exact-sweep | gaussian-dos | umps-optimize | evolve); model for every command except gaussian-dos",
    }
}

/// Parses and validates a configuration document, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    if text.trim().is_empty() {
        bail!("empty configuration; required keys: {}", required_keys(None));
    }
    let value: Value = serde_json::from_str(text).context("configuration is not valid JSON")?;
    let Value::Object(mut obj) = value else {
        bail!("configuration must be a JSON object; required keys: {}", required_keys(None));
    };
    let output = match obj.remove("output") {
        Some(v) => from_value::<Output>(v, "output")?,
        None => Output::default(),
    };
    let seed = match obj.remove("seed") {
        Some(v) => from_value::<u64>(v, "seed")?,
        None => 0,
    };
    let threads = match obj.remove("threads") {
        Some(v) => Some(from_value::<usize>(v, "threads")?),
        None => None,
    };
    let command = match obj.get("command") {
        None => bail!("missing required key `command`; required keys: {}", required_keys(None)),
        Some(Value::String(s)) => s.clone(),
        Some(other) => bail!("`command` must be a string ({COMMANDS}), got {other}"),
    };
    if !COMMANDS.split(" | ").any(|c| c == command) {
        bail!("unknown command {command:?}; accepted: {COMMANDS}");
    }
    obj.remove("command");
    let body = Value::Object(obj);
    let hint = |e: anyhow::Error| anyhow!("{e:#}; required keys for {command}: {}", required_keys(Some(&command)));
    let method = match command.as_str() {
        "exact-sweep" => Method::ExactSweep(from_value(body, "").map_err(hint)?),
        "gaussian-dos" => Method::GaussianDos(from_value(body, "").map_err(hint)?),
        "umps-optimize" => Method::UmpsOptimize(from_value(body, "").map_err(hint)?),
        _ => Method::Evolve(from_value(body, "").map_err(hint)?),
    };
    let cfg = ExperimentConfig {
        method,
        output,
        seed,
        threads,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let key = match (prefix, path.as_str()) {
            (p, ".") => p.to_string(),
            ("", q) => q.to_string(),
            (p, q) => format!("{p}.{q}"),
        };
        if key.is_empty() || key == "." {
            anyhow!("{}", e.inner())
        } else {
            anyhow!("`{key}`: {}", e.inner())
        }
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            bail!("`threads` must be at least 1");
        }
        match &self.method {
            Method::ExactSweep(c) => {
                c.model.check(MAX_DENSE_SITES)?;
                for &a in &c.alpha {
                    if !(a > 0.0) || a == 1.0 || a.is_nan() {
                        bail!("`alpha` value {a} is outside the accepted range (0, 1) U (1, inf]");
                    }
                }
                match (&c.beta_r, &c.energy, &c.width_fraction) {
                    (Some(g), None, None) => g.check("beta_r", 0.0, f64::INFINITY, false)?,
                    (None, Some(g), None) => g.check("energy", f64::NEG_INFINITY, f64::INFINITY, false)?,
                    (None, None, Some(g)) => g.check("width_fraction", -1.0, 1.0, false)?,
                    _ => bail!("exact-sweep takes exactly one of `beta_r`, `energy` and `width_fraction`"),
                }
                if c.dos_bins == Some(0) {
                    bail!("`dos_bins` must be at least 1");
                }
            }
            Method::GaussianDos(c) => {
                if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                    bail!("`sigma` = {} is outside the accepted range (0, inf)", c.sigma);
                }
                if c.sizes.is_empty() || c.sizes.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
                    bail!("`sizes` must be a nonempty list of positive numbers");
                }
                c.beta_r.check("beta_r", 0.0, f64::INFINITY, true)?;
            }
            Method::UmpsOptimize(c) => {
                if !c.model.h_x.is_finite() || !c.model.h_z.is_finite() {
                    bail!("`model.h_x` and `model.h_z` must be finite");
                }
                match c.mode {
                    UmpsMode::Renyi => c.beta_r.check("beta_r", 0.0, f64::INFINITY, false)?,
                    UmpsMode::EnergyTarget => match &c.energy {
                        Some(g) => g.check("energy", f64::NEG_INFINITY, f64::INFINITY, false)?,
                        None => bail!("`energy` is required when `mode` is energy-target"),
                    },
                }
                if !(c.lambda > 0.0 && c.lambda.is_finite()) {
                    bail!("`lambda` = {} is outside the accepted range (0, inf)", c.lambda);
                }
                if c.bonds.is_empty() || c.bonds.iter().any(|&d| d == 0 || d > 64) {
                    bail!("`bonds` entries must lie in [1, 64]");
                }
                if matches!(&c.seeds, Some(s) if s.is_empty()) {
                    bail!("`seeds` must not be empty");
                }
                if c.d_anc == 0 || c.d_anc > 8 {
                    bail!("`d_anc` = {} is outside the accepted range [1, 8]", c.d_anc);
                }
                if !(c.grad_tol > 0.0) {
                    bail!("`grad_tol` = {} is outside the accepted range (0, inf)", c.grad_tol);
                }
                if c.memory == 0 {
                    bail!("`memory` must be at least 1");
                }
                if let Some(n) = c.reference_sites {
                    if !(2..=MAX_DENSE_SITES).contains(&n) {
                        bail!("`reference_sites` = {n} is outside the accepted range [2, {MAX_DENSE_SITES}]");
                    }
                }
            }
            Method::Evolve(c) => {
                c.model.check(MAX_EVOLVE_SITES)?;
                c.beta_r.check("beta_r", 0.0, f64::INFINITY, false)?;
                if let Some(d) = c.dtau {
                    if !(d > 0.0 && d.is_finite()) {
                        bail!("`dtau` = {d} is outside the accepted range (0, inf)");
                    }
                }
                if c.monitor_every == 0 {
                    bail!("`monitor_every` must be at least 1");
                }
            }
        }
        Ok(())
    }

    /// Command-line overrides of the file values.
    pub fn apply_overrides(&mut self, out: Option<PathBuf>, seed: Option<u64>) {
        if let Some(dir) = out {
            self.output.dir = dir;
        }
        if let Some(s) = seed {
            self.seed = s;
            if let Method::UmpsOptimize(c) = &mut self.method {
                c.seeds = Some(vec![s]);
            }
        }
    }
}
