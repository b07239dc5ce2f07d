//! Experiment configuration: `key = value` lines with dotted section keys.
//!
//! The text is TOML, so `lattice.sites = 12` and `[lattice]` blocks are both
//! accepted. Unknown keys are rejected with their line number.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Exact,
    Statistical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    /// Decoherence functional over one or more bin families.
    Histories,
    /// Peaking ratio of product states against particle number.
    Peaking,
    /// Statistical ratio over a sweep of N, V or L.
    Sweep,
    /// Monte Carlo oracle against quadrature at one point.
    Oracle,
    /// Finite-N convergence to the large-N ratio.
    Limit,
}

impl Pipeline {
    pub fn tier(self) -> Tier {
        match self {
            Pipeline::Histories | Pipeline::Peaking => Tier::Exact,
            Pipeline::Sweep | Pipeline::Oracle | Pipeline::Limit => Tier::Statistical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub tier: Tier,
    pub pipeline: Pipeline,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<HamiltonianSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<ObservableSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histories: Option<HistoriesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagation: Option<PropagationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peaking: Option<PeakingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<LimitSection>,
    #[serde(default)]
    pub checks: ChecksSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
        }
    }
}

fn default_out_dir() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub sites: usize,
    #[serde(default = "one")]
    pub spacing: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSection {
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub hbar: f64,
    /// Pair potential at integer distances `0, 1, ...`.
    #[serde(default)]
    pub potential: Vec<f64>,
    #[serde(default)]
    pub range: usize,
    /// Sites cut off from hopping, used as a vacuum reservoir.
    #[serde(default)]
    pub detached_sites: Vec<usize>,
}

impl Default for HamiltonianSection {
    fn default() -> Self {
        Self {
            mass: 1.0,
            hbar: 1.0,
            potential: Vec::new(),
            range: 0,
            detached_sites: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FactorSection {
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default)]
        momentum: f64,
    },
    Site {
        site: usize,
    },
    /// Equal amplitudes on `len` sites from `start`, with phase `momentum * x`.
    Window {
        start: usize,
        len: usize,
        #[serde(default)]
        momentum: f64,
    },
    Amplitudes {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    pub a: FactorSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<FactorSection>,
    #[serde(default = "one")]
    pub weight_a: f64,
    #[serde(default = "one")]
    pub weight_b: f64,
}

fn default_cap() -> usize {
    crate::lattice::DEFAULT_STATE_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObservableKind {
    Number,
    Momentum,
    Energy,
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairAssignmentKey {
    Forward,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSection {
    pub kind: ObservableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub len: Option<usize>,
    /// Integer wavenumber index of a Fourier mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<i64>,
    #[serde(default = "default_pair_assignment")]
    pub pair_assignment: PairAssignmentKey,
}

fn default_pair_assignment() -> PairAssignmentKey {
    PairAssignmentKey::Forward
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    /// Extra families with the width doubled this many times.
    #[serde(default)]
    pub doublings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistoriesSection {
    pub times: Vec<f64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    crate::histories::DEFAULT_DECOHERENCE_THRESHOLD
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationKey {
    Auto,
    Diagonalization,
    Taylor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSection {
    #[serde(default = "default_method")]
    pub method: PropagationKey,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for PropagationSection {
    fn default() -> Self {
        Self {
            method: default_method(),
            tolerance: default_tolerance(),
        }
    }
}

fn default_method() -> PropagationKey {
    PropagationKey::Auto
}

fn default_tolerance() -> f64 {
    crate::dynamics::PROPAGATION_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeakingSection {
    pub particles: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum P1Key {
    Uniform,
    Gaussian,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dim: usize,
    pub side: f64,
    #[serde(default = "default_p1")]
    pub p1: P1Key,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1_center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1_cells: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1_values: Option<Vec<f64>>,
    /// `zero`, `top-hat` or `top-hat-shell`.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default)]
    pub amplitude: f64,
    pub length: f64,
}

fn default_p1() -> P1Key {
    P1Key::Uniform
}

fn default_kernel() -> String {
    "zero".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSection {
    /// Side of a cube; alternative to `sides`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sides: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepVariable {
    N,
    V,
    L,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::N => "N",
            SweepVariable::V => "V",
            SweepVariable::L => "L",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Quadrature,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    /// Particle numbers, volumes or correlation lengths, increasing.
    pub values: Vec<f64>,
    #[serde(default = "default_sweep_method")]
    pub method: SweepMethod,
}

fn default_sweep_method() -> SweepMethod {
    SweepMethod::Quadrature
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    #[serde(default = "default_cells")]
    pub cells_per_length: usize,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            cells_per_length: default_cells(),
        }
    }
}

fn default_cells() -> usize {
    crate::statistics::DEFAULT_CELLS_PER_LENGTH
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub samples: usize,
    pub particles: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    /// Sweep index of the checked point; the last one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<usize>,
}

fn default_batches() -> usize {
    crate::statistics::DEFAULT_MC_BATCHES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    pub particles: Vec<u64>,
    #[serde(default = "default_relative")]
    pub relative_tolerance: f64,
    /// Also check that the zero kernel gives a vanishing limit.
    #[serde(default = "yes")]
    pub zero_kernel_control: bool,
}

fn default_relative() -> f64 {
    1e-4
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    #[serde(default = "default_hermiticity")]
    pub hermiticity: f64,
    #[serde(default = "default_min_diagonal")]
    pub min_diagonal: f64,
    #[serde(default = "default_sum")]
    pub total: f64,
    #[serde(default = "default_sum")]
    pub probability_sum: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_offdiag: Option<f64>,
    #[serde(default)]
    pub epsilon_trend: bool,
    #[serde(default)]
    pub widest_below_threshold: bool,
    /// Bound on each branch's peaking ratio, taken in the window or its
    /// complement, whichever holds the branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_peaking: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_tolerance: Option<f64>,
    #[serde(default = "default_sigmas")]
    pub mc_sigmas: f64,
    #[serde(default = "default_zero_limit")]
    pub zero_limit: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            hermiticity: default_hermiticity(),
            min_diagonal: default_min_diagonal(),
            total: default_sum(),
            probability_sum: default_sum(),
            max_offdiag: None,
            epsilon_trend: false,
            widest_below_threshold: false,
            branch_peaking: None,
            slope: None,
            slope_tolerance: None,
            mc_sigmas: default_sigmas(),
            zero_limit: default_zero_limit(),
        }
    }
}

fn default_hermiticity() -> f64 {
    1e-10
}

fn default_min_diagonal() -> f64 {
    -1e-12
}

fn default_sum() -> f64 {
    1e-9
}

fn default_sigmas() -> f64 {
    3.0
}

fn default_zero_limit() -> f64 {
    1e-10
}

/// A parsed config together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub path: String,
    pub source: String,
    pub config: ExperimentConfig,
}

impl LoadedConfig {
    pub fn config_error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            path: self.path.clone(),
            line: locate_key(&self.source, key),
            message: message.into(),
        }
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of the first assignment to the dotted `key`, or 0 when absent.
pub fn locate_key(source: &str, key: &str) -> usize {
    let mut section = String::new();
    for (n, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs: String = lhs.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if section.is_empty() {
            lhs
        } else {
            format!("{section}.{lhs}")
        };
        if full == key || full.starts_with(&format!("{key}.")) {
            return n + 1;
        }
    }
    0
}

pub fn parse_config(path: &str, source: &str) -> Result<LoadedConfig> {
    let config: ExperimentConfig = toml::from_str(source).map_err(|e| Error::Config {
        path: path.to_string(),
        line: e.span().map_or(0, |s| line_of_offset(source, s.start)),
        message: e.message().to_string(),
    })?;
    let loaded = LoadedConfig {
        path: path.to_string(),
        source: source.to_string(),
        config,
    };
    validate(&loaded)?;
    Ok(loaded)
}

pub fn load_config(path: &std::path::Path) -> Result<LoadedConfig> {
    let source = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_config(&path.display().to_string(), &source)
}

fn require<'a, T>(loaded: &LoadedConfig, value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| {
        loaded.config_error(
            key,
            format!(
                "pipeline `{}` requires `{key}`",
                serde_plain(&loaded.config.pipeline)
            ),
        )
    })
}

fn serde_plain<T: Serialize>(value: &T) -> String {
    toml::Value::try_from(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn validate(loaded: &LoadedConfig) -> Result<()> {
    let c = &loaded.config;
    if c.pipeline.tier() != c.tier {
        return Err(loaded.config_error(
            "pipeline",
            format!(
                "pipeline `{}` belongs to the {} tier",
                serde_plain(&c.pipeline),
                serde_plain(&c.pipeline.tier())
            ),
        ));
    }
    match c.pipeline {
        Pipeline::Histories => {
            require(loaded, &c.lattice, "lattice")?;
            let state = require(loaded, &c.state, "state")?;
            require(loaded, &state.particles, "state.particles")?;
            require(loaded, &c.observable, "observable")?;
            let bins = require(loaded, &c.bins, "bins")?;
            if bins.edges.is_some() == (bins.offset.is_some() || bins.width.is_some()) {
                return Err(loaded.config_error(
                    "bins",
                    "give either `bins.edges` or both `bins.offset` and `bins.width`",
                ));
            }
            if bins.edges.is_none() && (bins.offset.is_none() || bins.width.is_none()) {
                return Err(loaded.config_error("bins", "`bins.offset` needs `bins.width`"));
            }
            if bins.edges.is_some() && bins.doublings > 0 {
                return Err(loaded.config_error(
                    "bins.doublings",
                    "doublings need `bins.offset` and `bins.width`",
                ));
            }
            require(loaded, &c.histories, "histories")?;
        }
        Pipeline::Peaking => {
            require(loaded, &c.lattice, "lattice")?;
            require(loaded, &c.state, "state")?;
            require(loaded, &c.observable, "observable")?;
            require(loaded, &c.peaking, "peaking")?;
        }
        Pipeline::Sweep => {
            require(loaded, &c.model, "model")?;
            let sweep = require(loaded, &c.sweep, "sweep")?;
            if sweep.variable != SweepVariable::V {
                require(loaded, &c.volume, "volume")?;
            }
        }
        Pipeline::Oracle => {
            require(loaded, &c.model, "model")?;
            require(loaded, &c.volume, "volume")?;
            require(loaded, &c.mc, "mc")?;
        }
        Pipeline::Limit => {
            require(loaded, &c.model, "model")?;
            require(loaded, &c.volume, "volume")?;
            require(loaded, &c.limit, "limit")?;
        }
    }
    if c.checks.slope.is_some() != c.checks.slope_tolerance.is_some() {
        return Err(loaded.config_error(
            "checks",
            "`checks.slope` and `checks.slope_tolerance` go together",
        ));
    }
    if let Some(model) = &c.model {
        if crate::statistics::KernelShape::parse(&model.kernel).is_none() {
            return Err(loaded.config_error(
                "model.kernel",
                format!(
                    "unknown kernel `{}`; expected zero, top-hat or top-hat-shell",
                    model.kernel
                ),
            ));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    /// Every setting with defaults filled in, as sorted `key = value` lines.
    pub fn materialized(&self) -> String {
        let mut c = self.clone();
        if c.tier == Tier::Exact && c.pipeline == Pipeline::Histories {
            c.hamiltonian
                .get_or_insert_with(HamiltonianSection::default);
            c.propagation
                .get_or_insert_with(PropagationSection::default);
        }
        if c.tier == Tier::Statistical {
            c.quadrature.get_or_insert_with(QuadratureSection::default);
        }
        // TOML integers are signed; the seed is written by hand so the full
        // u64 range survives.
        let seed = std::mem::take(&mut c.seed);
        let value = toml::Value::try_from(&c).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.retain(|l| !l.starts_with("seed = "));
        lines.push(format!("seed = {seed}"));
        lines.sort();
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.materialized().as_bytes()))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {}", render(other))),
    }
}

fn render(value: &toml::Value) -> String {
    match value {
        toml::Value::Float(x) => format!("{x:?}"),
        toml::Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(render).collect();
            format!("[{}]", parts.join(", "))
        }
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
tier = "statistical"
pipeline = "limit"
model.dim = 1
model.side = 1.0
model.length = 0.01
volume.side = 0.1
limit.particles = [1000, 10000]
"#;

    #[test]
    fn defaults_are_materialized() {
        let c = parse_config("t.cfg", MINIMAL).unwrap().config;
        let text = c.materialized();
        assert!(text.contains("checks.mc_sigmas = 3.0\n"));
        assert!(text.contains("quadrature.cells_per_length = 64\n"));
        assert!(text.contains("model.kernel = \"zero\"\n"));
        assert!(text.contains("limit.relative_tolerance = 0.0001\n"));
        let lines: Vec<&str> = text.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        // Round trip through the materialized text gives the same hash.
        let again = parse_config("m.cfg", &text).unwrap().config;
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let src = format!("{MINIMAL}model.colour = 3\n");
        let err = parse_config("t.cfg", &src).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("colour"), "{msg}");
        assert!(msg.starts_with("t.cfg:10:"), "{msg}");
    }

    #[test]
    fn missing_section_reported() {
        let src = MINIMAL.replace("limit.particles = [1000, 10000]\n", "");
        let msg = parse_config("t.cfg", &src).unwrap_err().to_string();
        assert!(msg.contains("requires `limit`"), "{msg}");
    }

    #[test]
    fn tier_mismatch_rejected() {
        let src = MINIMAL.replace("tier = \"statistical\"", "tier = \"exact\"");
        let msg = parse_config("t.cfg", &src).unwrap_err().to_string();
        assert!(msg.contains("t.cfg:4:"), "{msg}");
    }

    #[test]
    fn locate_handles_tables() {
        let src = "a = 1\n[model]\ndim = 3\n";
        assert_eq!(locate_key(src, "model.dim"), 3);
        assert_eq!(locate_key(src, "a"), 1);
        assert_eq!(locate_key(src, "b"), 0);
    }
}
