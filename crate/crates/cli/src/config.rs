//! Scenario files: TOML on disk, overridable from the environment.
//!
//! Every command reads one file describing the whole job. Initial conditions
//! are smooth generators, never raw arrays, so changing the resolution
//! re-discretizes the same profile. Environment variables prefixed `KSLAB_`
//! override any key before deserialization; `__` descends into tables, so
//! `KSLAB_RUN__SAFETY=0.2` rewrites `run.safety`.

use anyhow::{anyhow, bail, Context};
use kslab::evolve::RunConfig;
use kslab::grid::{Domain, Field, Grid};
use kslab::motility::MotilityPair;
use kslab::steady::SteadyProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Environment prefix for config overrides.
pub const ENV_PREFIX: &str = "KSLAB_";

/// Mesh description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Interval { length: f64, n: usize },
    Rectangle { lx: f64, ly: f64, nx: usize, ny: usize },
    Disc { radius: f64, n: usize },
}

impl DomainConfig {
    pub fn build(&self) -> kslab::Result<Arc<Grid>> {
        match *self {
            DomainConfig::Interval { length, n } => Grid::interval(length, n),
            DomainConfig::Rectangle { lx, ly, nx, ny } => Grid::rectangle(lx, ly, nx, ny),
            DomainConfig::Disc { radius, n } => Grid::radial_disc(radius, n),
        }
    }
}

/// Motility family plus parameters. Custom closure pairs cannot be described
/// in a config file and are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MotilityConfig {
    Algebraic { sigma1: f64, sigma2: f64, lambda1: f64, lambda2: f64 },
    Exponential { chi1: f64, chi2: f64, delta: f64 },
    KsAlgebraic { sigma: f64, lambda: f64, alpha: f64 },
    KsExponential { chi: f64, alpha: f64 },
}

impl MotilityConfig {
    pub fn build(&self) -> kslab::Result<MotilityPair> {
        match *self {
            MotilityConfig::Algebraic { sigma1, sigma2, lambda1, lambda2 } => {
                MotilityPair::algebraic(sigma1, sigma2, lambda1, lambda2)
            }
            MotilityConfig::Exponential { chi1, chi2, delta } => {
                MotilityPair::exponential(chi1, chi2, delta)
            }
            MotilityConfig::KsAlgebraic { sigma, lambda, alpha } => {
                MotilityPair::ks_algebraic(sigma, lambda, alpha)
            }
            MotilityConfig::KsExponential { chi, alpha } => {
                MotilityPair::ks_exponential(chi, alpha)
            }
        }
    }
}

/// One cosine factor of a mode: `amplitude * cos(kx pi x / Lx) * cos(ky pi y / Ly)`.
/// `ky` only makes sense on the rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineMode {
    pub kx: u32,
    #[serde(default)]
    pub ky: u32,
    pub amplitude: f64,
}

/// Smooth initial-density generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Constant {
        value: f64,
    },
    /// Constant plus Neumann cosine modes.
    Cosine {
        base: f64,
        modes: Vec<CosineMode>,
    },
    /// Gaussian bump carrying a prescribed total mass over a flat floor.
    Bump {
        center_x: f64,
        #[serde(default)]
        center_y: f64,
        width: f64,
        mass: f64,
        #[serde(default)]
        floor: f64,
    },
}

impl InitialConfig {
    pub fn build(&self, grid: &Arc<Grid>) -> anyhow::Result<Field> {
        let field = match self {
            InitialConfig::Constant { value } => Field::constant(grid, *value)?,
            InitialConfig::Cosine { base, modes } => {
                let (lx, ly) = plan_extents(grid.domain());
                for m in modes {
                    if m.ky > 0 && ly == 0.0 {
                        bail!("cosine mode with ky > 0 needs a rectangle domain");
                    }
                }
                Field::from_fn(grid, |x, y| {
                    let mut s = *base;
                    for m in modes {
                        let mut term =
                            m.amplitude * (m.kx as f64 * std::f64::consts::PI * x / lx).cos();
                        if m.ky > 0 {
                            term *= (m.ky as f64 * std::f64::consts::PI * y / ly).cos();
                        }
                        s += term;
                    }
                    s
                })?
            }
            InitialConfig::Bump { center_x, center_y, width, mass, floor } => {
                if !(width.is_finite() && *width > 0.0) {
                    bail!("bump width must be positive");
                }
                if !(*floor >= 0.0) {
                    bail!("bump floor must be nonnegative");
                }
                let shape = Field::from_fn(grid, |x, y| {
                    let dx = x - center_x;
                    let dy = y - center_y;
                    (-(dx * dx + dy * dy) / (width * width)).exp()
                })?;
                let spare = mass - floor * grid.measure();
                let norm = shape.integrate();
                if !(spare > 0.0) {
                    bail!("bump mass {mass} does not exceed the floor contribution");
                }
                let amp = spare / norm;
                Field::from_values(
                    grid,
                    shape.values().iter().map(|&e| floor + amp * e).collect(),
                )?
            }
        };
        if field.min() < 0.0 {
            bail!("initial density dips negative (min {})", field.min());
        }
        if !(field.integrate() > 0.0) {
            bail!("initial density carries no mass");
        }
        Ok(field)
    }
}

fn plan_extents(domain: Domain) -> (f64, f64) {
    match domain {
        Domain::Interval { length } => (length, 0.0),
        Domain::Rectangle { lx, ly } => (lx, ly),
        Domain::RadialDisc { radius } => (radius, 0.0),
    }
}

/// One full evolution job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainConfig,
    pub motility: MotilityConfig,
    pub d: f64,
    pub initial: InitialConfig,
    pub horizon: f64,
    /// Relative amplitude of seeded multiplicative noise on the initial
    /// density; zero keeps the run independent of the seed.
    #[serde(default)]
    pub initial_noise: f64,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    /// Discretize the scenario: mesh, motility pair, seeded initial density.
    /// `mass` rescales the generated density to a target total.
    pub fn build(&self, seed: u64, mass: Option<f64>) -> anyhow::Result<(Arc<Grid>, MotilityPair, Field)> {
        if !(self.d.is_finite() && self.d > 0.0) {
            bail!("d = {} must be positive", self.d);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            bail!("horizon = {} must be positive", self.horizon);
        }
        if !(0.0..1.0).contains(&self.initial_noise) {
            bail!("initial_noise = {} must lie in [0, 1)", self.initial_noise);
        }
        let grid = self.domain.build()?;
        let pair = self.motility.build()?;
        let mut u0 = self.initial.build(&grid)?;
        if let Some(target) = mass {
            if !(target.is_finite() && target > 0.0) {
                bail!("target mass {target} must be positive");
            }
            let scale = target / u0.integrate();
            u0 = Field::from_values(&grid, u0.values().iter().map(|&x| scale * x).collect())?;
        }
        if self.initial_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            u0 = Field::from_values(
                &grid,
                u0.values()
                    .iter()
                    .map(|&x| x * (1.0 + self.initial_noise * (2.0 * rng.gen::<f64>() - 1.0)))
                    .collect(),
            )?;
        }
        Ok((grid, pair, u0))
    }
}

/// Hypothesis-check job: a motility family at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub motility: MotilityConfig,
    /// Space dimension the conditions are evaluated for.
    pub n: u32,
    pub d: f64,
    pub m: f64,
    pub eta: EtaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Where the signal lower bound comes from: picked by hand, or measured as
/// the running minimum of an embedded evolution run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EtaConfig {
    UserSupplied { value: f64 },
    Measured { scenario: Box<ScenarioConfig> },
}

/// Steady-state job: one problem, optionally marched across a parameter range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    pub domain: DomainConfig,
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuation: Option<ContinuationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemConfig {
    /// Power nonlinearity at exponent `k`, target mass `m`.
    Algebraic { k: f64, d: f64, m: f64 },
    /// Exponential nonlinearity at rescaled mass `m_tilde`.
    Exponential { m_tilde: f64, d: f64 },
}

impl ProblemConfig {
    pub fn build(&self, grid: &Arc<Grid>) -> kslab::Result<SteadyProblem> {
        match *self {
            ProblemConfig::Algebraic { k, d, m } => SteadyProblem::algebraic(grid, k, d, m),
            ProblemConfig::Exponential { m_tilde, d } => {
                SteadyProblem::exponential(grid, m_tilde, d)
            }
        }
    }

    /// Parameter the continuation marches: `d` here, `m_tilde` there.
    pub fn parameter(&self) -> f64 {
        match *self {
            ProblemConfig::Algebraic { d, .. } => d,
            ProblemConfig::Exponential { m_tilde, .. } => m_tilde,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

/// Parameter-sweep job: a base scenario and the lattice axes varied over it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ScenarioConfig,
    pub axes: Vec<AxisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub key: AxisKey,
    pub values: Vec<f64>,
}

/// Scenario knobs a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisKey {
    D,
    Mass,
}

impl AxisKey {
    pub fn name(&self) -> &'static str {
        match self {
            AxisKey::D => "d",
            AxisKey::Mass => "mass",
        }
    }
}

/// Read a config file and deserialize it with environment overrides applied.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.display()))?;
    apply_env_overrides(&mut table, std::env::vars())?;
    toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("interpreting config {}", path.display()))
}

/// Rewrite table entries from `KSLAB_`-prefixed variables. Values parse as
/// TOML scalars where possible and fall back to strings, so `KSLAB_D=0.5`
/// arrives as a float and `KSLAB_OUTPUT_DIR=out/x` as a string.
pub fn apply_env_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> anyhow::Result<()> {
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(ENV_PREFIX) else { continue };
        if path.is_empty() {
            continue;
        }
        let segments: Vec<String> = path.split("__").map(str::to_lowercase).collect();
        if segments.iter().any(String::is_empty) {
            bail!("override {key} has an empty key segment");
        }
        let mut node = &mut *table;
        for seg in &segments[..segments.len() - 1] {
            node = node
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("override {key} descends into a non-table value"))?;
        }
        node.insert(segments.last().unwrap().clone(), parse_scalar(&raw));
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_text() -> &'static str {
        r#"
            d = 0.25
            horizon = 0.5

            [domain]
            shape = "rectangle"
            lx = 1.0
            ly = 1.0
            nx = 8
            ny = 8

            [motility]
            family = "ks_exponential"
            chi = 1.0
            alpha = 0.5

            [initial]
            kind = "constant"
            value = 2.0
        "#
    }

    #[test]
    fn scenario_round_trips_through_toml() {
        let cfg: ScenarioConfig = toml::from_str(scenario_text()).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let again: ScenarioConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.run, RunConfig::default());
    }

    #[test]
    fn builds_valid_scenario_artifacts() {
        let cfg: ScenarioConfig = toml::from_str(scenario_text()).unwrap();
        let (grid, _, u0) = cfg.build(0, None).unwrap();
        assert_eq!(grid.n_cells(), 64);
        assert!((u0.integrate() - 2.0).abs() < 1e-12);
        let (_, _, scaled) = cfg.build(0, Some(5.0)).unwrap();
        assert!((scaled.integrate() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn noise_is_seeded_and_bounded() {
        let mut cfg: ScenarioConfig = toml::from_str(scenario_text()).unwrap();
        cfg.initial_noise = 0.1;
        let (_, _, a) = cfg.build(7, None).unwrap();
        let (_, _, b) = cfg.build(7, None).unwrap();
        let (_, _, c) = cfg.build(8, None).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        for x in a.values() {
            assert!(*x >= 2.0 * 0.9 && *x <= 2.0 * 1.1);
        }
    }

    #[test]
    fn cosine_initial_rejects_negative_dip() {
        let mut cfg: ScenarioConfig = toml::from_str(scenario_text()).unwrap();
        cfg.initial = InitialConfig::Cosine {
            base: 1.0,
            modes: vec![CosineMode { kx: 1, ky: 0, amplitude: 1.5 }],
        };
        assert!(cfg.build(0, None).is_err());
    }

    #[test]
    fn bump_hits_prescribed_mass() {
        let mut cfg: ScenarioConfig = toml::from_str(scenario_text()).unwrap();
        cfg.initial = InitialConfig::Bump {
            center_x: 0.5,
            center_y: 0.5,
            width: 0.1,
            mass: 3.0,
            floor: 0.5,
        };
        let (_, _, u0) = cfg.build(0, None).unwrap();
        assert!((u0.integrate() - 3.0).abs() < 1e-10);
        assert!(u0.min() >= 0.5);
    }

    #[test]
    fn env_overrides_rewrite_nested_keys() {
        let mut table: toml::Table = scenario_text().parse().unwrap();
        apply_env_overrides(
            &mut table,
            [
                ("KSLAB_D".to_string(), "0.75".to_string()),
                ("KSLAB_RUN__SAFETY".to_string(), "0.2".to_string()),
                ("KSLAB_OUTPUT_DIR".to_string(), "out/x".to_string()),
                ("UNRELATED".to_string(), "1".to_string()),
            ],
        )
        .unwrap();
        let cfg: ScenarioConfig = toml::Value::Table(table).try_into().unwrap();
        assert_eq!(cfg.d, 0.75);
        assert_eq!(cfg.run.safety, 0.2);
        assert_eq!(cfg.output_dir.as_deref(), Some(Path::new("out/x")));
    }

    #[test]
    fn unknown_family_is_rejected() {
        let text = scenario_text().replace("ks_exponential", "custom");
        let parsed: Result<ScenarioConfig, _> = toml::from_str(&text);
        assert!(parsed.is_err());
    }
}
