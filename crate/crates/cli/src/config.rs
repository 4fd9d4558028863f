//! Experiment configuration: a TOML file with `[model]`, `[graphon]`,
//! `[grid]`, `[run]` and per-command sections, plus `--set` overrides.

use serde::{Deserialize, Serialize};

use graphon_ldp::graphon::{GraphonFamily, GraphonSpec};
use graphon_ldp::model::SisParams;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub beta: f64,
    pub alpha: f64,
    /// Initial infected probability `init_base + init_amplitude · cos θ`.
    pub init_base: f64,
    pub init_amplitude: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            beta: 2.0,
            alpha: 1.0,
            init_base: 0.2,
            init_amplitude: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphonConfig {
    /// `constant`, `inhomogeneous-circle`, `power-law` or `small-world`.
    pub family: String,
    pub value: f64,
    pub mean: f64,
    pub amplitude: f64,
    pub beta: f64,
    pub gamma: f64,
    pub near: f64,
    pub far: f64,
    pub radius: f64,
    pub n: usize,
    /// `φ_N = N^phi_exponent`.
    pub phi_exponent: f64,
}

impl Default for GraphonConfig {
    fn default() -> Self {
        GraphonConfig {
            family: "inhomogeneous-circle".into(),
            value: 1.0,
            mean: 1.0,
            amplitude: 0.5,
            beta: 0.2,
            gamma: 0.5,
            near: 1.5,
            far: 0.5,
            radius: 0.5,
            n: 1000,
            phi_exponent: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Spatial nodes (also the number of occupation bins).
    pub m: usize,
    /// Time intervals of the action path.
    pub k: usize,
    /// Mean-field time step.
    pub dt: f64,
    /// Horizon `T`.
    pub horizon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            m: 64,
            k: 200,
            dt: 0.0025,
            horizon: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub replicas: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { replicas: 20, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub sizes: Vec<usize>,
    pub snapshot_dt: f64,
    pub nodes_per_bin: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            sizes: vec![500, 1000, 2000],
            snapshot_dt: 0.1,
            nodes_per_bin: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Occupation snapshot spacing.
    pub snapshot_dt: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { snapshot_dt: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateConfig {
    /// Factor applied to the S→I flux on a patch; 1 evaluates the mean field itself.
    pub perturb_factor: f64,
    /// Patch as fractions of `[0, T]` and of the node range.
    pub perturb_time: [f64; 2],
    pub perturb_space: [f64; 2],
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            perturb_factor: 1.0,
            perturb_time: [0.2, 0.4],
            perturb_space: [0.0, 0.1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionConfig {
    pub start: String,
    pub end: String,
    pub tol_grad: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub warm_start: bool,
    /// Random samples for the derivative-formula check run before optimizing.
    pub formula_samples: usize,
}

impl Default for ActionConfig {
    fn default() -> Self {
        ActionConfig {
            start: "equilibrium".into(),
            end: "bump:0,0.5,0.2".into(),
            tol_grad: 1e-6,
            max_iters: 20_000,
            memory: 20,
            warm_start: false,
            formula_samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdpConfig {
    pub a: f64,
    pub sizes: Vec<u64>,
}

impl Default for LdpConfig {
    fn default() -> Self {
        LdpConfig {
            a: 1.2,
            sizes: vec![250, 500, 1000, 2000],
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub graphon: GraphonConfig,
    pub grid: GridConfig,
    pub run: RunConfig,
    pub simulate: SimulateConfig,
    pub compare: CompareConfig,
    pub rate: RateConfig,
    pub action: ActionConfig,
    pub ldp: LdpConfig,
}

fn config_err(m: impl Into<String>) -> CliError {
    CliError::Config(m.into())
}

/// Parses `text` and applies `section.key=value` overrides; values are
/// read as TOML (so `2`, `0.5`, `true`, `[1, 2]`) and fall back to strings.
pub fn load(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set {item:?}: expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| config_err(format!("--set {item:?}: expected section.key=value")))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let table = root
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_err(format!("--set {item:?}: `{section}` is not a section")))?;
        table.insert(key.to_string(), value);
    }
    let cfg: ExperimentConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(format!("{name} must be positive, got {v}")))
            }
        };
        positive("model.alpha", self.model.alpha)?;
        if !(self.model.beta >= 0.0 && self.model.beta.is_finite()) {
            return Err(config_err(format!(
                "model.beta must be nonnegative, got {}",
                self.model.beta
            )));
        }
        positive("grid.horizon", self.grid.horizon)?;
        positive("grid.dt", self.grid.dt)?;
        positive("graphon.phi_exponent", self.graphon.phi_exponent)?;
        if self.graphon.phi_exponent > 1.0 {
            return Err(config_err("graphon.phi_exponent must be at most 1"));
        }
        if self.graphon.n < 2 {
            return Err(config_err(format!(
                "graphon.n must be at least 2, got {}",
                self.graphon.n
            )));
        }
        if self.grid.m == 0 {
            return Err(config_err("grid.m must be positive"));
        }
        if self.grid.k < 2 {
            return Err(config_err("grid.k must be at least 2"));
        }
        if self.run.replicas == 0 {
            return Err(config_err("run.replicas must be at least 1"));
        }
        let lo = self.model.init_base - self.model.init_amplitude.abs();
        let hi = self.model.init_base + self.model.init_amplitude.abs();
        if lo < 0.0 || hi > 1.0 {
            return Err(config_err(format!(
                "initial infected profile leaves [0, 1] ({lo}..{hi})"
            )));
        }
        self.spec()?;
        Ok(())
    }

    pub fn params(&self) -> SisParams {
        SisParams::new(self.model.beta, self.model.alpha).expect("validated")
    }

    pub fn spec(&self) -> Result<GraphonSpec, CliError> {
        let g = &self.graphon;
        let family = match g.family.as_str() {
            "constant" => GraphonFamily::Constant { value: g.value },
            "inhomogeneous-circle" => GraphonFamily::InhomogeneousCircle {
                mean: g.mean,
                amplitude: g.amplitude,
            },
            "power-law" => GraphonFamily::PowerLaw {
                beta: g.beta,
                gamma: g.gamma,
            },
            "small-world" => GraphonFamily::SmallWorld {
                near: g.near,
                far: g.far,
                radius: g.radius,
            },
            other => {
                return Err(config_err(format!(
                    "graphon.family {other:?}: expected constant, inhomogeneous-circle, power-law or small-world"
                )))
            }
        };
        GraphonSpec::new(family).map_err(|e| config_err(format!("graphon: {e}")))
    }

    pub fn phi(&self, n: usize) -> f64 {
        (n as f64).powf(self.graphon.phi_exponent)
    }

    /// Mean-field steps over the horizon at (about) `grid.dt`.
    pub fn steps(&self) -> usize {
        ((self.grid.horizon / self.grid.dt).round() as usize).max(1)
    }

    pub fn infected_at(&self, theta: f64) -> f64 {
        self.model.init_base + self.model.init_amplitude * theta.cos()
    }
}
