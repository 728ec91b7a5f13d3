//! Experiment configuration read from a single JSON file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::equilibrium::GridSpec;
use crate::error::{Error, Result};
use crate::model::{parse_control_component, AssumptionBudget, Measure, ModelConfig, ModelSpec};
use crate::simulate::{ControlField, StepPolicy};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    /// `a(N) = N^{-ρ_a}`.
    #[serde(default = "default_rho_a")]
    pub rho_a: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub step: StepPolicy,
    pub seeds: Vec<u64>,
    #[serde(default = "default_dict_size")]
    pub dict_size: usize,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub probe: ProbeOptions,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub couple: CoupleOptions,
    #[serde(default)]
    pub fluctuate: FluctuateOptions,
    #[serde(default)]
    pub rate: RateStudyOptions,
    #[serde(default)]
    pub validate: AssumptionBudget,
}

fn default_eps() -> Vec<f64> {
    vec![0.1]
}
fn default_n() -> Vec<usize> {
    vec![64]
}
fn default_rho_a() -> f64 {
    0.25
}
fn default_t_end() -> f64 {
    1.0
}
fn default_dict_size() -> usize {
    8
}

/// Where the frozen problems of `equilibrium`, `cell` and `average` are solved.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeOptions {
    pub x: Vec<f64>,
    /// Atoms of the frozen empirical measure; a point mass at the initial slow state if empty.
    pub mu_atoms: Vec<f64>,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { x: vec![0.0], mu_atoms: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlConfig {
    #[default]
    Zero,
    Constant { h1: f64, h2: f64 },
    /// Expressions in `t`, `x`, `y`.
    Expression { h1: String, h2: String },
}

impl ControlConfig {
    pub fn build(&self) -> Result<ControlField> {
        Ok(match self {
            ControlConfig::Zero => ControlField::Zero,
            ControlConfig::Constant { h1, h2 } => {
                if !h1.is_finite() || !h2.is_finite() {
                    return Err(Error::Config("control values must be finite".into()));
                }
                ControlField::Constant(*h1, *h2)
            }
            ControlConfig::Expression { h1, h2 } => {
                let f1 = parse_control_component("h1", h1)?;
                let f2 = parse_control_component("h2", h2)?;
                ControlField::Feedback(Arc::new(move |t, x, y| (f1(t, x, y), f2(t, x, y))))
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            ControlConfig::Zero => "zero".into(),
            ControlConfig::Constant { h1, h2 } => format!("constant({h1}, {h2})"),
            ControlConfig::Expression { h1, h2 } => format!("({h1}, {h2})"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleOptions {
    /// The averaged limit runs with `limit_factor · N` particles; the first `N` are compared.
    pub limit_factor: usize,
    /// Test function of the weak averaging gap.
    pub weak_test: String,
}

impl Default for CoupleOptions {
    fn default() -> Self {
        CoupleOptions { limit_factor: 8, weak_test: "tanh".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuateOptions {
    /// Use `a(N) = 1` instead of `N^{-ρ_a}`.
    pub clt: bool,
    /// The limit law is realized with `limit_factor · N` particles.
    pub limit_factor: usize,
    /// Extra members appended to the Hermite dictionary.
    pub extra_members: Vec<String>,
}

impl Default for FluctuateOptions {
    fn default() -> Self {
        FluctuateOptions { clt: false, limit_factor: 10, extra_members: vec!["tanh".into()] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateStudyOptions {
    /// Particles of the averaged-limit ensemble that represents `𝓛(X_s)`.
    pub limit_particles: usize,
    pub x_nodes: usize,
    pub galerkin_tol: f64,
    pub pinv_rtol: f64,
    pub ode_substeps: usize,
}

impl Default for RateStudyOptions {
    fn default() -> Self {
        RateStudyOptions { limit_particles: 256, x_nodes: 481, galerkin_tol: 1e-3, pinv_rtol: 1e-5, ode_substeps: 4 }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps.is_empty() || self.eps.iter().any(|&e| !(e > 0.0 && e <= 1.0)) {
            return bad(format!("eps values must lie in (0, 1], got {:?}", self.eps));
        }
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return bad(format!("N values must be at least 2, got {:?}", self.n));
        }
        if !(self.rho_a > 0.0 && self.rho_a < 0.5) {
            return bad(format!("rho_a must lie in (0, 0.5), got {}", self.rho_a));
        }
        if self.seeds.is_empty() {
            return bad("seed list is empty".into());
        }
        if self.dict_size == 0 {
            return bad("dict_size must be positive".into());
        }
        if !(self.step.k > 0.0 && self.step.report_dt > 0.0) {
            return bad("step policy needs positive k and report_dt".into());
        }
        self.step.macro_steps(self.t_end)?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        crate::model::build_model(&self.model)
    }

    pub fn grid_spec(&self) -> GridSpec {
        self.grid.unwrap_or_default()
    }

    pub fn probe_measure(&self, model: &ModelSpec) -> Measure {
        if self.probe.mu_atoms.is_empty() {
            Measure::point_mass(model.eta_x)
        } else {
            Measure::empirical(self.probe.mu_atoms.clone())
        }
    }

    /// `a(N) = N^{-ρ_a}`.
    pub fn a_n(&self, n: usize) -> f64 {
        (n as f64).powf(-self.rho_a)
    }

    /// Seeds in ascending order, duplicates removed.
    pub fn sorted_seeds(&self) -> Vec<u64> {
        let mut s = self.seeds.clone();
        s.sort_unstable();
        s.dedup();
        s
    }
}
