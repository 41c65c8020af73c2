//! Run configuration: one TOML file drives every stage.

use std::path::Path;

use kfp_core::discretization::{auto_extent, DEFAULT_EXTENT_FACTOR, DEFAULT_R0};
use kfp_core::eigensolver::default_etas;
use kfp_core::equilibria::{EquilibriumError, EquilibriumModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Classical,
    Anisotropic,
    Oscillatory,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSection {
    pub family: FamilyKind,
    pub d: usize,
    /// Decay of `M`; exclusive with `beta`.
    pub gamma: Option<f64>,
    /// Decay of `F = M²`; exclusive with `gamma`.
    pub beta: Option<f64>,
    /// Amplitude on `{v₁ > 0}` (classical family).
    pub plus: f64,
    /// Amplitude on `{v₁ < 0}` (classical family).
    pub minus: f64,
    pub sigma: f64,
    pub amplitude: f64,
    /// Accept `β` outside `(d, d+4)`.
    pub allow_out_of_range: bool,
}

impl Default for EquilibriumSection {
    fn default() -> Self {
        EquilibriumSection {
            family: FamilyKind::Classical,
            d: 1,
            gamma: None,
            beta: None,
            plus: 1.0,
            minus: 1.0,
            sigma: 2.0,
            amplitude: 0.5,
            allow_out_of_range: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n: usize,
    /// Fixed extent; when absent `max(r0, c·η_min^{-1/3})`.
    pub vmax: Option<f64>,
    pub stretch: f64,
    pub r0: f64,
    pub extent_factor: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n: 512, vmax: None, stretch: 1.0, r0: DEFAULT_R0, extent_factor: DEFAULT_EXTENT_FACTOR }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub etas: Vec<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { etas: default_etas(), tol: 1e-12, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
}

impl Default for LimitSection {
    fn default() -> Self {
        LimitSection { s_min: 1e-3, s_max: 30.0, n: 4000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftSection {
    pub eps: Vec<f64>,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection { eps: vec![1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12] }
    }
}

/// Source of `(κ, α)` in the reference multiplier `exp(-κ t |ξ|^α)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// `κ` from the limit problem, `α = (β - d + 2)/3`.
    Limit,
    /// `(κ̂, α̂)` from the η-sweep fit.
    Fitted,
}

/// Source of the exponent in the time scale `θ(ε) = ε^α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaKind {
    Analytic,
    Fitted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagatorSection {
    pub xi: Vec<f64>,
    pub t: Vec<f64>,
    pub eps: Vec<f64>,
    pub n: usize,
    pub stretch: f64,
    pub r0: f64,
    pub extent_factor: f64,
    pub max_change: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub substeps: usize,
    pub reference: ReferenceKind,
    pub theta: ThetaKind,
}

impl Default for PropagatorSection {
    fn default() -> Self {
        PropagatorSection {
            xi: vec![0.5, 1.0, 2.0],
            t: vec![0.5, 1.0, 2.0],
            eps: vec![1e-2, 3e-3, 1e-3],
            n: 512,
            stretch: 1.0,
            r0: DEFAULT_R0,
            extent_factor: DEFAULT_EXTENT_FACTOR,
            max_change: 1e-3,
            dt_init: 1e-4,
            dt_min: 1e-12,
            substeps: 1,
            reference: ReferenceKind::Limit,
            theta: ThetaKind::Analytic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSection {
    pub n: usize,
    /// Upper bound on the step; the step used divides the horizon exactly.
    pub dt: f64,
    pub eps: f64,
    pub t_macro: f64,
    pub seed: u64,
    pub xi: Vec<f64>,
    pub bootstrap: usize,
    pub v_cap: f64,
    /// Write the (particle, V, X) snapshot.
    pub snapshot: bool,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            n: 100_000,
            dt: 1e-2,
            eps: 3e-3,
            t_macro: 1.0,
            seed: 20_240_601,
            xi: vec![0.5, 1.0, 2.0],
            bootstrap: 200,
            v_cap: 1e6,
            snapshot: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub radius: f64,
    pub points: usize,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection { radius: 1e3, points: 20_001 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Run the particle simulation when its artifacts are absent.
    pub run_montecarlo: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { run_montecarlo: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub kappa_spread: f64,
    pub cf_relative: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { kappa_spread: 0.05, cf_relative: 0.10 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub output: Option<String>,
    pub equilibrium: EquilibriumSection,
    pub grid: GridSection,
    pub sweep: SweepSection,
    pub limit: LimitSection,
    pub drift: DriftSection,
    pub propagator: PropagatorSection,
    pub montecarlo: MonteCarloSection,
    pub check: CheckSection,
    pub report: ReportSection,
    pub tolerances: Tolerances,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string().trim_end().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.equilibrium;
        match (e.gamma, e.beta) {
            (Some(_), Some(_)) => return Err(ConfigError::Invalid("set either equilibrium.gamma or equilibrium.beta, not both".into())),
            (None, None) => return Err(ConfigError::Invalid("equilibrium.gamma or equilibrium.beta is required".into())),
            _ => {}
        }
        if e.d == 0 || e.d > 2 {
            return Err(ConfigError::Invalid(format!("equilibrium.d = {} must be 1 or 2", e.d)));
        }
        if self.grid.n < 8 || self.propagator.n < 8 {
            return Err(ConfigError::Invalid("grid sizes must be at least 8".into()));
        }
        if self.sweep.etas.iter().any(|x| !(*x > 0.0)) {
            return Err(ConfigError::Invalid("sweep.etas must be positive".into()));
        }
        if self.propagator.t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::Invalid("propagator.t must be increasing".into()));
        }
        if self.propagator.eps.iter().chain(&self.drift.eps).chain(std::iter::once(&self.montecarlo.eps)).any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(ConfigError::Invalid("every eps must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.equilibrium.gamma.unwrap_or_else(|| 0.5 * self.equilibrium.beta.unwrap_or(f64::NAN))
    }

    pub fn beta(&self) -> f64 {
        2.0 * self.gamma()
    }

    /// Whether `β ∈ (d, d+4)` or the override is set.
    pub fn beta_admissible(&self) -> bool {
        let d = self.equilibrium.d as f64;
        self.equilibrium.allow_out_of_range || (self.beta() > d && self.beta() < d + 4.0)
    }

    pub fn model(&self) -> Result<EquilibriumModel, ConfigError> {
        let e = &self.equilibrium;
        let g = self.gamma();
        Ok(match e.family {
            FamilyKind::Classical => EquilibriumModel::power_law(e.d, g, e.plus, e.minus)?,
            FamilyKind::Anisotropic => EquilibriumModel::anisotropic(e.d, g)?,
            FamilyKind::Oscillatory => EquilibriumModel::oscillatory(e.d, g, e.sigma, e.amplitude)?,
        })
    }

    /// Sweep grid extent.
    pub fn sweep_vmax(&self) -> f64 {
        let eta_min = self.sweep.etas.iter().copied().fold(f64::INFINITY, f64::min);
        self.grid.vmax.unwrap_or_else(|| auto_extent(eta_min, self.grid.r0, self.grid.extent_factor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse("[equilibrium]\ngamma = 2.0\n", "t").unwrap();
        assert_eq!(c.grid.n, 512);
        assert_eq!(c.beta(), 4.0);
        assert_eq!(c.sweep.etas.len(), 8);
        assert!(c.beta_admissible());
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("[equilibrium]\ngamma = 2.0\n\n[grid]\nsize = 3\n", "t").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 5"), "{msg}");
        assert!(msg.contains("size"), "{msg}");
    }

    #[test]
    fn beta_form() {
        let c = RunConfig::parse("[equilibrium]\nbeta = 3.0\n", "t").unwrap();
        assert_eq!(c.gamma(), 1.5);
        assert!(RunConfig::parse("[equilibrium]\nbeta = 3.0\ngamma = 1.5\n", "t").is_err());
    }

    #[test]
    fn out_of_range_flag() {
        let c = RunConfig::parse("[equilibrium]\ngamma = 0.4\n", "t").unwrap();
        assert!(!c.beta_admissible());
        let c = RunConfig::parse("[equilibrium]\ngamma = 2.6\nallow_out_of_range = true\n", "t").unwrap();
        assert!(c.beta_admissible());
    }
}
