//! Per-mode evolution of the rescaled kinetic equation
//!
//! ```text
//! ∂_t ĝ = -ε^{-α}(L_η - iηj₁^ε) ĝ,    η = ε|ξ|,
//! ```
//!
//! by Crank-Nicolson steps on `L_η`, with the drift carried by the exact
//! scalar phase `exp(i t ε^{-α} η j₁^ε)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::banded::{BandError, BandLu};
use crate::discretization::{assemble_l_eta, assemble_q, auto_extent, DiscreteOperator, DiscretizationError, VelocityGrid};
use crate::eigensolver::{eigenpair, EigenError, SearchOptions};
use crate::equilibria::EquilibriumModel;
use crate::limit_problem::{drift_j, LimitError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error("time step fell below {dt_min:e} at t = {t}")]
    StepCollapse { t: f64, dt_min: f64 },
    #[error("linear solve failed: {0}")]
    SolverFailure(String),
    #[error("initial profile ratio |f/M| = {ratio:e} exceeds the cap {cap:e}")]
    UnboundedRatio { ratio: f64, cap: f64 },
    #[error("output times must be non-negative and increasing")]
    InvalidTimes,
    #[error(transparent)]
    Grid(#[from] DiscretizationError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Limit(#[from] LimitError),
}

impl From<BandError> for PropagatorError {
    fn from(e: BandError) -> Self {
        PropagatorError::SolverFailure(e.to_string())
    }
}

/// Initial data for one Fourier mode.
#[derive(Debug, Clone)]
pub enum InitialSpec {
    /// `f̂₀ = ρ̂₀ F`, so `ĝ₀ = ρ̂₀ M`.
    WellPrepared { rho0: Complex64 },
    /// Gaussian packet in `x`: well-prepared with `ρ̂₀(ξ) = exp(-ξ²/2)`.
    GaussianPacket,
    /// Arbitrary `f̂₀` on the nodes; `ĝ₀ = f̂₀/M` with `|f̂₀/M| ≤ cap`.
    Profile { values: Vec<Complex64>, cap: f64 },
}

impl InitialSpec {
    pub fn rho0(&self, xi: f64) -> Option<Complex64> {
        match self {
            InitialSpec::WellPrepared { rho0 } => Some(*rho0),
            InitialSpec::GaussianPacket => Some(Complex64::new((-0.5 * xi * xi).exp(), 0.0)),
            InitialSpec::Profile { .. } => None,
        }
    }
}

/// `ĝ₀` on the nodes of `op`.
pub fn project_initial(spec: &InitialSpec, op: &DiscreteOperator, xi: f64) -> Result<Vec<Complex64>, PropagatorError> {
    match spec {
        InitialSpec::WellPrepared { .. } | InitialSpec::GaussianPacket => {
            let r = spec.rho0(xi).expect("well-prepared data has a density");
            Ok(op.m().iter().map(|m| r * m).collect())
        }
        InitialSpec::Profile { values, cap } => {
            let ratio = values.iter().zip(op.m()).map(|(f, m)| f.norm() / m).fold(0.0, f64::max);
            if !(ratio <= *cap) {
                return Err(PropagatorError::UnboundedRatio { ratio, cap: *cap });
            }
            Ok(values.iter().zip(op.m()).map(|(f, m)| f / m).collect())
        }
    }
}

/// Step control for the Crank-Nicolson integrator.
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    /// Largest accepted relative change `‖ĝⁿ⁺¹ - ĝⁿ‖_w / ‖ĝⁿ‖_w`.
    pub max_change: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Each accepted step is taken as this many equal sub-steps.
    pub substeps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { max_change: 1e-3, dt_init: 1e-4, dt_min: 1e-12, substeps: 1 }
    }
}

/// Exponent and coefficient of the reference multiplier `exp(-κ t |ξ|^α)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reference {
    pub kappa: f64,
    pub alpha: f64,
}

/// Recorded evolution of one mode.
#[derive(Debug, Clone, Serialize)]
pub struct ModeTrajectory {
    pub xi: f64,
    pub eps: f64,
    pub eta: f64,
    pub times: Vec<f64>,
    /// `ρ̂^ε(t, ξ) = ⟨ĝ(t), M⟩_w`.
    pub rho: Vec<Complex64>,
    /// `exp(-κ t |ξ|^α) ρ̂₀` times the drift phase.
    pub reference: Vec<Complex64>,
    /// `⟨ĝ(t), M_η⟩` (bilinear).
    pub projection: Vec<Complex64>,
    /// `exp(-t ε^{-α}(μ - iηj₁)) ⟨ĝ(0), M_η⟩`.
    pub projection_exact: Vec<Complex64>,
    /// Largest relative deviation of the projection from its exact law.
    pub projection_error: f64,
    /// `‖ĝ(t)‖_w` at the output times.
    pub norms: Vec<f64>,
    pub steps: usize,
    pub rejected: usize,
    pub drift: f64,
}

struct Stepper {
    op: DiscreteOperator,
    tau_scale: f64,
    dt: f64,
    lu: BandLu,
}

impl Stepper {
    fn new(op: &DiscreteOperator, tau_scale: f64, dt: f64) -> Result<Self, PropagatorError> {
        let lu = Self::factor(op, tau_scale * dt)?;
        Ok(Stepper { op: op.clone(), tau_scale, dt, lu })
    }

    /// `W + (τ/2) K_η` with `K_η = K + iηWv₁`.
    fn factor(op: &DiscreteOperator, tau: f64) -> Result<BandLu, PropagatorError> {
        let mut a = op.weighted_band(Complex64::new(0.0, 0.0));
        let n = op.len();
        let half = 0.5 * tau;
        let bw = op.bandwidth();
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                let z = a.get(i, j);
                if z != Complex64::new(0.0, 0.0) {
                    a.set(i, j, z * half);
                }
            }
            a.add(i, i, Complex64::new(op.weights()[i], 0.0));
        }
        Ok(a.factor()?)
    }

    fn set_dt(&mut self, dt: f64) -> Result<(), PropagatorError> {
        if dt != self.dt {
            self.lu = Self::factor(&self.op, self.tau_scale * dt)?;
            self.dt = dt;
        }
        Ok(())
    }

    /// One Crank-Nicolson step of size `self.dt`, solved for the increment
    /// `(W + τK_η/2) δ = -τ K_η g` so that rounding scales with `δ`.
    fn step(&self, g: &[Complex64]) -> Vec<Complex64> {
        let tau = self.tau_scale * self.dt;
        let k = self.op.stiffness_apply(g);
        let (w, v1, eta) = (self.op.weights(), self.op.v1(), self.op.eta());
        let mut delta: Vec<Complex64> = (0..g.len())
            .map(|p| -(k[p] + Complex64::new(0.0, eta * v1[p] * w[p]) * g[p]) * tau)
            .collect();
        self.lu.solve_in_place(&mut delta);
        g.iter().zip(&delta).map(|(a, d)| a + d).collect()
    }
}

/// Evolves `g0` for the mode `(ξ, ε)` on the operator `op = L_{εξ}` and
/// records `ρ̂` at `times`.
#[allow(clippy::too_many_arguments)]
pub fn propagate_mode(
    op: &DiscreteOperator,
    g0: &[Complex64],
    xi: f64,
    eps: f64,
    alpha: f64,
    drift: f64,
    times: &[f64],
    reference: Reference,
    rho0: Complex64,
    control: &StepControl,
) -> Result<ModeTrajectory, PropagatorError> {
    if times.iter().any(|t| *t < 0.0 || !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PropagatorError::InvalidTimes);
    }
    let eta = op.eta();
    let tau_scale = eps.powf(-alpha);
    let drift_rate = tau_scale * eta * drift;
    let (mu, mvec) = if eta > 0.0 {
        let r = eigenpair(&crate::discretization::assemble_l_eta(op, 0.0), eta, &SearchOptions::default())?;
        (r.mu, r.eigvec)
    } else {
        (Complex64::new(0.0, 0.0), op.m().iter().map(|m| Complex64::new(*m, 0.0)).collect())
    };
    let m_c: Vec<Complex64> = op.m().iter().map(|m| Complex64::new(*m, 0.0)).collect();
    let proj0 = op.bilinear(g0, &mvec);
    let rate = Complex64::new(tau_scale, 0.0) * (mu - Complex64::new(0.0, eta * drift));

    let mut g = g0.to_vec();
    let mut t = 0.0;
    let mut stepper = Stepper::new(op, tau_scale, control.dt_init / control.substeps.max(1) as f64)?;
    let mut dt = control.dt_init;
    let (mut steps, mut rejected) = (0usize, 0usize);
    let mut out = ModeTrajectory {
        xi,
        eps,
        eta,
        times: times.to_vec(),
        rho: Vec::with_capacity(times.len()),
        reference: Vec::with_capacity(times.len()),
        projection: Vec::with_capacity(times.len()),
        projection_exact: Vec::with_capacity(times.len()),
        projection_error: 0.0,
        norms: Vec::with_capacity(times.len()),
        steps: 0,
        rejected: 0,
        drift,
    };
    let sub = control.substeps.max(1);
    for &target in times {
        while t < target {
            let h = dt.min(target - t);
            stepper.set_dt(h / sub as f64)?;
            let mut trial = g.clone();
            for _ in 0..sub {
                trial = stepper.step(&trial);
            }
            let diff: Vec<Complex64> = trial.iter().zip(&g).map(|(a, b)| a - b).collect();
            let base = op.norm_sq(&g).sqrt();
            let change = if base > 0.0 { op.norm_sq(&diff).sqrt() / base } else { 0.0 };
            if change > control.max_change {
                rejected += 1;
                dt = 0.5 * h;
                if dt < control.dt_min {
                    return Err(PropagatorError::StepCollapse { t, dt_min: control.dt_min });
                }
                continue;
            }
            g = trial;
            t = if target - t <= h { target } else { t + h };
            steps += 1;
            if change < 0.5 * control.max_change && h == dt {
                dt *= 1.25;
            }
        }
        let phase = Complex64::from_polar(1.0, drift_rate * t);
        out.rho.push(op.bilinear(&g, &m_c) * phase);
        let decay = (-reference.kappa * t * xi.abs().powf(reference.alpha)).exp();
        out.reference.push(rho0 * decay * phase);
        let p = op.bilinear(&g, &mvec) * phase;
        let exact = proj0 * (-rate * t).exp();
        let err = (p - exact).norm() / proj0.norm().max(f64::MIN_POSITIVE);
        out.projection_error = out.projection_error.max(err);
        out.projection.push(p);
        out.projection_exact.push(exact);
        out.norms.push(op.norm_sq(&g).sqrt());
    }
    out.steps = steps;
    out.rejected = rejected;
    Ok(out)
}

/// Grid policy for the study: `N` nodes on `[-V, V]` with
/// `V = max(r0, c·η^{-1/3})`.
#[derive(Debug, Clone, Copy)]
pub struct GridPolicy {
    pub n: usize,
    pub stretch: f64,
    pub r0: f64,
    pub c: f64,
}

impl Default for GridPolicy {
    fn default() -> Self {
        GridPolicy { n: 512, stretch: 1.0, r0: 50.0, c: 8.0 }
    }
}

impl GridPolicy {
    pub fn operator(&self, model: &EquilibriumModel, eta: f64) -> Result<DiscreteOperator, PropagatorError> {
        let vmax = if eta > 0.0 { auto_extent(eta, self.r0, self.c) } else { self.r0 };
        let grid = VelocityGrid::new(model.d(), vmax, self.n, self.stretch)?;
        Ok(assemble_l_eta(&assemble_q(model, &grid)?, eta))
    }
}

/// One cell of the convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub eps: f64,
    pub xi: f64,
    pub t: f64,
    pub rho: Complex64,
    pub reference: Complex64,
    pub abs_err: f64,
}

/// Error table `E[ε][ξ][t]` and its monotonicity in `ε`.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<StudyRow>,
    /// Per `(ξ, t)`: whether the error decreases strictly along the
    /// decreasing `ε` list.
    pub monotone: Vec<(f64, f64, bool)>,
    pub monotone_fraction: f64,
    pub max_err_at_smallest_eps: f64,
    pub max_projection_error: f64,
    pub reference: Reference,
    #[serde(skip)]
    pub trajectories: Vec<ModeTrajectory>,
}

/// Runs every `(ε, ξ)` mode with well-prepared data and tabulates
/// `|ρ̂^ε(t, ξ) - exp(-κ t |ξ|^α) ρ̂₀|`.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    model: &EquilibriumModel,
    xi_list: &[f64],
    t_list: &[f64],
    eps_list: &[f64],
    initial: &InitialSpec,
    reference: Reference,
    theta_alpha: f64,
    policy: &GridPolicy,
    control: &StepControl,
) -> Result<ConvergenceTable, PropagatorError> {
    let jobs: Vec<(f64, f64)> = eps_list.iter().flat_map(|&e| xi_list.iter().map(move |&x| (e, x))).collect();
    let trajectories: Vec<ModeTrajectory> = jobs
        .par_iter()
        .map(|&(eps, xi)| {
            let op = policy.operator(model, eps * xi.abs())?;
            let g0 = project_initial(initial, &op, xi)?;
            let rho0 = initial.rho0(xi).unwrap_or_else(|| op.bilinear(&g0, &op.m().iter().map(|m| Complex64::new(*m, 0.0)).collect::<Vec<_>>()));
            let drift = drift_j(model, eps)?.j1;
            propagate_mode(&op, &g0, xi, eps, theta_alpha, drift, t_list, reference, rho0, control)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for tr in &trajectories {
        for (k, &t) in tr.times.iter().enumerate() {
            rows.push(StudyRow {
                eps: tr.eps,
                xi: tr.xi,
                t,
                rho: tr.rho[k],
                reference: tr.reference[k],
                abs_err: (tr.rho[k] - tr.reference[k]).norm(),
            });
        }
    }
    let err = |e: f64, x: f64, t: f64| rows.iter().find(|r| r.eps == e && r.xi == x && r.t == t).map(|r| r.abs_err).unwrap();
    let mut order = eps_list.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    let mut monotone = Vec::new();
    for &x in xi_list {
        for &t in t_list {
            let errs: Vec<f64> = order.iter().map(|&e| err(e, x, t)).collect();
            monotone.push((x, t, errs.windows(2).all(|w| w[1] < w[0])));
        }
    }
    let monotone_fraction = monotone.iter().filter(|m| m.2).count() as f64 / monotone.len().max(1) as f64;
    let smallest = *order.last().unwrap_or(&f64::NAN);
    let max_err_at_smallest_eps = rows.iter().filter(|r| r.eps == smallest).map(|r| r.abs_err).fold(0.0, f64::max);
    let max_projection_error = trajectories.iter().map(|t| t.projection_error).fold(0.0, f64::max);
    Ok(ConvergenceTable {
        rows,
        monotone,
        monotone_fraction,
        max_err_at_smallest_eps,
        max_projection_error,
        reference,
        trajectories,
    })
}
