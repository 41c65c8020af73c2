//! Rescaled limit problem for the profile `H₀`, the diffusion coefficient
//! `κ`, and the drift `j^ε` in its three regimes.
//!
//! In one dimension `H₀ = m·u`, where `u` solves `(m²u')' = i s m² u` on
//! each half-line with `u(±s_min) = 1` and `u(±S_max) = 0`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::banded::BandMatrix;
use crate::eigensolver::PenalizedSolution;
use crate::discretization::DiscreteOperator;
use crate::equilibria::{EquilibriumError, EquilibriumModel};
use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("invalid limit grid: {0}")]
    InvalidGrid(String),
    #[error("linear solve failed: {0}")]
    SolveFailure(String),
    #[error("kappa changed by {change:e} (relative) when S_max doubled")]
    TruncationUnstable { change: f64 },
    #[error("branch value has imaginary part {im:e} against real part {re:e}")]
    ImaginaryResidual { re: f64, im: f64 },
    #[error("quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error("spherical moment vanishes; the logarithmic ratio is undefined")]
    ZeroJm,
    #[error("beta = {beta} is not the critical value d + 1 = {critical}")]
    NotCritical { beta: f64, critical: f64 },
    #[error("annulus radius {needed} exceeds the velocity grid extent {available}")]
    RangeMismatch { needed: f64, available: f64 },
    #[error("only d = {0} is supported here")]
    UnsupportedDimension(usize),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
}

/// Position of `β` relative to the critical value `d + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    #[serde(rename = "subcritical")]
    Subcritical,
    #[serde(rename = "critical")]
    Critical,
    #[serde(rename = "supercritical")]
    Supercritical,
}

impl Regime {
    pub fn of(model: &EquilibriumModel) -> Regime {
        let gap = model.beta() - (model.d() as f64 + 1.0);
        if gap.abs() <= 1e-9 {
            Regime::Critical
        } else if gap < 0.0 {
            Regime::Subcritical
        } else {
            Regime::Supercritical
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Regime::Subcritical => "subcritical",
            Regime::Critical => "critical",
            Regime::Supercritical => "supercritical",
        }
    }
}

/// Punctured one-sided logarithmic meshes on `[s_min, S_max]`.
#[derive(Debug, Clone, Serialize)]
pub struct RescaledGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub n: usize,
    #[serde(skip)]
    nodes: Vec<f64>,
}

impl RescaledGrid {
    pub fn new(s_min: f64, s_max: f64, n: usize) -> Result<Self, LimitError> {
        if !(s_min > 0.0 && s_min.is_finite() && s_max.is_finite()) || s_max < 30.0 || s_max <= s_min || n < 16 {
            return Err(LimitError::InvalidGrid(format!(
                "need 0 < s_min < S_max, S_max >= 30, n >= 16 (got {s_min}, {s_max}, {n})"
            )));
        }
        let ratio = (s_max / s_min).ln();
        let nodes = (0..n)
            .map(|k| if k + 1 == n { s_max } else { s_min * (ratio * k as f64 / (n - 1) as f64).exp() })
            .collect();
        Ok(RescaledGrid { s_min, s_max, n, nodes })
    }

    /// Default mesh `[10⁻³, 30]` with 4000 nodes per side.
    pub fn standard() -> Self {
        RescaledGrid::new(1e-3, 30.0, 4000).expect("valid default")
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Same node density on `[s_min, 2 S_max]`.
    pub fn doubled(&self) -> Self {
        let per_log = (self.n - 1) as f64 / (self.s_max / self.s_min).ln();
        let extra = (per_log * std::f64::consts::LN_2).round() as usize;
        RescaledGrid::new(self.s_min, 2.0 * self.s_max, self.n + extra).expect("valid doubled grid")
    }
}

/// Solution of the limit problem in one dimension.
#[derive(Debug, Clone, Serialize)]
pub struct LimitSolution {
    pub grid: RescaledGrid,
    /// `u = H₀/m` on `s = +t`.
    pub u_plus: Vec<Complex64>,
    /// `u = H₀/m` on `s = -t`.
    pub u_minus: Vec<Complex64>,
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub kappa_unified: f64,
    /// Branch formula value for the model's regime with unit cut.
    pub kappa_branch: Complex64,
    pub regime: Regime,
    /// Largest relative row residual of the discrete equations.
    pub residual: f64,
    /// `κ` on the doubled far-field extent.
    pub kappa_doubled: f64,
    #[serde(skip)]
    profile_plus: Vec<f64>,
    #[serde(skip)]
    profile_minus: Vec<f64>,
    #[serde(skip)]
    inner_pieces: (f64, f64),
    /// Imaginary inner-disk moment, `+` side minus `-` side.
    #[serde(skip)]
    inner_im: f64,
    /// Factors `u(±s_min)` implied by the small-`s` expansion.
    #[serde(skip)]
    scale: (Complex64, Complex64),
    /// Near-origin part of `kappa_unified`.
    pub inner_correction: f64,
    #[serde(skip)]
    outer_pieces: (f64, f64),
}

/// Half-line data of one side.
struct Side {
    u: Vec<Complex64>,
    m: Vec<f64>,
    residual: f64,
}

fn solve_side<F: Fn(f64) -> f64>(m_of: F, sign: f64, grid: &RescaledGrid) -> Result<Side, LimitError> {
    let t = grid.nodes();
    let n = t.len();
    let m: Vec<f64> = t.iter().map(|&x| m_of(x)).collect();
    let face: Vec<f64> = (0..n - 1)
        .map(|k| {
            let mid = (t[k] * t[k + 1]).sqrt();
            m_of(mid).powi(2) / (t[k + 1] - t[k])
        })
        .collect();
    let inner = n - 2;
    let mut a = BandMatrix::zeros(inner, 1, 1);
    let mut rhs = vec![Complex64::new(0.0, 0.0); inner];
    let mut rows = Vec::with_capacity(inner);
    for k in 1..n - 1 {
        let r = k - 1;
        let vol = 0.5 * (t[k + 1] - t[k - 1]);
        let src = Complex64::new(0.0, sign * t[k] * m[k] * m[k] * vol);
        let diag = -Complex64::new(face[k] + face[k - 1], 0.0) - src;
        a.set(r, r, diag);
        if r > 0 {
            a.set(r, r - 1, Complex64::new(face[k - 1], 0.0));
        } else {
            rhs[r] -= face[k - 1];
        }
        if r + 1 < inner {
            a.set(r, r + 1, Complex64::new(face[k], 0.0));
        }
        rows.push((face[k - 1], diag, face[k]));
    }
    let lu = a.clone().factor().map_err(|e| LimitError::SolveFailure(e.to_string()))?;
    let x = lu.solve(&rhs);
    let mut u = Vec::with_capacity(n);
    u.push(Complex64::new(1.0, 0.0));
    u.extend_from_slice(&x);
    u.push(Complex64::new(0.0, 0.0));
    let mut residual = 0.0f64;
    for k in 1..n - 1 {
        let (lo, d, hi) = rows[k - 1];
        let r = u[k - 1] * lo + u[k] * d + u[k + 1] * hi;
        residual = residual.max(r.norm() / (lo.abs() + d.norm() + hi.abs()));
    }
    Ok(Side { u, m, residual })
}

/// Trapezoid rule in `x = ln t` for `∫ f(t) dt` over the mesh.
fn log_trapezoid(t: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    let mut parts: Vec<f64> = (0..t.len() - 1)
        .map(|k| 0.5 * (t[k + 1].ln() - t[k].ln()) * (f(k) * t[k] + f(k + 1) * t[k + 1]))
        .collect();
    quad::pairwise_sum(&mut parts)
}

/// Near-origin data on the `+` side from the small-`t` expansion
/// `u = 1 + b t³ + A t^{2γ+1} + …` of the decaying solution
/// `t^{γ+1/2} K_ν((2/3)e^{iπ/4} t^{3/2})`, `ν = (2γ+1)/3`: the value
/// `u(s_min)` implied by the expansion, and `∫₀^{s_min} t^{1-2γ} Im u dt`.
/// The `-` side is the conjugate.
///
/// The two terms have opposite poles at `γ = 1`; within `1e-6` of it the
/// remainder is `O(s_min³ ln s_min)` and is dropped.
fn near_origin(gamma: f64, s_min: f64) -> (Complex64, f64) {
    if (gamma - 1.0).abs() < 1e-6 {
        return (Complex64::new(1.0, 0.0), 0.0);
    }
    let nu = (2.0 * gamma + 1.0) / 3.0;
    let b = Complex64::new(0.0, 1.0 / (6.0 * (1.0 - gamma)));
    let half = Complex64::from_polar(1.0 / 3.0, std::f64::consts::FRAC_PI_4);
    let a = -half.powf(2.0 * nu) * (libm::tgamma(1.0 - nu) / libm::tgamma(1.0 + nu));
    let value = 1.0 + b * s_min.powi(3) + a * s_min.powf(2.0 * gamma + 1.0);
    let moment = b.im * s_min.powf(5.0 - 2.0 * gamma) / (5.0 - 2.0 * gamma) + a.im * s_min.powi(3) / 3.0;
    (value, moment)
}

/// Solves the one-dimensional limit problem and evaluates `κ` both ways.
pub fn solve_h0_1d(model: &EquilibriumModel, grid: &RescaledGrid) -> Result<LimitSolution, LimitError> {
    let sol = solve_h0_once(model, grid)?;
    let doubled = solve_h0_once(model, &grid.doubled())?;
    let change = (doubled.kappa_unified - sol.kappa_unified).abs() / sol.kappa_unified.abs();
    if !(change <= 0.01) {
        return Err(LimitError::TruncationUnstable { change });
    }
    Ok(LimitSolution { kappa_doubled: doubled.kappa_unified, ..sol })
}

fn solve_h0_once(model: &EquilibriumModel, grid: &RescaledGrid) -> Result<LimitSolution, LimitError> {
    if model.d() != 1 {
        return Err(LimitError::UnsupportedDimension(1));
    }
    let plus = |t: f64| model.limit_profile(&[t]).unwrap_or(f64::NAN);
    let minus = |t: f64| model.limit_profile(&[-t]).unwrap_or(f64::NAN);
    let p = solve_side(plus, 1.0, grid)?;
    let q = solve_side(minus, -1.0, grid)?;
    let t = grid.nodes();
    // u(s_min) = 1 is imposed; the integrals use the expansion's value instead
    let (start, moment) = near_origin(model.gamma(), grid.s_min);
    let scale = (start, start.conj());
    let inner_im = (plus(1.0).powi(2) + minus(1.0).powi(2)) * moment;
    let one_sided = |side: &Side, z: Complex64| log_trapezoid(t, |k| t[k] * side.m[k] * side.m[k] * (z * side.u[k]).im);
    let kappa_raw = -one_sided(&p, Complex64::new(1.0, 0.0)) + one_sided(&q, Complex64::new(1.0, 0.0));
    let kappa_unified = -one_sided(&p, scale.0) + one_sided(&q, scale.1) - inner_im;
    let moment = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| quad::integrate(|x| x * f(x).powi(2), a, b, 1e-14);
    let inner_pieces = (moment(&plus, 0.0, grid.s_min), moment(&minus, 0.0, grid.s_min));
    let outer = |f: &dyn Fn(f64) -> f64| {
        quad::integrate_half_line(|x| (x + grid.s_max) * f(x + grid.s_max).powi(2), 1e-12).unwrap_or(f64::NAN)
    };
    let outer_pieces = (outer(&plus), outer(&minus));
    let mut sol = LimitSolution {
        grid: grid.clone(),
        u_plus: p.u,
        u_minus: q.u,
        m_plus: p.m,
        m_minus: q.m,
        kappa_unified,
        kappa_branch: Complex64::new(0.0, 0.0),
        regime: Regime::of(model),
        residual: p.residual.max(q.residual),
        kappa_doubled: f64::NAN,
        profile_plus: Vec::new(),
        profile_minus: Vec::new(),
        inner_pieces,
        inner_im,
        scale,
        inner_correction: kappa_unified - kappa_raw,
        outer_pieces,
    };
    sol.kappa_branch = sol.branch_value(1.0);
    sol.profile_plus = sol.u_plus.iter().zip(&sol.m_plus).map(|(u, m)| u.norm() * m).collect();
    sol.profile_minus = sol.u_minus.iter().zip(&sol.m_minus).map(|(u, m)| u.norm() * m).collect();
    Ok(sol)
}

impl LimitSolution {
    /// `H₀(s)` at node `k` on side `+` (`minus = false`) or `-`.
    pub fn h0(&self, k: usize, minus: bool) -> Complex64 {
        if minus {
            self.u_minus[k] * self.m_minus[k]
        } else {
            self.u_plus[k] * self.m_plus[k]
        }
    }

    /// `H₀(s)` by linear interpolation of `u` in `ln|s|`.
    pub fn h0_at(&self, s: f64) -> Option<Complex64> {
        let t = self.grid.nodes();
        let a = s.abs();
        if a < t[0] || a > t[t.len() - 1] {
            return None;
        }
        let k = t.partition_point(|x| *x <= a).clamp(1, t.len() - 1) - 1;
        let th = (a.ln() - t[k].ln()) / (t[k + 1].ln() - t[k].ln());
        let (u, m) = if s < 0.0 { (&self.u_minus, &self.m_minus) } else { (&self.u_plus, &self.m_plus) };
        let uu = u[k] * (1.0 - th) + u[k + 1] * th;
        let mm = m[k].ln() * (1.0 - th) + m[k + 1].ln() * th;
        Some(uu * mm.exp())
    }

    /// Branch formula for the stored regime with the subtraction region
    /// `{|s| ≤ cut}` in the critical case.
    pub fn branch_value(&self, cut: f64) -> Complex64 {
        let t = self.grid.nodes();
        let chi = |x: f64| match self.regime {
            Regime::Subcritical => 0.0,
            Regime::Critical => {
                if x <= cut {
                    1.0
                } else {
                    0.0
                }
            }
            Regime::Supercritical => 1.0,
        };
        let side = |u: &[Complex64], m: &[f64], z: Complex64| {
            let re = log_trapezoid(t, |k| t[k] * m[k] * m[k] * ((z * u[k]).re - chi(t[k])));
            let im = log_trapezoid(t, |k| t[k] * m[k] * m[k] * (z * u[k]).im);
            Complex64::new(re, im)
        };
        let mut total =
            side(&self.u_plus, &self.m_plus, self.scale.0) - side(&self.u_minus, &self.m_minus, self.scale.1);
        // u ≈ 1 below s_min and u ≈ 0 beyond S_max
        let in_w = 1.0 - chi(0.0);
        let out_w = -chi(f64::INFINITY);
        total += in_w * (self.inner_pieces.0 - self.inner_pieces.1);
        total += Complex64::new(0.0, self.inner_im);
        total += out_w * (self.outer_pieces.0 - self.outer_pieces.1);
        if self.regime == Regime::Critical && cut > self.grid.s_max {
            total += -(self.outer_pieces.0 - self.outer_pieces.1);
        }
        Complex64::new(0.0, 1.0) * total
    }

    /// `sup |H₀|` on `{|s₁| ≥ 1}` side by side, used as a boundedness probe
    /// together with `∫_{|s|≥1} |s H₀|²`.
    pub fn far_moment(&self) -> f64 {
        let t = self.grid.nodes();
        let f = |k: usize| {
            if t[k] >= 1.0 {
                t[k] * t[k] * (self.h0(k, false).norm_sqr() + self.h0(k, true).norm_sqr())
            } else {
                0.0
            }
        };
        log_trapezoid(t, f)
    }

    /// Profile `|H₀|` on both sides.
    pub fn modulus(&self) -> (&[f64], &[f64]) {
        (&self.profile_plus, &self.profile_minus)
    }
}

/// Returns the unified `κ` after checking that the branch value is real
/// to within 1% of its real part.
pub fn kappa_from_h0(sol: &LimitSolution) -> Result<f64, LimitError> {
    let b = sol.kappa_branch;
    if b.im.abs() > 0.01 * b.re.abs() {
        return Err(LimitError::ImaginaryResidual { re: b.re, im: b.im });
    }
    Ok(sol.kappa_unified)
}

/// Drift `j₁^ε` along the first axis.
#[derive(Debug, Clone, Serialize)]
pub struct DriftValue {
    pub beta: f64,
    pub eps: f64,
    pub regime: Regime,
    pub j1: f64,
    /// `(|ln ε|/3)·𝔧_{m,1}` in the critical regime.
    pub asymptote: Option<f64>,
    pub ratio: Option<f64>,
}

/// `j₁^ε`: zero below the critical exponent, the moment of `v₁M²` over
/// `{|v| ≤ ε^{-1/3}}` at it, and the full first moment above it.
pub fn drift_j(model: &EquilibriumModel, eps: f64) -> Result<DriftValue, LimitError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LimitError::InvalidGrid(format!("eps = {eps} must lie in (0, 1)")));
    }
    let regime = Regime::of(model);
    let integrand = |v: &[f64]| v[0] * model.f(v);
    let (j1, asymptote) = match regime {
        Regime::Subcritical => (0.0, None),
        _ if model.is_symmetric() => (0.0, None),
        Regime::Critical => {
            let r = eps.powf(-1.0 / 3.0);
            let j = quad::integrate_ball(model.d(), integrand, r, 1e-13);
            let jm = jm_limit(model)?[0];
            (j, Some(eps.ln().abs() / 3.0 * jm))
        }
        Regime::Supercritical => {
            let j = quad::integrate_rd(model.d(), integrand, 1e-13)
                .map_err(|e| LimitError::QuadratureFailure(e.to_string()))?;
            (j, None)
        }
    };
    let ratio = asymptote.and_then(|a| if a != 0.0 { Some(j1 / a) } else { None });
    Ok(DriftValue { beta: model.beta(), eps, regime, j1, asymptote, ratio })
}

/// Spherical moment `𝔧_m = ∫_{S^{d-1}} s m(s)² dσ`.
pub fn jm_limit(model: &EquilibriumModel) -> Result<Vec<f64>, LimitError> {
    match model.d() {
        1 => Ok(vec![model.limit_profile(&[1.0])?.powi(2) - model.limit_profile(&[-1.0])?.powi(2)]),
        2 => jm_circle(model, 4096),
        d => Err(LimitError::UnsupportedDimension(d)),
    }
}

/// Trapezoid rule with `n` nodes on the unit circle.
pub fn jm_circle(model: &EquilibriumModel, n: usize) -> Result<Vec<f64>, LimitError> {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    let mut out = vec![0.0, 0.0];
    for k in 0..n {
        let th = h * k as f64;
        let s = [th.cos(), th.sin()];
        let m2 = model.limit_profile(&s)?.powi(2);
        out[0] += h * s[0] * m2;
        out[1] += h * s[1] * m2;
    }
    Ok(out)
}

/// Ratios `j₁^ε / ((|ln ε|/3)·𝔧_{m,1})` along `eps_list`.
pub fn check_log_asymptote(model: &EquilibriumModel, eps_list: &[f64]) -> Result<Vec<f64>, LimitError> {
    if Regime::of(model) != Regime::Critical {
        return Err(LimitError::NotCritical { beta: model.beta(), critical: model.d() as f64 + 1.0 });
    }
    let jm = jm_limit(model)?[0];
    if jm == 0.0 || model.is_symmetric() {
        return Err(LimitError::ZeroJm);
    }
    eps_list
        .iter()
        .map(|&e| {
            let r = e.powf(-1.0 / 3.0);
            let j = quad::integrate_ball(model.d(), |v: &[f64]| v[0] * model.f(v), r, 1e-13);
            Ok(j / (e.ln().abs() / 3.0 * jm))
        })
        .collect()
}

/// Distance between the rescaled penalized solution and `H₀`.
#[derive(Debug, Clone, Serialize)]
pub struct HEtaComparison {
    pub eta: f64,
    /// `sup |H_η - H₀|` on the annulus.
    pub max_error: f64,
    /// `(∫ |H_η - H₀|²)^{1/2}` on the annulus.
    pub l2_error: f64,
    /// `sup |m_η - m|` on the annulus.
    pub profile_error: f64,
    /// `c_η = 1 + b(0, η)`.
    pub c_eta: Complex64,
}

fn interp_grid(x: &[f64], y: &[Complex64], at: f64) -> Complex64 {
    let k = x.partition_point(|v| *v <= at).clamp(1, x.len() - 1) - 1;
    let th = (at - x[k]) / (x[k + 1] - x[k]);
    y[k] * (1.0 - th) + y[k + 1] * th
}

/// Compares `H_η(s) = η^{-γ/3} M_{0,η}(η^{-1/3} s)` with `H₀` on
/// `{0.5 ≤ |s| ≤ 5}`.
pub fn compare_h_eta(
    model: &EquilibriumModel,
    op: &DiscreteOperator,
    penalized: &PenalizedSolution,
    limit: &LimitSolution,
) -> Result<HEtaComparison, LimitError> {
    let eta = penalized.eta;
    let (r_in, r_out) = (0.5, 5.0);
    let scale = eta.powf(-1.0 / 3.0);
    let needed = scale * r_out;
    if op.grid().d() != 1 {
        return Err(LimitError::UnsupportedDimension(1));
    }
    if needed > op.grid().vmax() {
        return Err(LimitError::RangeMismatch { needed, available: op.grid().vmax() });
    }
    let v = op.grid().axis();
    let amp = eta.powf(-model.gamma() / 3.0);
    let samples = 400;
    let (mut max_error, mut l2, mut profile_error) = (0.0f64, 0.0f64, 0.0f64);
    let ds = (r_out - r_in) / samples as f64;
    for sign in [-1.0, 1.0] {
        for k in 0..=samples {
            let s = sign * (r_in + ds * k as f64);
            let h_eta = amp * interp_grid(v, &penalized.psi, scale * s);
            let h0 = limit.h0_at(s).ok_or_else(|| LimitError::RangeMismatch { needed: s.abs(), available: limit.grid.s_max })?;
            let err = (h_eta - h0).norm();
            max_error = max_error.max(err);
            let wgt = if k == 0 || k == samples { 0.5 } else { 1.0 };
            l2 += wgt * ds * err * err;
            profile_error = profile_error.max((model.rescaled(&[s], eta) - model.limit_profile(&[s])?).abs());
        }
    }
    Ok(HEtaComparison { eta, max_error, l2_error: l2.sqrt(), profile_error, c_eta: penalized.b + 1.0 })
}

/// Experimental two-dimensional limit solve on the annulus
/// `s_min ≤ |s| ≤ S_max`, in polar cells with `θ ∈ (0, π)` and mirror
/// symmetry across the `s₁` axis.
#[derive(Debug, Clone, Serialize)]
pub struct AnnulusSolution {
    pub s_min: f64,
    pub s_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub kappa_unified: f64,
    pub kappa_branch: Complex64,
    pub regime: Regime,
}

pub fn solve_h0_annulus(
    model: &EquilibriumModel,
    s_min: f64,
    s_max: f64,
    n_r: usize,
    n_theta: usize,
) -> Result<AnnulusSolution, LimitError> {
    if model.d() != 2 {
        return Err(LimitError::UnsupportedDimension(2));
    }
    let grid = RescaledGrid::new(s_min, s_max, n_r)?;
    let r = grid.nodes();
    let dth = std::f64::consts::PI / n_theta as f64;
    let theta: Vec<f64> = (0..n_theta).map(|j| (j as f64 + 0.5) * dth).collect();
    let m_at = |rr: f64, th: f64| model.limit_profile(&[rr * th.cos(), rr * th.sin()]).unwrap_or(f64::NAN);
    let inner = n_r - 2;
    let n = inner * n_theta;
    let idx = |k: usize, j: usize| j + n_theta * (k - 1);
    let mut a = BandMatrix::zeros(n, n_theta, n_theta);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    let mut vol = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for k in 1..n_r - 1 {
        let dr = 0.5 * (r[k + 1] - r[k - 1]);
        for j in 0..n_theta {
            let p = idx(k, j);
            let mut diag = Complex64::new(0.0, 0.0);
            for (nb, coef) in [(k - 1, k - 1), (k + 1, k)] {
                let rm = (r[coef] * r[coef + 1]).sqrt();
                let c = m_at(rm, theta[j]).powi(2) * rm * dth / (r[coef + 1] - r[coef]);
                diag -= c;
                if nb == 0 {
                    rhs[p] -= c;
                } else if nb < n_r - 1 {
                    a.add(p, idx(nb, j), Complex64::new(c, 0.0));
                }
            }
            for jn in [j.wrapping_sub(1), j + 1] {
                if jn >= n_theta {
                    continue;
                }
                let th = 0.5 * (theta[j] + theta[jn]);
                let c = m_at(r[k], th).powi(2) * dr / (r[k] * dth);
                diag -= c;
                a.add(p, idx(k, jn), Complex64::new(c, 0.0));
            }
            let mm = m_at(r[k], theta[j]).powi(2);
            let v = r[k] * dr * dth;
            vol[p] = v;
            m2[p] = mm;
            diag -= Complex64::new(0.0, r[k] * theta[j].cos() * mm * v);
            a.add(p, p, diag);
        }
    }
    let u = a.factor().map_err(|e| LimitError::SolveFailure(e.to_string()))?.solve(&rhs);
    let regime = Regime::of(model);
    let (mut unified, mut branch) = (0.0, Complex64::new(0.0, 0.0));
    for k in 1..n_r - 1 {
        for j in 0..n_theta {
            let p = idx(k, j);
            let s1 = r[k] * theta[j].cos();
            let chi = match regime {
                Regime::Subcritical => 0.0,
                Regime::Critical => {
                    if r[k] <= 1.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Regime::Supercritical => 1.0,
            };
            unified -= 2.0 * s1 * m2[p] * u[p].im * vol[p];
            branch += 2.0 * s1 * m2[p] * (u[p] - chi) * vol[p];
        }
    }
    Ok(AnnulusSolution {
        s_min,
        s_max,
        n_r,
        n_theta,
        kappa_unified: unified,
        kappa_branch: Complex64::new(0.0, 1.0) * branch,
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classical() -> EquilibriumModel {
        EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn boundary_value_is_imposed() {
        let s = solve_h0_1d(&classical(), &RescaledGrid::new(1e-3, 30.0, 1000).unwrap()).unwrap();
        assert_eq!(s.u_plus[0], Complex64::new(1.0, 0.0));
        assert_eq!(s.u_minus[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn symmetric_profile_is_conjugate() {
        let s = solve_h0_1d(&classical(), &RescaledGrid::new(1e-3, 30.0, 1000).unwrap()).unwrap();
        for (a, b) in s.u_plus.iter().zip(&s.u_minus) {
            assert!((a - b.conj()).norm() < 1e-8);
        }
        assert!(s.residual < 1e-9);
        assert!(s.kappa_unified > 0.0);
    }

    #[test]
    fn symmetric_drift_vanishes() {
        for g in [0.8, 1.0, 1.6, 2.0] {
            let d = drift_j(&EquilibriumModel::power_law(1, g, 1.0, 1.0).unwrap(), 1e-3).unwrap();
            assert_eq!(d.j1, 0.0);
        }
    }

    #[test]
    fn subcritical_drift_vanishes() {
        let m = EquilibriumModel::power_law(1, 0.8, 1.5, 0.5).unwrap();
        assert_eq!(drift_j(&m, 1e-3).unwrap().j1, 0.0);
    }

    #[test]
    fn two_point_sphere_moment() {
        let m = EquilibriumModel::power_law(1, 1.0, 1.5, 0.5).unwrap();
        let c = m.normalization();
        let jm = jm_limit(&m).unwrap()[0];
        assert!((jm - c * c * (1.5f64.powi(2) - 0.25)).abs() < 1e-14);
        assert_eq!(jm_limit(&classical()).unwrap()[0], 0.0);
    }

    #[test]
    fn symmetric_model_has_no_log_ratio() {
        let m = EquilibriumModel::power_law(1, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(check_log_asymptote(&m, &[1e-3]), Err(LimitError::ZeroJm));
    }
}
