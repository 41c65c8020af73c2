//! Heavy-tailed equilibrium families.
//!
//! An equilibrium is `F = M²` with `C₁⟨v⟩^{-γ} ≤ M ≤ C₂⟨v⟩^{-γ}` and
//! `γ = β/2`. Each model evaluates `M`, the drift `b = 2∇M/M`, the potential
//! `W = ΔM/M` and the limit profile `m(s) = lim λ^{-γ} M(s/λ)`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("gamma = {gamma} must exceed d/2 = {half_d}")]
    GammaOutOfRange { gamma: f64, half_d: f64 },
    #[error("normalization quadrature failed: {0}")]
    NormalizationFailure(String),
    #[error("amplitude {0} would make M non-positive (must be < 2)")]
    PositivityViolation(f64),
    #[error("limit profile is singular at s = 0")]
    OriginEvaluation,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

type ScalarField = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User-supplied equilibrium shape (normalized at construction).
#[derive(Clone)]
pub struct CustomShape {
    pub shape: ScalarField,
    pub limit: ScalarField,
    pub bounds: (f64, f64),
    pub symmetric: bool,
}

impl fmt::Debug for CustomShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomShape")
            .field("bounds", &self.bounds)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `C·A(v₁)⟨v⟩^{-γ}` with `A` blending `minus` into `plus` across `v₁ = 0`.
    Classical { plus: f64, minus: f64 },
    /// `C(1 + 2v₁² + |v'|²)⟨v⟩^{-γ-2}`.
    Anisotropic,
    /// `C(2 + a cos⟨v⟩/⟨v⟩^σ)⟨v⟩^{-γ}`.
    Oscillatory { sigma: f64, amplitude: f64 },
    Custom(CustomShape),
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Classical { .. } => "classical",
            Family::Anisotropic => "anisotropic",
            Family::Oscillatory { .. } => "oscillatory",
            Family::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumModel {
    d: usize,
    beta: f64,
    family: Family,
    norm: f64,
    c1: f64,
    c2: f64,
    symmetric: bool,
}

/// `⟨v⟩² = 1 + |v|²`.
#[inline]
pub fn bracket_sq(v: &[f64]) -> f64 {
    1.0 + v.iter().map(|x| x * x).sum::<f64>()
}

#[inline]
fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn check_gamma(d: usize, gamma: f64) -> Result<(), EquilibriumError> {
    if d == 0 {
        return Err(EquilibriumError::InvalidParameter("dimension must be at least 1".into()));
    }
    if !gamma.is_finite() || gamma <= d as f64 / 2.0 {
        return Err(EquilibriumError::GammaOutOfRange { gamma, half_d: d as f64 / 2.0 });
    }
    Ok(())
}

/// Smooth half-space amplitude `a₋ + (a₊ - a₋)(1 + tanh v₁)/2` and its first
/// two derivatives.
#[inline]
fn blend(plus: f64, minus: f64, x: f64) -> (f64, f64, f64) {
    let t = x.tanh();
    let sech2 = 1.0 - t * t;
    let half = 0.5 * (plus - minus);
    (minus + half * (1.0 + t), half * sech2, -2.0 * half * sech2 * t)
}

impl EquilibriumModel {
    /// Power-law equilibrium `C_γ⟨v⟩^{-γ}`, optionally with direction
    /// dependent amplitudes on the half-spaces `{v₁ > 0}` and `{v₁ < 0}`.
    pub fn power_law(d: usize, gamma: f64, plus: f64, minus: f64) -> Result<Self, EquilibriumError> {
        check_gamma(d, gamma)?;
        if !(plus > 0.0 && minus > 0.0 && plus.is_finite() && minus.is_finite()) {
            return Err(EquilibriumError::InvalidParameter(format!(
                "asymmetry factors must be positive, got {plus} and {minus}"
            )));
        }
        let family = Family::Classical { plus, minus };
        Self::finish(d, gamma, family, (plus.min(minus), plus.max(minus)), plus == minus)
    }

    /// Non-radial equilibrium `C(1 + 2v₁² + |v'|²)⟨v⟩^{-γ-2}`.
    pub fn anisotropic(d: usize, gamma: f64) -> Result<Self, EquilibriumError> {
        check_gamma(d, gamma)?;
        Self::finish(d, gamma, Family::Anisotropic, (1.0, 2.0), true)
    }

    /// Oscillating equilibrium `C(2 + a cos⟨v⟩/⟨v⟩^σ)⟨v⟩^{-γ}`.
    pub fn oscillatory(d: usize, gamma: f64, sigma: f64, amplitude: f64) -> Result<Self, EquilibriumError> {
        check_gamma(d, gamma)?;
        if !(amplitude < 2.0) {
            return Err(EquilibriumError::PositivityViolation(amplitude));
        }
        if !(sigma >= 0.0) || !amplitude.is_finite() {
            return Err(EquilibriumError::InvalidParameter(format!(
                "sigma = {sigma} must be non-negative and amplitude finite"
            )));
        }
        let bounds = oscillation_bounds(sigma, amplitude);
        Self::finish(d, gamma, Family::Oscillatory { sigma, amplitude }, bounds, true)
    }

    /// User-supplied shape; `bounds` are the constants of `⟨v⟩^γ shape(v)`.
    pub fn custom(d: usize, gamma: f64, shape: CustomShape) -> Result<Self, EquilibriumError> {
        check_gamma(d, gamma)?;
        let bounds = shape.bounds;
        let sym = shape.symmetric;
        Self::finish(d, gamma, Family::Custom(shape), bounds, sym)
    }

    fn finish(
        d: usize,
        gamma: f64,
        family: Family,
        shape_bounds: (f64, f64),
        symmetric: bool,
    ) -> Result<Self, EquilibriumError> {
        let mut model = EquilibriumModel { d, beta: 2.0 * gamma, family, norm: 1.0, c1: 0.0, c2: 0.0, symmetric };
        let mass = quad::integrate_rd(d, |v| model.shape(v).powi(2), 1e-12)
            .map_err(|e| EquilibriumError::NormalizationFailure(e.to_string()))?;
        if !(mass.is_finite() && mass > 0.0) {
            return Err(EquilibriumError::NormalizationFailure(format!("mass integral {mass}")));
        }
        model.norm = mass.sqrt().recip();
        model.c1 = model.norm * shape_bounds.0;
        model.c2 = model.norm * shape_bounds.1;
        Ok(model)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        0.5 * self.beta
    }

    /// Anomalous exponent `(β - d + 2)/3`.
    pub fn alpha(&self) -> f64 {
        (self.beta - self.d as f64 + 2.0) / 3.0
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Normalization constant `C` with `∫ M² = 1`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Stored constants `(C₁, C₂)` of the two-sided power-law bound.
    pub fn bounds(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Whether `W` has a closed form for this family.
    pub fn has_analytic_w(&self) -> bool {
        matches!(self.family, Family::Classical { .. } | Family::Anisotropic)
    }

    fn shape(&self, v: &[f64]) -> f64 {
        let g = self.gamma();
        let b2 = bracket_sq(v);
        match &self.family {
            Family::Classical { plus, minus } => blend(*plus, *minus, v[0]).0 * b2.powf(-0.5 * g),
            Family::Anisotropic => (b2 + v[0] * v[0]) * b2.powf(-0.5 * g - 1.0),
            Family::Oscillatory { sigma, amplitude } => {
                let t = b2.sqrt();
                (2.0 + amplitude * t.cos() * t.powf(-sigma)) * t.powf(-g)
            }
            Family::Custom(c) => (c.shape)(v),
        }
    }

    /// `M(v)`.
    pub fn m(&self, v: &[f64]) -> f64 {
        self.norm * self.shape(v)
    }

    /// `F(v) = M(v)²`.
    pub fn f(&self, v: &[f64]) -> f64 {
        self.m(v).powi(2)
    }

    /// Drift `b(v) = 2∇M(v)/M(v)`.
    pub fn drift(&self, v: &[f64]) -> Vec<f64> {
        let g = self.gamma();
        let b2 = bracket_sq(v);
        match &self.family {
            Family::Classical { plus, minus } => {
                let (a, da, _) = blend(*plus, *minus, v[0]);
                let mut out: Vec<f64> = v.iter().map(|x| -2.0 * g * x / b2).collect();
                out[0] += 2.0 * da / a;
                out
            }
            Family::Anisotropic => {
                let p = b2 + v[0] * v[0];
                let k = g + 2.0;
                let mut out: Vec<f64> = v.iter().map(|x| 2.0 * (2.0 * x / p - k * x / b2)).collect();
                out[0] += 4.0 * v[0] / p;
                out
            }
            Family::Oscillatory { sigma, amplitude } => {
                let t = b2.sqrt();
                let ts = t.powf(-sigma);
                let num = -amplitude * t.sin() * ts - amplitude * sigma * t.cos() * ts / t;
                let dlog = num / (2.0 + amplitude * t.cos() * ts) - g / t;
                v.iter().map(|x| 2.0 * dlog * x / t).collect()
            }
            Family::Custom(_) => {
                let m0 = self.shape(v);
                (0..self.d)
                    .map(|k| {
                        let h = 1e-5 * b2.sqrt();
                        let mut p = v.to_vec();
                        let mut q = v.to_vec();
                        p[k] += h;
                        q[k] -= h;
                        (self.shape(&p) - self.shape(&q)) / (h * m0)
                    })
                    .collect()
            }
        }
    }

    /// Fast one-dimensional drift, used by the particle integrator.
    #[inline]
    pub fn drift_1d(&self, v: f64) -> f64 {
        match &self.family {
            Family::Classical { plus, minus } if plus == minus => -2.0 * self.gamma() * v / (1.0 + v * v),
            Family::Classical { plus, minus } => {
                let (a, da, _) = blend(*plus, *minus, v);
                2.0 * (da / a - self.gamma() * v / (1.0 + v * v))
            }
            _ => self.drift(&[v])[0],
        }
    }

    /// Potential `W = ΔM/M`: closed form when available, otherwise
    /// [`Self::w_fd`].
    pub fn w(&self, v: &[f64]) -> f64 {
        let g = self.gamma();
        let d = self.d as f64;
        let b2 = bracket_sq(v);
        let r2 = norm_sq(v);
        let radial = |k: f64| (k * (k - d + 2.0) * r2 - k * d) / (b2 * b2);
        match &self.family {
            Family::Classical { plus, minus } => {
                let (a, da, dda) = blend(*plus, *minus, v[0]);
                dda / a - 2.0 * g * (da / a) * v[0] / b2 + radial(g)
            }
            Family::Anisotropic => {
                let k = g + 2.0;
                let p = b2 + v[0] * v[0];
                (2.0 * d + 2.0) / p - 2.0 * k * (2.0 * r2 + 2.0 * v[0] * v[0]) / (p * b2) + radial(k)
            }
            _ => self.w_fd(v),
        }
    }

    /// Finite-difference potential, available for every family: fourth-order
    /// central differences with step `10⁻³⟨v⟩^{1/2}`.
    pub fn w_fd(&self, v: &[f64]) -> f64 {
        let h = 1e-3 * bracket_sq(v).powf(0.25);
        let m0 = self.shape(v);
        let mut lap = 0.0;
        let mut p = v.to_vec();
        let mut at = |k: usize, off: f64| {
            p[k] = v[k] + off;
            let y = self.shape(&p);
            p[k] = v[k];
            y
        };
        for k in 0..self.d {
            let (a1, b1) = (at(k, h), at(k, -h));
            let (a2, b2) = (at(k, 2.0 * h), at(k, -2.0 * h));
            lap += (-a2 + 16.0 * a1 - 30.0 * m0 + 16.0 * b1 - b2) / (12.0 * h * h);
        }
        lap / m0
    }

    /// Limit profile `m(s) = lim_{λ→0} λ^{-γ} M(s/λ)`.
    pub fn limit_profile(&self, s: &[f64]) -> Result<f64, EquilibriumError> {
        let r2 = norm_sq(s);
        if r2 == 0.0 {
            return Err(EquilibriumError::OriginEvaluation);
        }
        let g = self.gamma();
        let amp = match &self.family {
            Family::Classical { plus, minus } => {
                if s[0] > 0.0 {
                    *plus
                } else if s[0] < 0.0 {
                    *minus
                } else {
                    0.5 * (plus + minus)
                }
            }
            Family::Anisotropic => (r2 + s[0] * s[0]) / r2,
            Family::Oscillatory { .. } => 2.0,
            Family::Custom(c) => return Ok(self.norm * (c.limit)(s)),
        };
        Ok(self.norm * amp * r2.powf(-0.5 * g))
    }

    /// Rescaled equilibrium `m_η(s) = η^{-γ/3} M(η^{-1/3} s)`.
    pub fn rescaled(&self, s: &[f64], eta: f64) -> f64 {
        let k = eta.powf(-1.0 / 3.0);
        let v: Vec<f64> = s.iter().map(|x| k * x).collect();
        eta.powf(-self.gamma() / 3.0) * self.m(&v)
    }
}

/// Infimum and supremum of `2 + a cos t / t^σ` over `t ≥ 1`.
fn oscillation_bounds(sigma: f64, amplitude: f64) -> (f64, f64) {
    let g = |t: f64| 2.0 + amplitude * t.cos() * t.powf(-sigma);
    let mut lo: f64 = 2.0;
    let mut hi: f64 = 2.0;
    // the oscillation amplitude is monotone in t, so its extremes sit in the
    // first few periods unless σ = 0
    let t_end = if sigma > 0.0 { 200.0 } else { 1.0 + 2.0 * std::f64::consts::PI };
    let n = 400_000;
    for k in 0..=n {
        let t = 1.0 + (t_end - 1.0) * k as f64 / n as f64;
        let y = g(t);
        lo = lo.min(y);
        hi = hi.max(y);
    }
    if sigma == 0.0 {
        lo = lo.min(2.0 - amplitude.abs());
        hi = hi.max(2.0 + amplitude.abs());
    }
    (lo, hi)
}

/// Scan configuration for [`check_assumptions`].
#[derive(Debug, Clone)]
pub struct ScanSpec {
    /// Radius of the scanned ball.
    pub radius: f64,
    /// Nodes per ray.
    pub points: usize,
    /// Decreasing list of η values for the rescaled-profile samples.
    pub etas: Vec<f64>,
    /// Annulus `r ≤ |s| ≤ R` on which `m_η - m` is sampled.
    pub annulus: (f64, f64),
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec { radius: 1e3, points: 20_001, etas: vec![1e-2, 1e-3, 1e-4, 1e-5], annulus: (0.5, 5.0) }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct A1Report {
    pub c1: f64,
    pub c2: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct A2Report {
    pub integral: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct A3Report {
    pub samples: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct A5Report {
    pub sigma: f64,
    pub pass: bool,
}

/// Outcome of the numerical assumption checks.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AssumptionReport {
    pub a1: A1Report,
    pub a2: A2Report,
    pub a3: A3Report,
    pub a5: A5Report,
    pub beta: f64,
    pub d: usize,
    pub pass: bool,
    pub notes: Vec<String>,
}

/// Directions (angles from the v₁ axis) scanned in dimension `d ≥ 2`.
fn scan_angles(d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![0.0, std::f64::consts::PI];
    }
    let k = 16;
    (0..k).map(|i| (i as f64 + 0.5) * std::f64::consts::PI / k as f64).collect()
}

fn ray_point(d: usize, r: f64, theta: f64) -> Vec<f64> {
    let mut p = vec![0.0; d];
    p[0] = r * theta.cos();
    if d > 1 {
        p[1] = r * theta.sin();
    }
    p
}

/// Numerical check of the structural assumptions on an equilibrium.
pub fn check_assumptions(model: &EquilibriumModel, scan: &ScanSpec) -> AssumptionReport {
    let d = model.d();
    let g = model.gamma();
    let mut notes = Vec::new();
    let in_range = model.beta() > d as f64 && model.beta() < d as f64 + 4.0;
    if !in_range {
        notes.push(format!("beta = {} outside ({}, {})", model.beta(), d, d + 4));
    }
    let angles = scan_angles(d);

    // A1: extremes of ⟨v⟩^γ M on a sinh-spaced scan
    let u_max = scan.radius.asinh();
    let n = scan.points.max(3);
    let (mut c1, mut c2) = (f64::INFINITY, 0.0f64);
    for &th in &angles {
        for k in 0..n {
            let r = (u_max * k as f64 / (n - 1) as f64).sinh();
            let p = ray_point(d, r, th);
            let y = bracket_sq(&p).powf(0.5 * g) * model.m(&p);
            c1 = c1.min(y);
            c2 = c2.max(y);
        }
    }
    let a1 = A1Report { c1, c2, pass: c1 > 0.0 && c2.is_finite() && in_range };

    // A2: ∫⟨v⟩²|∇(M/⟨v⟩²)|² = ∫ M²|b/2 - 2v/⟨v⟩²|²/⟨v⟩² up to the scan radius
    let a2_density = |v: &[f64]| {
        let b2 = bracket_sq(v);
        let b = model.drift(v);
        let s: f64 = v.iter().zip(&b).map(|(x, bx)| (0.5 * bx - 2.0 * x / b2).powi(2)).sum();
        model.f(v) * s / b2
    };
    let bulk = quad::integrate_ball(d, a2_density, scan.radius, 1e-12);
    let shell_at = |r: f64| quad::shell(d, &a2_density, r, 1e-15);
    let (fa, fb) = (shell_at(0.5 * scan.radius), shell_at(scan.radius));
    let tail = if fb == 0.0 {
        0.0
    } else if fa > 0.0 && fb > 0.0 {
        let p = (fa / fb).ln() / std::f64::consts::LN_2;
        if p > 1.0 {
            fb * scan.radius / (p - 1.0)
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };
    if !(tail < 0.01 * bulk) {
        notes.push(format!("A2 tail estimate {tail:e} not below 1% of bulk {bulk:e}"));
    }
    let a2 = A2Report { integral: bulk + if tail.is_finite() { tail } else { 0.0 }, pass: bulk.is_finite() && tail < 0.01 * bulk };

    // A3: sup over an annulus of |m_η - m| for decreasing η
    let (r_in, r_out) = scan.annulus;
    let mut samples = Vec::with_capacity(scan.etas.len());
    for &eta in &scan.etas {
        let mut worst = 0.0f64;
        for &th in &angles {
            for k in 0..200 {
                let r = r_in + (r_out - r_in) * k as f64 / 199.0;
                let s = ray_point(d, r, th);
                let m = model.limit_profile(&s).unwrap_or(f64::NAN);
                worst = worst.max((model.rescaled(&s, eta) - m).abs());
            }
        }
        samples.push(worst);
    }
    let decreasing = samples.windows(2).all(|w| w[1] < w[0]);
    let a3_pass = samples.len() >= 2 && decreasing && samples.iter().all(|x| x.is_finite());
    if !a3_pass {
        notes.push("rescaled profiles do not approach the limit profile monotonically".into());
    }
    let a3 = A3Report { samples, pass: a3_pass };

    // A5: decay exponent of the envelope of |W| on [R/10, R]
    let sigma = potential_decay_exponent(model, scan.radius, &angles);
    let a5 = A5Report { sigma, pass: sigma >= 2.0 - 0.05 };
    if !a5.pass {
        notes.push(format!("W decays like <v>^-{sigma:.3}, slower than <v>^-2"));
    }

    let pass = a1.pass && a2.pass && a3.pass && a5.pass && in_range;
    AssumptionReport { a1, a2, a3, a5, beta: model.beta(), d, pass, notes }
}

/// Least-squares slope of `log max|W|` over shells `[r, r + 2π]` against
/// `log r`, for ten radii log-spaced in `[R/10, R]`; returns minus the slope.
pub fn potential_decay_exponent(model: &EquilibriumModel, radius: f64, angles: &[f64]) -> f64 {
    let d = model.d();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..10 {
        let r = radius / 10.0 * 10f64.powf(k as f64 / 9.0);
        let mut env = 0.0f64;
        for &th in angles {
            for j in 0..=126 {
                let rr = r + 0.05 * j as f64;
                env = env.max(model.w(&ray_point(d, rr, th)).abs());
            }
        }
        xs.push(r.ln());
        ys.push(env.ln());
    }
    -crate::stats::linear_fit(&xs, &ys).slope
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classical_at_origin_is_normalization() {
        let m = EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap();
        assert_eq!(m.m(&[0.0]), m.normalization());
    }

    #[test]
    fn classical_normalization_matches_closed_form() {
        // ∫(1+v²)^{-2} dv = π/2 on ℝ
        let m = EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap();
        let c = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m.normalization() - c).abs() < 1e-10 * c);
    }

    #[test]
    fn gamma_below_half_dimension_rejected() {
        assert!(matches!(
            EquilibriumModel::power_law(1, 0.4, 1.0, 1.0),
            Err(EquilibriumError::GammaOutOfRange { .. })
        ));
    }

    #[test]
    fn potential_in_five_dimensions() {
        let m = EquilibriumModel::power_law(5, 3.0, 1.0, 1.0).unwrap();
        for v in [[0.0, 0.0, 0.0, 0.0, 0.0], [1.0, -2.0, 0.5, 0.0, 3.0]] {
            let expect = -15.0 / bracket_sq(&v).powi(2);
            assert!((m.w(&v) - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn classical_potential_values() {
        let m = EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap();
        assert!((m.w(&[0.0]) + 2.0).abs() < 1e-15);
        let v = 1e4;
        assert!((m.w(&[v]) * v * v - 6.0).abs() < 1e-6);
    }

    #[test]
    fn oscillatory_amplitude_limits() {
        assert!(matches!(
            EquilibriumModel::oscillatory(1, 2.0, 3.0, 2.5),
            Err(EquilibriumError::PositivityViolation(_))
        ));
    }

    #[test]
    fn limit_profile_closed_form() {
        let m = EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap();
        let c = m.normalization();
        assert!((m.limit_profile(&[2.0]).unwrap() - c / 4.0).abs() < 1e-15);
        assert_eq!(m.limit_profile(&[0.0]), Err(EquilibriumError::OriginEvaluation));
    }

    #[test]
    fn analytic_drift_matches_differences() {
        let models = [
            EquilibriumModel::power_law(2, 1.7, 1.3, 0.8).unwrap(),
            EquilibriumModel::anisotropic(2, 1.5).unwrap(),
            EquilibriumModel::oscillatory(2, 2.0, 3.0, 1.0).unwrap(),
        ];
        for m in &models {
            for v in [[0.3, -0.7], [-2.0, 1.5], [5.0, 0.1]] {
                let b = m.drift(&v);
                for k in 0..2 {
                    let h = 1e-6;
                    let mut p = v;
                    let mut q = v;
                    p[k] += h;
                    q[k] -= h;
                    let fd = 2.0 * (m.m(&p) - m.m(&q)) / (2.0 * h * m.m(&v));
                    assert!((fd - b[k]).abs() < 1e-7, "{} {:?} {k}: {fd} vs {}", m.family().tag(), v, b[k]);
                }
            }
        }
    }

    #[test]
    fn analytic_potential_matches_differences() {
        let models = [
            EquilibriumModel::power_law(1, 2.0, 1.5, 0.7).unwrap(),
            EquilibriumModel::power_law(3, 2.2, 1.0, 1.0).unwrap(),
            EquilibriumModel::anisotropic(2, 1.5).unwrap(),
        ];
        for m in &models {
            for k in 0..20 {
                let mut v = vec![0.0; m.d()];
                for (j, x) in v.iter_mut().enumerate() {
                    *x = ((k * 7 + j * 3) as f64 * 0.37).sin() * (1.0 + k as f64 * 0.5);
                }
                let scale = 1.0 / bracket_sq(&v);
                assert!((m.w(&v) - m.w_fd(&v)).abs() < 1e-4 * scale, "{} at {v:?}: {} vs {}", m.family().tag(), m.w(&v), m.w_fd(&v));
            }
        }
    }
}
