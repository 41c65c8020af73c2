//! Eigen-couple `(μ(η), M_η)` of `L_η` through the penalized equation
//!
//! ```text
//! (L_η - λη^{2/3}) ψ + bΦ = 0,    ⟨ψ, Φ⟩_w - b = 1,
//! ```
//!
//! whose penalized term `b(λ, η)` vanishes exactly at the eigenvalue
//! `μ = λη^{2/3}`. The system is solved for the correction `N = ψ - M`
//! with a bordered banded factorization.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::banded::{solve_bordered, BandError};
use crate::discretization::{assemble_l_eta, assemble_phi, DiscreteOperator};
use crate::stats::linear_fit;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("bordered system is singular: {0}")]
    SingularBorderedSystem(String),
    #[error("secant iteration did not converge in {iterations} steps (|B| = {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("lambda = {re} + {im}i left the disk |lambda| <= {radius}")]
    LambdaOutOfDisk { re: f64, im: f64, radius: f64 },
    #[error("fit is degenerate: {0}")]
    FitDegenerate(String),
    #[error("dense oracle failed: {0}")]
    OracleFailure(String),
}

impl From<BandError> for EigenError {
    fn from(e: BandError) -> Self {
        EigenError::SingularBorderedSystem(e.to_string())
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Solution of the penalized equation at fixed `(λ, η)`.
#[derive(Debug, Clone)]
pub struct PenalizedSolution {
    pub lambda: Complex64,
    pub eta: f64,
    /// `M_{λ,η}`.
    pub psi: Vec<Complex64>,
    /// `N_{λ,η} = M_{λ,η} - M`.
    pub correction: Vec<Complex64>,
    /// `b(λ, η) = ⟨N_{λ,η}, Φ⟩_w`.
    pub b: Complex64,
    /// Relative residual of the bordered system.
    pub residual: f64,
}

/// Penalized equation solver bound to one `L_η`.
#[derive(Debug, Clone)]
pub struct PenalizedProblem {
    op: DiscreteOperator,
    phi: Vec<f64>,
    /// Border `WΦ`.
    border: Vec<Complex64>,
}

impl PenalizedProblem {
    pub fn new(op: DiscreteOperator) -> Self {
        let phi = assemble_phi(&op);
        let border = phi.iter().zip(op.weights()).map(|(p, w)| c(p * w, 0.0)).collect();
        PenalizedProblem { op, phi, border }
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.op
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn eta(&self) -> f64 {
        self.op.eta()
    }

    /// Solves for `(M_{λ,η}, b(λ,η))`.
    pub fn solve(&self, lambda: Complex64) -> Result<PenalizedSolution, EigenError> {
        let op = &self.op;
        let eta = op.eta();
        let shift = lambda * eta.powf(2.0 / 3.0);
        let m = op.m();
        let w = op.weights();
        let v1 = op.v1();
        let rhs: Vec<Complex64> = (0..op.len()).map(|p| -(c(0.0, eta * v1[p]) - shift) * (w[p] * m[p])).collect();
        let lu = op.weighted_band(shift).factor()?;
        let (n, b) = solve_bordered(&lu, &self.border, &self.border, c(-1.0, 0.0), &rhs, c(0.0, 0.0))?;
        let psi: Vec<Complex64> = n.iter().zip(m).map(|(x, y)| x + y).collect();
        // residual of W(L - s)N + bWΦ = f and of the border row
        let kn = op.stiffness_apply(&n);
        let mut res = 0.0f64;
        let mut scale = 0.0f64;
        for p in 0..op.len() {
            let r = kn[p] + w[p] * (c(0.0, eta * v1[p]) - shift) * n[p] + self.border[p] * b - rhs[p];
            res = res.max(r.norm());
            scale = scale.max(rhs[p].norm()).max(kn[p].norm());
        }
        let row: Complex64 = self.border.iter().zip(&n).map(|(a, x)| a * x).sum::<Complex64>() - b;
        res = res.max(row.norm());
        let residual = if scale > 0.0 { res / scale } else { res };
        Ok(PenalizedSolution { lambda, eta, psi, correction: n, b, residual })
    }
}

/// `B(λ, η)` by the penalized-term definition and by the integral identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BValue {
    /// `η^{-2/3} b(λ, η)` (or the λ-linearization at `η = 0`).
    pub b: Complex64,
    /// `Σ w (λ - iη^{1/3}v₁) M_{λ,η} M`.
    pub b_integral: Complex64,
    /// Set when `η = 0` and the linearized value `λ∫M²` is returned.
    pub eta_zero: bool,
}

pub fn compute_b(problem: &PenalizedProblem, sol: &PenalizedSolution) -> BValue {
    let op = problem.operator();
    let eta = sol.eta;
    let (m, w, v1) = (op.m(), op.weights(), op.v1());
    let b_integral: Complex64 = (0..op.len())
        .map(|p| (sol.lambda - c(0.0, eta.cbrt() * v1[p])) * sol.psi[p] * (w[p] * m[p]))
        .sum();
    if eta == 0.0 {
        let mass: f64 = m.iter().zip(w).map(|(x, y)| y * x * x).sum();
        return BValue { b: sol.lambda * mass, b_integral, eta_zero: true };
    }
    BValue { b: sol.b * eta.powf(-2.0 / 3.0), b_integral, eta_zero: false }
}

/// Controls for the secant search on `λ ↦ B(λ, η)`.
#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub disk_radius: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { tol: 1e-12, max_iter: 50, disk_radius: 0.5 }
    }
}

/// Accepted eigen-couple with diagnostics.
#[derive(Debug, Clone)]
pub struct EigenResult {
    pub eta: f64,
    /// Rayleigh quotient of the eigenvector.
    pub mu: Complex64,
    /// Eigenvalue `λ̃η^{2/3}` at the secant root, before the Rayleigh polish.
    pub mu_secant: Complex64,
    pub lambda: Complex64,
    /// `M_η`, normalized by `⟨M_η, Φ⟩_w - b = 1`.
    pub eigvec: Vec<Complex64>,
    /// `Σ_faces coef M_a M_b |Δ(M_η/M)|²`.
    pub dirichlet: f64,
    /// `‖M_η‖²_w`.
    pub norm_sq: f64,
    /// `Σ w v₁ |M_η|²`.
    pub flux: f64,
    /// `‖M_η - M‖_w`.
    pub distance: f64,
    pub iterations: usize,
    /// `|B(λ̃, η)|` at the root.
    pub b_residual: f64,
    /// `‖L_η M_η - μ M_η‖_w / ‖M_η‖_w`.
    pub residual: f64,
}

/// Eigenvalue search by complex secant iteration on `B(·, η)`.
pub fn find_lambda(problem: &PenalizedProblem, opts: &SearchOptions) -> Result<EigenResult, EigenError> {
    let s0 = problem.solve(c(0.0, 0.0))?;
    let b0 = compute_b(problem, &s0).b;
    let op = problem.operator();
    let overlap: Complex64 = s0.psi.iter().zip(op.m()).zip(op.weights()).map(|((x, y), w)| x * (y * w)).sum();
    let mut l_prev = -b0 / overlap;
    let mut l_cur = l_prev * 1.001;
    let mut f_prev = compute_b(problem, &problem.solve(l_prev)?).b;
    let mut sol = problem.solve(l_cur)?;
    let mut f_cur = compute_b(problem, &sol).b;
    let mut iterations = 2;
    while f_cur.norm() > opts.tol {
        if iterations >= opts.max_iter || !f_cur.is_finite() {
            return Err(EigenError::NewtonDiverged { iterations, residual: f_cur.norm() });
        }
        let denom = f_cur - f_prev;
        if denom.norm() == 0.0 {
            break;
        }
        let next = l_cur - f_cur * (l_cur - l_prev) / denom;
        if next.norm() > opts.disk_radius || !next.is_finite() {
            return Err(EigenError::LambdaOutOfDisk { re: next.re, im: next.im, radius: opts.disk_radius });
        }
        l_prev = l_cur;
        f_prev = f_cur;
        l_cur = next;
        sol = problem.solve(l_cur)?;
        f_cur = compute_b(problem, &sol).b;
        iterations += 1;
        if (l_cur - l_prev).norm() <= 4.0 * f64::EPSILON * l_cur.norm() {
            break;
        }
    }
    if l_cur.norm() > opts.disk_radius {
        return Err(EigenError::LambdaOutOfDisk { re: l_cur.re, im: l_cur.im, radius: opts.disk_radius });
    }
    Ok(finish(problem, sol, f_cur.norm(), iterations))
}

fn finish(problem: &PenalizedProblem, sol: PenalizedSolution, b_residual: f64, iterations: usize) -> EigenResult {
    let op = problem.operator();
    let eta = sol.eta;
    let dirichlet = op.dirichlet(&sol.correction);
    let norm_sq = op.norm_sq(&sol.psi);
    let flux: f64 = sol.psi.iter().zip(op.weights()).zip(op.v1()).map(|((x, w), v)| w * v * x.norm_sqr()).sum();
    let mu = c(dirichlet, eta * flux) / norm_sq;
    let lpsi = op.apply(&sol.psi);
    let r: Vec<Complex64> = lpsi.iter().zip(&sol.psi).map(|(a, x)| a - mu * x).collect();
    let residual = (op.norm_sq(&r) / norm_sq).sqrt();
    let distance = op.norm_sq(&sol.correction).sqrt();
    EigenResult {
        eta,
        mu,
        mu_secant: sol.lambda * eta.powf(2.0 / 3.0),
        lambda: sol.lambda,
        eigvec: sol.psi,
        dirichlet,
        norm_sq,
        flux,
        distance,
        iterations,
        b_residual,
        residual,
    }
}

/// Convenience wrapper: eigen-couple of `L_η` built from an assembled `Q`.
pub fn eigenpair(q: &DiscreteOperator, eta: f64, opts: &SearchOptions) -> Result<EigenResult, EigenError> {
    find_lambda(&PenalizedProblem::new(assemble_l_eta(q, eta)), opts)
}

/// Dense reference eigenpair: minimal-modulus eigenvalue of the symmetrized
/// `W^{1/2} L_η W^{-1/2}` from a complex Schur form, its eigenvector by
/// inverse iteration, and a bilinear Rayleigh refinement.
///
/// The eigenvector is scaled so that `⟨ψ, M⟩_w = 1`.
pub fn oracle_eigenpair(op: &DiscreteOperator) -> Result<(Complex64, Vec<Complex64>), EigenError> {
    let n = op.len();
    if n > 1024 {
        return Err(EigenError::OracleFailure(format!("{n} nodes exceed the dense limit of 1024")));
    }
    let w = op.weights();
    let v1 = op.v1();
    let k = op.stiffness_dense();
    let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let mut z = c(k[(i, j)] / (sq[i] * sq[j]), 0.0);
        if i == j {
            z += c(0.0, op.eta() * v1[i]);
        }
        z
    });
    let eig = s
        .clone()
        .schur()
        .eigenvalues()
        .ok_or_else(|| EigenError::OracleFailure("complex Schur form did not converge".into()))?;
    let mut mu = eig.iter().copied().min_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap();

    // inverse iteration with a slightly perturbed shift
    let shift = mu + c(1e-10, 1e-10) * (1.0 + mu.norm());
    let lu = (&s - DMatrix::from_diagonal_element(n, n, shift)).lu();
    let mut x = DVector::from_iterator(n, op.m().iter().zip(&sq).map(|(m, r)| c(m * r, 0.0)));
    for _ in 0..3 {
        x = lu.solve(&x).ok_or_else(|| EigenError::OracleFailure("inverse iteration breakdown".into()))?;
        let nrm = x.norm();
        x /= c(nrm, 0.0);
    }
    let psi: Vec<Complex64> = x.iter().zip(&sq).map(|(y, r)| y / r).collect();

    // bilinear quotient ψᵀ(K + iηWv)ψ / ψᵀWψ, with K-part on the face jumps
    let gauge = {
        let num: Complex64 = psi.iter().zip(op.m()).zip(w).map(|((p, m), wi)| p * (m * wi)).sum();
        num
    };
    let scaled: Vec<Complex64> = psi.iter().map(|p| p / gauge).collect();
    let m = op.m();
    let mut kpart = c(0.0, 0.0);
    for f in op.faces() {
        let jump = (scaled[f.a] / m[f.a] - 1.0) - (scaled[f.b] / m[f.b] - 1.0);
        kpart += jump * jump * (f.coef * m[f.a] * m[f.b]);
    }
    let drift: Complex64 = (0..n).map(|p| scaled[p] * scaled[p] * (w[p] * v1[p])).sum();
    let mass: Complex64 = (0..n).map(|p| scaled[p] * scaled[p] * w[p]).sum();
    let refined = (kpart + c(0.0, op.eta()) * drift) / mass;
    if (refined - mu).norm() <= 1e-6 * mu.norm().max(1e-300) || mu.norm() == 0.0 {
        mu = refined;
    }
    Ok((mu, scaled))
}

/// One row of an η sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub eta: f64,
    pub mu: Complex64,
    pub j1: f64,
    pub dirichlet: f64,
    pub norm_meta: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Least-squares estimate of `Re μ(η) ≈ κ η^α`.
#[derive(Debug, Clone, Serialize)]
pub struct DiffusionFit {
    pub etas: Vec<f64>,
    pub mu_re: Vec<f64>,
    pub mu_im: Vec<f64>,
    pub drift: Vec<f64>,
    pub alpha_hat: f64,
    pub kappa_hat: f64,
    pub fit_residual: f64,
    pub alpha_full: f64,
    pub kappa_full: f64,
    pub alpha_lower: f64,
    pub kappa_lower: f64,
    /// Whether the lower-half fit was selected.
    pub lower_half: bool,
    pub alpha_ref: f64,
}

/// Relative slope difference above which the lower-half fit is used.
pub const LOWER_HALF_SWITCH: f64 = 1e-3;

/// Fits `log Re μ` against `log η`.
pub fn fit_exponent(etas: &[f64], mus: &[Complex64], drift: &[f64], alpha_ref: f64) -> Result<DiffusionFit, EigenError> {
    if etas.len() != mus.len() || etas.len() != drift.len() {
        return Err(EigenError::FitDegenerate("length mismatch".into()));
    }
    if etas.len() < 5 {
        return Err(EigenError::FitDegenerate(format!("{} points, need at least 5", etas.len())));
    }
    let lo = etas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = etas.iter().copied().fold(0.0, f64::max);
    if !(hi / lo >= 10.0) {
        return Err(EigenError::FitDegenerate(format!("eta range {lo:e}..{hi:e} spans less than a decade")));
    }
    if mus.iter().any(|m| !(m.re > 0.0)) {
        return Err(EigenError::FitDegenerate("non-positive Re mu".into()));
    }
    let mut idx: Vec<usize> = (0..etas.len()).collect();
    idx.sort_by(|a, b| etas[*a].total_cmp(&etas[*b]));
    let xs: Vec<f64> = idx.iter().map(|&i| etas[i].ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| mus[i].re.ln()).collect();
    let full = linear_fit(&xs, &ys);
    let k = etas.len().div_ceil(2) + 1;
    let lower = linear_fit(&xs[..k], &ys[..k]);
    let use_lower = (lower.slope - full.slope).abs() > LOWER_HALF_SWITCH * full.slope.abs();
    let chosen = if use_lower { lower } else { full };
    Ok(DiffusionFit {
        etas: etas.to_vec(),
        mu_re: mus.iter().map(|m| m.re).collect(),
        mu_im: mus.iter().map(|m| m.im).collect(),
        drift: drift.to_vec(),
        alpha_hat: chosen.slope,
        kappa_hat: chosen.intercept.exp(),
        fit_residual: chosen.rms,
        alpha_full: full.slope,
        kappa_full: full.intercept.exp(),
        alpha_lower: lower.slope,
        kappa_lower: lower.intercept.exp(),
        lower_half: use_lower,
        alpha_ref,
    })
}

/// Default sweep `η = 10⁻²·2^{-k}`, `k = 0..7`.
pub fn default_etas() -> Vec<f64> {
    (0..8).map(|k| 1e-2 * 0.5f64.powi(k)).collect()
}

/// Solves every `η` in parallel; results keep the input order.
pub fn sweep(q: &DiscreteOperator, etas: &[f64], opts: &SearchOptions) -> Vec<Result<EigenResult, EigenError>> {
    etas.par_iter().map(|&eta| eigenpair(q, eta, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_q, VelocityGrid};
    use crate::equilibria::EquilibriumModel;

    fn q_classical(n: usize) -> DiscreteOperator {
        let model = EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap();
        assemble_q(&model, &VelocityGrid::new(1, 50.0, n, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn trivial_point() {
        let q = q_classical(128);
        let p = PenalizedProblem::new(assemble_l_eta(&q, 0.0));
        let s = p.solve(c(0.0, 0.0)).unwrap();
        assert_eq!(s.b, c(0.0, 0.0));
        assert!(s.correction.iter().all(|x| x.norm() == 0.0));
        let bv = compute_b(&p, &s);
        assert!(bv.eta_zero);
        assert_eq!(bv.b, c(0.0, 0.0));
    }

    #[test]
    fn two_routes_to_b_agree() {
        let q = q_classical(256);
        let p = PenalizedProblem::new(assemble_l_eta(&q, 1e-3));
        let s = p.solve(c(0.1, 0.1)).unwrap();
        let bv = compute_b(&p, &s);
        assert!((bv.b - bv.b_integral).norm() <= 1e-9 * bv.b.norm(), "{:?}", bv);
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn symmetric_model_has_real_eigenvalue() {
        let q = q_classical(256);
        let r = eigenpair(&q, 1e-3, &SearchOptions::default()).unwrap();
        assert!(r.mu.im.abs() <= 1e-12 * r.mu.re, "{:?}", r.mu);
        assert!(r.mu.re > 0.0);
    }

    #[test]
    fn oracle_at_zero_is_kernel() {
        let q = q_classical(128);
        let (mu, v) = oracle_eigenpair(&assemble_l_eta(&q, 0.0)).unwrap();
        assert!(mu.norm() < 1e-12);
        for (x, m) in v.iter().zip(q.m()) {
            assert!((x - m).norm() < 1e-8);
        }
    }

    #[test]
    fn fit_recovers_power_law() {
        let etas = default_etas();
        let mus: Vec<Complex64> = etas.iter().map(|e| c(0.7 * e.powf(5.0 / 3.0), 0.0)).collect();
        let f = fit_exponent(&etas, &mus, &vec![0.0; 8], 5.0 / 3.0).unwrap();
        assert!((f.alpha_hat - 5.0 / 3.0).abs() < 1e-12);
        assert!((f.kappa_hat - 0.7).abs() < 1e-12);
        assert!(matches!(
            fit_exponent(&etas[..1], &mus[..1], &[0.0], 5.0 / 3.0),
            Err(EigenError::FitDegenerate(_))
        ));
    }
}
