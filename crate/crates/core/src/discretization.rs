//! Stretched velocity grids and finite-volume discretizations of
//! `Q = -(1/M)∇·(M²∇(·/M))` and `L_η = Q + iηv₁`.
//!
//! Every inner product is the cell-weighted sum `⟨a, b⟩_w = Σ wᵢ aᵢ b̄ᵢ`.
//! Faces carry the flux `coef·M_a M_b (φ_a - φ_b)` with `φ = ψ/M`, so the
//! discrete kernel and self-adjointness hold exactly.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::banded::BandMatrix;
use crate::equilibria::{bracket_sq, EquilibriumModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizationError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension {0} is not supported (only d = 1 and d = 2)")]
    UnsupportedDimension(usize),
    #[error("sample is parallel to the equilibrium after projection")]
    DegenerateSample,
    #[error("model dimension {model} does not match grid dimension {grid}")]
    DimensionMismatch { model: usize, grid: usize },
}

/// Default lower bound on the grid extent.
pub const DEFAULT_R0: f64 = 50.0;
/// Default multiple of `η^{-1/3}` covered by the grid.
pub const DEFAULT_EXTENT_FACTOR: f64 = 8.0;

/// Extent policy `max(r0, c·η^{-1/3})`.
pub fn auto_extent(eta_min: f64, r0: f64, c: f64) -> f64 {
    r0.max(c * eta_min.powf(-1.0 / 3.0))
}

/// Tensor velocity grid with `v₁` as the fastest index.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    d: usize,
    n_axis: usize,
    stretch: f64,
    vmax: f64,
    axis: Vec<f64>,
    axis_weights: Vec<f64>,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl VelocityGrid {
    /// Nodes `sinh(a·u)/a` of a uniform `u` grid covering `[-vmax, vmax]`
    /// along each axis (`a = 0` gives a uniform grid).
    pub fn new(d: usize, vmax: f64, n: usize, stretch: f64) -> Result<Self, DiscretizationError> {
        if !(1..=2).contains(&d) {
            return Err(DiscretizationError::UnsupportedDimension(d));
        }
        if !vmax.is_finite() || !stretch.is_finite() {
            return Err(DiscretizationError::InvalidGrid("non-finite extent or stretch".into()));
        }
        if n < 32 || vmax <= 1.0 || stretch < 0.0 {
            return Err(DiscretizationError::InvalidGrid(format!(
                "need n >= 32, vmax > 1, stretch >= 0 (got n = {n}, vmax = {vmax}, stretch = {stretch})"
            )));
        }
        let map = |u: f64| if stretch == 0.0 { u } else { (stretch * u).sinh() / stretch };
        let u_max = if stretch == 0.0 { vmax } else { (stretch * vmax).asinh() / stretch };
        let mut axis = vec![0.0; n];
        for k in 0..n.div_ceil(2) {
            let j = n - 1 - k;
            let u = u_max * (2.0 * j as f64 - (n - 1) as f64) / (n - 1) as f64;
            let v = if k == 0 { vmax } else { map(u) };
            axis[j] = v;
            axis[k] = -v;
        }
        let axis_weights = midpoint_weights(&axis);
        let (coords, weights) = if d == 1 {
            (axis.clone(), axis_weights.clone())
        } else {
            let mut c = Vec::with_capacity(2 * n * n);
            let mut w = Vec::with_capacity(n * n);
            for j in 0..n {
                for i in 0..n {
                    c.push(axis[i]);
                    c.push(axis[j]);
                    w.push(axis_weights[i] * axis_weights[j]);
                }
            }
            (c, w)
        };
        Ok(VelocityGrid { d, n_axis: n, stretch, vmax, axis, axis_weights, coords, weights })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n_axis
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    /// One-dimensional node coordinates.
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coordinates of node `p`.
    pub fn point(&self, p: usize) -> &[f64] {
        &self.coords[p * self.d..(p + 1) * self.d]
    }

    /// Component of node `p` along the Fourier direction.
    pub fn v1(&self, p: usize) -> f64 {
        self.coords[p * self.d]
    }
}

fn midpoint_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { x[0] } else { 0.5 * (x[i - 1] + x[i]) };
            let hi = if i + 1 == n { x[n - 1] } else { 0.5 * (x[i] + x[i + 1]) };
            hi - lo
        })
        .collect()
}

/// Interior face between nodes `a < b`; the flux through it is
/// `coef·M_a M_b (ψ_a/M_a - ψ_b/M_b)`.
#[derive(Debug, Clone, Copy)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub coef: f64,
}

#[derive(Debug)]
struct Core {
    grid: VelocityGrid,
    m: Vec<f64>,
    faces: Vec<Face>,
    /// Diagonal of the weighted stiffness `K = W·Q`.
    k_diag: Vec<f64>,
    v1: Vec<f64>,
    bracket2: Vec<f64>,
    bandwidth: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    Q,
    LEta,
}

/// Discrete `Q` (at `η = 0`) or `L_η`; cheap to clone, shares the grid.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    core: Arc<Core>,
    eta: f64,
    kind: OperatorKind,
}

/// Equilibrium sampled on the grid and renormalized to `Σ w M² = 1`.
pub fn sample_equilibrium(model: &EquilibriumModel, grid: &VelocityGrid) -> Vec<f64> {
    let mut m: Vec<f64> = (0..grid.len()).map(|p| model.m(grid.point(p))).collect();
    let mass: f64 = m.iter().zip(grid.weights()).map(|(x, w)| w * x * x).sum();
    let s = mass.sqrt().recip();
    m.iter_mut().for_each(|x| *x *= s);
    m
}

/// Finite-volume `Q` with zero-flux outer boundary.
pub fn assemble_q(model: &EquilibriumModel, grid: &VelocityGrid) -> Result<DiscreteOperator, DiscretizationError> {
    if model.d() != grid.d() {
        return Err(DiscretizationError::DimensionMismatch { model: model.d(), grid: grid.d() });
    }
    let m = sample_equilibrium(model, grid);
    let n = grid.nodes_per_axis();
    let ax = grid.axis();
    let aw = grid.axis_weights();
    let mut faces = Vec::new();
    let bandwidth = match grid.d() {
        1 => {
            for i in 0..n - 1 {
                faces.push(Face { a: i, b: i + 1, coef: 1.0 / (ax[i + 1] - ax[i]) });
            }
            1
        }
        _ => {
            for j in 0..n {
                for i in 0..n {
                    let p = i + n * j;
                    if i + 1 < n {
                        faces.push(Face { a: p, b: p + 1, coef: aw[j] / (ax[i + 1] - ax[i]) });
                    }
                    if j + 1 < n {
                        faces.push(Face { a: p, b: p + n, coef: aw[i] / (ax[j + 1] - ax[j]) });
                    }
                }
            }
            n
        }
    };
    let mut k_diag = vec![0.0; grid.len()];
    for f in &faces {
        k_diag[f.a] += f.coef * m[f.b] / m[f.a];
        k_diag[f.b] += f.coef * m[f.a] / m[f.b];
    }
    let v1 = (0..grid.len()).map(|p| grid.v1(p)).collect();
    let bracket2 = (0..grid.len()).map(|p| bracket_sq(grid.point(p))).collect();
    let core = Core { grid: grid.clone(), m, faces, k_diag, v1, bracket2, bandwidth };
    Ok(DiscreteOperator { core: Arc::new(core), eta: 0.0, kind: OperatorKind::Q })
}

/// `L_η = Q + iη diag(v₁)` sharing the assembled `Q`.
pub fn assemble_l_eta(q: &DiscreteOperator, eta: f64) -> DiscreteOperator {
    DiscreteOperator { core: Arc::clone(&q.core), eta, kind: OperatorKind::LEta }
}

/// Penalization vector `Φ ∝ M/⟨v⟩²` with `⟨Φ, M⟩_w = 1`.
pub fn assemble_phi(op: &DiscreteOperator) -> Vec<f64> {
    let c = &op.core;
    let raw: Vec<f64> = c.m.iter().zip(&c.bracket2).map(|(m, b)| m / b).collect();
    let s: f64 = raw.iter().zip(&c.m).zip(c.grid.weights()).map(|((p, m), w)| w * p * m).sum();
    raw.into_iter().map(|p| p / s).collect()
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

impl DiscreteOperator {
    pub fn grid(&self) -> &VelocityGrid {
        &self.core.grid
    }

    pub fn len(&self) -> usize {
        self.core.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.core.m.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Sampled, renormalized equilibrium.
    pub fn m(&self) -> &[f64] {
        &self.core.m
    }

    pub fn weights(&self) -> &[f64] {
        self.core.grid.weights()
    }

    pub fn v1(&self) -> &[f64] {
        &self.core.v1
    }

    /// `⟨v⟩²` at every node.
    pub fn bracket_sq(&self) -> &[f64] {
        &self.core.bracket2
    }

    pub fn faces(&self) -> &[Face] {
        &self.core.faces
    }

    /// Half-bandwidth of the node ordering.
    pub fn bandwidth(&self) -> usize {
        self.core.bandwidth
    }

    /// `K ψ` with `K = W·Q` (weighted stiffness), evaluated face by face.
    pub fn stiffness_apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let c = &self.core;
        let mut out = vec![zero(); psi.len()];
        for f in &c.faces {
            let flux = (psi[f.a] * c.m[f.b] - psi[f.b] * c.m[f.a]) * f.coef;
            out[f.a] += flux / c.m[f.a];
            out[f.b] -= flux / c.m[f.b];
        }
        out
    }

    /// `L_η ψ` (equal to `Qψ` when `η = 0`).
    pub fn apply(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let c = &self.core;
        let mut out = self.stiffness_apply(psi);
        for (p, o) in out.iter_mut().enumerate() {
            *o = *o / c.grid.weights[p] + Complex64::new(0.0, self.eta * c.v1[p]) * psi[p];
        }
        out
    }

    /// `Q` applied to a real vector.
    pub fn apply_q_real(&self, psi: &[f64]) -> Vec<f64> {
        let c = &self.core;
        let mut out = vec![0.0; psi.len()];
        for f in &c.faces {
            let flux = (psi[f.a] * c.m[f.b] - psi[f.b] * c.m[f.a]) * f.coef;
            out[f.a] += flux / c.m[f.a];
            out[f.b] -= flux / c.m[f.b];
        }
        for (o, w) in out.iter_mut().zip(c.grid.weights()) {
            *o /= w;
        }
        out
    }

    /// Discrete Dirichlet form `Σ_faces coef·M_a M_b |ψ_a/M_a - ψ_b/M_b|²`.
    ///
    /// Adding any multiple of `M` leaves the value unchanged, so callers
    /// should pass the correction `ψ - M` when `ψ ≈ M`.
    pub fn dirichlet(&self, psi: &[Complex64]) -> f64 {
        let c = &self.core;
        let mut parts: Vec<f64> = c
            .faces
            .iter()
            .map(|f| {
                let jump = psi[f.a] / c.m[f.a] - psi[f.b] / c.m[f.b];
                f.coef * c.m[f.a] * c.m[f.b] * jump.norm_sqr()
            })
            .collect();
        crate::quad::pairwise_sum(&mut parts)
    }

    /// Weighted inner product `Σ w a b̄`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).zip(self.weights()).map(|((x, y), w)| x * y.conj() * *w).sum()
    }

    /// Weighted bilinear form `Σ w a b` (no conjugation).
    pub fn bilinear(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).zip(self.weights()).map(|((x, y), w)| x * y * *w).sum()
    }

    pub fn norm_sq(&self, a: &[Complex64]) -> f64 {
        a.iter().zip(self.weights()).map(|(x, w)| w * x.norm_sqr()).sum()
    }

    /// Banded `K + diag(w (iηv₁ - shift))`, the weighted form of `L_η - shift`.
    pub fn weighted_band(&self, shift: Complex64) -> BandMatrix {
        let c = &self.core;
        let bw = c.bandwidth;
        let mut a = BandMatrix::zeros(self.len(), bw, bw);
        for f in &c.faces {
            a.add(f.a, f.b, Complex64::new(-f.coef, 0.0));
            a.add(f.b, f.a, Complex64::new(-f.coef, 0.0));
        }
        for p in 0..self.len() {
            let w = c.grid.weights[p];
            a.add(p, p, Complex64::new(c.k_diag[p], 0.0) + w * (Complex64::new(0.0, self.eta * c.v1[p]) - shift));
        }
        a
    }

    /// Dense real symmetric `K`.
    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let c = &self.core;
        let n = self.len();
        let mut k = DMatrix::from_diagonal(&DVector::from_column_slice(&c.k_diag));
        for f in &c.faces {
            k[(f.a, f.b)] -= f.coef;
            k[(f.b, f.a)] -= f.coef;
        }
        debug_assert_eq!(k.nrows(), n);
        k
    }

    /// Dense `L_η` (unweighted, non-symmetric).
    pub fn dense(&self) -> DMatrix<Complex64> {
        let c = &self.core;
        let k = self.stiffness_dense();
        DMatrix::from_fn(self.len(), self.len(), |i, j| {
            let mut z = Complex64::new(k[(i, j)] / c.grid.weights[i], 0.0);
            if i == j {
                z += Complex64::new(0.0, self.eta * c.v1[i]);
            }
            z
        })
    }

    /// Coordinate-format dump `(row, col, re, im)` of `L_η`.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let c = &self.core;
        let mut entries: Vec<(usize, usize, f64, f64)> = Vec::new();
        for p in 0..self.len() {
            entries.push((p, p, c.k_diag[p] / c.grid.weights[p], self.eta * c.v1[p]));
        }
        for f in &c.faces {
            entries.push((f.a, f.b, -f.coef / c.grid.weights[f.a], 0.0));
            entries.push((f.b, f.a, -f.coef / c.grid.weights[f.b], 0.0));
        }
        entries.sort_by_key(|e| (e.0, e.1));
        for (r, col, re, im) in entries {
            writeln!(out, "{r} {col} {re:.16e} {im:.16e}")?;
        }
        Ok(())
    }
}

/// Outcome of the Hardy-Poincaré estimate.
#[derive(Debug, Clone, Serialize)]
pub struct HardyPoincareEstimate {
    /// Smallest positive generalized eigenvalue of `(K, diag(w/⟨v⟩²))`.
    pub lambda_min: f64,
    /// Rayleigh quotients of the accepted random samples.
    pub sample_ratios: Vec<f64>,
    /// Samples rejected as degenerate.
    pub skipped: usize,
}

impl HardyPoincareEstimate {
    pub fn sample_min(&self) -> f64 {
        self.sample_ratios.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Rayleigh quotient `D(g̃)/‖g̃/⟨v⟩‖²_w` of the projected sample
/// `g̃ = g - P(g)M`, with `P(g) = Σ w g M/⟨v⟩² / Σ w M²/⟨v⟩²`.
pub fn hardy_poincare_ratio(op: &DiscreteOperator, g: &[f64]) -> Result<f64, DiscretizationError> {
    let m = op.m();
    let w = op.weights();
    let b2 = op.bracket_sq();
    let num: f64 = (0..g.len()).map(|p| w[p] * g[p] * m[p] / b2[p]).sum();
    let den: f64 = (0..g.len()).map(|p| w[p] * m[p] * m[p] / b2[p]).sum();
    let coef = num / den;
    let gt: Vec<f64> = g.iter().zip(m).map(|(x, y)| x - coef * y).collect();
    let scale: f64 = g.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt();
    let mass: f64 = (0..g.len()).map(|p| w[p] * gt[p] * gt[p] / b2[p]).sum();
    let size: f64 = gt.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt();
    if !(size > 1e-10 * scale) || mass == 0.0 {
        return Err(DiscretizationError::DegenerateSample);
    }
    let gc: Vec<Complex64> = gt.iter().map(|x| Complex64::new(*x, 0.0)).collect();
    Ok(op.dirichlet(&gc) / mass)
}

/// Exact discrete Hardy-Poincaré constant plus Rayleigh quotients of
/// `n_samples` random smooth samples.
pub fn verify_hardy_poincare(
    op: &DiscreteOperator,
    n_samples: usize,
    seed: u64,
) -> Result<HardyPoincareEstimate, DiscretizationError> {
    if n_samples < 10 {
        return Err(DiscretizationError::InvalidGrid(format!("need at least 10 samples, got {n_samples}")));
    }
    let n = op.len();
    let k = op.stiffness_dense();
    let sinv: Vec<f64> = op.weights().iter().zip(op.bracket_sq()).map(|(w, b)| (b / w).sqrt()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| sinv[i] * k[(i, j)] * sinv[j]);
    let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    let lambda_min = ev[1];

    let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(n_samples);
    let mut skipped = 0;
    let modes = 12;
    let scale = op.grid().vmax() / 4.0;
    while ratios.len() < n_samples {
        let coeffs: Vec<f64> = (0..modes).map(|_| StandardNormal.sample(&mut rng)).collect();
        let g: Vec<f64> = (0..n)
            .map(|p| {
                let x = (op.grid().point(p).iter().sum::<f64>() / scale).tanh();
                let r = op.grid().point(p).iter().map(|y| y * y).sum::<f64>().sqrt() / scale;
                let basis = (0..modes).map(|j| {
                    if j % 2 == 0 {
                        (j as f64 * x.acos()).cos()
                    } else {
                        (-(j as f64) * r).exp()
                    }
                });
                op.m()[p] * basis.zip(&coeffs).map(|(b, c)| b * c).sum::<f64>()
            })
            .collect();
        match hardy_poincare_ratio(op, &g) {
            Ok(r) => ratios.push(r),
            Err(DiscretizationError::DegenerateSample) => {
                skipped += 1;
                if skipped > 10 * n_samples {
                    return Err(DiscretizationError::DegenerateSample);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(HardyPoincareEstimate { lambda_min, sample_ratios: ratios, skipped })
}
