//! Langevin particles `dV = b(V) dt + √2 dB`, `dX = V dt` with
//! `b = ∇F/F`, and the characteristic function of the rescaled
//! displacement.
//!
//! Every particle owns a generator seeded from `(seed, index)`, so the
//! ensemble does not depend on how particles are sharded across threads.

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::equilibria::{EquilibriumModel, Family};
use crate::quad;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("particle {particle} reached |V| = {speed:e} above the cap {cap:e}")]
    BlowUp { particle: usize, speed: f64, cap: f64 },
    #[error("ensemble time {actual} does not match eps^-alpha * t = {expected}")]
    HorizonMismatch { actual: f64, expected: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("particle simulation is implemented for d = 1 only (got d = {0})")]
    UnsupportedDimension(usize),
}

/// Starting velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialVelocity {
    /// Samples of `F` by inverse CDF.
    Stationary,
    /// Every particle starts at the given velocity.
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub v_cap: f64,
    pub initial: InitialVelocity,
    /// Extra times at which velocities are recorded.
    pub snapshots: Vec<f64>,
}

impl SimulationSpec {
    pub fn new(n: usize, dt: f64, t_end: f64, seed: u64) -> Self {
        SimulationSpec { n, dt, t_end, seed, v_cap: 1e6, initial: InitialVelocity::Stationary, snapshots: Vec::new() }
    }
}

/// Particle state at the final time.
#[derive(Debug, Clone, Serialize)]
pub struct ParticleEnsemble {
    pub v: Vec<f64>,
    pub x: Vec<f64>,
    pub t: f64,
    pub seed: u64,
    pub dt: f64,
    pub steps: usize,
    /// Velocities at the requested snapshot times (`snapshot_times[k]`).
    #[serde(skip)]
    pub snapshot_v: Vec<Vec<f64>>,
    pub snapshot_times: Vec<f64>,
}

/// SplitMix64 finalizer, used to derive per-particle seeds.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Tabulated CDF of `F` on a grid uniform in `u = asinh(v)`.
#[derive(Debug, Clone)]
pub struct CdfTable {
    u: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfTable {
    pub fn new(model: &EquilibriumModel, points: usize) -> Result<Self, MonteCarloError> {
        if model.d() != 1 {
            return Err(MonteCarloError::UnsupportedDimension(model.d()));
        }
        let u_max = 1e6f64.asinh();
        let h = 2.0 * u_max / (points - 1) as f64;
        let u: Vec<f64> = (0..points).map(|k| -u_max + h * k as f64).collect();
        let dens = |s: f64| model.f(&[s.sinh()]) * s.cosh();
        let left = quad::integrate_half_line(|v| model.f(&[-(v + 1e6)]), 1e-15)
            .map_err(|e| MonteCarloError::InvalidParameter(e.to_string()))?;
        let mut cdf = Vec::with_capacity(points);
        let mut acc = left;
        cdf.push(acc);
        for k in 0..points - 1 {
            acc += quad::integrate(dens, u[k], u[k + 1], 1e-16);
            cdf.push(acc);
        }
        let right = quad::integrate_half_line(|v| model.f(&[v + 1e6]), 1e-15)
            .map_err(|e| MonteCarloError::InvalidParameter(e.to_string()))?;
        let total = acc + right;
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(CdfTable { u, cdf })
    }

    /// `P(V ≤ v)`.
    pub fn cdf(&self, v: f64) -> f64 {
        let s = v.asinh();
        let n = self.u.len();
        if s <= self.u[0] {
            return self.cdf[0] * (s - self.u[0]).exp().min(1.0);
        }
        if s >= self.u[n - 1] {
            return self.cdf[n - 1];
        }
        let k = self.u.partition_point(|x| *x <= s).clamp(1, n - 1) - 1;
        let th = (s - self.u[k]) / (self.u[k + 1] - self.u[k]);
        self.cdf[k] + th * (self.cdf[k + 1] - self.cdf[k])
    }

    /// Inverse CDF by linear interpolation in `u`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.u.len();
        let k = self.cdf.partition_point(|c| *c <= p).clamp(1, n - 1) - 1;
        let span = self.cdf[k + 1] - self.cdf[k];
        let th = if span > 0.0 { ((p - self.cdf[k]) / span).clamp(0.0, 1.0) } else { 0.5 };
        (self.u[k] + th * (self.u[k + 1] - self.u[k])).sinh()
    }
}

const CHUNK: usize = 64;
const BLOCK: usize = 64;

type Chunk = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

fn run_particles<B: Fn(f64) -> f64 + Sync>(
    drift: B,
    spec: &SimulationSpec,
    table: Option<&CdfTable>,
) -> Result<ParticleEnsemble, MonteCarloError> {
    let steps = (spec.t_end / spec.dt).round() as usize;
    let snap_steps: Vec<usize> = spec.snapshots.iter().map(|t| (t / spec.dt).round() as usize).collect();
    let noise = (2.0 * spec.dt).sqrt();
    let dt = spec.dt;
    let cap = spec.v_cap;
    let chunks: Vec<(usize, usize)> = (0..spec.n).step_by(CHUNK).map(|lo| (lo, (lo + CHUNK).min(spec.n))).collect();
    let results: Vec<Result<Chunk, MonteCarloError>> = chunks
        .into_par_iter()
        .map(|(lo, hi)| {
            let (dt, noise, cap) = (dt, noise, cap);
            let len = hi - lo;
            let mut rngs: Vec<SmallRng> = (lo..hi).map(|i| SmallRng::seed_from_u64(mix(spec.seed, i as u64))).collect();
            let mut v: Vec<f64> = rngs
                .iter_mut()
                .map(|rng| match (spec.initial, table) {
                    (InitialVelocity::Fixed(v0), _) => v0,
                    (InitialVelocity::Stationary, Some(t)) => t.quantile(rng.random::<f64>()),
                    (InitialVelocity::Stationary, None) => unreachable!("table built for stationary start"),
                })
                .collect();
            let mut x = vec![0.0; len];
            let mut z = vec![0.0; len * BLOCK];
            let mut snaps = Vec::with_capacity(snap_steps.len());
            let mut next_snap = 0;
            while next_snap < snap_steps.len() && snap_steps[next_snap] == 0 {
                snaps.push(v.clone());
                next_snap += 1;
            }
            let mut k = 0;
            while k < steps {
                let block = BLOCK.min(steps - k);
                for (j, rng) in rngs.iter_mut().enumerate() {
                    for zb in z[j * BLOCK..j * BLOCK + block].iter_mut() {
                        *zb = StandardNormal.sample(rng);
                    }
                }
                for b in 0..block {
                    k += 1;
                    let mut escaped = false;
                    for (j, (vj, xj)) in v.iter_mut().zip(x.iter_mut()).enumerate() {
                        *xj += *vj * dt;
                        *vj += drift(*vj) * dt + noise * z[j * BLOCK + b];
                        escaped |= !(vj.abs() <= cap);
                    }
                    if escaped {
                        let j = v.iter().position(|s| !(s.abs() <= cap)).unwrap_or(0);
                        return Err(MonteCarloError::BlowUp { particle: lo + j, speed: v[j].abs(), cap });
                    }
                    while next_snap < snap_steps.len() && snap_steps[next_snap] == k {
                        snaps.push(v.clone());
                        next_snap += 1;
                    }
                }
            }
            Ok((v, x, snaps))
        })
        .collect();
    let mut vs = Vec::with_capacity(spec.n);
    let mut xs = Vec::with_capacity(spec.n);
    let mut snapshot_v = vec![Vec::with_capacity(spec.n); snap_steps.len()];
    for r in results {
        let (v, x, s) = r?;
        vs.extend(v);
        xs.extend(x);
        for (k, val) in s.into_iter().enumerate() {
            snapshot_v[k].extend(val);
        }
    }
    Ok(ParticleEnsemble {
        v: vs,
        x: xs,
        t: steps as f64 * dt,
        seed: spec.seed,
        dt,
        steps,
        snapshot_v,
        snapshot_times: snap_steps.iter().map(|k| *k as f64 * dt).collect(),
    })
}

/// Euler-Maruyama simulation of the velocity-position process.
pub fn simulate_sde(model: &EquilibriumModel, spec: &SimulationSpec) -> Result<ParticleEnsemble, MonteCarloError> {
    if model.d() != 1 {
        return Err(MonteCarloError::UnsupportedDimension(model.d()));
    }
    if spec.n == 0 || !(spec.dt > 0.0 && spec.dt <= 1e-2) || !(spec.t_end >= 0.0) || !spec.t_end.is_finite() {
        return Err(MonteCarloError::InvalidParameter(format!(
            "need n > 0, 0 < dt <= 1e-2 and finite t_end >= 0 (got n = {}, dt = {}, t_end = {})",
            spec.n, spec.dt, spec.t_end
        )));
    }
    let table = match spec.initial {
        InitialVelocity::Stationary => Some(CdfTable::new(model, 200_001)?),
        InitialVelocity::Fixed(_) => None,
    };
    let g = model.gamma();
    match model.family() {
        Family::Classical { plus, minus } if plus == minus => {
            run_particles(|v| -2.0 * g * v / (1.0 + v * v), spec, table.as_ref())
        }
        _ => run_particles(|v| model.drift_1d(v), spec, table.as_ref()),
    }
}

/// `ε (X(T) - j T)` with `T = ε^{-α} t_macro`.
pub fn rescaled_displacement(
    ensemble: &ParticleEnsemble,
    eps: f64,
    alpha: f64,
    t_macro: f64,
    drift: f64,
) -> Result<Vec<f64>, MonteCarloError> {
    let expected = eps.powf(-alpha) * t_macro;
    if (ensemble.t - expected).abs() > 0.5 * ensemble.dt + 1e-9 * expected {
        return Err(MonteCarloError::HorizonMismatch { actual: ensemble.t, expected });
    }
    Ok(ensemble.x.iter().map(|x| eps * (x - drift * ensemble.t)).collect())
}

/// Empirical characteristic function value with a bootstrap radius.
#[derive(Debug, Clone, Serialize)]
pub struct CfPoint {
    pub xi: f64,
    pub re: f64,
    pub im: f64,
    /// 95% quantile of `|cf* - cf|` over bootstrap resamples.
    pub ci_radius: f64,
}

fn cf_at(samples: &[f64], xi: f64) -> (f64, f64) {
    let mut c: Vec<f64> = samples.iter().map(|x| (xi * x).cos()).collect();
    let mut s: Vec<f64> = samples.iter().map(|x| -(xi * x).sin()).collect();
    let n = samples.len() as f64;
    (quad::pairwise_sum(&mut c) / n, quad::pairwise_sum(&mut s) / n)
}

/// `(1/n) Σ exp(-iξx_j)` for every `ξ`, with `n_boot` bootstrap resamples.
pub fn empirical_cf(samples: &[f64], xi_list: &[f64], n_boot: usize, seed: u64) -> Result<Vec<CfPoint>, MonteCarloError> {
    if samples.is_empty() {
        return Err(MonteCarloError::InvalidParameter("no samples".into()));
    }
    let n = samples.len();
    let resamples: Vec<Vec<usize>> = (0..n_boot)
        .map(|b| {
            let mut rng = SmallRng::seed_from_u64(mix(seed, b as u64));
            (0..n).map(|_| rng.random_range(0..n)).collect()
        })
        .collect();
    Ok(xi_list
        .iter()
        .map(|&xi| {
            let (re, im) = cf_at(samples, xi);
            let mut dev: Vec<f64> = resamples
                .par_iter()
                .map(|idx| {
                    let draw: Vec<f64> = idx.iter().map(|&i| samples[i]).collect();
                    let (r, m) = cf_at(&draw, xi);
                    ((r - re).powi(2) + (m - im).powi(2)).sqrt()
                })
                .collect();
            dev.sort_by(|a, b| a.total_cmp(b));
            let ci_radius = if dev.is_empty() { 0.0 } else { dev[((0.95 * dev.len() as f64).ceil() as usize).min(dev.len()) - 1] };
            CfPoint { xi, re, im, ci_radius }
        })
        .collect())
}

/// Kolmogorov-Smirnov distance of velocity samples to `F`.
pub fn velocity_ks(table: &CdfTable, v: &[f64]) -> f64 {
    crate::stats::ks_distance(v, |x| table.cdf(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> EquilibriumModel {
        EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cdf_table_matches_closed_form() {
        // F = (2/π)(1+v²)^{-2}: CDF = 1/2 + (atan v + v/(1+v²))/π
        let t = CdfTable::new(&model(), 200_001).unwrap();
        for v in [-30.0, -2.0, -0.3, 0.0, 0.7, 5.0, 100.0] {
            let exact = 0.5 + ((v as f64).atan() + v / (1.0 + v * v)) / std::f64::consts::PI;
            assert!((t.cdf(v) - exact).abs() < 1e-8, "{v}: {} vs {exact}", t.cdf(v));
        }
        for p in [0.01, 0.3, 0.5, 0.9, 0.999] {
            assert!((t.cdf(t.quantile(p)) - p).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetric_drift_vanishes_at_origin() {
        assert_eq!(model().drift_1d(0.0), 0.0);
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = SimulationSpec::new(300, 1e-2, 2.0, 7);
        let a = simulate_sde(&model(), &spec).unwrap();
        let b = simulate_sde(&model(), &spec).unwrap();
        assert_eq!(a.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.x.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.x.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn cf_at_zero_is_one() {
        let xs = [0.3, -1.2, 4.0];
        let cf = empirical_cf(&xs, &[0.0, 1.0, 3.0], 50, 1).unwrap();
        assert_eq!((cf[0].re, cf[0].im), (1.0, 0.0));
        assert!(cf.iter().all(|c| (c.re * c.re + c.im * c.im).sqrt() <= 1.0 + 1e-15));
    }

    #[test]
    fn identity_rescaling() {
        let spec = SimulationSpec::new(50, 1e-2, 1.0, 3);
        let e = simulate_sde(&model(), &spec).unwrap();
        let s = rescaled_displacement(&e, 1.0, 5.0 / 3.0, 1.0, 0.0).unwrap();
        assert_eq!(s, e.x);
        assert!(matches!(
            rescaled_displacement(&e, 0.5, 5.0 / 3.0, 1.0, 0.0),
            Err(MonteCarloError::HorizonMismatch { .. })
        ));
    }
}
