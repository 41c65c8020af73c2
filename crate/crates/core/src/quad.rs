//! Quadrature over finite intervals, half-lines and ℝ^d.
//!
//! Finite pieces use double-exponential (tanh-sinh) rules. Heavy tails are
//! mapped through `v = sinh(u)` so that algebraic decay becomes exponential
//! decay in `u`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge: {0}")]
    NoConvergence(String),
}

/// Width of the unit pieces covering the core `[0, CORE_EXTENT]`.
const CORE_EXTENT: f64 = 64.0;
/// Step in the sinh variable for the tail pieces.
const TAIL_STEP: f64 = 0.5;
/// Largest sinh variable before `sinh` overflows.
const U_LIMIT: f64 = 700.0;

/// Integral of `f` over `[a, b]` with a target absolute error.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    quadrature::double_exponential::integrate(f, a, b, tol).integral
}

/// Integral of `f` over `[a, b]` split into `pieces` equal subintervals.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, pieces: usize, tol: f64) -> f64 {
    let n = pieces.max(1);
    let h = (b - a) / n as f64;
    let per = tol / n as f64;
    let mut parts: Vec<f64> = (0..n)
        .map(|k| {
            let lo = a + h * k as f64;
            let hi = if k + 1 == n { b } else { a + h * (k + 1) as f64 };
            integrate(&f, lo, hi, per)
        })
        .collect();
    pairwise_sum(&mut parts)
}

/// Integral of `f` over `[0, ∞)`.
///
/// The core `[0, 64]` is covered by unit pieces (oscillations of period
/// 2π are resolved there); beyond, pieces of width 0.5 in `u = asinh(v)`
/// are added until both the last piece and a power-law estimate of the
/// remaining tail fall below `tol`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64, QuadError> {
    let piece_tol = tol * 1e-3;
    let mut parts: Vec<f64> = (0..CORE_EXTENT as usize)
        .map(|k| integrate(&f, k as f64, (k + 1) as f64, piece_tol))
        .collect();
    let g = |u: f64| f(u.sinh()) * u.cosh();
    let mut u = CORE_EXTENT.asinh();
    loop {
        if u >= U_LIMIT {
            return Err(QuadError::NoConvergence(format!(
                "half-line tail still above {tol:e} at v = sinh({U_LIMIT})"
            )));
        }
        let next = (u + TAIL_STEP).min(U_LIMIT);
        let piece = integrate(g, u, next, piece_tol);
        parts.push(piece);
        u = next;
        let r = u.sinh();
        let tail = power_tail(&f, r);
        if piece.abs() <= piece_tol && tail <= piece_tol {
            parts.push(signed_tail(&f, r));
            break;
        }
    }
    Ok(pairwise_sum(&mut parts))
}

/// Integral of `f` over ℝ.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> Result<f64, QuadError> {
    let pos = integrate_half_line(&f, 0.5 * tol)?;
    let neg = integrate_half_line(|v| f(-v), 0.5 * tol)?;
    Ok(pos + neg)
}

/// Integral of `f` over `[0, r]` by the same core/tail split, used for
/// truncated moments with large radii.
pub fn integrate_to<F: Fn(f64) -> f64>(f: F, r: f64, tol: f64) -> f64 {
    let piece_tol = tol * 1e-3;
    let core = r.min(CORE_EXTENT);
    let n_core = core.ceil().max(1.0) as usize;
    let mut parts: Vec<f64> = (0..n_core)
        .map(|k| {
            let lo = core * k as f64 / n_core as f64;
            let hi = core * (k + 1) as f64 / n_core as f64;
            integrate(&f, lo, hi, piece_tol)
        })
        .collect();
    if r > CORE_EXTENT {
        let g = |u: f64| f(u.sinh()) * u.cosh();
        let mut u = CORE_EXTENT.asinh();
        let u_end = r.asinh();
        while u < u_end {
            let next = (u + TAIL_STEP).min(u_end);
            parts.push(integrate(g, u, next, piece_tol));
            u = next;
        }
    }
    pairwise_sum(&mut parts)
}

/// Area of the unit sphere S^k ⊂ ℝ^{k+1}.
pub fn sphere_area(k: usize) -> f64 {
    // |S^k| = 2 π^{(k+1)/2} / Γ((k+1)/2)
    2.0 * std::f64::consts::PI.powf((k + 1) as f64 / 2.0) / half_integer_gamma(k + 1)
}

/// Γ(n/2) for positive integers n.
pub fn half_integer_gamma(n: usize) -> f64 {
    assert!(n >= 1);
    let (mut g, mut x) = if n % 2 == 0 {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while x + 1e-12 < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Angular integral of `f` over the sphere of radius `r` in ℝ^d, including
/// the Jacobian `r^{d-1}`, for functions of `(v₁, |v'|)` only.
///
/// For `d ≥ 2` the axial form `|S^{d-2}| r^{d-1} ∫₀^π f(r cos θ, r sin θ)
/// sin^{d-2}θ dθ` is used; the point passed to `f` is `(r cos θ, r sin θ,
/// 0, …)`. For `d = 1` the "sphere" is `{-r, r}`.
pub fn shell<F: Fn(&[f64]) -> f64>(d: usize, f: &F, r: f64, tol: f64) -> f64 {
    if d == 1 {
        return f(&[r]) + f(&[-r]);
    }
    if r == 0.0 {
        return 0.0;
    }
    let inner = |theta: f64| {
        let mut q = vec![0.0; d];
        q[0] = r * theta.cos();
        q[1] = r * theta.sin();
        f(&q) * theta.sin().powi(d as i32 - 2)
    };
    let half = std::f64::consts::FRAC_PI_2;
    let a = integrate(inner, 0.0, half, tol);
    let b = integrate(inner, half, std::f64::consts::PI, tol);
    sphere_area(d - 2) * r.powi(d as i32 - 1) * (a + b)
}

/// Integral over ℝ^d of a function that depends on `(v₁, |v'|)` only.
pub fn integrate_rd<F: Fn(&[f64]) -> f64>(d: usize, f: F, tol: f64) -> Result<f64, QuadError> {
    integrate_half_line(|r| shell(d, &f, r, tol * 1e-3), tol)
}

/// Integral over the ball `{|v| ≤ r}` of a function of `(v₁, |v'|)`.
pub fn integrate_ball<F: Fn(&[f64]) -> f64>(d: usize, f: F, r: f64, tol: f64) -> f64 {
    integrate_to(|rho| shell(d, &f, rho, tol * 1e-3), r, tol)
}

/// Pairwise (cascade) summation; the tree shape depends only on the length.
pub fn pairwise_sum(xs: &mut [f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at_mut(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Local decay exponent of `|f|` between `r` and `2r`.
fn local_exponent<F: Fn(f64) -> f64>(f: &F, r: f64) -> Option<f64> {
    let a = f(r).abs();
    let b = f(2.0 * r).abs();
    if a == 0.0 {
        return Some(f64::INFINITY);
    }
    if b == 0.0 || !a.is_finite() || !b.is_finite() {
        return None;
    }
    Some(-(b / a).ln() / std::f64::consts::LN_2)
}

/// Magnitude of the power-law tail beyond `r`; infinite when the local
/// exponent does not exceed one.
fn power_tail<F: Fn(f64) -> f64>(f: &F, r: f64) -> f64 {
    match local_exponent(f, r) {
        Some(p) if p.is_infinite() => 0.0,
        Some(p) if p > 1.0 => f(r).abs() * r / (p - 1.0),
        _ => f64::INFINITY,
    }
}

fn signed_tail<F: Fn(f64) -> f64>(f: &F, r: f64) -> f64 {
    let mag = power_tail(f, r);
    if mag.is_finite() {
        mag * f(r).signum()
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_interval_polynomial() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-14);
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn half_line_power_law() {
        // ∫₀^∞ (1+v²)^{-2} dv = π/4
        let v = integrate_half_line(|x| (1.0 + x * x).powi(-2), 1e-13).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_4).abs() < 1e-11, "{v}");
    }

    #[test]
    fn half_line_slow_tail() {
        // ∫₀^∞ (1+v²)^{-0.6} dv = √π Γ(0.1) / (2 Γ(0.6))
        let exact = 0.5 * std::f64::consts::PI.sqrt() * 9.513507698668732 / 1.489192248812817;
        let v = integrate_half_line(|x| (1.0 + x * x).powf(-0.6), 1e-10).unwrap();
        assert!((v - exact).abs() < 1e-7 * exact, "{v} vs {exact}");
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(0) - 2.0).abs() < 1e-15);
        assert!((sphere_area(1) - 2.0 * std::f64::consts::PI).abs() < 1e-14);
        assert!((sphere_area(2) - 4.0 * std::f64::consts::PI).abs() < 1e-13);
    }

    #[test]
    fn rd_gaussian_mass() {
        for d in 1..=4 {
            let v = integrate_rd(d, |p: &[f64]| (-p.iter().map(|x| x * x).sum::<f64>()).exp(), 1e-12)
                .unwrap();
            let exact = std::f64::consts::PI.powf(d as f64 / 2.0);
            assert!((v - exact).abs() < 1e-9 * exact, "d={d}: {v} vs {exact}");
        }
    }

    #[test]
    fn truncated_integral() {
        let r = 1e4;
        let v = integrate_to(|x| x / (1.0 + x * x), r, 1e-12);
        let exact = 0.5 * (1.0 + r * r).ln();
        assert!((v - exact).abs() < 1e-9, "{v} vs {exact}");
    }
}
