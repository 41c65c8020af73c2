use kfp_core::discretization::{assemble_l_eta, assemble_q, VelocityGrid};
use kfp_core::eigensolver::PenalizedProblem;
use kfp_core::equilibria::EquilibriumModel;
use kfp_core::limit_problem::{
    check_log_asymptote, compare_h_eta, drift_j, jm_circle, jm_limit, kappa_from_h0, solve_h0_1d, LimitError,
    LimitSolution, RescaledGrid, Regime,
};
use num_complex::Complex64;

fn power(gamma: f64, plus: f64, minus: f64) -> EquilibriumModel {
    EquilibriumModel::power_law(1, gamma, plus, minus).unwrap()
}

fn solve(model: &EquilibriumModel, s_min: f64, n: usize) -> LimitSolution {
    solve_h0_1d(model, &RescaledGrid::new(s_min, 30.0, n).unwrap()).unwrap()
}

/// Node count keeping the standard density per unit of `ln s`.
fn nodes_for(s_min: f64) -> usize {
    let per_log = 3999.0 / (30.0f64 / 1e-3).ln();
    (per_log * (30.0 / s_min).ln()).round() as usize + 1
}

fn gamma_fn(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Closed form of `-∫ s m² Im u` for a pure power profile `m = c± |s|^{-γ}`.
///
/// On each half-line `u = s^{γ+1/2} K_ν(c s^{3/2}) / lim_{s→0}(…)` with
/// `ν = (2γ+1)/3` and `c = (2/3)e^{±iπ/4}`; the Mellin transform of `K_ν`
/// then gives the integral in terms of Γ.
fn kappa_oracle(model: &EquilibriumModel) -> f64 {
    let g = model.gamma();
    let nu = (2.0 * g + 1.0) / 3.0;
    let mu = (5.0 - 2.0 * g) / 3.0;
    let c = Complex64::from_polar(2.0 / 3.0, std::f64::consts::FRAC_PI_4);
    let ratio = c.powf(nu - mu) * (4.0 / 3.0 * 2f64.powf(mu - 2.0 - nu) * gamma_fn((2.0 - 2.0 * g) / 3.0) / gamma_fn(nu));
    let amp = model.limit_profile(&[1.0]).unwrap().powi(2) + model.limit_profile(&[-1.0]).unwrap().powi(2);
    -amp * ratio.im
}

#[test]
fn oracle_reproduces_reference_value() {
    // γ = 2, m(±1)² = 2/π; high precision quadrature of the Bessel form gives 0.3781347571
    assert!((kappa_oracle(&power(2.0, 1.0, 1.0)) - 0.378_134_757_142).abs() < 1e-10);
}

#[test]
fn unified_kappa_matches_closed_form() {
    for model in [power(2.0, 1.0, 1.0), power(1.5, 1.0, 1.0), power(0.8, 1.0, 1.0), power(2.3, 1.0, 1.0), power(2.0, 1.5, 0.7)] {
        let exact = kappa_oracle(&model);
        let coarse = solve(&model, 1e-3, 4000);
        let fine = solve(&model, 1e-3, 8000);
        let e0 = (coarse.kappa_unified - exact).abs() / exact;
        let e1 = (fine.kappa_unified - exact).abs() / exact;
        assert!(e0 <= 1e-5, "gamma {}: {} vs {exact}", model.gamma(), coarse.kappa_unified);
        assert!(e1 < 0.3 * e0, "gamma {}: {e1:e} vs {e0:e}", model.gamma());
        assert!(coarse.residual <= 1e-9);
    }
}

#[test]
fn boundary_values_are_imposed() {
    let s = solve(&power(1.4, 1.5, 0.7), 1e-3, 4000);
    assert_eq!(s.u_plus[0], Complex64::new(1.0, 0.0));
    assert_eq!(s.u_minus[0], Complex64::new(1.0, 0.0));
    assert_eq!(s.u_plus[s.u_plus.len() - 1], Complex64::new(0.0, 0.0));
}

#[test]
fn symmetric_kappa_is_twice_one_side() {
    let s = solve(&power(2.0, 1.0, 1.0), 1e-3, 4000);
    let t = s.grid.nodes();
    let f = |k: usize| t[k] * s.m_plus[k] * s.m_plus[k] * s.u_plus[k].im;
    let half: f64 = (0..t.len() - 1).map(|k| 0.5 * (t[k + 1] / t[k]).ln() * (f(k) * t[k] + f(k + 1) * t[k + 1])).sum();
    let raw = s.kappa_unified - s.inner_correction;
    assert!((raw + 2.0 * half).abs() <= 1e-12 * raw);
    assert!(s.inner_correction.abs() <= 1e-3 * s.kappa_unified);
}

#[test]
fn branch_formula_agrees_and_is_real() {
    for model in [power(2.0, 1.0, 1.0), power(1.5, 1.0, 1.0)] {
        let s = solve(&model, 1e-3, 4000);
        let b = s.kappa_branch;
        assert!(s.kappa_unified > 0.0 && b.re > 0.0);
        assert!((b.re - s.kappa_unified).abs() <= 0.02 * s.kappa_unified, "{b} vs {}", s.kappa_unified);
        assert!(b.im.abs() <= 0.01 * b.re);
        assert_eq!(kappa_from_h0(&s).unwrap(), s.kappa_unified);
    }
}

#[test]
fn critical_cut_is_immaterial() {
    let model = power(1.0, 1.5, 0.7);
    let s = solve(&model, 1e-3, 4000);
    assert_eq!(s.regime, Regime::Critical);
    let (one, two) = (s.branch_value(1.0), s.branch_value(2.0));
    assert!((one.re - two.re).abs() <= 0.01 * one.re.abs(), "{one} vs {two}");
}

#[test]
fn truncation_robustness() {
    for model in [power(2.0, 1.0, 1.0), power(1.0, 1.5, 0.7)] {
        let base = solve(&model, 1e-3, 4000);
        let doubled = (base.kappa_doubled - base.kappa_unified).abs() / base.kappa_unified;
        assert!(doubled <= 0.01, "S_max doubling: {doubled:e}");
        let halved = solve(&model, 5e-4, nodes_for(5e-4));
        let change = (halved.kappa_unified - base.kappa_unified).abs() / base.kappa_unified;
        assert!(change <= 0.01, "s_min halving: {change:e}");
    }
}

#[test]
fn sphere_moments() {
    let m = power(1.0, 1.5, 0.7);
    let jm = jm_limit(&m).unwrap()[0];
    let expect = m.limit_profile(&[1.0]).unwrap().powi(2) - m.limit_profile(&[-1.0]).unwrap().powi(2);
    assert_eq!(jm, expect);
    let m2 = EquilibriumModel::anisotropic(2, 1.5).unwrap();
    let (a, b) = (jm_circle(&m2, 1024).unwrap(), jm_circle(&m2, 4096).unwrap());
    for k in 0..2 {
        assert!((a[k] - b[k]).abs() <= 1e-8);
        assert!(b[k].abs() <= 1e-12);
    }
}

#[test]
fn critical_drift_follows_log_asymptote() {
    let model = power(1.0, 1.5, 0.7);
    let eps = [1e-2, 1e-4, 1e-6, 1e-8, 1e-10, 1e-12];
    let ratios = check_log_asymptote(&model, &eps).unwrap();
    let gaps: Vec<f64> = ratios.iter().map(|r| (r - 1.0).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    assert!(gaps[gaps.len() - 1] <= 0.05, "{ratios:?}");
    let d = drift_j(&model, 1e-12).unwrap();
    assert!((d.ratio.unwrap() - ratios[5]).abs() < 1e-12);
    assert!(matches!(check_log_asymptote(&power(1.0, 1.0, 1.0), &eps), Err(LimitError::ZeroJm)));
    assert!(matches!(check_log_asymptote(&power(2.0, 1.5, 0.7), &eps), Err(LimitError::NotCritical { .. })));
}

#[test]
fn supercritical_drift_is_the_first_moment() {
    // ∫ v M² for M ∝ ⟨v⟩^{-2} with amplitudes 1.5 / 0.7 on the two half-lines
    let model = power(2.0, 1.5, 0.7);
    let d = drift_j(&model, 1e-6).unwrap();
    assert!(d.j1 > 0.0);
    assert_eq!(drift_j(&model, 1e-3).unwrap().j1, d.j1);
}

#[test]
fn rescaled_penalized_solution_converges() {
    let model = power(2.0, 1.0, 1.0);
    let limit = solve(&model, 1e-3, 4000);
    let q = assemble_q(&model, &VelocityGrid::new(1, 600.0, 4096, 1.0).unwrap()).unwrap();
    let cmp: Vec<_> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&eta| {
            let p = PenalizedProblem::new(assemble_l_eta(&q, eta));
            let sol = p.solve(Complex64::new(0.0, 0.0)).unwrap();
            let c = compare_h_eta(&model, p.operator(), &sol, &limit).unwrap();
            assert_eq!(c.c_eta, sol.b + 1.0);
            c
        })
        .collect();
    let errs: Vec<f64> = cmp.iter().map(|c| c.max_error).collect();
    let prof: Vec<f64> = cmp.iter().map(|c| c.profile_error).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(prof.windows(2).all(|w| w[1] < w[0]), "{prof:?}");
}
