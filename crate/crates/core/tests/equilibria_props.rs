use kfp_core::equilibria::{bracket_sq, check_assumptions, EquilibriumError, EquilibriumModel, Family, ScanSpec};
use kfp_core::quad;
use proptest::prelude::*;

fn classical(gamma: f64) -> EquilibriumModel {
    EquilibriumModel::power_law(1, gamma, 1.0, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn limit_profile_is_homogeneous(
        gamma in 0.55f64..2.45,
        plus in 0.3f64..3.0,
        minus in 0.3f64..3.0,
        s in prop_oneof![-50.0f64..-1e-3, 1e-3f64..50.0],
        lambda in 0.01f64..100.0,
    ) {
        let m = EquilibriumModel::power_law(1, gamma, plus, minus).unwrap();
        let a = m.limit_profile(&[lambda * s]).unwrap() * lambda.powf(gamma);
        let b = m.limit_profile(&[s]).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn anisotropic_profile_is_homogeneous_in_two_dimensions(
        gamma in 1.05f64..2.9,
        r in 0.01f64..20.0,
        th in 0.0f64..std::f64::consts::TAU,
        lambda in 0.1f64..10.0,
    ) {
        let m = EquilibriumModel::anisotropic(2, gamma).unwrap();
        let s = [r * th.cos(), r * th.sin()];
        let ls = [lambda * s[0], lambda * s[1]];
        let a = m.limit_profile(&ls).unwrap() * lambda.powf(gamma);
        let b = m.limit_profile(&s).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn envelope_bounds_hold(
        gamma in 0.55f64..2.45,
        plus in 0.3f64..3.0,
        minus in 0.3f64..3.0,
        v in -1e4f64..1e4,
    ) {
        let m = EquilibriumModel::power_law(1, gamma, plus, minus).unwrap();
        let (c1, c2) = m.bounds();
        let y = bracket_sq(&[v]).powf(0.5 * gamma) * m.m(&[v]);
        prop_assert!(y >= c1 * (1.0 - 1e-12) && y <= c2 * (1.0 + 1e-12));
        prop_assert!(m.m(&[v]) > 0.0);
    }

    #[test]
    fn limit_profile_bounds_hold(gamma in 0.55f64..2.45, plus in 0.3f64..3.0, minus in 0.3f64..3.0, s in 1e-3f64..1e3) {
        let m = EquilibriumModel::power_law(1, gamma, plus, minus).unwrap();
        let (c1, c2) = m.bounds();
        for x in [s, -s] {
            let y = m.limit_profile(&[x]).unwrap() * s.powf(gamma);
            prop_assert!(y >= c1 * (1.0 - 1e-12) && y <= c2 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn symmetric_models_are_even(gamma in 0.55f64..2.45, v in 0.0f64..1e3, family in 0usize..3) {
        let m = match family {
            0 => EquilibriumModel::power_law(1, gamma, 1.7, 1.7).unwrap(),
            1 => EquilibriumModel::anisotropic(1, gamma).unwrap(),
            _ => EquilibriumModel::oscillatory(1, gamma, 2.5, 1.2).unwrap(),
        };
        prop_assert!(m.is_symmetric());
        prop_assert_eq!(m.m(&[v]), m.m(&[-v]));
    }
}

#[test]
fn normalization_holds_for_every_family() {
    let models = [
        EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap(),
        EquilibriumModel::power_law(1, 0.6, 1.0, 1.0).unwrap(),
        EquilibriumModel::power_law(1, 1.4, 1.5, 0.7).unwrap(),
        EquilibriumModel::anisotropic(1, 1.5).unwrap(),
        EquilibriumModel::oscillatory(1, 2.0, 3.0, 1.0).unwrap(),
        EquilibriumModel::power_law(2, 1.5, 1.0, 1.0).unwrap(),
        EquilibriumModel::anisotropic(2, 2.0).unwrap(),
    ];
    for m in &models {
        // independent check: plain DE quadrature on u = asinh(|v|) pieces
        let mass = quad::integrate_rd(m.d(), |v| m.f(v), 1e-12).unwrap();
        assert!((mass - 1.0).abs() <= 1e-8, "{:?}: {mass}", m.family().tag());
    }
}

#[test]
fn potential_at_origin_and_infinity() {
    let m = classical(2.0);
    assert!((m.w(&[0.0]) + 2.0).abs() < 1e-14);
    // W v² → γ(γ - d + 2) = 6
    let v = 1e5;
    assert!((m.w(&[v]) * v * v - 6.0).abs() < 1e-6);
    let m5 = EquilibriumModel::power_law(5, 3.0, 1.0, 1.0).unwrap();
    for r in [0.0, 0.5, 3.0] {
        let v = [r, 0.0, 0.0, 0.0, 0.0];
        let expect = -15.0 / bracket_sq(&v).powi(2);
        assert!((m5.w(&v) - expect).abs() < 1e-13);
    }
}

/// `M''/M` for `M = C(2 + a cos r/r^σ) r^{-γ}`, `r = ⟨v⟩`, derived by hand.
fn oscillatory_w(gamma: f64, sigma: f64, a: f64, v: f64) -> f64 {
    let r = (1.0 + v * v).sqrt();
    let dr = v / r;
    let d2r = 1.0 / (r * r * r);
    // A(r) = 2 + a cos r r^{-σ}, P(r) = r^{-γ}
    let amp = 2.0 + a * r.cos() * r.powf(-sigma);
    let da = a * (-r.sin() * r.powf(-sigma) - sigma * r.cos() * r.powf(-sigma - 1.0));
    let d2a = a
        * (-r.cos() * r.powf(-sigma) + 2.0 * sigma * r.sin() * r.powf(-sigma - 1.0)
            + sigma * (sigma + 1.0) * r.cos() * r.powf(-sigma - 2.0));
    let p = r.powf(-gamma);
    let dp = -gamma * r.powf(-gamma - 1.0);
    let d2p = gamma * (gamma + 1.0) * r.powf(-gamma - 2.0);
    let g = amp * p;
    let dg = da * p + amp * dp;
    let d2g = d2a * p + 2.0 * da * dp + amp * d2p;
    (d2g * dr * dr + dg * d2r) / g
}

#[test]
fn oscillatory_potential_matches_closed_form() {
    let (gamma, sigma, a) = (2.0, 3.0, 1.0);
    let m = EquilibriumModel::oscillatory(1, gamma, sigma, a).unwrap();
    for k in 0..100 {
        let v = -40.0 + 0.8 * k as f64 + 0.013;
        let exact = oscillatory_w(gamma, sigma, a, v);
        let scale = exact.abs() + 1.0 / bracket_sq(&[v]);
        assert!((m.w(&[v]) - exact).abs() <= 1e-6 * scale, "v = {v}: {} vs {exact}", m.w(&[v]));
    }
}

#[test]
fn oscillatory_assumption_flags() {
    let scan = ScanSpec::default();
    let good = check_assumptions(&EquilibriumModel::oscillatory(1, 2.0, 3.0, 1.0).unwrap(), &scan);
    assert!(good.a5.pass, "sigma = {}", good.a5.sigma);
    let slow = check_assumptions(&EquilibriumModel::oscillatory(1, 2.0, 1.0, 1.0).unwrap(), &scan);
    assert!(!slow.a5.pass);
    assert!((slow.a5.sigma - 1.0).abs() < 0.1, "sigma = {}", slow.a5.sigma);
    assert!(matches!(EquilibriumModel::oscillatory(1, 2.0, 3.0, 2.5), Err(EquilibriumError::PositivityViolation(_))));
}

#[test]
fn assumption_reports() {
    let scan = ScanSpec::default();
    let r = check_assumptions(&classical(2.0), &scan);
    assert!(r.pass);
    assert!((r.a1.c1 - r.a1.c2).abs() < 1e-12 * r.a1.c2);
    let aniso = EquilibriumModel::anisotropic(1, 2.0).unwrap();
    let r = check_assumptions(&aniso, &scan);
    assert!(r.pass, "{:?}", r.notes);
    assert!((r.a1.c2 / r.a1.c1 - 2.0).abs() < 1e-2);
    let (c1, c2) = aniso.bounds();
    assert!((r.a1.c2 / r.a1.c1 - c2 / c1).abs() <= 0.01 * c2 / c1);
    let out = check_assumptions(&classical(2.6), &scan);
    assert!(!out.pass);
    assert!(matches!(Family::Classical { plus: 1.0, minus: 1.0 }, Family::Classical { .. }));
}

#[test]
fn rescaled_profile_converges_at_unit_radius() {
    for m in [classical(2.0), EquilibriumModel::power_law(1, 1.4, 1.5, 0.7).unwrap(), EquilibriumModel::anisotropic(1, 1.5).unwrap()] {
        let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&eta| {
                [1.0, -1.0]
                    .iter()
                    .map(|&s| (m.rescaled(&[s], eta) - m.limit_profile(&[s]).unwrap()).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }
}

#[test]
fn origin_is_rejected() {
    assert!(matches!(classical(2.0).limit_profile(&[0.0]), Err(EquilibriumError::OriginEvaluation)));
    assert!((classical(2.0).limit_profile(&[2.0]).unwrap() - classical(2.0).normalization() / 4.0).abs() < 1e-15);
}
