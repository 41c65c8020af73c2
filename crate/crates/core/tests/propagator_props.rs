use kfp_core::discretization::assemble_l_eta;
use kfp_core::eigensolver::{eigenpair, SearchOptions};
use kfp_core::equilibria::EquilibriumModel;
use kfp_core::kinetic_propagator::{
    convergence_study, project_initial, propagate_mode, GridPolicy, InitialSpec, PropagatorError, Reference,
    StepControl,
};
use num_complex::Complex64;
use proptest::prelude::*;

const ALPHA: f64 = 5.0 / 3.0;

fn classical() -> EquilibriumModel {
    EquilibriumModel::power_law(1, 2.0, 1.0, 1.0).unwrap()
}

fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn policy() -> GridPolicy {
    GridPolicy { n: 256, ..GridPolicy::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn zero_mode_is_contractive(coeffs in proptest::collection::vec(-1.0f64..1.0, 6)) {
        let model = classical();
        let op = policy().operator(&model, 0.0).unwrap();
        let v = op.grid().axis().to_vec();
        // bounded f̂₀/M built from a few smooth bumps
        let values: Vec<Complex64> = v
            .iter()
            .zip(op.m())
            .map(|(x, m)| {
                let g: f64 = coeffs.iter().enumerate().map(|(k, c)| c * (x / (k as f64 + 1.0)).tanh().powi(k as i32)).sum();
                Complex64::new(m * (1.5 + g), m * 0.3 * g)
            })
            .collect();
        let spec = InitialSpec::Profile { values, cap: 10.0 };
        let g0 = project_initial(&spec, &op, 0.0).unwrap();
        let times = [0.1, 0.5, 1.0, 2.0];
        let tr = propagate_mode(&op, &g0, 0.0, 1e-2, ALPHA, 0.0, &times, Reference { kappa: 0.0, alpha: ALPHA }, one(), &StepControl::default()).unwrap();
        let n0 = op.norm_sq(&g0).sqrt();
        prop_assert!(tr.norms[0] <= n0 * (1.0 + 1e-12));
        prop_assert!(tr.norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{:?}", tr.norms);
        // the mass ⟨ĝ, M⟩ is conserved at ξ = 0
        let mass0 = op.bilinear(&g0, &op.m().iter().map(|m| Complex64::new(*m, 0.0)).collect::<Vec<_>>());
        for r in &tr.rho {
            prop_assert!((r - mass0).norm() <= 1e-10 * mass0.norm());
        }
    }
}

#[test]
fn eigenmode_evolves_by_its_eigenvalue() {
    let model = classical();
    let (eps, xi) = (1e-2, 1.0);
    let op = policy().operator(&model, eps * xi).unwrap();
    let r = eigenpair(&assemble_l_eta(&op, 0.0), op.eta(), &SearchOptions::default()).unwrap();
    let values: Vec<Complex64> = r.eigvec.iter().zip(op.m()).map(|(e, m)| e * m).collect();
    let g0 = project_initial(&InitialSpec::Profile { values, cap: 1e3 }, &op, xi).unwrap();
    let m_c: Vec<Complex64> = op.m().iter().map(|m| Complex64::new(*m, 0.0)).collect();
    let rho0 = op.bilinear(&g0, &m_c);
    // reference replaced by the exact discrete rate ε^{-α} μ
    let reference = Reference { kappa: eps.powf(-ALPHA) * r.mu.re, alpha: ALPHA };
    let control = StepControl { max_change: 1e-4, ..StepControl::default() };
    let tr = propagate_mode(&op, &g0, xi, eps, ALPHA, 0.0, &[0.25, 0.5, 1.0], reference, rho0, &control).unwrap();
    for (a, b) in tr.rho.iter().zip(&tr.reference) {
        assert!((a - b).norm() <= 1e-6 * rho0.norm(), "{a} vs {b}");
    }
    assert!(tr.projection_error <= 1e-6);
}

#[test]
fn halving_the_step_changes_little() {
    let model = classical();
    let op = policy().operator(&model, 1e-2).unwrap();
    let g0 = project_initial(&InitialSpec::WellPrepared { rho0: one() }, &op, 1.0).unwrap();
    let reference = Reference { kappa: 0.378, alpha: ALPHA };
    let run = |substeps: usize| {
        let control = StepControl { substeps, ..StepControl::default() };
        propagate_mode(&op, &g0, 1.0, 1e-2, ALPHA, 0.0, &[0.5, 1.0, 2.0], reference, one(), &control).unwrap()
    };
    let (a, b) = (run(1), run(2));
    for (x, y) in a.rho.iter().zip(&b.rho) {
        assert!((x - y).norm() <= 1e-5, "{x} vs {y}");
    }
    assert!(a.projection_error <= 1e-6 && b.projection_error <= 1e-6);
}

#[test]
fn gaussian_packet_scales_the_well_prepared_mode() {
    let model = classical();
    let reference = Reference { kappa: 0.378, alpha: ALPHA };
    let study = |initial: &InitialSpec| {
        convergence_study(&model, &[0.5, 2.0], &[1.0], &[1e-2], initial, reference, ALPHA, &policy(), &StepControl::default())
            .unwrap()
    };
    let plain = study(&InitialSpec::WellPrepared { rho0: one() });
    let packet = study(&InitialSpec::GaussianPacket);
    for (a, b) in plain.rows.iter().zip(&packet.rows) {
        let w = (-0.5 * a.xi * a.xi).exp();
        assert!((a.rho * w - b.rho).norm() <= 1e-12 * w, "xi {}: {} vs {}", a.xi, a.rho * w, b.rho);
        assert!((a.abs_err * w - b.abs_err).abs() <= 1e-12 * w);
    }
    assert!(packet.max_projection_error <= 1e-6);
}

#[test]
fn unbounded_ratio_and_bad_times_are_rejected() {
    let model = classical();
    let op = policy().operator(&model, 1e-2).unwrap();
    let values = vec![Complex64::new(1.0, 0.0); op.len()];
    assert!(matches!(
        project_initial(&InitialSpec::Profile { values, cap: 10.0 }, &op, 1.0),
        Err(PropagatorError::UnboundedRatio { .. })
    ));
    let g0 = project_initial(&InitialSpec::WellPrepared { rho0: one() }, &op, 1.0).unwrap();
    let reference = Reference { kappa: 0.378, alpha: ALPHA };
    let r = propagate_mode(&op, &g0, 1.0, 1e-2, ALPHA, 0.0, &[1.0, 0.5], reference, one(), &StepControl::default());
    assert!(matches!(r, Err(PropagatorError::InvalidTimes)));
}
