//! Pointwise properties of the coefficients and the environmental entropy.

use proptest::prelude::*;
use qsd_entropy::entropy;
use qsd_entropy::model::{self, BlochState, ModelParams};

fn params(gamma: f64) -> ModelParams {
    ModelParams::new(0.1, 1.0, 0.01, gamma).unwrap()
}

fn interior() -> impl Strategy<Value = f64> {
    -0.999_999..0.999_999f64
}

fn angle() -> impl Strategy<Value = f64> {
    0.0..std::f64::consts::TAU
}

fn coupling() -> impl Strategy<Value = f64> {
    1.0..4.0f64
}

proptest! {
    #[test]
    fn diffusion_matrix_is_diagonal(rz in interior(), phi in angle(), g in coupling()) {
        let p = params(g);
        let s = BlochState::new(rz, phi).unwrap();
        let b = model::noise_matrix(&s, &p).unwrap();
        let half = |i: usize, j: usize| 0.5 * (0..3).map(|k| b[i][k] * b[j][k]).sum::<f64>();
        let [dzz, dpp] = model::diffusion(&s, &p).unwrap();
        prop_assert!(half(0, 1).abs() <= 1e-12 * (dzz * dpp).sqrt());
        prop_assert!((half(0, 0) - dzz).abs() <= 1e-12 * dzz.max(1e-300));
        prop_assert!((half(1, 1) - dpp).abs() <= 1e-12 * dpp);
    }

    #[test]
    fn drift_split_exact_and_parity(rz in interior(), phi in angle(), g in coupling()) {
        let p = params(g);
        let s = BlochState::new(rz, phi).unwrap();
        let a = model::drift(&s, &p);
        let split = model::drift_split(&s, &p);
        prop_assert_eq!(split.a_irr[0] + split.a_rev[0], a[0]);
        prop_assert_eq!(split.a_irr[1] + split.a_rev[1], a[1]);
        // r_z even, φ odd under time reversal
        prop_assert_eq!(split.a_rev[0], 0.0);
        prop_assert_eq!(split.a_irr[1], 0.0);
    }

    #[test]
    fn drift_independent_of_gamma_and_phi(rz in interior(), phi in angle(), g in coupling(), phi2 in angle()) {
        let a = model::drift(&BlochState::new(rz, phi).unwrap(), &params(g));
        let b = model::drift(&BlochState::new(rz, phi2).unwrap(), &params(1.0));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn diffusion_derivatives_match_finite_differences(rz in -0.99..0.99f64, g in coupling()) {
        let p = params(g);
        let h = 1e-5;
        let f = |r: f64| model::diffusion_zz(r, &p);
        let (d1, d2) = model::diffusion_zz_derivatives(rz, &p);
        let fd1 = (f(rz + h) - f(rz - h)) / (2.0 * h);
        let fd2 = (f(rz + h) - 2.0 * f(rz) + f(rz - h)) / (h * h);
        prop_assert!((d1 - fd1).abs() <= 1e-7 * (1.0 + d1.abs()), "{} vs {}", d1, fd1);
        prop_assert!((d2 - fd2).abs() <= 1e-3 * (1.0 + d2.abs()), "{} vs {}", d2, fd2);
        let dd = model::diffusion_derivatives(&BlochState::new(rz, 0.3).unwrap(), &p);
        prop_assert_eq!(dd.dphiphi_dphi, 0.0);
    }

    #[test]
    fn phi_contributes_no_environmental_entropy(
        rz in interior(), phi in angle(), g in coupling(), dz in -0.1..0.1f64, dphi in -1.0..1.0f64,
    ) {
        let s = BlochState::new(rz, phi).unwrap();
        let terms = entropy::coordinate_terms(&s, [dz, dphi], &params(g)).unwrap();
        for v in entropy::env_terms(&terms[1], 1e-4).unwrap() {
            prop_assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn generic_sum_matches_hand_reduced_form(
        rz in -0.999..0.999f64, phi in angle(), g in coupling(), dz in -0.05..0.05f64, dphi in -1.0..1.0f64,
        dt in 1e-6..1e-3f64,
    ) {
        let p = params(g);
        let generic = entropy::env_increment(&BlochState::new(rz, phi).unwrap(), [dz, dphi], dt, &p).unwrap();
        // Written out by hand for r_z with A_rev = 0:
        //   ds_env = (A − D')/D · (dr − D' dt) − (4λ² + D'') dt
        let (l2, x, g2) = (0.2, 0.1, g * g);
        let q = x * x / 4.0 + x * rz + (1.0 - g2) * rz * rz + g2;
        let dq = x + 2.0 * (1.0 - g2) * rz;
        let d = 2.0 * l2 * (1.0 - rz * rz) * q;
        let d1 = 2.0 * l2 * (-2.0 * rz * q + (1.0 - rz * rz) * dq);
        let d2 = 2.0 * l2 * (-2.0 * q - 4.0 * rz * dq + 2.0 * (1.0 - rz * rz) * (1.0 - g2));
        let a = -4.0 * l2 * (x + rz);
        let hand = (a - d1) / d * (dz - d1 * dt) - (4.0 * l2 + d2) * dt;
        let scale = (a.abs() + d1.abs()) / d * (dz.abs() + d1.abs() * dt) + (4.0 * l2 + d2.abs()) * dt;
        prop_assert!((generic - hand).abs() <= 1e-12 * scale.max(1e-300), "{} vs {}", generic, hand);
    }

    #[test]
    fn noise_tangent_to_sphere(rz in interior(), phi in angle(), g in coupling()) {
        let s = model::Bloch3::from_reduced(&BlochState::new(rz, phi).unwrap());
        let b = model::noise_matrix_3d(&s, &params(g));
        let a = model::drift_3d(&s, &params(g));
        let r = [s.rx, s.ry, s.rz];
        for k in 0..3 {
            let dot: f64 = (0..3).map(|i| r[i] * b[i][k]).sum();
            prop_assert!(dot.abs() < 1e-12);
        }
        // Itô drift of r² on the sphere: 2 r·A + tr(BBᵀ) = λ²(βε)²(1 + r_z²).
        // The equations keep r = 1 only up to this O((βε)²) residual.
        let tr: f64 = (0..3).flat_map(|i| (0..3).map(move |k| (i, k))).map(|(i, k)| b[i][k] * b[i][k]).sum();
        let ra: f64 = (0..3).map(|i| r[i] * a[i]).sum();
        let residual = 0.2 * 0.01 * (1.0 + s.rz * s.rz);
        prop_assert!((2.0 * ra + tr - residual).abs() < 1e-12, "{}", 2.0 * ra + tr);
    }
}

#[test]
fn boundary_factors_vanish() {
    for g in [1.0, 2.0, 3.0] {
        let p = params(g);
        assert_eq!(model::diffusion_zz(1.0, &p), 0.0);
        assert_eq!(model::diffusion_zz(-1.0, &p), 0.0);
        let b = model::noise_matrix(&BlochState::new(1.0 - 1e-10, 0.0).unwrap(), &p).unwrap();
        assert!(b[0][2].abs() < 1e-9);
    }
}

#[test]
fn coefficients_singular_at_poles() {
    let p = params(1.0);
    assert!(model::noise_matrix(&BlochState { rz: 1.0, phi: 0.0 }, &p).is_err());
    assert!(model::diffusion_phiphi(-1.0, &p).is_err());
}
