use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use xlris::geometry::{bs_ris_channel, cascaded_channel, rayleigh_distance, ris_user_channel, SystemGeometry};
use xlris::hybrid::hybrid_factorize;
use xlris::im::jain_index;
use xlris::projections::{cmdpp_project, grid_value, phase_align, DiscretePhaseVector};
use xlris::solvers::{ipdd_quadratic_discrete, power_constrained_ls, IpddConfig, QuadraticForm};
use xlris::training::{training_overhead, Scheme};
use xlris::{CMatrix, CVector, Complex64};

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| cn(rng))
}

fn complex() -> impl Strategy<Value = Complex64> {
    (-1e3f64..1e3, -1e3f64..1e3).prop_map(|(re, im)| Complex64::new(re, im))
}

proptest! {
    #[test]
    fn cmdpp_is_nearest_grid_point(k in complex(), bits in 1u32..=6) {
        let (z, v) = cmdpp_project(k, bits);
        prop_assert!(z < 1 << bits);
        prop_assert_eq!(v, grid_value(z, bits));
        let d = (k - v).norm();
        for c in 0..1u32 << bits {
            prop_assert!(d <= (k - grid_value(c, bits)).norm() + 1e-9 * (1.0 + k.norm()));
        }
    }

    #[test]
    fn phase_align_keeps_the_angle(k in complex()) {
        let p = phase_align(k);
        prop_assert!((p.norm() - 1.0).abs() < 1e-12);
        if k.norm() > 1e-9 {
            prop_assert!((p * k.norm() - k).norm() <= 1e-9 * k.norm());
        }
    }

    #[test]
    fn jain_bounds_and_scale_invariance(rates in prop::collection::vec(0.0f64..100.0, 1..12), s in 0.01f64..100.0) {
        prop_assume!(rates.iter().any(|&r| r > 0.0));
        let j = jain_index(&rates).unwrap();
        let k = rates.len() as f64;
        prop_assert!(j >= 1.0 / k - 1e-12 && j <= 1.0 + 1e-12);
        let scaled: Vec<f64> = rates.iter().map(|r| r * s).collect();
        prop_assert!((jain_index(&scaled).unwrap() - j).abs() < 1e-12);
    }

    #[test]
    fn hierarchical_never_exceeds_exhaustive(s in 1u64..20, l in 1u32..8) {
        let h = training_overhead(s, l, Scheme::Hierarchical).unwrap().unwrap();
        let e = training_overhead(s, l, Scheme::Exhaustive).unwrap().unwrap();
        prop_assert_eq!(h, s * l as u64);
        if s >= 2 || l == 1 {
            prop_assert!(h <= e);
        }
    }

    #[test]
    fn rayleigh_distance_scales_quadratically(d in 0.01f64..10.0, lambda in 0.001f64..1.0) {
        let r = rayleigh_distance(d, lambda).unwrap();
        prop_assert!((rayleigh_distance(2.0 * d, lambda).unwrap() - 4.0 * r).abs() <= 1e-12 * r);
        prop_assert!((r * lambda / (2.0 * d * d) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_constrained_ls_respects_budget(seed in any::<u64>(), p in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = mat(&mut rng, 8, 3);
        let t = mat(&mut rng, 8, 1).column(0).into_owned();
        let (w, _) = power_constrained_ls(&a, &t, p).unwrap();
        prop_assert!(w.norm_squared() <= p * (1.0 + 1e-9));
        // No feasible perturbation improves the fit.
        let f = |x: &CVector| (&a * x - &t).norm_squared();
        for _ in 0..20 {
            let d = mat(&mut rng, 3, 1).column(0).into_owned() * Complex64::new(1e-3, 0.0);
            let mut x = &w + d;
            if x.norm_squared() > p {
                x *= Complex64::new((p / x.norm_squared()).sqrt(), 0.0);
            }
            prop_assert!(f(&x) >= f(&w) - 1e-9 * f(&w).max(1.0));
        }
    }

    #[test]
    fn ipdd_output_is_discrete_and_refinement_never_hurts(seed in any::<u64>(), bits in 1u32..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = mat(&mut rng, 5, 12);
        let t = mat(&mut rng, 12, 1).column(0).into_owned();
        let q = QuadraticForm::least_squares(z, &t).unwrap();
        let out = ipdd_quadratic_discrete(&q, &IpddConfig::with_bits(bits), &DiscretePhaseVector::zeros(bits, 5).unwrap()).unwrap();
        prop_assert!(out.phases.indices().iter().all(|&i| i < 1 << bits));
        prop_assert!(out.consensus_gap <= 1e-4);
        prop_assert!(q.evaluate(&out.phases.values()) <= q.evaluate(&out.consensus_phases.values()) + 1e-9);
    }

    #[test]
    fn channel_amplitudes_follow_distance(n1 in 1usize..12, m in 1usize..4, x in -1.0f64..1.0, z in 0.1f64..2.0) {
        let geom = SystemGeometry::new(0.03, n1, 2, m, [-2.0, 0.0, -1.5], 0.0, 1.0, 1e-9).unwrap();
        let g = bs_ris_channel(&geom).unwrap();
        let h = ris_user_channel(&geom, [x, 0.0, z]).unwrap();
        for (row, hv) in h.iter().enumerate() {
            let p = geom.element_position(row);
            let d = ((p[0] - x).powi(2) + (p[1]).powi(2) + (p[2] - z).powi(2)).sqrt();
            prop_assert!((hv.norm() - z / d).abs() < 1e-12);
        }
        let c = cascaded_channel(&g, &h).unwrap();
        for r in 0..c.nrows() {
            for col in 0..m {
                prop_assert!((c[(r, col)] - h[r].conj() * g[(r, col)]).norm() < 1e-15);
            }
        }
    }

    /// The hybrid beam pattern deviates from the target one by at most
    /// `||H^H phi|| * sqrt(residual)` at every point.
    #[test]
    fn hybrid_pattern_error_bounded_by_residual(seed in any::<u64>(), m_rf in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = SystemGeometry::new(0.03, 12, 1, 8, [-1.0, 0.0, -0.8], 0.0, 2.0, 1e-9).unwrap();
        let mut w_star = mat(&mut rng, 8, 1).column(0).into_owned();
        w_star *= Complex64::new((geom.max_power_w / w_star.norm_squared()).sqrt(), 0.0);
        let h = hybrid_factorize(&w_star, m_rf, 2, &IpddConfig::default(), geom.max_power_w, 6).unwrap();
        let w_h = h.precoder();
        let g = bs_ris_channel(&geom).unwrap();
        let phi = DiscretePhaseVector::new(2, (0..12).map(|_| rng.random_range(0..4)).collect()).unwrap().values();
        for _ in 0..10 {
            let u = [rng.random_range(-0.5..0.5), 0.0, rng.random_range(0.2..1.0)];
            let c = cascaded_channel(&g, &ris_user_channel(&geom, u).unwrap()).unwrap();
            let e = (phi.adjoint() * &c * (&w_h - &w_star))[(0, 0)].norm();
            let bound = (c.adjoint() * &phi).norm() * h.residual.sqrt();
            prop_assert!(e <= bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}
