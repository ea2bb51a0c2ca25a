use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;
use zvonkin_core::integrators::{simulate_path, BrownianIncrements, Scheme};
use zvonkin_core::ou::OuTransition;
use zvonkin_core::potential::{ConvexPotential, PowerPotential, SignDrift, ZeroDrift};
use zvonkin_core::rng::StreamKey;
use zvonkin_core::zvonkin::{c_lambda, choose_lambda};
use zvonkin_core::{CoeffVec, SpectralModel};

fn model(n: usize) -> Arc<SpectralModel> {
    Arc::new(SpectralModel::dirichlet_default(n).unwrap())
}

fn point(n: usize, seed: u64, scale: f64) -> CoeffVec {
    model(n).sample_gamma(&mut StreamKey::root(seed, 0).stream()).scaled(scale)
}

// Σ_k 1/(λ + k²π²) = (√λ coth √λ − 1)/(2λ)
fn c_closed_form(lambda: f64) -> f64 {
    let s = lambda.sqrt();
    4.0 * PI * (s / s.tanh() - 1.0) / (2.0 * lambda)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn power_gradient_is_monotone(s1 in 0u64..1000, s2 in 1000u64..2000, m in 1.0f64..4.0, scale in 0.1f64..10.0) {
        let v = PowerPotential::new(model(8), m, 0.0).unwrap();
        let (x, y) = (point(8, s1, scale), point(8, s2, scale));
        let d = x.sub(&y);
        let g = v.gradient(&x).sub(&v.gradient(&y));
        prop_assert!(g.dot(&d) >= -1e-10 * d.dot(&d) * (1.0 + g.norm() / d.norm()));
    }

    #[test]
    fn yosida_resolvent_is_nonexpansive(s1 in 0u64..1000, s2 in 1000u64..2000, log_alpha in -4.0f64..1.0) {
        let v = PowerPotential::new(model(8), 3.0, 0.0).unwrap();
        let alpha = 10f64.powf(log_alpha);
        let (x, y) = (point(8, s1, 3.0), point(8, s2, 3.0));
        let (jx, jy) = (v.resolvent(alpha, &x).unwrap(), v.resolvent(alpha, &y).unwrap());
        prop_assert!(jx.dist(&jy) <= x.dist(&y) * (1.0 + 1e-10));
    }

    #[test]
    fn yosida_drift_bounded_by_gradient(s in 0u64..1000, log_alpha in -4.0f64..1.0) {
        let v = PowerPotential::new(model(8), 3.0, 0.0).unwrap();
        let x = point(8, s, 3.0);
        let f = v.yosida_drift(10f64.powf(log_alpha), &x).unwrap();
        prop_assert!(f.norm() <= v.gradient(&x).norm() * (1.0 + 1e-9) + 1e-14);
    }

    #[test]
    fn ou_transition_moments_in_range(k in 1usize..64, log_t in -6.0f64..1.0) {
        let m = model(64);
        let t = 10f64.powf(log_t);
        let tr = OuTransition::new(&m, t).unwrap();
        let a = m.a()[k - 1];
        prop_assert!(tr.decay[k - 1] >= 0.0 && tr.decay[k - 1] < 1.0);
        prop_assert!(tr.var[k - 1] > 0.0 && tr.var[k - 1] <= t.min(0.5 / a) * (1.0 + 1e-12));
        // stationary variance recovered from decay²·q + var = q
        let q = 0.5 / a;
        prop_assert!((tr.decay[k - 1].powi(2) * q + tr.var[k - 1] - q).abs() <= 1e-14);
    }

    #[test]
    fn coarse_increments_are_pairwise_sums(seed in any::<u64>(), level in 1u32..8) {
        let fine = BrownianIncrements::generate(4, 1.0, level, StreamKey::root(seed, 1)).unwrap();
        let coarse = fine.coarsen().unwrap();
        for j in 0..coarse.n_steps() {
            for i in 0..4 {
                let sum = fine.increment(2 * j)[i] + fine.increment(2 * j + 1)[i];
                prop_assert_eq!(coarse.increment(j)[i], sum);
            }
        }
        let view = fine.view(level - 1).unwrap();
        prop_assert_eq!(view.increment(0), coarse.increment(0));
    }

    #[test]
    fn unit_ratio_yosida_step_matches_split_step(seed in any::<u64>()) {
        let m = model(8);
        let v = PowerPotential::new(m.clone(), 3.0, 0.0).unwrap();
        let noise = BrownianIncrements::generate(8, 1.0, 6, StreamKey::root(seed, 2)).unwrap();
        let z = point(8, seed, 1.0);
        let drift = SignDrift { b: 1.0 };
        let a = simulate_path(&m, &v, &drift, &z, 1.0, 64, Scheme::SplitImplicit, &noise).unwrap();
        let b = simulate_path(&m, &v, &drift, &z, 1.0, 64, Scheme::YosidaExplicit { alpha_ratio: 1.0 }, &noise).unwrap();
        // x + h(J_h x − x)/h equals J_h x only up to rounding
        let worst = a.states.iter().zip(&b.states).map(|(u, v)| u.dist(v)).fold(0.0, f64::max);
        prop_assert!(worst < 1e-12, "{worst:e}");
    }

    #[test]
    fn c_lambda_matches_closed_form(log_l in -2.0f64..6.0) {
        let l = 10f64.powf(log_l);
        let c = c_lambda(l).unwrap();
        prop_assert!((c - c_closed_form(l)).abs() <= 1e-9 * c_closed_form(l));
    }

    #[test]
    fn chosen_lambda_is_minimal_power_of_two(b in 0.0f64..4.0) {
        let l = choose_lambda(b).unwrap();
        prop_assert_eq!(l.log2().fract(), 0.0);
        prop_assert!(l >= 4.0 * PI * b * b && c_closed_form(l) * b <= 0.5 + 1e-12);
        if l > 1.0 {
            let h = l / 2.0;
            prop_assert!(h < 4.0 * PI * b * b || c_closed_form(h) * b > 0.5);
        }
    }

    #[test]
    fn synth_analyze_round_trip(seed in any::<u64>()) {
        let m = model(16);
        let x = point(16, seed, 1.0);
        let back = m.analyze(&m.synth(&x).unwrap()).unwrap();
        prop_assert!(back.dist(&x) <= 1e-12 * (1.0 + x.norm()));
    }
}

#[test]
fn same_key_same_path() {
    let m = model(8);
    let v = PowerPotential::new(m.clone(), 3.0, 0.0).unwrap();
    let run = |seed| {
        let noise = BrownianIncrements::generate(8, 1.0, 8, StreamKey::root(seed, 3)).unwrap();
        simulate_path(&m, &v, &ZeroDrift, &m.zeros(), 1.0, 256, Scheme::SplitImplicit, &noise).unwrap()
    };
    assert_eq!(run(7).states, run(7).states);
    assert_ne!(run(7).states, run(8).states);
}

#[test]
fn c_at_one() {
    // 2π(coth 1 − 1)
    assert!((c_lambda(1.0).unwrap() - 1.966_858_7).abs() < 1e-7);
    assert_eq!(choose_lambda(0.5).unwrap(), 32.0);
    assert_eq!(choose_lambda(1.0).unwrap(), 256.0);
    assert_eq!(choose_lambda(0.0).unwrap(), 1.0);
}
