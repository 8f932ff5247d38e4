mod common;

use common::{chain_with_split, irreducible_chain, random_network, spectral_radius_oracle};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wncs::markov::{
    is_irreducible_aperiodic, recurrent_states, spectral_radius, stationary, stationary_residual,
    validate_stochastic,
};
use wncs::model::{build_z_chain, compute_l, enumerate_z, protocol_slot, z_index};
use wncs::stability::{
    build_f, certify_with, partition, return_chain, return_chain_series, CycleAnalysis, PlantMargins, UForm,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn z_chain_is_stochastic(net in random_network()) {
        let z = build_z_chain(&net).unwrap();
        for i in 0..z.len() {
            let s: f64 = z.matrix.entries().row(i).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
        prop_assert_eq!(z.len(), enumerate_z(&net).len());
        for (i, s) in z.states.iter().enumerate() {
            prop_assert_eq!(z_index(&net, s), i);
        }
    }

    #[test]
    fn slot_lengths_stay_in_range(net in random_network()) {
        let cap_l = net.buf_actuator().min(net.max_capacity());
        let cap_a = net.buf_actuator().min(net.max_compute());
        for z in enumerate_z(&net) {
            if z.lam_c + z.lam_a > net.max_compute() {
                continue;
            }
            for gamma in [false, true] {
                for gamma_p in [false, true] {
                    let l = compute_l(gamma_p, z.n_next, z.b_next, z.lam_c, z.lam_a, &net);
                    prop_assert!(l <= cap_l);
                    let (_, (lc, la)) = protocol_slot(&net, &z, gamma, gamma_p).unwrap();
                    prop_assert!(la <= cap_a && lc <= net.buf_controller(), "{z}: ({lc}, {la})");
                }
            }
        }
    }

    #[test]
    fn initial_state_is_recurrent(net in random_network()) {
        let z = build_z_chain(&net).unwrap();
        let init = net.initial();
        let i = z.states.iter().position(|s| {
            s.lam_c == 0 && s.lam_a == 0 && s.next_channel() == init
        }).unwrap();
        prop_assert!(recurrent_states(&z.matrix).recurrent.contains(&i));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn omega_never_exceeds_omega_prime((m, s0) in chain_with_split(7), rho in 0.05..0.95f64, gain in 0.2..3.0f64) {
        let margins = PlantMargins::new(rho, gain * rho).unwrap();
        for form in [UForm::StationaryWeighted, UForm::TimeReversal] {
            let r = certify_with(&m, &s0, margins, form).unwrap();
            prop_assert!(r.omega <= r.omega_prime + 1e-9, "{form:?}: {} > {}", r.omega, r.omega_prime);
            prop_assert!(r.max_r < 1.0 && r.max_r >= 0.0);
        }
    }

    #[test]
    fn closed_form_matches_series((m, s0) in chain_with_split(7), rho in 0.05..0.95f64) {
        let blocks = partition(&m, &s0).unwrap();
        let closed = return_chain(&blocks, rho).unwrap();
        let (v, d) = return_chain_series(&blocks, rho).unwrap();
        prop_assert!((closed.v_tilde.entries() - v).amax() <= 1e-10);
        prop_assert!((&closed.d_weighted - d).amax() <= 1e-10);
        for i in 0..s0.len() {
            prop_assert!((closed.v_tilde.entries().row(i).sum() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn f_columns_sum_to_one((m, s0) in chain_with_split(7)) {
        let blocks = partition(&m, &s0).unwrap();
        let rc = return_chain(&blocks, 0.5).unwrap();
        let pi = stationary(&rc.v_tilde).unwrap();
        let f = build_f(&rc.v_tilde, &pi).unwrap();
        for j in 0..f.ncols() {
            prop_assert!((f.column(j).sum() - 1.0).abs() <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn certificates_are_monotone((m, s0) in chain_with_split(6)) {
        let mut prev: Option<(f64, f64)> = None;
        for alpha in [0.2, 0.5, 1.0, 2.0] {
            let r = certify_with(&m, &s0, PlantMargins::new(0.6, alpha).unwrap(), UForm::TimeReversal).unwrap();
            if let Some((o, op)) = prev {
                prop_assert!(r.omega >= o - 1e-12 && r.omega_prime >= op - 1e-12);
            }
            prev = Some((r.omega, r.omega_prime));
        }
        // α/ρ fixed, ρ increasing.
        let mut prev: Option<(f64, f64)> = None;
        for rho in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let r = certify_with(&m, &s0, PlantMargins::new(rho, 1.2 * rho).unwrap(), UForm::TimeReversal).unwrap();
            if let Some((o, op)) = prev {
                prop_assert!(r.omega >= o - 1e-12 && r.omega_prime >= op - 1e-12);
            }
            prev = Some((r.omega, r.omega_prime));
        }
    }

    #[test]
    fn single_closed_loop_state_reduces_to_the_cycle_moment(m in irreducible_chain(6), rho in 0.1..0.9f64) {
        let blocks = partition(&m, &[0]).unwrap();
        // P(Δ = l) from the block powers: V00 for l = 1, V01 V11^{l−2} V10 after.
        let v01 = blocks.v01.entries();
        let v10 = blocks.v10.entries();
        let v11 = blocks.v11.entries();
        let mut moment = rho * blocks.v00.entries()[(0, 0)];
        let mut row = v01.clone();
        let mut rl = rho * rho;
        for _ in 0..20_000 {
            let p = (&row * v10)[(0, 0)];
            moment += rl * p;
            row = &row * v11;
            rl *= rho;
            if row.amax() < 1e-300 || rl < 1e-300 {
                break;
            }
        }
        let alpha = 0.7;
        let r = certify_with(&m, &[0], PlantMargins::new(rho, alpha).unwrap(), UForm::TimeReversal).unwrap();
        prop_assert!((r.omega_prime - alpha / rho * moment).abs() <= 1e-12);
        prop_assert!((r.omega - r.omega_prime).abs() <= 1e-12);
    }

    #[test]
    fn spectral_radius_matches_characteristic_polynomial(n in 1usize..=6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, n, |_, _| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random::<f64>() - 0.3 });
        let got = spectral_radius(&m).unwrap();
        let want = spectral_radius_oracle(&m);
        prop_assert!((got - want).abs() <= 1e-8, "{got} vs {want}");
    }

    #[test]
    fn stationary_is_a_fixed_point(m in irreducible_chain(10)) {
        let pi = stationary(&m).unwrap();
        prop_assert!(stationary_residual(&m, &pi) <= 1e-10);
        let ia = is_irreducible_aperiodic(&m);
        prop_assert!(ia.irreducible && pi.weights().iter().all(|&p| p > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stationary_matches_long_walk(m in irreducible_chain(6), seed in any::<u64>()) {
        let pi = stationary(&m).unwrap();
        let n = m.dim();
        let mut counts = vec![0u64; n];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = 0;
        let steps = 1_000_000;
        for _ in 0..steps {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut next = n - 1;
            for j in 0..n {
                acc += m.get(s, j);
                if u < acc {
                    next = j;
                    break;
                }
            }
            s = next;
            counts[s] += 1;
        }
        for i in 0..n {
            prop_assert!((counts[i] as f64 / steps as f64 - pi.weights()[i]).abs() <= 0.01);
        }
    }
}

#[test]
fn stochastic_rows_are_enforced() {
    let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.5, 0.5]);
    assert!(validate_stochastic(&bad).is_err());
    let neg = DMatrix::from_row_slice(2, 2, &[1.1, -0.1, 0.5, 0.5]);
    assert!(validate_stochastic(&neg).is_err());
}

#[test]
fn r_increases_with_rho_entrywise() {
    let m = common::eq35();
    let lo = CycleAnalysis::new(&m, &[0, 1], 0.5, UForm::TimeReversal).unwrap();
    let hi = CycleAnalysis::new(&m, &[0, 1], 0.8, UForm::TimeReversal).unwrap();
    assert!(hi.max_r() > lo.max_r());
}
