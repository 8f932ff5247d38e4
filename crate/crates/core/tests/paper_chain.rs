mod common;

use common::{load_config, paper_network};
use wncs::markov::{is_irreducible_aperiodic, recurrent_states, restrict};
use wncs::model::{build_z_chain, read_chain_csv, split_s0, ZChain, ZState};
use wncs::stability::{certify, certify_with, PlantMargins, UForm};

fn margins() -> PlantMargins {
    PlantMargins::new(0.8, 0.8).unwrap()
}

#[test]
fn structure_is_the_same_for_every_gamma_bar() {
    for g in [0.1, 0.2, 0.3, 0.05, 0.9] {
        let z = build_z_chain(&paper_network(g)).unwrap();
        assert_eq!(z.len(), 162, "γ̄ = {g}");
        let (s0, _) = z.split_s0();
        assert_eq!(s0.len(), 54, "γ̄ = {g}");
        let parts = recurrent_states(&z.matrix);
        assert_eq!(parts.recurrent.len() + parts.transient.len(), 162);
        // Regression: the literal protocol rules leave 102 recurrent states.
        assert_eq!(parts.recurrent.len(), 102, "γ̄ = {g}");
        let rec = restrict(&z.matrix, &parts.recurrent).unwrap();
        assert!(is_irreducible_aperiodic(&rec).is_ia(), "γ̄ = {g}");
    }
    let z = build_z_chain(&paper_network(0.1)).unwrap();
    let (s0, _) = z.split_s0();
    let report = certify(&z.matrix, &s0, margins()).unwrap();
    assert_eq!(
        (report.counts.total, report.counts.recurrent, report.counts.s0),
        (162, 102, 54)
    );
}

#[test]
fn transient_states_are_overfull_or_unreachable() {
    let z = build_z_chain(&paper_network(0.2)).unwrap();
    let parts = recurrent_states(&z.matrix);
    for &i in &parts.transient {
        let s = z.states[i];
        let overfull = s.lam_c + s.lam_a > 2;
        // λa = 2 needs B = 2 in the slot, and the channel never goes 2 → 0.
        let blocked = s.lam_a == 2 && s.b_next == 0;
        assert!(overfull || blocked, "{s} is transient");
    }
}

#[test]
fn initial_state_is_recurrent() {
    for g in [0.01, 0.1, 0.5, 0.99] {
        let net = paper_network(g);
        let z = build_z_chain(&net).unwrap();
        let init = net.initial();
        let i = z
            .index_of(&ZState {
                lam_c: 0,
                lam_a: 0,
                b_next: init.b,
                bp_next: init.bp,
                n_next: init.n,
            })
            .unwrap();
        assert!(recurrent_states(&z.matrix).recurrent.contains(&i), "γ̄ = {g}");
    }
}

#[test]
fn reproduces_published_spectral_values() {
    let z = build_z_chain(&paper_network(0.1)).unwrap();
    let (s0, _) = z.split_s0();
    let r = certify(&z.matrix, &s0, margins()).unwrap();
    assert!((r.max_r - 0.8).abs() < 1e-3, "max r = {}", r.max_r);
    assert!((r.lambda_max_u - 0.0016).abs() < 5e-5, "λ = {}", r.lambda_max_u);
    assert!(r.omega <= r.omega_prime + 1e-9);
}

#[test]
fn spectral_ordering_holds_across_sweep() {
    for g in [0.1, 0.2, 0.3] {
        let z = build_z_chain(&paper_network(g)).unwrap();
        let (s0, _) = z.split_s0();
        let r = certify(&z.matrix, &s0, margins()).unwrap();
        assert!(r.lambda_max_u / r.max_r < 0.1, "γ̄ = {g}: {}", r.lambda_max_u);
        assert!(r.lambda_max_u_time_reversal > 0.0 && r.lambda_max_u_time_reversal < 1.0);
    }
}

#[test]
fn certify_ignores_transient_states() {
    let z = build_z_chain(&paper_network(0.2)).unwrap();
    let parts = recurrent_states(&z.matrix);
    let rec = ZChain::from_labeled(restrict(&z.matrix, &parts.recurrent).unwrap()).unwrap();
    assert!(is_irreducible_aperiodic(&rec.matrix).is_ia());
    let (s0_full, _) = z.split_s0();
    let (s0_rec, _) = split_s0(&rec.states);
    let full = certify_with(&z.matrix, &s0_full, margins(), UForm::TimeReversal).unwrap();
    let reduced = certify_with(&rec.matrix, &s0_rec, margins(), UForm::TimeReversal).unwrap();
    assert!((full.omega - reduced.omega).abs() < 1e-12);
    for (a, b) in full.v_tilde.iter().flatten().zip(reduced.v_tilde.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn csv_round_trip_preserves_the_chain() {
    let z = build_z_chain(&paper_network(0.3)).unwrap();
    let mut buf = Vec::new();
    z.write_csv(&mut buf).unwrap();
    let back = read_chain_csv(&buf[..]).unwrap();
    assert_eq!(back, z.matrix);
    let zc = ZChain::from_labeled(back).unwrap();
    assert_eq!(zc.states, z.states);
}

#[test]
fn shipped_configs_parse() {
    let small = load_config("paper_small.cfg");
    assert!(small.raw_chain.is_some() && small.network.is_none());
    let big = load_config("paper_162.cfg");
    assert!((big.require_network().unwrap().ca_drop() - 0.1).abs() < 1e-15);
    let sim = load_config("paper_sim.cfg");
    let cfg = sim.sim_config(1).unwrap();
    assert_eq!((cfg.horizon, cfg.x0.clone()), (800, vec![10.0, 10.0]));
    assert_eq!(sim.run.seeds.len(), 20);
}
