mod common;

use std::sync::Arc;

use common::load_config;
use wncs::config::ConfigFile;
use wncs::plant::{LinearPlant, NoiseSpec, PlantModel};
use wncs::simulator::{cycle_stats, monte_carlo, simulate, Mode, SimConfig, SimError, MAX_IN_MEMORY};
use wncs::stability::PlantMargins;

fn paper_sim() -> SimConfig {
    load_config("paper_sim.cfg").sim_config(1).unwrap()
}

fn csv(cfg: &SimConfig) -> Vec<u8> {
    let mut out = Vec::new();
    simulate(cfg).unwrap().write_csv(&mut out).unwrap();
    out
}

#[test]
fn identical_seeds_give_identical_csv() {
    let cfg = paper_sim().with_seed(42);
    for mode in [Mode::DualBuffer, Mode::SingleBufferBaseline] {
        let c = cfg.with_mode(mode);
        assert_eq!(csv(&c), csv(&c));
    }
    assert_ne!(csv(&cfg), csv(&cfg.with_seed(43)));
}

#[test]
fn horizon_one_gives_one_row() {
    let mut cfg = paper_sim();
    cfg.horizon = 1;
    let text = String::from_utf8(csv(&cfg)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("t,x0,x1,norm_x,u0,u1,lam_c,lam_a,B,Bp,N,"));
    assert!(lines[1].starts_with("0,10,10,"));
}

fn perfect_network() -> wncs::model::NetworkConfig {
    let text = std::fs::read_to_string(common::config_path("paper_sim.cfg"))
        .unwrap()
        .replace("sc_drop = [0.2, 0.01]", "sc_drop = [0.0, 0.0]")
        .replace("ca_drop = 0.2", "ca_drop = 0.0");
    ConfigFile::parse(&text, &common::config_path("")).unwrap().network.unwrap()
}

#[test]
fn dead_ca_link_gives_zero_input_in_both_modes() {
    let mut cfg = paper_sim();
    cfg.network = cfg.network.with_ca_drop(1.0).unwrap();
    for mode in [Mode::DualBuffer, Mode::SingleBufferBaseline] {
        let t = simulate(&cfg.with_mode(mode)).unwrap();
        assert!(t.records().all(|r| r.u.iter().all(|&u| u == 0.0)));
        assert_eq!(t.stats.open_loop, t.stats.steps);
    }
}

#[test]
fn input_is_zero_exactly_when_actuator_is_empty() {
    let t = simulate(&paper_sim().with_seed(9)).unwrap();
    for r in t.records() {
        if r.slot.lam_a == 0 {
            assert!(r.u.iter().all(|&u| u == 0.0), "t={}", r.t);
        }
    }
}

#[test]
fn cycle_markers_bracket_closed_loop_runs() {
    let t = simulate(&paper_sim().with_seed(4)).unwrap();
    let slots = t.slots();
    for w in t.markers.windows(2) {
        let (a, b) = (w[0].t as usize, w[1].t as usize);
        assert_eq!(slots[a].lam_a, 0);
        assert_eq!(slots[b].lam_a, 0);
        assert!(slots[a + 1..b].iter().all(|s| s.lam_a > 0));
    }
    let zs = t.z_sequence();
    for m in &t.markers {
        assert_eq!(zs[m.t as usize], m.z);
    }
}

#[test]
fn baseline_is_open_loop_more_often() {
    let cfg = paper_sim();
    let seeds: Vec<u64> = (1..=20).collect();
    let dual = monte_carlo(&cfg, &seeds).unwrap();
    let base = monte_carlo(&cfg.with_mode(Mode::SingleBufferBaseline), &seeds).unwrap();
    assert!(dual.open_loop_fraction < base.open_loop_fraction);
    let worse = dual
        .per_seed
        .iter()
        .zip(&base.per_seed)
        .filter(|(d, b)| d.open_loop_fraction > b.open_loop_fraction)
        .count();
    assert_eq!(worse, 0, "dual buffer open loop longer on {worse} paired seeds");
}

fn linear_cfg(gain: f64) -> SimConfig {
    let mut cfg = load_config("paper_sim.cfg").sim_config(1).unwrap();
    cfg.plant = Arc::new(LinearPlant { a: 1.1, b: 1.0, k: 1.1 - gain });
    cfg.plant_name = "linear1d".into();
    cfg.x0 = vec![5.0];
    cfg.noise = NoiseSpec::None;
    cfg
}

#[test]
fn closed_loop_contraction_on_perfect_links() {
    let mut cfg = linear_cfg(0.3);
    cfg.network = perfect_network();
    let plant = LinearPlant { a: 1.1, b: 1.0, k: 0.8 };
    let rho = plant.rho();
    let t = simulate(&cfg).unwrap();
    let xs: Vec<f64> = (0..t.in_memory()).map(|i| t.x(i)[0]).collect();
    for (i, w) in xs.windows(2).enumerate() {
        if t.slot(i).lam_a > 0 {
            assert!(plant.lyapunov(&[w[1]]) <= rho * plant.lyapunov(&[w[0]]) * (1.0 + 1e-12) + 1e-300);
        }
    }
}

#[test]
fn single_seed_aggregate_equals_the_run() {
    let cfg = paper_sim().with_seed(7);
    let report = monte_carlo(&cfg, &[7]).unwrap();
    let t = simulate(&cfg).unwrap();
    assert_eq!(report.per_seed.len(), 1);
    assert_eq!(report.mean_norm, t.stats.mean_norm());
    assert_eq!(report.max_norm, t.stats.max_norm);
    assert_eq!(report.open_loop_fraction, t.stats.open_loop_fraction());
}

#[test]
fn seeds_must_be_distinct_and_present() {
    let cfg = paper_sim();
    assert!(matches!(monte_carlo(&cfg, &[]), Err(SimError::Config(_))));
    assert!(matches!(monte_carlo(&cfg, &[1, 2, 1]), Err(SimError::Config(_))));
}

#[test]
fn merge_is_independent_of_seed_order() {
    let cfg = paper_sim();
    let a = monte_carlo(&cfg, &[5, 1, 3]).unwrap();
    let b = monte_carlo(&cfg, &[1, 3, 5]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn xi_is_tracked_with_margins() {
    let mut cfg = linear_cfg(0.3);
    cfg.margins = Some(PlantMargins::new(0.3, 1.1).unwrap());
    cfg.horizon = 5000;
    let t = simulate(&cfg).unwrap();
    let stats = cycle_stats(&t, cfg.margins).unwrap();
    assert_eq!(stats.log_xi.len(), stats.cycles() + 1);
    assert_eq!(stats.log_xi[0], 0.0);
    let d0 = stats.deltas[0] as f64;
    assert!((stats.log_xi[1] - (1.1f64.ln() + (d0 - 1.0) * 0.3f64.ln())).abs() < 1e-12);
}

#[test]
fn long_runs_spill_to_disk_and_clean_up() {
    let mut cfg = linear_cfg(0.3);
    cfg.horizon = MAX_IN_MEMORY as u64 + 5;
    let t = simulate(&cfg).unwrap();
    assert_eq!(t.len(), cfg.horizon);
    assert_eq!(t.in_memory(), MAX_IN_MEMORY);
    let path = t.spill_file().unwrap().to_path_buf();
    assert!(path.exists());
    let mut out = Vec::new();
    t.write_csv(&mut out).unwrap();
    let rows = out.iter().filter(|&&b| b == b'\n').count();
    assert_eq!(rows, cfg.horizon as usize + 1);
    assert_eq!(t.stats.steps, cfg.horizon);
    drop(t);
    assert!(!path.exists());
}
