//! Closed-loop simulation of the dual-buffer protocol and of the
//! single-buffer baseline.
//!
//! Slot `t` uses the channel state `(B, B′, N)` held from the previous slot
//! (the configured initial state for the first slot), then:
//! 1. draws `γ′` and, if `γ′N > 0`, replaces the controller buffer with a
//!    fresh sequence computed from `x(t)`;
//! 2. computes `L`, draws `γ` and updates both buffers;
//! 3. applies the head of the actuator buffer (zero when empty);
//! 4. steps the plant and draws the channel state for slot `t + 1`.

mod cycles;
mod monte_carlo;
pub mod rng;
mod trace;

pub use cycles::{cycle_stats, CycleStats};
pub use monte_carlo::{monte_carlo, thread_pool, MonteCarloReport, SeedSummary, THREADS_ENV};
pub use trace::{CycleMarker, RunningStats, SimTrace, SlotRecord, StepRecord, MAX_IN_MEMORY};

use crate::model::{compute_l, protocol_slot, ChannelState, ModelError, NetworkConfig, ZState};
use crate::plant::{generate_sequence, NoiseSpec, PlantModel};
use crate::stability::PlantMargins;
use rng::{sample_row, SlotRng};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("need at least 2 cycle markers, found {0}")]
    InsufficientCycles(usize),
    #[error("trace I/O: {0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which loop to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    DualBuffer,
    /// No actuator buffer: a received packet's first command is applied in
    /// the slot it arrives and the rest are discarded.
    SingleBufferBaseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::DualBuffer => "dual-buffer",
            Mode::SingleBufferBaseline => "single-buffer-baseline",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dual-buffer" => Ok(Mode::DualBuffer),
            "single-buffer-baseline" | "baseline" => Ok(Mode::SingleBufferBaseline),
            other => Err(format!(
                "unknown mode {other:?} (dual-buffer | single-buffer-baseline)"
            )),
        }
    }
}

/// Everything one run needs.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub plant: Arc<dyn PlantModel>,
    pub plant_name: String,
    pub noise: NoiseSpec,
    /// Enables `Ξ(n)` tracking in cycle statistics.
    pub margins: Option<PlantMargins>,
    pub horizon: u64,
    pub seed: u64,
    pub mode: Mode,
    pub x0: Vec<f64>,
    /// Where steps beyond [`MAX_IN_MEMORY`] are streamed; a temporary file
    /// when unset. The file is removed when the trace is dropped.
    pub spill_path: Option<PathBuf>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon < 1 {
            return Err(SimError::Config("horizon must be at least 1".into()));
        }
        let (ls, _) = self.plant.dims();
        if self.x0.len() != ls {
            return Err(SimError::Config(format!(
                "x0 has {} entries, plant {:?} expects {ls}",
                self.x0.len(),
                self.plant_name
            )));
        }
        if let NoiseSpec::GaussianIid { variance } = self.noise {
            NoiseSpec::gaussian(variance).map_err(SimError::Config)?;
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// Controller and actuator command buffers; the effective lengths are the
/// buffer sizes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferPair {
    pub controller: VecDeque<Vec<f64>>,
    pub actuator: VecDeque<Vec<f64>>,
}

impl BufferPair {
    pub fn lam_c(&self) -> usize {
        self.controller.len()
    }

    pub fn lam_a(&self) -> usize {
        self.actuator.len()
    }

    /// Dual-buffer update for one slot after any fresh sequence has been
    /// loaded into the controller.
    fn update_dual(&mut self, fresh: bool, lam_a_prev: usize, l: usize, gamma: bool) {
        let sent: Vec<Vec<f64>> = self.controller.iter().take(l).cloned().collect();
        if fresh {
            if gamma {
                self.controller.drain(..l);
                self.actuator = sent.into();
            } else {
                self.controller.clear();
                self.actuator.pop_front();
            }
        } else if lam_a_prev != 0 {
            self.actuator.pop_front();
            if gamma {
                self.controller.drain(..l);
                self.actuator.extend(sent);
            }
        } else {
            self.controller.clear();
            self.actuator.clear();
        }
    }
}

/// Dual-buffer run.
pub fn run(cfg: &SimConfig) -> Result<SimTrace, SimError> {
    simulate(&cfg.with_mode(Mode::DualBuffer))
}

/// Single-buffer baseline run on the same random streams.
pub fn run_baseline(cfg: &SimConfig) -> Result<SimTrace, SimError> {
    simulate(&cfg.with_mode(Mode::SingleBufferBaseline))
}

/// Runs `cfg.mode`.
pub fn simulate(cfg: &SimConfig) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let net = &cfg.network;
    let plant = cfg.plant.as_ref();
    let (ls, lu) = plant.dims();
    let zero_u = vec![0.0; lu];
    let mut rng = SlotRng::new(cfg.seed, cfg.noise);
    let mut trace = SimTrace::new(cfg.mode, cfg.seed, (ls, lu), MAX_IN_MEMORY, net.initial());
    let spill_path = || {
        cfg.spill_path.clone().unwrap_or_else(|| {
            static NEXT: AtomicU64 = AtomicU64::new(0);
            std::env::temp_dir().join(format!(
                "wncs-trace-{}-{}-{}.csv",
                std::process::id(),
                cfg.seed,
                NEXT.fetch_add(1, Ordering::Relaxed)
            ))
        })
    };
    let mut channel = net.initial();
    let mut buffers = BufferPair::default();
    let mut x = cfg.x0.clone();
    for _ in 0..cfg.horizon {
        let ChannelState { b, bp, n } = channel;
        let gamma_p = rng.gamma_p() < 1.0 - net.sc_drop(bp);
        let gamma_raw = rng.gamma() < 1.0 - net.ca_drop();
        let (lam_c_prev, lam_a_prev) = (buffers.lam_c(), buffers.lam_a());
        let fresh = gamma_p && n > 0;
        if fresh {
            buffers.controller = generate_sequence(plant, &x, n).into();
        }
        let (slot, u) = match cfg.mode {
            Mode::DualBuffer => {
                let l = compute_l(gamma_p, n, b, lam_c_prev, lam_a_prev, net);
                let gamma = net.l0_policy().effective_gamma(gamma_raw, l);
                buffers.update_dual(fresh, lam_a_prev, l, gamma);
                debug_assert_eq!(
                    {
                        let z = ZState {
                            lam_c: lam_c_prev,
                            lam_a: lam_a_prev,
                            b_next: b,
                            bp_next: bp,
                            n_next: n,
                        };
                        protocol_slot(net, &z, gamma_raw, gamma_p).map(|(_, lens)| lens)
                    },
                    Ok((buffers.lam_c(), buffers.lam_a())),
                    "content and length rules disagree"
                );
                let u = buffers.actuator.front().cloned().unwrap_or_else(|| zero_u.clone());
                let slot = SlotRecord {
                    lam_c: buffers.lam_c(),
                    lam_a: buffers.lam_a(),
                    channel,
                    gamma,
                    gamma_p,
                    l,
                };
                (slot, u)
            }
            Mode::SingleBufferBaseline => {
                let l = b.min(buffers.lam_c()).min(net.buf_actuator());
                let gamma = net.l0_policy().effective_gamma(gamma_raw, l);
                let applied = if gamma && l > 0 {
                    buffers.controller.front().cloned()
                } else {
                    None
                };
                if fresh && !gamma {
                    buffers.controller.clear();
                } else {
                    buffers.controller.pop_front();
                }
                let slot = SlotRecord {
                    lam_c: buffers.lam_c(),
                    lam_a: usize::from(applied.is_some()),
                    channel,
                    gamma,
                    gamma_p,
                    l,
                };
                (slot, applied.unwrap_or_else(|| zero_u.clone()))
            }
        };
        let w = rng.noise(ls);
        let lyapunov = plant.lyapunov(&x);
        trace.push(&x, &u, slot, lyapunov, spill_path)?;
        x = plant.step(&x, &u, &w);
        let (ub, un) = (rng.channel(), rng.compute());
        let next_joint = sample_row(net.joint_channel(), net.joint_index(b, bp), ub);
        let (nb, nbp) = net.joint_state(next_joint);
        let nn = sample_row(net.compute(), n, un);
        channel = ChannelState {
            b: nb,
            bp: nbp,
            n: nn,
        };
        if slot.open_loop() {
            trace.markers.push(CycleMarker {
                t: trace.len() - 1,
                z: ZState {
                    lam_c: slot.lam_c,
                    lam_a: 0,
                    b_next: nb,
                    bp_next: nbp,
                    n_next: nn,
                },
            });
        }
    }
    trace.final_channel = channel;
    trace.final_x = x;
    trace.finish()?;
    Ok(trace)
}

/// The length-level protocol alone, on the same random streams as
/// [`simulate`]: `visit` receives `Z(t)` for the initial state
/// `(0, 0, B₀, B′₀, N₀)` and then after each of `steps` slots.
///
/// A dual-buffer [`simulate`] run with the same seed produces the same
/// sequence in [`SimTrace::z_sequence`].
pub fn protocol_walk(
    net: &NetworkConfig,
    seed: u64,
    steps: u64,
    mut visit: impl FnMut(&ZState),
) -> Result<(), SimError> {
    let mut rng = SlotRng::new(seed, NoiseSpec::None);
    let init = net.initial();
    let mut z = ZState {
        lam_c: 0,
        lam_a: 0,
        b_next: init.b,
        bp_next: init.bp,
        n_next: init.n,
    };
    visit(&z);
    for _ in 0..steps {
        let gamma_p = rng.gamma_p() < 1.0 - net.sc_drop(z.bp_next);
        let gamma_raw = rng.gamma() < 1.0 - net.ca_drop();
        let (_, (lam_c, lam_a)) = protocol_slot(net, &z, gamma_raw, gamma_p)?;
        let (ub, un) = (rng.channel(), rng.compute());
        let joint = sample_row(net.joint_channel(), net.joint_index(z.b_next, z.bp_next), ub);
        let (b_next, bp_next) = net.joint_state(joint);
        let n_next = sample_row(net.compute(), z.n_next, un);
        z = ZState {
            lam_c,
            lam_a,
            b_next,
            bp_next,
            n_next,
        };
        visit(&z);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{L0Policy, NetworkParams};
    use crate::plant::{LinearPlant, SaturatedPlant};
    use nalgebra::DMatrix;

    fn network(ca_drop: f64, sc_drop: f64, nbar: usize) -> NetworkConfig {
        // B ≡ nbar, N ≡ nbar: a single channel state and a single compute state.
        let joint_dim = nbar + 1;
        let mut joint = DMatrix::zeros(joint_dim, joint_dim);
        joint.column_mut(nbar).fill(1.0);
        let mut compute = DMatrix::zeros(nbar + 1, nbar + 1);
        compute.column_mut(nbar).fill(1.0);
        NetworkConfig::new(NetworkParams {
            joint_channel: joint,
            compute,
            ca_drop,
            sc_drop: vec![sc_drop],
            buf_controller: nbar,
            buf_actuator: nbar,
            initial: ChannelState {
                b: nbar,
                bp: 1,
                n: nbar,
            },
            l0_policy: L0Policy::Literal,
        })
        .unwrap()
    }

    fn sim(net: NetworkConfig, horizon: u64) -> SimConfig {
        SimConfig {
            network: net,
            plant: Arc::new(SaturatedPlant),
            plant_name: "saturated2d".into(),
            noise: NoiseSpec::None,
            margins: None,
            horizon,
            seed: 11,
            mode: Mode::DualBuffer,
            x0: vec![10.0, 10.0],
            spill_path: None,
        }
    }

    #[test]
    fn perfect_network_is_ideal_feedback() {
        let cfg = sim(network(0.0, 0.0, 2), 30);
        let trace = run(&cfg).unwrap();
        let base = run_baseline(&cfg).unwrap();
        let p = SaturatedPlant;
        let mut x = cfg.x0.clone();
        for i in 0..30 {
            assert_eq!(trace.x(i), &x[..]);
            assert_eq!(base.x(i), &x[..]);
            x = p.step(&x, &p.policy(&x), &[0.0, 0.0]);
        }
    }

    #[test]
    fn dead_sensor_link_runs_open_loop() {
        let trace = run(&sim(network(0.0, 1.0, 2), 20)).unwrap();
        assert!(trace.slots().iter().all(|s| s.open_loop()));
        assert!((0..20).all(|i| trace.u(i) == [0.0, 0.0]));
    }

    #[test]
    fn dead_actuator_link_in_both_modes() {
        let cfg = sim(network(1.0, 0.0, 2), 20);
        for trace in [run(&cfg).unwrap(), run_baseline(&cfg).unwrap()] {
            assert!((0..20).all(|i| trace.u(i) == [0.0, 0.0]));
        }
    }

    #[test]
    fn horizon_one_gives_one_row() {
        let trace = run(&sim(network(0.3, 0.2, 1), 1)).unwrap();
        assert_eq!(trace.len(), 1);
        let mut csv = Vec::new();
        trace.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = sim(network(0.3, 0.2, 1), 0);
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
        cfg.horizon = 5;
        cfg.x0 = vec![1.0];
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn contraction_under_perfect_network() {
        let mut cfg = sim(network(0.0, 0.0, 1), 40);
        cfg.plant = Arc::new(LinearPlant::default());
        cfg.x0 = vec![3.0];
        let trace = run(&cfg).unwrap();
        for i in 1..40 {
            assert!(trace.x(i)[0].abs() <= 0.5 * trace.x(i - 1)[0].abs() + 1e-300);
        }
    }

    #[test]
    fn walk_matches_simulation() {
        let net = crate::model::tests::paper_cfg(0.2);
        let mut cfg = sim(net.clone(), 2000);
        cfg.noise = NoiseSpec::GaussianIid { variance: 0.1 };
        let trace = run(&cfg).unwrap();
        let mut walked = Vec::new();
        protocol_walk(&net, cfg.seed, 2000, |z| walked.push(*z)).unwrap();
        assert_eq!(&walked[1..], &trace.z_sequence()[..]);
    }

    #[test]
    fn buffer_update_cases() {
        let cmd = |v: f64| vec![v];
        let mut b = BufferPair {
            controller: vec![cmd(1.0), cmd(2.0), cmd(3.0)].into(),
            actuator: vec![cmd(9.0)].into(),
        };
        // Fresh sequence delivered: actuator overwritten.
        b.update_dual(true, 1, 2, true);
        assert_eq!(b.actuator, VecDeque::from(vec![cmd(1.0), cmd(2.0)]));
        assert_eq!(b.controller, VecDeque::from(vec![cmd(3.0)]));
        // Follow-up command appended after the shift.
        b.update_dual(false, 2, 1, true);
        assert_eq!(b.actuator, VecDeque::from(vec![cmd(2.0), cmd(3.0)]));
        assert!(b.controller.is_empty());
        // Loss on a fresh sequence erases the controller.
        b.controller = vec![cmd(5.0)].into();
        b.update_dual(true, 2, 1, false);
        assert!(b.controller.is_empty());
        assert_eq!(b.actuator, VecDeque::from(vec![cmd(3.0)]));
    }
}
