//! Protocol state of the dual-channel dual-buffer loop and the aggregated
//! Markov chain over `(λc, λa, B⁺, B′⁺, N⁺)`.
//!
//! The channel and compute components of a [`ZState`] are those of the *next*
//! slot: `Z(t) = (λc(t), λa(t), B(t+1), B′(t+1), N(t+1))`. A transition out of
//! `Z(t)` therefore processes slot `t+1` with the channel state already held in
//! the source state and draws a fresh `(B, B′, N)` for slot `t+2`.
//!
//! Joint channel states are indexed `b * B̄′ + (b′ - 1)` for `b ∈ 0..=B̄`,
//! `b′ ∈ 1..=B̄′` (capacity-major).

use crate::markov::{self, MarkovError, StochasticMatrix};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("actuator buffer ({actuator}) must not exceed controller buffer ({controller})")]
    BufferOrder { controller: usize, actuator: usize },
    #[error("maximum compute level {max_compute} exceeds controller buffer {controller}")]
    ComputeExceedsBuffer { max_compute: usize, controller: usize },
    #[error("C-A drop probability {0} outside [0, 1]")]
    CaDropRange(f64),
    #[error("C-A drop probability {0} must lie strictly inside (0, 1) for analysis")]
    CaDropNotAnalyzable(f64),
    #[error("S-C drop probability {value} for gain level {level} outside [0, 1]")]
    ScDropRange { level: usize, value: f64 },
    #[error("at least one S-C gain level is required")]
    NoScLevels,
    #[error("joint channel matrix has dimension {found}, not a multiple of {sc_levels} S-C levels")]
    ChannelDim { found: usize, sc_levels: usize },
    #[error("compute chain must have at least one state")]
    EmptyCompute,
    #[error("initial state {0} out of range")]
    InitialOutOfRange(String),
    #[error("inconsistent slot inputs: {0}")]
    RangeViolation(String),
    #[error("invalid state label {0:?}")]
    BadLabel(String),
    #[error("no closed-loop states: every state has an empty actuator buffer")]
    NoClosedLoopStates,
    #[error("CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// How a C-A slot that carries no commands is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum L0Policy {
    /// `γ` is sampled every slot, even when `L = 0`.
    #[default]
    Literal,
    /// A slot with `L = 0` always counts as a failed C-A transmission.
    ForcedDrop,
}

impl L0Policy {
    /// C-A success after applying the policy to a sampled success flag.
    pub fn effective_gamma(self, gamma: bool, l: usize) -> bool {
        match self {
            L0Policy::Literal => gamma,
            L0Policy::ForcedDrop => gamma && l > 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            L0Policy::Literal => "literal",
            L0Policy::ForcedDrop => "forced-drop",
        }
    }
}

impl FromStr for L0Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "literal" => Ok(L0Policy::Literal),
            "forced-drop" => Ok(L0Policy::ForcedDrop),
            other => Err(format!("unknown l0 policy {other:?} (literal | forced-drop)")),
        }
    }
}

/// Channel/compute state of one slot: `(B, B′, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelState {
    /// C-A capacity in commands.
    pub b: usize,
    /// S-C gain index, starting at 1.
    pub bp: usize,
    /// Commands the controller can compute.
    pub n: usize,
}

/// Raw parameters for [`NetworkConfig::new`].
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub joint_channel: DMatrix<f64>,
    pub compute: DMatrix<f64>,
    pub ca_drop: f64,
    pub sc_drop: Vec<f64>,
    pub buf_controller: usize,
    pub buf_actuator: usize,
    pub initial: ChannelState,
    pub l0_policy: L0Policy,
}

/// Validated network, compute and buffer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    joint_channel: StochasticMatrix,
    compute: StochasticMatrix,
    ca_drop: f64,
    sc_drop: Vec<f64>,
    buf_controller: usize,
    buf_actuator: usize,
    initial: ChannelState,
    l0_policy: L0Policy,
    max_capacity: usize,
    max_compute: usize,
}

impl NetworkConfig {
    /// Validates the parameters.
    ///
    /// Drop probabilities of exactly 0 or 1 are accepted here so that ideal
    /// and dead links can be simulated; [`NetworkConfig::check_analyzable`]
    /// enforces the strict range needed by the chain analysis.
    pub fn new(p: NetworkParams) -> Result<Self> {
        if p.sc_drop.is_empty() {
            return Err(ModelError::NoScLevels);
        }
        let sc_levels = p.sc_drop.len();
        for (i, &value) in p.sc_drop.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(ModelError::ScDropRange { level: i + 1, value });
            }
        }
        if !(0.0..=1.0).contains(&p.ca_drop) {
            return Err(ModelError::CaDropRange(p.ca_drop));
        }
        let joint_dim = p.joint_channel.nrows();
        if joint_dim == 0 || joint_dim % sc_levels != 0 {
            return Err(ModelError::ChannelDim {
                found: joint_dim,
                sc_levels,
            });
        }
        if p.compute.nrows() == 0 {
            return Err(ModelError::EmptyCompute);
        }
        let max_capacity = joint_dim / sc_levels - 1;
        let max_compute = p.compute.nrows() - 1;
        if p.buf_actuator > p.buf_controller {
            return Err(ModelError::BufferOrder {
                controller: p.buf_controller,
                actuator: p.buf_actuator,
            });
        }
        if max_compute > p.buf_controller {
            return Err(ModelError::ComputeExceedsBuffer {
                max_compute,
                controller: p.buf_controller,
            });
        }
        let init = p.initial;
        if init.b > max_capacity || init.bp == 0 || init.bp > sc_levels || init.n > max_compute {
            return Err(ModelError::InitialOutOfRange(format!(
                "(B={}, B'={}, N={})",
                init.b, init.bp, init.n
            )));
        }
        let joint_labels = (0..joint_dim)
            .map(|k| format!("B{}_Bp{}", k / sc_levels, k % sc_levels + 1))
            .collect();
        let compute_labels = (0..=max_compute).map(|n| format!("N{n}")).collect();
        Ok(Self {
            joint_channel: StochasticMatrix::with_labels(joint_labels, p.joint_channel)?,
            compute: StochasticMatrix::with_labels(compute_labels, p.compute)?,
            ca_drop: p.ca_drop,
            sc_drop: p.sc_drop,
            buf_controller: p.buf_controller,
            buf_actuator: p.buf_actuator,
            initial: init,
            l0_policy: p.l0_policy,
            max_capacity,
            max_compute,
        })
    }

    /// Requires `γ̄ ∈ (0, 1)`, without which the empty-buffer state need not be
    /// reachable from everywhere.
    pub fn check_analyzable(&self) -> Result<()> {
        if self.ca_drop <= 0.0 || self.ca_drop >= 1.0 {
            return Err(ModelError::CaDropNotAnalyzable(self.ca_drop));
        }
        Ok(())
    }

    pub fn with_ca_drop(&self, ca_drop: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ca_drop) {
            return Err(ModelError::CaDropRange(ca_drop));
        }
        Ok(Self {
            ca_drop,
            ..self.clone()
        })
    }

    pub fn with_l0_policy(&self, l0_policy: L0Policy) -> Self {
        Self {
            l0_policy,
            ..self.clone()
        }
    }

    pub fn joint_channel(&self) -> &StochasticMatrix {
        &self.joint_channel
    }

    pub fn compute(&self) -> &StochasticMatrix {
        &self.compute
    }

    /// `γ̄`, the guaranteed C-A drop probability.
    pub fn ca_drop(&self) -> f64 {
        self.ca_drop
    }

    /// Drop probability of the S-C link at gain index `bp` (1-based).
    pub fn sc_drop(&self, bp: usize) -> f64 {
        self.sc_drop[bp - 1]
    }

    pub fn sc_drops(&self) -> &[f64] {
        &self.sc_drop
    }

    /// `Λc`.
    pub fn buf_controller(&self) -> usize {
        self.buf_controller
    }

    /// `Λa`.
    pub fn buf_actuator(&self) -> usize {
        self.buf_actuator
    }

    pub fn initial(&self) -> ChannelState {
        self.initial
    }

    pub fn l0_policy(&self) -> L0Policy {
        self.l0_policy
    }

    /// `B̄`.
    pub fn max_capacity(&self) -> usize {
        self.max_capacity
    }

    /// `B̄′`.
    pub fn sc_levels(&self) -> usize {
        self.sc_drop.len()
    }

    /// `N̄`.
    pub fn max_compute(&self) -> usize {
        self.max_compute
    }

    /// Upper bound of `λa` in the aggregated chain, `min(Λa, N̄)`.
    pub fn lam_a_cap(&self) -> usize {
        self.buf_actuator.min(self.max_compute)
    }

    pub fn joint_index(&self, b: usize, bp: usize) -> usize {
        b * self.sc_levels() + (bp - 1)
    }

    /// Inverse of [`NetworkConfig::joint_index`].
    pub fn joint_state(&self, index: usize) -> (usize, usize) {
        (index / self.sc_levels(), index % self.sc_levels() + 1)
    }

    /// Probability of moving from `from` to `to` in one slot; channel and
    /// compute processes are independent.
    pub fn channel_transition(&self, from: ChannelState, to: ChannelState) -> f64 {
        self.joint_channel
            .get(self.joint_index(from.b, from.bp), self.joint_index(to.b, to.bp))
            * self.compute.get(from.n, to.n)
    }

    /// All channel states reachable in one slot from `from`, with their
    /// probabilities, in lexicographic `(b, bp, n)` order.
    pub fn channel_successors(&self, from: ChannelState) -> Vec<(ChannelState, f64)> {
        let mut out = Vec::new();
        for j in 0..self.joint_channel.dim() {
            let pj = self
                .joint_channel
                .get(self.joint_index(from.b, from.bp), j);
            if pj == 0.0 {
                continue;
            }
            let (b, bp) = self.joint_state(j);
            for n in 0..=self.max_compute {
                let pn = self.compute.get(from.n, n);
                if pn != 0.0 {
                    out.push((ChannelState { b, bp, n }, pj * pn));
                }
            }
        }
        out
    }
}

/// State of the aggregated chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZState {
    pub lam_c: usize,
    pub lam_a: usize,
    pub b_next: usize,
    pub bp_next: usize,
    pub n_next: usize,
}

impl ZState {
    pub fn next_channel(&self) -> ChannelState {
        ChannelState {
            b: self.b_next,
            bp: self.bp_next,
            n: self.n_next,
        }
    }

    /// Empty actuator buffer: the plant runs open loop in this slot.
    pub fn is_open_loop(&self) -> bool {
        self.lam_a == 0
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ZState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lc{}_la{}_B{}_Bp{}_N{}",
            self.lam_c, self.lam_a, self.b_next, self.bp_next, self.n_next
        )
    }
}

impl FromStr for ZState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || ModelError::BadLabel(s.to_string());
        let mut parts = s.split('_');
        let mut field = |prefix: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|p| p.strip_prefix(prefix))
                .and_then(|v| v.parse().ok())
                .ok_or_else(bad)
        };
        let state = ZState {
            lam_c: field("lc")?,
            lam_a: field("la")?,
            b_next: field("B")?,
            bp_next: field("Bp")?,
            n_next: field("N")?,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        Ok(state)
    }
}

/// Outcome of one slot's transmissions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotOutcome {
    /// C-A success.
    pub gamma: bool,
    /// S-C success.
    pub gamma_p: bool,
    /// Commands transmitted, `L(t)`.
    pub l: usize,
}

impl SlotOutcome {
    /// `γ′(t) N(t) > 0`: a fresh sequence is computed this slot.
    pub fn fresh(&self, n: usize) -> bool {
        self.gamma_p && n > 0
    }
}

/// Number of commands the controller transmits, `L(t)`.
pub fn compute_l(
    gamma_p: bool,
    n: usize,
    b: usize,
    lam_c_prev: usize,
    lam_a_prev: usize,
    cfg: &NetworkConfig,
) -> usize {
    let cap_a = cfg.buf_actuator();
    if gamma_p && n > 0 {
        b.min(n).min(cap_a)
    } else if lam_a_prev != 0 {
        b.min(lam_c_prev).min(cap_a.saturating_sub(lam_a_prev))
    } else {
        0
    }
}

/// Effective buffer lengths after a slot.
///
/// `outcome.gamma` must already reflect the configured [`L0Policy`].
/// The "keep" branch for the controller subtracts the transmitted commands
/// from the previous length, and the actuator's idle branch conditions on the
/// previous actuator length.
pub fn step_lengths(
    prev: (usize, usize),
    outcome: SlotOutcome,
    n: usize,
    _cfg: &NetworkConfig,
) -> Result<(usize, usize)> {
    let (lam_c_prev, lam_a_prev) = (prev.0 as i64, prev.1 as i64);
    let l = outcome.l as i64;
    let fresh = outcome.fresh(n);
    let lam_c = if fresh {
        if outcome.gamma {
            n as i64 - l
        } else {
            0
        }
    } else if lam_a_prev == 0 {
        0
    } else if outcome.gamma {
        lam_c_prev - l
    } else {
        lam_c_prev
    };
    let lam_a = if !outcome.gamma {
        (lam_a_prev - 1).max(0)
    } else if fresh {
        l
    } else if lam_a_prev == 0 {
        0
    } else {
        lam_a_prev + l - 1
    };
    if lam_c < 0 || lam_a < 0 {
        return Err(ModelError::RangeViolation(format!(
            "prev={prev:?}, outcome={outcome:?}, n={n} gives ({lam_c}, {lam_a})"
        )));
    }
    Ok((lam_c as usize, lam_a as usize))
}

/// Every aggregated state in lexicographic `(λc, λa, B, B′, N)` order.
pub fn enumerate_z(cfg: &NetworkConfig) -> Vec<ZState> {
    let mut out = Vec::with_capacity(z_count(cfg));
    for lam_c in 0..=cfg.buf_controller() {
        for lam_a in 0..=cfg.lam_a_cap() {
            for b_next in 0..=cfg.max_capacity() {
                for bp_next in 1..=cfg.sc_levels() {
                    for n_next in 0..=cfg.max_compute() {
                        out.push(ZState {
                            lam_c,
                            lam_a,
                            b_next,
                            bp_next,
                            n_next,
                        });
                    }
                }
            }
        }
    }
    out
}

fn z_count(cfg: &NetworkConfig) -> usize {
    (cfg.buf_controller() + 1)
        * (cfg.lam_a_cap() + 1)
        * (cfg.max_capacity() + 1)
        * cfg.sc_levels()
        * (cfg.max_compute() + 1)
}

/// Position of `z` in [`enumerate_z`] order.
pub fn z_index(cfg: &NetworkConfig, z: &ZState) -> usize {
    let nb = cfg.max_capacity() + 1;
    let nbp = cfg.sc_levels();
    let nn = cfg.max_compute() + 1;
    let na = cfg.lam_a_cap() + 1;
    (((z.lam_c * na + z.lam_a) * nb + z.b_next) * nbp + (z.bp_next - 1)) * nn + z.n_next
}

/// One slot of the length-level protocol from `z` with sampled success flags.
///
/// Returns the outcome actually applied (after the L0 policy) and the new
/// lengths. `λa` is clipped to `min(Λa, N̄)`; only source states with
/// `λc + λa > N̄` can exceed it, and those are never reached from an empty
/// buffer.
pub fn protocol_slot(
    cfg: &NetworkConfig,
    z: &ZState,
    gamma: bool,
    gamma_p: bool,
) -> Result<(SlotOutcome, (usize, usize))> {
    let n = z.n_next;
    let l = compute_l(gamma_p, n, z.b_next, z.lam_c, z.lam_a, cfg);
    let outcome = SlotOutcome {
        gamma: cfg.l0_policy().effective_gamma(gamma, l),
        gamma_p,
        l,
    };
    let (lam_c, lam_a) = step_lengths((z.lam_c, z.lam_a), outcome, n, cfg)?;
    Ok((outcome, (lam_c, lam_a.min(cfg.lam_a_cap()))))
}

/// Aggregated chain with its decoded state list.
#[derive(Debug, Clone, PartialEq)]
pub struct ZChain {
    pub states: Vec<ZState>,
    pub matrix: StochasticMatrix,
}

impl ZChain {
    /// Wraps an externally supplied chain whose labels are Z-state labels.
    pub fn from_labeled(matrix: StochasticMatrix) -> Result<Self> {
        let states = matrix
            .labels()
            .iter()
            .map(|l| l.parse())
            .collect::<Result<Vec<ZState>>>()?;
        Ok(Self { states, matrix })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, z: &ZState) -> Option<usize> {
        self.states.iter().position(|s| s == z)
    }

    /// Sub-chain over `keep`, see [`markov::restrict`].
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        let matrix = markov::restrict(&self.matrix, keep)?;
        let mut keep = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let states = keep.iter().map(|&i| self.states[i]).collect();
        Ok(Self { states, matrix })
    }

    /// `(S0, S1)`: states with an empty actuator buffer, and the rest.
    pub fn split_s0(&self) -> (Vec<usize>, Vec<usize>) {
        split_s0(&self.states)
    }

    /// CSV with a header of state labels and one row per source state.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_chain_csv(&self.matrix, out)
    }
}

/// Partition indices by `λa = 0`.
pub fn split_s0(states: &[ZState]) -> (Vec<usize>, Vec<usize>) {
    (0..states.len()).partition(|&i| states[i].is_open_loop())
}

/// Transition matrix of the aggregated chain over [`enumerate_z`].
pub fn build_z_chain(cfg: &NetworkConfig) -> Result<ZChain> {
    let states = enumerate_z(cfg);
    let dim = states.len();
    let mut v = DMatrix::zeros(dim, dim);
    let gamma_ok = 1.0 - cfg.ca_drop();
    for (i, z) in states.iter().enumerate() {
        let gamma_p_ok = 1.0 - cfg.sc_drop(z.bp_next);
        let successors = cfg.channel_successors(z.next_channel());
        for (gamma, p_gamma) in [(true, gamma_ok), (false, 1.0 - gamma_ok)] {
            for (gamma_p, p_gamma_p) in [(true, gamma_p_ok), (false, 1.0 - gamma_p_ok)] {
                let p_outcome = p_gamma * p_gamma_p;
                if p_outcome == 0.0 {
                    continue;
                }
                let (_, (lam_c, lam_a)) = protocol_slot(cfg, z, gamma, gamma_p)?;
                for &(next, p_next) in &successors {
                    let target = ZState {
                        lam_c,
                        lam_a,
                        b_next: next.b,
                        bp_next: next.bp,
                        n_next: next.n,
                    };
                    v[(i, z_index(cfg, &target))] += p_outcome * p_next;
                }
            }
        }
    }
    // Summing products can overshoot 1 by an ulp.
    v.apply(|p: &mut f64| *p = p.min(1.0));
    let labels = states.iter().map(ZState::label).collect();
    let matrix = StochasticMatrix::with_labels(labels, v)?;
    Ok(ZChain { states, matrix })
}

/// Writes `matrix` as CSV: `state,<labels...>` then one row per source state.
/// Values use the shortest representation that round-trips exactly.
pub fn write_chain_csv<W: Write>(matrix: &StochasticMatrix, mut out: W) -> io::Result<()> {
    write!(out, "state")?;
    for label in matrix.labels() {
        write!(out, ",{label}")?;
    }
    writeln!(out)?;
    for (i, label) in matrix.labels().iter().enumerate() {
        write!(out, "{label}")?;
        for j in 0..matrix.dim() {
            write!(out, ",{}", matrix.get(i, j))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads the format written by [`write_chain_csv`].
pub fn read_chain_csv<R: BufRead>(input: R) -> Result<StochasticMatrix> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| ModelError::Csv("empty input".into()))?
        .map_err(|e| ModelError::Csv(e.to_string()))?;
    let labels: Vec<String> = header.trim_end().split(',').skip(1).map(String::from).collect();
    let mut rows = Vec::with_capacity(labels.len());
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| ModelError::Csv(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.trim_end().split(',');
        let name = cells.next().unwrap_or_default();
        if labels.get(row).map(String::as_str) != Some(name) {
            return Err(ModelError::Csv(format!(
                "row {row} is labelled {name:?}, expected {:?}",
                labels.get(row)
            )));
        }
        let values = cells
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::Csv(format!("row {row}: {e}")))?;
        rows.push(values);
    }
    let entries = markov::matrix_from_rows(&rows)?;
    Ok(StochasticMatrix::with_labels(labels, entries)?)
}
