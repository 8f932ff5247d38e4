//! Step records, cycle markers and CSV export.

use super::{Mode, SimError};
use crate::model::{ChannelState, ZState};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Records kept in memory before later steps are streamed to disk.
pub const MAX_IN_MEMORY: usize = 1_000_000;

/// Protocol part of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub lam_c: usize,
    pub lam_a: usize,
    pub channel: ChannelState,
    pub gamma: bool,
    pub gamma_p: bool,
    pub l: usize,
}

impl SlotRecord {
    /// Zero input this slot.
    pub fn open_loop(&self) -> bool {
        self.lam_a == 0
    }
}

/// One fully materialised slot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: u64,
    pub x: Vec<f64>,
    pub norm_x: f64,
    pub u: Vec<f64>,
    pub slot: SlotRecord,
}

/// An open-loop slot `k_n` and the aggregated state at the end of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleMarker {
    pub t: u64,
    pub z: ZState,
}

/// Streaming statistics over every step, including spilled ones.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunningStats {
    pub steps: u64,
    pub sum_norm: f64,
    pub max_norm: f64,
    pub open_loop: u64,
    pub sum_lyapunov: f64,
    pub max_cumulative_lyapunov: f64,
}

impl RunningStats {
    pub fn mean_norm(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.sum_norm / self.steps as f64
        }
    }

    pub fn open_loop_fraction(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.open_loop as f64 / self.steps as f64
        }
    }
}

/// Result of one simulation run.
#[derive(Debug)]
pub struct SimTrace {
    pub mode: Mode,
    pub seed: u64,
    state_dim: usize,
    input_dim: usize,
    xs: Vec<f64>,
    us: Vec<f64>,
    slots: Vec<SlotRecord>,
    pub markers: Vec<CycleMarker>,
    /// Channel state drawn for the slot after the last one.
    pub final_channel: ChannelState,
    /// Plant state after the last slot.
    pub final_x: Vec<f64>,
    pub stats: RunningStats,
    spill: Option<Spill>,
    limit: usize,
}

#[derive(Debug)]
struct Spill {
    path: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl SimTrace {
    pub(crate) fn new(
        mode: Mode,
        seed: u64,
        dims: (usize, usize),
        limit: usize,
        initial_channel: ChannelState,
    ) -> Self {
        Self {
            mode,
            seed,
            state_dim: dims.0,
            input_dim: dims.1,
            xs: Vec::new(),
            us: Vec::new(),
            slots: Vec::new(),
            markers: Vec::new(),
            final_channel: initial_channel,
            final_x: Vec::new(),
            stats: RunningStats::default(),
            spill: None,
            limit,
        }
    }

    pub(crate) fn push(
        &mut self,
        x: &[f64],
        u: &[f64],
        slot: SlotRecord,
        lyapunov: f64,
        spill_path: impl FnOnce() -> PathBuf,
    ) -> Result<(), SimError> {
        let t = self.stats.steps;
        let norm_x = crate::plant::norm(x);
        let s = &mut self.stats;
        s.steps += 1;
        s.sum_norm += norm_x;
        s.max_norm = s.max_norm.max(norm_x);
        s.open_loop += u64::from(slot.open_loop());
        s.sum_lyapunov += lyapunov;
        s.max_cumulative_lyapunov = s.max_cumulative_lyapunov.max(s.sum_lyapunov);
        if self.slots.len() < self.limit {
            self.xs.extend_from_slice(x);
            self.us.extend_from_slice(u);
            self.slots.push(slot);
            return Ok(());
        }
        if self.spill.is_none() {
            let path = spill_path();
            let file = File::create(&path).map_err(|e| SimError::Io(e.to_string()))?;
            self.spill = Some(Spill {
                path,
                writer: Some(BufWriter::new(file)),
            });
        }
        let record = StepRecord {
            t,
            x: x.to_vec(),
            norm_x,
            u: u.to_vec(),
            slot,
        };
        let spill = self.spill.as_mut().expect("spill opened above");
        let writer = spill.writer.as_mut().expect("spill open while running");
        write_row(writer, &record).map_err(|e| SimError::Io(e.to_string()))
    }

    pub(crate) fn finish(&mut self) -> Result<(), SimError> {
        if let Some(spill) = &mut self.spill {
            if let Some(mut w) = spill.writer.take() {
                w.flush().map_err(|e| SimError::Io(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Total number of simulated steps.
    pub fn len(&self) -> u64 {
        self.stats.steps
    }

    pub fn is_empty(&self) -> bool {
        self.stats.steps == 0
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.state_dim, self.input_dim)
    }

    /// Steps held in memory (the first `min(len, 10⁶)`).
    pub fn in_memory(&self) -> usize {
        self.slots.len()
    }

    /// File holding the steps beyond the in-memory window, if any.
    pub fn spill_file(&self) -> Option<&Path> {
        self.spill.as_ref().map(|s| s.path.as_path())
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn u(&self, i: usize) -> &[f64] {
        &self.us[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn slot(&self, i: usize) -> &SlotRecord {
        &self.slots[i]
    }

    pub fn slots(&self) -> &[SlotRecord] {
        &self.slots
    }

    pub fn record(&self, i: usize) -> StepRecord {
        StepRecord {
            t: i as u64,
            x: self.x(i).to_vec(),
            norm_x: crate::plant::norm(self.x(i)),
            u: self.u(i).to_vec(),
            slot: self.slots[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = StepRecord> + '_ {
        (0..self.slots.len()).map(|i| self.record(i))
    }

    /// `|x(t)|` for every in-memory step.
    pub fn norms(&self) -> Vec<f64> {
        (0..self.slots.len())
            .map(|i| crate::plant::norm(self.x(i)))
            .collect()
    }

    /// Mean `|x(t)|` over in-memory steps `t ∈ [from, to]`.
    pub fn mean_norm_between(&self, from: usize, to: usize) -> Option<f64> {
        let to = to.min(self.slots.len().checked_sub(1)?);
        if from > to {
            return None;
        }
        let sum: f64 = (from..=to).map(|i| crate::plant::norm(self.x(i))).sum();
        Some(sum / (to - from + 1) as f64)
    }

    /// `Z(t)` for every in-memory step: lengths after slot `t` and the
    /// channel state of slot `t + 1`.
    pub fn z_sequence(&self) -> Vec<ZState> {
        let n = self.slots.len();
        (0..n)
            .filter_map(|i| {
                let next = if i + 1 < n {
                    self.slots[i + 1].channel
                } else if self.spill.is_none() {
                    self.final_channel
                } else {
                    return None;
                };
                let s = &self.slots[i];
                Some(ZState {
                    lam_c: s.lam_c,
                    lam_a: s.lam_a,
                    b_next: next.b,
                    bp_next: next.bp,
                    n_next: next.n,
                })
            })
            .collect()
    }

    /// CSV with one row per step, in-memory steps first, then spilled ones.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write_header(&mut out, self.state_dim, self.input_dim)?;
        for record in self.records() {
            write_row(&mut out, &record)?;
        }
        if let Some(spill) = &self.spill {
            let reader = BufReader::new(File::open(&spill.path)?);
            for line in reader.lines() {
                writeln!(out, "{}", line?)?;
            }
        }
        Ok(())
    }
}

fn write_header<W: Write>(out: &mut W, ls: usize, lu: usize) -> io::Result<()> {
    write!(out, "t")?;
    for i in 0..ls {
        write!(out, ",x{i}")?;
    }
    write!(out, ",norm_x")?;
    for i in 0..lu {
        write!(out, ",u{i}")?;
    }
    writeln!(
        out,
        ",lam_c,lam_a,B,Bp,N,gamma,gamma_p,L,open_loop,cycle_start"
    )
}

fn write_row<W: Write>(out: &mut W, r: &StepRecord) -> io::Result<()> {
    write!(out, "{}", r.t)?;
    for v in &r.x {
        write!(out, ",{v}")?;
    }
    write!(out, ",{}", r.norm_x)?;
    for v in &r.u {
        write!(out, ",{v}")?;
    }
    let s = &r.slot;
    let open = u8::from(s.open_loop());
    writeln!(
        out,
        ",{},{},{},{},{},{},{},{},{open},{open}",
        s.lam_c,
        s.lam_a,
        s.channel.b,
        s.channel.bp,
        s.channel.n,
        u8::from(s.gamma),
        u8::from(s.gamma_p),
        s.l
    )
}

impl Drop for SimTrace {
    fn drop(&mut self) {
        if let Some(spill) = &self.spill {
            let _ = std::fs::remove_file(&spill.path);
        }
    }
}
