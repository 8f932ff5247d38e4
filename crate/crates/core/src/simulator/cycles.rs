//! Statistics of the cycles between consecutive open-loop slots.

use super::{SimError, SimTrace};
use crate::model::ZState;
use crate::stability::PlantMargins;
use nalgebra::DMatrix;
use std::collections::BTreeMap;

/// Cycle lengths grouped by the open-loop states that bound them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleStats {
    /// `(Z(k_n), Z(k_{n+1})) → {Δ → count}`.
    pub pairs: BTreeMap<(ZState, ZState), BTreeMap<u64, u64>>,
    /// `Δ_n = k_{n+1} − k_n` in order.
    pub deltas: Vec<u64>,
    /// `ln Ξ(n) = n ln α + (Σ_{i ≤ n} (Δ_i − 1)) ln ρ`, starting at `ln Ξ(0) = 0`.
    /// Empty when no margins are supplied.
    pub log_xi: Vec<f64>,
}

impl CycleStats {
    pub fn cycles(&self) -> usize {
        self.deltas.len()
    }

    /// Row-normalised return frequencies over `s0` plus the number of
    /// cycles that started in each state of `s0`.
    pub fn empirical_v_tilde(&self, s0: &[ZState]) -> (DMatrix<f64>, Vec<u64>) {
        let index: BTreeMap<ZState, usize> = s0.iter().enumerate().map(|(i, z)| (*z, i)).collect();
        let n = s0.len();
        let mut counts = DMatrix::zeros(n, n);
        for ((from, to), hist) in &self.pairs {
            if let (Some(&i), Some(&j)) = (index.get(from), index.get(to)) {
                counts[(i, j)] += hist.values().sum::<u64>() as f64;
            }
        }
        let visits: Vec<u64> = (0..n).map(|i| counts.row(i).sum() as u64).collect();
        for i in 0..n {
            if visits[i] > 0 {
                counts.row_mut(i).unscale_mut(visits[i] as f64);
            }
        }
        (counts, visits)
    }

    /// Histogram of `Δ` for cycles from `from` to `to`.
    pub fn delta_histogram(&self, from: &ZState, to: &ZState) -> Option<&BTreeMap<u64, u64>> {
        self.pairs.get(&(*from, *to))
    }
}

/// Groups the trace's cycles by their bounding open-loop states.
pub fn cycle_stats(trace: &SimTrace, margins: Option<PlantMargins>) -> Result<CycleStats, SimError> {
    let markers = &trace.markers;
    if markers.len() < 2 {
        return Err(SimError::InsufficientCycles(markers.len()));
    }
    let mut stats = CycleStats::default();
    for w in markers.windows(2) {
        let delta = w[1].t - w[0].t;
        *stats
            .pairs
            .entry((w[0].z, w[1].z))
            .or_default()
            .entry(delta)
            .or_default() += 1;
        stats.deltas.push(delta);
    }
    if let Some(m) = margins {
        let (ln_a, ln_r) = (m.alpha().ln(), m.rho().ln());
        let mut acc = 0.0;
        stats.log_xi.push(0.0);
        for &d in &stats.deltas {
            acc += ln_a + (d - 1) as f64 * ln_r;
            stats.log_xi.push(acc);
        }
    }
    Ok(stats)
}
