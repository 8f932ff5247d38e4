//! Monte-Carlo cross-checks of the analytic chain and cycle quantities.

use crate::markov::{
    self, is_irreducible_aperiodic, recurrent_states, MarkovError, StochasticMatrix,
};
use crate::model::{NetworkConfig, ZState};
use crate::simulator::{protocol_walk, rng, SimError};
use crate::stability::{Blocks, CycleAnalysis, StabilityError, UForm};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("{0}")]
    Mismatch(String),
}

/// Tolerances and sample sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Cycles (returns to `S0`) to simulate.
    pub cycles: u64,
    pub seed: u64,
    /// Largest allowed absolute difference per compared entry.
    pub tolerance: f64,
    /// Rows and cycle pairs with fewer observations are not compared.
    pub min_visits: u64,
    /// Family-wise significance level of the cycle-length tests.
    pub alpha: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            cycles: 100_000,
            seed: 1,
            tolerance: 0.02,
            min_visits: 1000,
            alpha: 0.01,
        }
    }
}

/// Where the simulated sample path comes from.
#[derive(Debug, Clone, Copy)]
pub enum PathSource<'a> {
    /// The protocol driven by this network; chain labels must be Z-state
    /// labels.
    Protocol(&'a NetworkConfig),
    /// A random walk on the analytic chain itself.
    ChainWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub cycles: u64,
    pub steps: u64,
    pub checks: Vec<CheckResult>,
    /// Largest `|empirical − analytic|` over compared `Ṽ` entries.
    pub v_tilde_max_diff: f64,
    /// Largest `|empirical − analytic|` over compared `Z` transitions.
    pub transition_max_diff: f64,
    /// `(from, to, observations, p-value)` of every tested cycle pair.
    pub delta_tests: Vec<(usize, usize, u64, f64)>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5);
        writeln!(f, "{} cycles over {} steps", self.cycles, self.steps)?;
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{mark}  {:width$}  {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// Runs every check of `analytic` (full chain, `s0` indexing it) against a
/// simulated sample path.
pub fn validate(
    analytic: &StochasticMatrix,
    s0: &[usize],
    source: PathSource<'_>,
    opts: ValidationOptions,
) -> Result<ValidationReport, ValidationError> {
    let parts = recurrent_states(analytic);
    let zr = markov::restrict(analytic, &parts.recurrent)?;
    let mut checks = Vec::new();

    let ia = is_irreducible_aperiodic(&zr);
    checks.push(CheckResult {
        name: "ia.recurrent".into(),
        passed: ia.is_ia(),
        detail: format!(
            "{} recurrent states, irreducible={}, period={}",
            zr.dim(),
            ia.irreducible,
            ia.period.map_or("-".into(), |p| p.to_string())
        ),
    });

    let mut in_s0 = vec![false; analytic.dim()];
    s0.iter().for_each(|&i| in_s0[i] = true);
    let s0_r: Vec<usize> = (0..zr.dim())
        .filter(|&a| in_s0[parts.recurrent[a]])
        .collect();
    let analysis = CycleAnalysis::new(&zr, &s0_r, 0.5, UForm::TimeReversal)?;
    let pi = markov::stationary(&zr)?;
    let s0_mass: f64 = s0_r.iter().map(|&a| pi.weights()[a]).sum();

    // Full index → recurrent index.
    let mut to_recurrent = vec![usize::MAX; analytic.dim()];
    for (a, &i) in parts.recurrent.iter().enumerate() {
        to_recurrent[i] = a;
    }
    // Recurrent index → position in S0.
    let mut s0_pos = vec![usize::MAX; zr.dim()];
    for (p, &a) in s0_r.iter().enumerate() {
        s0_pos[a] = p;
    }

    let mut steps = ((opts.cycles as f64 / s0_mass) * 1.05).ceil() as u64 + 1000;
    let path = loop {
        let path = sample_path(analytic, &zr, &parts.recurrent, source, opts.seed, steps, &mut checks)?;
        let returns = path
            .iter()
            .filter(|&&i| to_recurrent[i] != usize::MAX && s0_pos[to_recurrent[i]] != usize::MAX)
            .count() as u64;
        if returns > opts.cycles || steps > 1 << 34 {
            break path;
        }
        steps *= 2;
    };

    // One-step transition frequencies.
    let n = analytic.dim();
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    let mut visits = vec![0u64; n];
    for w in path.windows(2) {
        *counts.entry((w[0], w[1])).or_default() += 1;
        visits[w[0]] += 1;
    }
    // An entry passes when it is within `tolerance`, or when its excess is
    // explained by binomial sampling noise at the family level `alpha`.
    let compared: Vec<usize> = (0..n).filter(|&i| visits[i] >= opts.min_visits).collect();
    let entries = (compared.len() * n).max(1) as f64;
    let z_crit = Normal::standard().inverse_cdf(1.0 - opts.alpha / (2.0 * entries));
    let mut transition_max_diff = 0.0f64;
    let mut worst = (0, 0);
    let mut transitions_ok = true;
    for &i in &compared {
        let m = visits[i] as f64;
        for j in 0..n {
            let p = analytic.get(i, j);
            let emp = counts.get(&(i, j)).copied().unwrap_or(0) as f64 / m;
            let diff = (emp - p).abs();
            if diff > transition_max_diff {
                transition_max_diff = diff;
                worst = (i, j);
            }
            let se = (p * (1.0 - p) / m).sqrt();
            if diff > opts.tolerance && diff > z_crit * se {
                transitions_ok = false;
            }
        }
    }
    let rows_compared = compared.len();
    checks.push(CheckResult {
        name: "z.transitions".into(),
        passed: transitions_ok,
        detail: format!(
            "max |diff| = {transition_max_diff:.5} at {} -> {} ({} visits) over {rows_compared} rows with >= {} visits (tol {} or {z_crit:.2} s.e.)",
            analytic.labels()[worst.0],
            analytic.labels()[worst.1],
            visits[worst.0],
            opts.min_visits,
            opts.tolerance
        ),
    });

    // Cycles between consecutive S0 visits.
    let s = s0_r.len();
    let mut pair_hist: HashMap<(usize, usize), HashMap<u64, u64>> = HashMap::new();
    let mut last: Option<(u64, usize)> = None;
    let mut cycles = 0u64;
    for (t, &i) in path.iter().enumerate() {
        let a = to_recurrent[i];
        if a == usize::MAX || s0_pos[a] == usize::MAX {
            continue;
        }
        let p = s0_pos[a];
        if let Some((t0, p0)) = last {
            if cycles == opts.cycles {
                break;
            }
            *pair_hist
                .entry((p0, p))
                .or_default()
                .entry(t as u64 - t0)
                .or_default() += 1;
            cycles += 1;
        }
        last = Some((t as u64, p));
    }
    let mut emp_counts = DMatrix::<f64>::zeros(s, s);
    for (&(i, j), h) in &pair_hist {
        emp_counts[(i, j)] = h.values().sum::<u64>() as f64;
    }
    let v = analysis.v_tilde.entries();
    let mut v_tilde_max_diff = 0.0f64;
    let mut v_rows = 0;
    for i in 0..s {
        let total = emp_counts.row(i).sum();
        if total < opts.min_visits as f64 {
            continue;
        }
        v_rows += 1;
        for j in 0..s {
            v_tilde_max_diff = v_tilde_max_diff.max((emp_counts[(i, j)] / total - v[(i, j)]).abs());
        }
    }
    checks.push(CheckResult {
        name: "return_chain".into(),
        passed: v_rows > 0 && v_tilde_max_diff <= opts.tolerance,
        detail: format!(
            "max |diff| = {v_tilde_max_diff:.5} over {v_rows}/{s} rows with >= {} cycles (tol {})",
            opts.min_visits, opts.tolerance
        ),
    });

    let mut tested: Vec<(usize, usize)> = pair_hist
        .iter()
        .filter(|(_, h)| h.values().sum::<u64>() >= opts.min_visits)
        .map(|(&k, _)| k)
        .collect();
    tested.sort_unstable();
    let level = opts.alpha / tested.len().max(1) as f64;
    let mut delta_tests = Vec::new();
    let mut worst = f64::INFINITY;
    for &(i, j) in &tested {
        let hist = &pair_hist[&(i, j)];
        let obs: u64 = hist.values().sum();
        let law = delta_law(&analysis.blocks, i, j, v[(i, j)], hist.keys().max().copied().unwrap_or(1));
        let p = chi_square_p(hist, obs, &law);
        worst = worst.min(p);
        delta_tests.push((i, j, obs, p));
    }
    checks.push(CheckResult {
        name: "cycle_length_law".into(),
        passed: worst >= level,
        detail: if tested.is_empty() {
            format!("no pair with >= {} cycles", opts.min_visits)
        } else {
            format!(
                "{} pairs, min p = {:.4} (family level {}, per pair {:.2e})",
                tested.len(),
                worst,
                opts.alpha,
                level
            )
        },
    });

    Ok(ValidationReport {
        cycles,
        steps: path.len().saturating_sub(1) as u64,
        checks,
        v_tilde_max_diff,
        transition_max_diff,
        delta_tests,
    })
}

/// Sample path as indices into `analytic`.
fn sample_path(
    analytic: &StochasticMatrix,
    zr: &StochasticMatrix,
    recurrent: &[usize],
    source: PathSource<'_>,
    seed: u64,
    steps: u64,
    checks: &mut Vec<CheckResult>,
) -> Result<Vec<usize>, ValidationError> {
    let mut path = Vec::with_capacity(steps as usize + 1);
    match source {
        PathSource::Protocol(net) => {
            let index: HashMap<&str, usize> = analytic
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            let mut missing: Option<ZState> = None;
            protocol_walk(net, seed, steps, |z| {
                match index.get(z.label().as_str()) {
                    Some(&i) => path.push(i),
                    None => {
                        missing.get_or_insert(*z);
                    }
                }
            })?;
            if let Some(z) = missing {
                return Err(ValidationError::Mismatch(format!(
                    "simulated state {z} is not a state of the analysed chain"
                )));
            }
            let initial = path[0];
            if !checks.iter().any(|c| c.name == "ia.initial_recurrent") {
                checks.push(CheckResult {
                    name: "ia.initial_recurrent".into(),
                    passed: recurrent.binary_search(&initial).is_ok(),
                    detail: format!("initial state {}", analytic.labels()[initial]),
                });
            }
        }
        PathSource::ChainWalk => {
            let mut r = rng::stream(seed, rng::Stream::Channel);
            let mut a = 0usize;
            path.push(recurrent[a]);
            for _ in 0..steps {
                a = rng::sample_row(zr, a, r.random::<f64>());
                path.push(recurrent[a]);
            }
        }
    }
    Ok(path)
}

/// `P(Δ = l | i → j) = [D(l)]_{i,j} / Ṽ_{i,j}` for `l = 1..`, until the
/// remaining mass is negligible and `l` exceeds `min_len`.
pub fn delta_law(blocks: &Blocks, i: usize, j: usize, v_ij: f64, min_len: u64) -> Vec<f64> {
    let v00 = blocks.v00.entries();
    let v01 = blocks.v01.entries();
    let v10 = blocks.v10.entries();
    let v11 = blocks.v11.entries();
    let mut law = vec![v00[(i, j)] / v_ij];
    if v11.nrows() == 0 {
        return law;
    }
    let col = v10.column(j).into_owned();
    let mut row: DVector<f64> = v01.row(i).transpose();
    let mut cumulative = law[0];
    let v11t = v11.transpose();
    for l in 2u64.. {
        let p = row.dot(&col) / v_ij;
        law.push(p);
        cumulative += p;
        if l >= min_len && 1.0 - cumulative < 1e-12 {
            break;
        }
        if l > 1_000_000 {
            break;
        }
        row = &v11t * row;
    }
    law
}

/// Pearson chi-square p-value of `hist` against `law` (index `l − 1`).
///
/// Consecutive lengths are merged until each bin expects at least 5
/// observations; the last bin also absorbs the tail beyond `law`.
pub fn chi_square_p(hist: &HashMap<u64, u64>, obs: u64, law: &[f64]) -> f64 {
    let n = obs as f64;
    let observed_at = |l: usize| hist.get(&(l as u64)).copied().unwrap_or(0) as f64;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut e, mut o) = (0.0, 0.0);
    for (k, &p) in law.iter().enumerate() {
        e += n * p;
        o += observed_at(k + 1);
        if e >= 5.0 {
            bins.push((e, o));
            e = 0.0;
            o = 0.0;
        }
    }
    // Tail: leftover mass of the law plus any observations beyond it.
    let beyond: f64 = hist
        .iter()
        .filter(|(&l, _)| l as usize > law.len())
        .map(|(_, &c)| c as f64)
        .sum();
    let covered: f64 = law.iter().sum();
    e += n * (1.0 - covered).max(0.0);
    o += beyond;
    if let Some(last) = bins.last_mut() {
        last.0 += e;
        last.1 += o;
    } else {
        bins.push((e, o));
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins
        .iter()
        .map(|&(e, o)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let dist = ChiSquared::new((bins.len() - 1) as f64).expect("positive dof");
    1.0 - dist.cdf(stat)
}
