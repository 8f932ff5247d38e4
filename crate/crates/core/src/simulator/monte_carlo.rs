//! Independent runs over many seeds, merged in seed order.

use super::{cycle_stats, simulate, SimConfig, SimError};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeSet;

/// Environment variable overriding the worker count of Monte-Carlo fan-out.
pub const THREADS_ENV: &str = "WNCS_THREADS";

/// Pool sized by [`THREADS_ENV`] when set to a positive integer, otherwise
/// by rayon's default.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

/// Per-seed outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: u64,
    pub mean_norm: f64,
    pub max_norm: f64,
    pub open_loop_fraction: f64,
    pub sum_lyapunov: f64,
    pub cycles: usize,
    #[serde(skip)]
    pub log_xi: Vec<f64>,
}

/// Aggregate over all seeds that ran.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub per_seed: Vec<SeedSummary>,
    /// Seeds whose run failed, with the error text.
    pub failures: Vec<(u64, String)>,
    pub mean_norm: f64,
    pub max_norm: f64,
    pub open_loop_fraction: f64,
    /// `E[Ξ(n)]` for `n = 0..=m`, `m` the fewest cycles any run completed.
    pub mean_xi: Vec<f64>,
    /// Least-squares slope of `ln E[Ξ(n)]` against `n`.
    pub xi_decay_rate: Option<f64>,
}

impl MonteCarloReport {
    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv("seeds", self.per_seed.len().to_string());
        kv("failures", self.failures.len().to_string());
        kv("mean_norm", self.mean_norm.to_string());
        kv("max_norm", self.max_norm.to_string());
        kv("open_loop_fraction", self.open_loop_fraction.to_string());
        kv("xi_cycles", self.mean_xi.len().saturating_sub(1).to_string());
        kv(
            "xi_decay_rate",
            self.xi_decay_rate
                .map_or_else(|| "none".to_string(), |r| r.to_string()),
        );
        for s in &self.per_seed {
            kv(&format!("seed.{}.mean_norm", s.seed), s.mean_norm.to_string());
            kv(
                &format!("seed.{}.open_loop_fraction", s.seed),
                s.open_loop_fraction.to_string(),
            );
        }
        for (seed, err) in &self.failures {
            kv(&format!("seed.{seed}.error"), err.clone());
        }
        out
    }
}

fn summarise(cfg: &SimConfig) -> Result<SeedSummary, SimError> {
    let trace = simulate(cfg)?;
    let log_xi = match cycle_stats(&trace, cfg.margins) {
        Ok(c) => c.log_xi,
        Err(SimError::InsufficientCycles(_)) => vec![0.0],
        Err(e) => return Err(e),
    };
    let s = trace.stats;
    Ok(SeedSummary {
        seed: cfg.seed,
        steps: s.steps,
        mean_norm: s.mean_norm(),
        max_norm: s.max_norm,
        open_loop_fraction: s.open_loop_fraction(),
        sum_lyapunov: s.sum_lyapunov,
        cycles: log_xi.len().saturating_sub(1),
        log_xi,
    })
}

/// Runs every seed, concurrently, and merges deterministically.
///
/// A failing seed is recorded in [`MonteCarloReport::failures`] without
/// stopping the others.
pub fn monte_carlo(cfg: &SimConfig, seeds: &[u64]) -> Result<MonteCarloReport, SimError> {
    if seeds.is_empty() {
        return Err(SimError::Config("at least one seed is required".into()));
    }
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(SimError::Config("seeds must be distinct".into()));
    }
    cfg.validate()?;
    let mut sorted: Vec<u64> = unique.into_iter().collect();
    sorted.sort_unstable();
    let results: Vec<(u64, Result<SeedSummary, SimError>)> = thread_pool().install(|| {
        sorted
            .par_iter()
            .map(|&seed| (seed, summarise(&cfg.with_seed(seed))))
            .collect()
    });
    let mut per_seed = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(s) => per_seed.push(s),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    let count = per_seed.len().max(1) as f64;
    let total_steps: u64 = per_seed.iter().map(|s| s.steps).sum();
    let mean_norm = per_seed.iter().map(|s| s.mean_norm).sum::<f64>() / count;
    let max_norm = per_seed.iter().map(|s| s.max_norm).fold(0.0, f64::max);
    let open_loop_fraction = if total_steps == 0 {
        0.0
    } else {
        per_seed
            .iter()
            .map(|s| s.open_loop_fraction * s.steps as f64)
            .sum::<f64>()
            / total_steps as f64
    };
    let mean_xi = if cfg.margins.is_some() && !per_seed.is_empty() {
        let depth = per_seed.iter().map(|s| s.cycles).min().unwrap_or(0);
        (0..=depth)
            .map(|n| log_mean_exp(per_seed.iter().map(|s| s.log_xi[n])).exp())
            .collect()
    } else {
        Vec::new()
    };
    let xi_decay_rate = log_linear_slope(&mean_xi);
    Ok(MonteCarloReport {
        per_seed,
        failures,
        mean_norm,
        max_norm,
        open_loop_fraction,
        mean_xi,
        xi_decay_rate,
    })
}

fn log_mean_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - max).exp(), n + 1));
    max + (sum / n as f64).ln()
}

/// Slope of the least-squares line through `(n, ln y_n)`.
pub(crate) fn log_linear_slope(y: &[f64]) -> Option<f64> {
    let points: Vec<(f64, f64)> = y
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(n, &v)| (n as f64, v.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
