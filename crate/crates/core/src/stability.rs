//! Cycle-cost stability certificates.
//!
//! The chain is observed at open-loop instants (states in `S0`). Between two
//! such instants the process makes an excursion through `S1`; the return
//! chain `Ṽ` and the weighted return matrix `Σ ρ^l D(l)` summarise those
//! excursions, and `r_{i,j} = E[ρ^Δ | i → j]` feeds both certificates.

use crate::markov::{
    self, is_irreducible_aperiodic, recurrent_states, Distribution, MarkovError, StochasticMatrix,
    SubstochasticMatrix,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use std::str::FromStr;
use thiserror::Error;

/// Entries of `Ṽ` at or below this are treated as impossible transitions.
pub const ZERO_PROBABILITY: f64 = 1e-15;
/// Truncated series stop once the mass still in an excursion drops below this.
pub const SERIES_TOL: f64 = 1e-14;
/// Hard ceiling on the number of series terms.
pub const MAX_SERIES_TERMS: usize = 1_000_000;
/// Largest `|S0|` for which the dense `S0² × S0²` matrix `U` is built.
pub const MAX_S0: usize = 64;
/// Stationary masses at or below this make `F` ill-defined.
pub const MIN_STATIONARY_MASS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("S0 is empty")]
    EmptyPartition,
    #[error("no closed-loop states: every recurrent state has an empty actuator buffer")]
    NoClosedLoopStates,
    #[error("excursions from S0 may never return (spectral radius of V11 = {radius})")]
    DivergentCycle { radius: f64 },
    #[error("stationary mass {mass} of return state {index} is too small")]
    ZeroStationaryMass { index: usize, mass: f64 },
    #[error("|S0| = {0} exceeds the dense limit of {MAX_S0}")]
    SizeLimit(usize),
    #[error("recurrent states form {0} closed classes; a single class is required")]
    ReducibleRecurrent(usize),
    #[error("state index {index} out of range for {dim} states")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("invalid plant margins: {0}")]
    InvalidMargins(String),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

pub type Result<T, E = StabilityError> = std::result::Result<T, E>;

/// Closed-loop contraction `ρ` and open-loop expansion `α` of the plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantMargins {
    rho: f64,
    alpha: f64,
}

impl PlantMargins {
    pub fn new(rho: f64, alpha: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(StabilityError::InvalidMargins(format!(
                "rho = {rho} must lie in (0, 1)"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(StabilityError::InvalidMargins(format!(
                "alpha = {alpha} must be positive"
            )));
        }
        Ok(Self { rho, alpha })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `α / ρ`, the factor in front of both certificates.
    pub fn gain(&self) -> f64 {
        self.alpha / self.rho
    }
}

/// Which matrix `F` enters `U`.
///
/// `StationaryWeighted` uses `diag(π) Ṽ diag(π)`, which reproduces the
/// published numeric examples. `TimeReversal` uses `diag(π) Ṽ diag(π)⁻¹`,
/// whose column sums are one; with it `λ_max(U)` equals the growth rate of
/// `E[Ξ(n)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UForm {
    #[default]
    StationaryWeighted,
    TimeReversal,
}

impl UForm {
    pub fn as_str(self) -> &'static str {
        match self {
            UForm::StationaryWeighted => "stationary-weighted",
            UForm::TimeReversal => "time-reversal",
        }
    }
}

impl FromStr for UForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stationary-weighted" => Ok(UForm::StationaryWeighted),
            "time-reversal" => Ok(UForm::TimeReversal),
            other => Err(format!(
                "unknown U form {other:?} (stationary-weighted | time-reversal)"
            )),
        }
    }
}

/// `V` split into `S0`/`S1` blocks, `S0` first.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub v00: SubstochasticMatrix,
    pub v01: SubstochasticMatrix,
    pub v10: SubstochasticMatrix,
    pub v11: SubstochasticMatrix,
    /// Indices of `S0` in the source chain, ascending.
    pub s0: Vec<usize>,
    /// Indices of `S1` in the source chain, ascending.
    pub s1: Vec<usize>,
}

impl Blocks {
    pub fn s0_len(&self) -> usize {
        self.s0.len()
    }

    /// Reassembles the full matrix in the source chain's index order.
    pub fn recompose(&self) -> DMatrix<f64> {
        let n = self.s0.len() + self.s1.len();
        let mut m = DMatrix::zeros(n, n);
        let parts = [
            (&self.s0, &self.s0, &self.v00),
            (&self.s0, &self.s1, &self.v01),
            (&self.s1, &self.s0, &self.v10),
            (&self.s1, &self.s1, &self.v11),
        ];
        for (rows, cols, block) in parts {
            for (a, &i) in rows.iter().enumerate() {
                for (b, &j) in cols.iter().enumerate() {
                    m[(i, j)] = block.entries()[(a, b)];
                }
            }
        }
        m
    }
}

/// Splits `z` into the four blocks around `s0`.
pub fn partition(z: &StochasticMatrix, s0: &[usize]) -> Result<Blocks> {
    let n = z.dim();
    let mut s0: Vec<usize> = s0.to_vec();
    s0.sort_unstable();
    s0.dedup();
    if let Some(&index) = s0.iter().find(|&&i| i >= n) {
        return Err(StabilityError::IndexOutOfRange { index, dim: n });
    }
    if s0.is_empty() {
        return Err(StabilityError::EmptyPartition);
    }
    let mut in_s0 = vec![false; n];
    s0.iter().for_each(|&i| in_s0[i] = true);
    let s1: Vec<usize> = (0..n).filter(|&i| !in_s0[i]).collect();
    let block = |rows: &[usize], cols: &[usize]| {
        SubstochasticMatrix::new(DMatrix::from_fn(rows.len(), cols.len(), |a, b| {
            z.get(rows[a], cols[b])
        }))
    };
    Ok(Blocks {
        v00: block(&s0, &s0)?,
        v01: block(&s0, &s1)?,
        v10: block(&s1, &s0)?,
        v11: block(&s1, &s1)?,
        s0,
        s1,
    })
}

/// Return chain and its `ρ`-weighted counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnChain {
    /// `Ṽ = Σ_l D(l)`.
    pub v_tilde: StochasticMatrix,
    /// `Σ_l ρ^l D(l)`.
    pub d_weighted: DMatrix<f64>,
}

/// Closed forms `Ṽ = V00 + V01 (I − V11)⁻¹ V10` and
/// `Σ ρ^l D(l) = ρ V00 + ρ² V01 (I − ρ V11)⁻¹ V10`.
pub fn return_chain(blocks: &Blocks, rho: f64) -> Result<ReturnChain> {
    check_excursions(blocks)?;
    let v00 = blocks.v00.entries();
    let v01 = blocks.v01.entries();
    let v10 = blocks.v10.entries();
    let v11 = blocks.v11.entries();
    let excursion = |scale: f64| -> Result<DMatrix<f64>> {
        let k = v11.nrows();
        if k == 0 {
            return Ok(DMatrix::zeros(v00.nrows(), v00.ncols()));
        }
        let a = DMatrix::identity(k, k) - v11 * scale;
        let solved = a
            .lu()
            .solve(v10)
            .ok_or(StabilityError::DivergentCycle { radius: 1.0 })?;
        Ok(v01 * solved)
    };
    let mut v_tilde = v00 + excursion(1.0)?;
    // Clean round-off so that the result validates as stochastic.
    v_tilde.iter_mut().for_each(|x| *x = x.max(0.0));
    for mut row in v_tilde.row_iter_mut() {
        let sum = row.sum();
        row.unscale_mut(sum);
    }
    let d_weighted = v00 * rho + excursion(rho)? * (rho * rho);
    let labels = (0..blocks.s0_len()).map(|i| format!("s0_{i}")).collect();
    Ok(ReturnChain {
        v_tilde: StochasticMatrix::with_labels(labels, v_tilde)?,
        d_weighted,
    })
}

/// The same two matrices summed term by term, `D(1) = V00`,
/// `D(l) = V01 V11^{l−2} V10`.
///
/// Stops when the probability of still being in an excursion, which bounds
/// every later term, is below [`SERIES_TOL`]. The term budget
/// is `10 · (|S0| + |S1|)`, extended to the count the spectral radius of `V11`
/// needs to decay to the tolerance (at most [`MAX_SERIES_TERMS`]); running out
/// of budget is reported as [`StabilityError::DivergentCycle`].
pub fn return_chain_series(blocks: &Blocks, rho: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let v00 = blocks.v00.entries();
    let v01 = blocks.v01.entries();
    let v11 = blocks.v11.entries();
    let mut v_tilde = v00.clone();
    let mut weighted = v00 * rho;
    if v11.nrows() == 0 {
        return Ok((v_tilde, weighted));
    }
    check_excursions(blocks)?;
    let radius = markov::spectral_radius(v11)?;
    let floor = 10 * (blocks.s0.len() + blocks.s1.len());
    let needed = if radius > 0.0 {
        // Transient growth of a non-normal V11 is covered by the 10·S floor.
        (SERIES_TOL.ln() / radius.ln()).ceil() as usize + floor
    } else {
        floor
    };
    let max_terms = floor.max(needed).min(MAX_SERIES_TERMS);
    let mut tail = blocks.v10.entries().clone();
    // Row sums of V11^{l−1}: mass not yet back in S0 after term l.
    let mut alive = v11.column_sum();
    let mut rho_l = rho;
    for _ in 2..=max_terms.max(2) {
        rho_l *= rho;
        let term = v01 * &tail;
        v_tilde += &term;
        weighted += &term * rho_l;
        if alive.amax() < SERIES_TOL {
            return Ok((v_tilde, weighted));
        }
        tail = v11 * tail;
        alive = v11 * alive;
    }
    Err(StabilityError::DivergentCycle { radius })
}

fn check_excursions(blocks: &Blocks) -> Result<()> {
    let v11 = blocks.v11.entries();
    if v11.nrows() == 0 {
        return Ok(());
    }
    let radius = markov::spectral_radius(v11)?;
    if radius >= 1.0 - 1e-12 {
        return Err(StabilityError::DivergentCycle { radius });
    }
    Ok(())
}

/// `r_{i,j} = [Σ ρ^l D(l)]_{i,j} / Ṽ_{i,j}`, zero where `Ṽ_{i,j}` vanishes.
pub fn conditional_r(return_chain: &ReturnChain) -> DMatrix<f64> {
    let v = return_chain.v_tilde.entries();
    DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        if v[(i, j)] <= ZERO_PROBABILITY {
            0.0
        } else {
            return_chain.d_weighted[(i, j)] / v[(i, j)]
        }
    })
}

fn check_mass(pi: &Distribution) -> Result<()> {
    match pi
        .weights()
        .iter()
        .enumerate()
        .find(|(_, &m)| m <= MIN_STATIONARY_MASS)
    {
        Some((index, &mass)) => Err(StabilityError::ZeroStationaryMass { index, mass }),
        None => Ok(()),
    }
}

/// `F = diag(π) Ṽ diag(π)⁻¹`; `Fᵀ` is the time-reversed return chain.
pub fn build_f(v_tilde: &StochasticMatrix, pi: &Distribution) -> Result<DMatrix<f64>> {
    check_mass(pi)?;
    let w = pi.weights();
    let v = v_tilde.entries();
    Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        w[i] * v[(i, j)] / w[j]
    }))
}

/// `F = diag(π) Ṽ diag(π)`.
pub fn build_f_weighted(v_tilde: &StochasticMatrix, pi: &Distribution) -> Result<DMatrix<f64>> {
    check_mass(pi)?;
    let w = pi.weights();
    let v = v_tilde.entries();
    Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        w[i] * v[(i, j)] * w[j]
    }))
}

/// `U[i·S0 + k, k·S0 + k′] = r_{k,i} f_{k′,k}` (zero-based), zero elsewhere.
pub fn build_u(r: &DMatrix<f64>, f: &DMatrix<f64>) -> DMatrix<f64> {
    let s = r.nrows();
    let mut u = DMatrix::zeros(s * s, s * s);
    for i in 0..s {
        for k in 0..s {
            let rk = r[(k, i)];
            if rk == 0.0 {
                continue;
            }
            for kp in 0..s {
                u[(i * s + k, k * s + kp)] = rk * f[(kp, k)];
            }
        }
    }
    u
}

/// Every intermediate matrix of the pipeline for one `(chain, S0, ρ)`.
#[derive(Debug, Clone)]
pub struct CycleAnalysis {
    pub blocks: Blocks,
    pub v_tilde: StochasticMatrix,
    pub d_weighted: DMatrix<f64>,
    pub pi: Distribution,
    pub r: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub form: UForm,
}

impl CycleAnalysis {
    /// Runs partition → return chain → stationary → r → F → U on a chain
    /// whose states are all recurrent.
    pub fn new(z: &StochasticMatrix, s0: &[usize], rho: f64, form: UForm) -> Result<Self> {
        let blocks = partition(z, s0)?;
        if blocks.s1.is_empty() {
            return Err(StabilityError::NoClosedLoopStates);
        }
        if blocks.s0_len() > MAX_S0 {
            return Err(StabilityError::SizeLimit(blocks.s0_len()));
        }
        let ReturnChain {
            v_tilde,
            d_weighted,
        } = return_chain(&blocks, rho)?;
        let pi = markov::stationary(&v_tilde)?;
        let r = conditional_r(&ReturnChain {
            v_tilde: v_tilde.clone(),
            d_weighted: d_weighted.clone(),
        });
        let f = match form {
            UForm::StationaryWeighted => build_f_weighted(&v_tilde, &pi)?,
            UForm::TimeReversal => build_f(&v_tilde, &pi)?,
        };
        let u = build_u(&r, &f);
        Ok(Self {
            blocks,
            v_tilde,
            d_weighted,
            pi,
            r,
            f,
            u,
            form,
        })
    }

    pub fn max_r(&self) -> f64 {
        self.r.max()
    }

    pub fn lambda_max_u(&self) -> Result<f64> {
        Ok(markov::spectral_radius(&self.u)?)
    }

    /// `U` for the other choice of `F`.
    pub fn u_for(&self, form: UForm) -> Result<DMatrix<f64>> {
        if form == self.form {
            return Ok(self.u.clone());
        }
        let f = match form {
            UForm::StationaryWeighted => build_f_weighted(&self.v_tilde, &self.pi)?,
            UForm::TimeReversal => build_f(&self.v_tilde, &self.pi)?,
        };
        Ok(build_u(&self.r, &f))
    }
}

/// State counts of the analysed chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub transient: usize,
    pub recurrent: usize,
    pub s0: usize,
}

/// Certificate for one chain and one set of plant margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rho: f64,
    pub alpha: f64,
    pub u_form: UForm,
    pub counts: Counts,
    /// Labels of the recurrent `S0` states, in the order of `v_tilde`.
    pub s0_labels: Vec<String>,
    pub v_tilde: Vec<Vec<f64>>,
    pub pi: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub max_r: f64,
    /// `λ_max(U)` for [`StabilityReport::u_form`].
    pub lambda_max_u: f64,
    pub lambda_max_u_weighted: f64,
    pub lambda_max_u_time_reversal: f64,
    pub omega_prime: f64,
    pub omega: f64,
    pub omega_time_reversal: f64,
    pub verdict_loose: bool,
    pub verdict_tight: bool,
    pub recurrent_irreducible: bool,
    pub recurrent_period: Option<usize>,
    pub return_irreducible: bool,
    pub return_period: Option<usize>,
}

impl StabilityReport {
    /// The certificate under process noise uses the same `Ω`; the Lipschitz
    /// constants it additionally assumes are the caller's responsibility.
    pub fn verdict_robust(&self) -> bool {
        self.verdict_tight
    }

    /// Flat `key=value` pairs in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("omega".into(), fmt_f64(self.omega)),
            ("omega_prime".into(), fmt_f64(self.omega_prime)),
            ("lambda_max_U".into(), fmt_f64(self.lambda_max_u)),
            ("max_r".into(), fmt_f64(self.max_r)),
            ("counts.total".into(), self.counts.total.to_string()),
            ("counts.transient".into(), self.counts.transient.to_string()),
            ("counts.recurrent".into(), self.counts.recurrent.to_string()),
            ("counts.s0".into(), self.counts.s0.to_string()),
            ("rho".into(), fmt_f64(self.rho)),
            ("alpha".into(), fmt_f64(self.alpha)),
            ("u_form".into(), self.u_form.as_str().into()),
            (
                "lambda_max_U.stationary_weighted".into(),
                fmt_f64(self.lambda_max_u_weighted),
            ),
            (
                "lambda_max_U.time_reversal".into(),
                fmt_f64(self.lambda_max_u_time_reversal),
            ),
            (
                "omega.time_reversal".into(),
                fmt_f64(self.omega_time_reversal),
            ),
            ("verdict_loose".into(), self.verdict_loose.to_string()),
            ("verdict_tight".into(), self.verdict_tight.to_string()),
            ("verdict_robust".into(), self.verdict_robust().to_string()),
            (
                "ia.recurrent".into(),
                ia_string(self.recurrent_irreducible, self.recurrent_period),
            ),
            (
                "ia.return".into(),
                ia_string(self.return_irreducible, self.return_period),
            ),
        ];
        for (i, w) in self.pi.iter().enumerate() {
            kv.push((format!("pi.{i}"), fmt_f64(*w)));
        }
        kv
    }

    pub fn to_key_values(&self) -> String {
        self.key_values()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn ia_string(irreducible: bool, period: Option<usize>) -> String {
    match (irreducible, period) {
        (true, Some(p)) => format!("irreducible,period={p}"),
        _ => "reducible".into(),
    }
}

impl fmt::Display for StabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        let c = &self.counts;
        writeln!(out, "states        {} total, {} transient, {} recurrent, {} in S0",
            c.total, c.transient, c.recurrent, c.s0)?;
        writeln!(out, "margins       rho = {}, alpha = {}, alpha/rho = {}",
            self.rho, self.alpha, self.alpha / self.rho)?;
        writeln!(out, "recurrent     {}", ia_string(self.recurrent_irreducible, self.recurrent_period))?;
        writeln!(out, "return chain  {}", ia_string(self.return_irreducible, self.return_period))?;
        if self.pi.len() <= 8 {
            writeln!(out, "\nreturn chain V~:")?;
            for row in &self.v_tilde {
                writeln!(out, "  {}", fmt_row(row))?;
            }
            writeln!(out, "stationary pi:\n  {}", fmt_row(&self.pi))?;
            writeln!(out, "r = E[rho^Delta | i -> j]:")?;
            for row in &self.r {
                writeln!(out, "  {}", fmt_row(row))?;
            }
        }
        writeln!(out)?;
        writeln!(out, "max r                         {:.6}", self.max_r)?;
        writeln!(out, "u_form                        {}", self.u_form.as_str())?;
        writeln!(out, "lambda_max(U) weighted        {:.6e}", self.lambda_max_u_weighted)?;
        writeln!(out, "lambda_max(U) time-reversal   {:.6e}", self.lambda_max_u_time_reversal)?;
        writeln!(out, "Omega'  = {:.6}  -> {}", self.omega_prime, verdict(self.verdict_loose))?;
        writeln!(out, "Omega   = {:.6}  -> {}", self.omega, verdict(self.verdict_tight))?;
        writeln!(out, "Omega (time-reversal) = {:.6}", self.omega_time_reversal)?;
        writeln!(out, "noisy plant: {} (same Omega; Lipschitz bounds assumed)",
            verdict(self.verdict_robust()))?;
        f.write_str(&out)
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "certified stable"
    } else {
        "not certified"
    }
}

fn fmt_row(row: &[f64]) -> String {
    row.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join("  ")
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// [`certify_with`] using the default [`UForm`].
pub fn certify(z: &StochasticMatrix, s0: &[usize], margins: PlantMargins) -> Result<StabilityReport> {
    certify_with(z, s0, margins, UForm::default())
}

/// Full pipeline on a chain that may contain transient states.
///
/// Transient states are removed first; `s0` indexes `z` and is intersected
/// with the recurrent set.
pub fn certify_with(
    z: &StochasticMatrix,
    s0: &[usize],
    margins: PlantMargins,
    form: UForm,
) -> Result<StabilityReport> {
    if let Some(&index) = s0.iter().find(|&&i| i >= z.dim()) {
        return Err(StabilityError::IndexOutOfRange {
            index,
            dim: z.dim(),
        });
    }
    let parts = recurrent_states(z);
    let zr = markov::restrict(z, &parts.recurrent)?;
    let recurrent_ia = is_irreducible_aperiodic(&zr);
    if !recurrent_ia.irreducible {
        let classes = recurrent_classes(&zr);
        return Err(StabilityError::ReducibleRecurrent(classes));
    }
    let mut is_s0 = vec![false; z.dim()];
    s0.iter().for_each(|&i| is_s0[i] = true);
    let s0_r: Vec<usize> = parts
        .recurrent
        .iter()
        .enumerate()
        .filter(|(_, &i)| is_s0[i])
        .map(|(pos, _)| pos)
        .collect();
    let analysis = CycleAnalysis::new(&zr, &s0_r, margins.rho(), form)?;
    let (weighted, reversal) = match form {
        UForm::StationaryWeighted => (
            analysis.lambda_max_u()?,
            markov::spectral_radius(&analysis.u_for(UForm::TimeReversal)?)?,
        ),
        UForm::TimeReversal => (
            markov::spectral_radius(&analysis.u_for(UForm::StationaryWeighted)?)?,
            analysis.lambda_max_u()?,
        ),
    };
    let lambda = match form {
        UForm::StationaryWeighted => weighted,
        UForm::TimeReversal => reversal,
    };
    let max_r = analysis.max_r();
    let gain = margins.gain();
    let return_ia = is_irreducible_aperiodic(&analysis.v_tilde);
    let report = StabilityReport {
        rho: margins.rho(),
        alpha: margins.alpha(),
        u_form: form,
        counts: Counts {
            total: z.dim(),
            transient: parts.transient.len(),
            recurrent: parts.recurrent.len(),
            s0: s0_r.len(),
        },
        s0_labels: s0_r.iter().map(|&i| zr.labels()[i].clone()).collect(),
        v_tilde: to_rows(analysis.v_tilde.entries()),
        pi: analysis.pi.weights().to_vec(),
        r: to_rows(&analysis.r),
        max_r,
        lambda_max_u: lambda,
        lambda_max_u_weighted: weighted,
        lambda_max_u_time_reversal: reversal,
        omega_prime: gain * max_r,
        omega: gain * lambda,
        omega_time_reversal: gain * reversal,
        verdict_loose: gain * max_r < 1.0,
        verdict_tight: gain * lambda < 1.0,
        recurrent_irreducible: recurrent_ia.irreducible,
        recurrent_period: recurrent_ia.period,
        return_irreducible: return_ia.irreducible,
        return_period: return_ia.period,
    };
    debug_assert!(report.omega <= report.omega_prime + 1e-9);
    Ok(report)
}

fn recurrent_classes(m: &StochasticMatrix) -> usize {
    petgraph::algo::kosaraju_scc(&m.support_graph()).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::matrix_from_rows;

    fn eq35() -> StochasticMatrix {
        let rows = vec![
            vec![0.10, 0.10, 0.10, 0.70],
            vec![0.30, 0.20, 0.10, 0.40],
            vec![0.60, 0.20, 0.10, 0.10],
            vec![0.90, 0.05, 0.02, 0.03],
        ];
        markov::validate_stochastic(&matrix_from_rows(&rows).unwrap()).unwrap()
    }

    fn assert_matrix(actual: &DMatrix<f64>, expected: &[&[f64]], tol: f64) {
        for (i, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let a = actual[(i, j)];
                assert!((a - e).abs() <= tol, "[{i},{j}] = {a}, expected {e}");
            }
        }
    }

    #[test]
    fn eq35_partition_blocks() {
        let blocks = partition(&eq35(), &[0, 1]).unwrap();
        assert_matrix(blocks.v00.entries(), &[&[0.10, 0.10], &[0.30, 0.20]], 0.0);
        assert_matrix(blocks.v11.entries(), &[&[0.10, 0.10], &[0.02, 0.03]], 0.0);
        assert_eq!(&blocks.recompose(), eq35().entries());
    }

    #[test]
    fn partition_edge_cases() {
        let all = partition(&eq35(), &[0, 1, 2, 3]).unwrap();
        assert_eq!(all.v11.nrows(), 0);
        assert_eq!(all.v00.entries(), eq35().entries());
        assert_eq!(
            partition(&eq35(), &[]).unwrap_err(),
            StabilityError::EmptyPartition
        );
    }

    #[test]
    fn eq35_pipeline() {
        let a = CycleAnalysis::new(&eq35(), &[0, 1], 0.8, UForm::StationaryWeighted).unwrap();
        assert_matrix(
            a.v_tilde.entries(),
            &[&[0.8378, 0.1622], &[0.7546, 0.2454]],
            1e-3,
        );
        assert!((a.pi.weights()[0] - 0.8231).abs() < 1e-3);
        assert_matrix(&a.r, &[&[0.6511, 0.7323], &[0.6971, 0.7673]], 1e-3);
        assert!((a.u[(0, 0)] - 0.3695).abs() < 1e-3);
        assert!((a.u[(2, 0)] - 0.4156).abs() < 1e-3);
        assert!((a.max_r() - 0.7673).abs() < 1e-3);
        assert!((a.lambda_max_u().unwrap() - 0.3731).abs() < 1e-3);
    }

    #[test]
    fn series_matches_closed_form() {
        let blocks = partition(&eq35(), &[0, 1]).unwrap();
        let closed = return_chain(&blocks, 0.8).unwrap();
        let (v, d) = return_chain_series(&blocks, 0.8).unwrap();
        assert!((closed.v_tilde.entries() - v).amax() < 1e-10);
        assert!((closed.d_weighted - d).amax() < 1e-10);
    }

    #[test]
    fn single_return_state_geometric() {
        // From S0 the chain leaves and returns with probability 1/2 each slot,
        // so Δ ~ Geometric(1/2) and r = Σ 0.8^l 0.5^l = 2/3.
        let z = markov::validate_stochastic(
            &matrix_from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(),
        )
        .unwrap();
        let a = CycleAnalysis::new(&z, &[0], 0.8, UForm::TimeReversal).unwrap();
        assert!((a.r[(0, 0)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.lambda_max_u().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn time_reversal_f_has_unit_column_sums() {
        let a = CycleAnalysis::new(&eq35(), &[0, 1], 0.8, UForm::TimeReversal).unwrap();
        for j in 0..2 {
            assert!((a.f.column(j).sum() - 1.0).abs() < 1e-9);
        }
        let one = markov::validate_stochastic(&DMatrix::from_element(1, 1, 1.0)).unwrap();
        let pi = Distribution::new(vec![1.0]).unwrap();
        assert_eq!(build_f(&one, &pi).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn zero_r_gives_zero_u() {
        let r = DMatrix::zeros(3, 3);
        let f = DMatrix::from_element(3, 3, 0.2);
        let u = build_u(&r, &f);
        assert_eq!(u.nrows(), 9);
        assert_eq!(markov::spectral_radius(&u).unwrap(), 0.0);
    }

    #[test]
    fn certify_eq35() {
        let report = certify(&eq35(), &[0, 1], PlantMargins::new(0.8, 0.8).unwrap()).unwrap();
        assert!((report.omega_prime - 0.7673).abs() < 1e-3);
        assert!((report.omega - 0.3731).abs() < 1e-3);
        assert!((report.omega_time_reversal - 0.6741).abs() < 1e-3);
        assert!(report.verdict_loose && report.verdict_tight);
        assert_eq!(
            report.counts,
            Counts {
                total: 4,
                transient: 0,
                recurrent: 4,
                s0: 2
            }
        );
        let kv = report.to_key_values();
        assert!(kv.starts_with("omega="));
        assert!(kv.contains("counts.s0=2"));
    }

    #[test]
    fn divergent_cycle_detected() {
        // State 1 is absorbing in S1: excursions never return.
        let z = markov::validate_stochastic(
            &matrix_from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let blocks = partition(&z, &[0]).unwrap();
        assert!(matches!(
            return_chain(&blocks, 0.5),
            Err(StabilityError::DivergentCycle { .. })
        ));
    }

    #[test]
    fn margins_validation() {
        assert!(PlantMargins::new(0.8, 0.0).is_err());
        assert!(PlantMargins::new(1.0, 1.0).is_err());
        assert!(PlantMargins::new(0.5, 2.0).is_ok());
    }

    #[test]
    fn s0_everything_is_degenerate() {
        let err = certify(&eq35(), &[0, 1, 2, 3], PlantMargins::new(0.8, 0.8).unwrap());
        assert_eq!(err.unwrap_err(), StabilityError::NoClosedLoopStates);
    }
}
