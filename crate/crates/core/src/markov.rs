//! Finite Markov-chain utilities.
//!
//! Everything here works on dense matrices. The state spaces produced by the
//! protocol model are at most a few thousand states, so dense storage keeps
//! the numerics simple and reproducible.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use std::collections::{HashSet, VecDeque};
use thiserror::Error;

/// Tolerance on row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// An entry counts as an edge of the support digraph iff it exceeds this.
pub const EDGE_THRESHOLD: f64 = 1e-12;

/// Largest dimension handled by the dense Schur eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 512;

/// Iteration cap for the power method.
pub const POWER_ITERATION_CAP: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("row {row} has {len} entries, expected {expected}")]
    RaggedRow { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    InvalidEntry { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSumDeviation { row: usize, sum: f64 },
    #[error("row {row} sums to {sum}, which exceeds 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    #[error("{labels} labels supplied for a {dim}x{dim} matrix")]
    LabelCount { labels: usize, dim: usize },
    #[error("duplicate state label {0:?}")]
    DuplicateLabel(String),
    #[error("state index {index} out of range for {dim} states")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("restricted row {row} sums to {sum}: kept set is not closed")]
    LeakyRestriction { row: usize, sum: f64 },
    #[error("chain is not irreducible")]
    NotIrreducible,
    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("distribution weights must be nonnegative and sum to 1 (sum = {sum})")]
    InvalidDistribution { sum: f64 },
}

pub type Result<T, E = MarkovError> = std::result::Result<T, E>;

/// Builds a dense matrix from row vectors, rejecting ragged input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    for (row, values) in rows.iter().enumerate() {
        if values.len() != n_cols {
            return Err(MarkovError::RaggedRow {
                row,
                len: values.len(),
                expected: n_cols,
            });
        }
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

/// Row-stochastic matrix over a labeled state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix {
    labels: Vec<String>,
    entries: DMatrix<f64>,
}

impl StochasticMatrix {
    /// Validates `entries` and attaches `labels`.
    pub fn with_labels(labels: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        check_probabilities(&entries)?;
        for row in 0..entries.nrows() {
            let sum = entries.row(row).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MarkovError::RowSumDeviation { row, sum });
            }
        }
        if labels.len() != entries.nrows() {
            return Err(MarkovError::LabelCount {
                labels: labels.len(),
                dim: entries.nrows(),
            });
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(MarkovError::DuplicateLabel(label.clone()));
            }
        }
        Ok(Self { labels, entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn into_parts(self) -> (Vec<String>, DMatrix<f64>) {
        (self.labels, self.entries)
    }

    /// Successors of `i` in the support digraph.
    pub fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&j| self.entries[(i, j)] > EDGE_THRESHOLD)
    }

    /// Directed graph with an edge wherever an entry exceeds [`EDGE_THRESHOLD`].
    pub fn support_graph(&self) -> DiGraph<(), ()> {
        support_graph(&self.entries)
    }
}

/// Validates a raw matrix as row-stochastic, labelling states `s0, s1, ...`.
pub fn validate_stochastic(m: &DMatrix<f64>) -> Result<StochasticMatrix> {
    let labels = (0..m.nrows()).map(|i| format!("s{i}")).collect();
    StochasticMatrix::with_labels(labels, m.clone())
}

/// Nonnegative matrix whose rows sum to at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstochasticMatrix {
    entries: DMatrix<f64>,
}

impl SubstochasticMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_probabilities(&entries)?;
        for row in 0..entries.nrows() {
            let sum = entries.row(row).sum();
            if sum > 1.0 + ROW_SUM_TOL {
                return Err(MarkovError::RowSumExceedsOne { row, sum });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }
}

/// Probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    weights: Vec<f64>,
}

impl Distribution {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(MarkovError::InvalidDistribution { sum });
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Recurrent/transient split of a chain's state indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePartition {
    pub recurrent: Vec<usize>,
    pub transient: Vec<usize>,
}

/// Recurrent states are those in closed strongly connected components of the
/// support digraph; everything else is transient.
pub fn recurrent_states(m: &StochasticMatrix) -> StatePartition {
    let graph = m.support_graph();
    let components = tarjan_scc(&graph);
    let mut component_of = vec![0usize; m.dim()];
    for (c, nodes) in components.iter().enumerate() {
        for node in nodes {
            component_of[node.index()] = c;
        }
    }
    let mut closed = vec![true; components.len()];
    for edge in graph.raw_edges() {
        let (a, b) = (edge.source().index(), edge.target().index());
        if component_of[a] != component_of[b] {
            closed[component_of[a]] = false;
        }
    }
    let (recurrent, transient) = (0..m.dim()).partition(|&i| closed[component_of[i]]);
    StatePartition {
        recurrent,
        transient,
    }
}

/// Principal submatrix over `keep` (sorted, deduplicated), relabeled.
///
/// Fails with [`MarkovError::LeakyRestriction`] when a kept row loses mass,
/// i.e. `keep` is not a union of closed classes.
pub fn restrict(m: &StochasticMatrix, keep: &[usize]) -> Result<StochasticMatrix> {
    let mut keep: Vec<usize> = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if let Some(&index) = keep.iter().find(|&&i| i >= m.dim()) {
        return Err(MarkovError::IndexOutOfRange {
            index,
            dim: m.dim(),
        });
    }
    let n = keep.len();
    let mut sub = DMatrix::from_fn(n, n, |a, b| m.get(keep[a], keep[b]));
    for a in 0..n {
        let sum = sub.row(a).sum();
        if sum < 1.0 - ROW_SUM_TOL {
            return Err(MarkovError::LeakyRestriction { row: keep[a], sum });
        }
        sub.row_mut(a).unscale_mut(sum);
    }
    let labels = keep.iter().map(|&i| m.labels[i].clone()).collect();
    StochasticMatrix::with_labels(labels, sub)
}

/// Stationary distribution of an irreducible chain by direct linear solve.
///
/// Solves `(Pᵀ - I) π = 0` with the last equation replaced by `Σ π = 1`, then
/// applies iterative refinement until the residual `‖πᵀP - πᵀ‖∞ ≤ 1e-10`.
pub fn stationary(m: &StochasticMatrix) -> Result<Distribution> {
    let n = m.dim();
    if n == 0 || !is_irreducible_aperiodic(m).irreducible {
        return Err(MarkovError::NotIrreducible);
    }
    let mut a = m.entries.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    a.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut pi = lu.solve(&rhs).ok_or(MarkovError::NotIrreducible)?;
    for _ in 0..3 {
        let residual = &rhs - &a * &pi;
        if residual.amax() <= 1e-14 {
            break;
        }
        if let Some(correction) = lu.solve(&residual) {
            pi += correction;
        }
    }
    let mut weights: Vec<f64> = pi.iter().map(|&w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(MarkovError::NotIrreducible);
    }
    Distribution::new(weights)
}

/// `‖πᵀP - πᵀ‖∞`.
pub fn stationary_residual(m: &StochasticMatrix, pi: &Distribution) -> f64 {
    let p = DVector::from_column_slice(pi.weights());
    let moved = m.entries.transpose() * &p;
    (moved - p).amax()
}

/// Spectral radius of a square matrix.
///
/// Dimensions up to [`DENSE_EIGEN_LIMIT`] use a real Schur decomposition.
/// Larger (nonnegative) matrices use shifted power iteration over the
/// nonzero pattern.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    check_square(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_EIGEN_LIMIT {
        if let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 0) {
            let radius = schur
                .complex_eigenvalues()
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            return Ok(radius);
        }
    }
    check_nonnegative(m)?;
    power_spectral_radius(m)
}

fn power_spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let v = m[(i, j)];
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect();
    let max_row_sum = rows
        .iter()
        .map(|r| r.iter().map(|(_, v)| v).sum::<f64>())
        .fold(0.0, f64::max);
    if max_row_sum == 0.0 {
        return Ok(0.0);
    }
    // Unshifted first; a shift breaks ties between the Perron root and other
    // eigenvalues of equal modulus (periodic structure).
    let budget = POWER_ITERATION_CAP / 2;
    if let Some(radius) = power_iterate(&rows, 0.0, budget) {
        return Ok(radius);
    }
    power_iterate(&rows, 0.5 * max_row_sum, budget).ok_or(MarkovError::NoConvergence {
        iterations: POWER_ITERATION_CAP,
    })
}

fn power_iterate(rows: &[Vec<(usize, f64)>], shift: f64, cap: usize) -> Option<f64> {
    let n = rows.len();
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut previous = f64::NAN;
    let mut stable = 0;
    for _ in 0..cap {
        for (i, row) in rows.iter().enumerate() {
            y[i] = shift * x[i] + row.iter().map(|&(j, v)| v * x[j]).sum::<f64>();
        }
        let norm: f64 = y.iter().sum();
        if norm <= f64::MIN_POSITIVE {
            return Some(0.0);
        }
        // x is kept at unit 1-norm, so the norm ratio is just `norm`.
        let estimate = norm - shift;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        if (estimate - previous).abs() <= 1e-14 * norm.max(f64::MIN_POSITIVE) {
            stable += 1;
            if stable >= 16 {
                return Some(estimate.max(0.0));
            }
        } else {
            stable = 0;
        }
        previous = estimate;
    }
    None
}

/// Irreducibility and period of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Irreducibility {
    pub irreducible: bool,
    /// Period of state 0; `None` when the chain is reducible.
    pub period: Option<usize>,
}

impl Irreducibility {
    pub fn is_ia(&self) -> bool {
        self.irreducible && self.period == Some(1)
    }
}

/// Structural irreducibility and period, from the support digraph only.
pub fn is_irreducible_aperiodic(m: &StochasticMatrix) -> Irreducibility {
    let n = m.dim();
    if n == 0 {
        return Irreducibility {
            irreducible: false,
            period: None,
        };
    }
    let graph = m.support_graph();
    let irreducible = tarjan_scc(&graph).len() == 1;
    if !irreducible {
        return Irreducibility {
            irreducible,
            period: None,
        };
    }
    // BFS levels from state 0; the period is the gcd of level[u] + 1 - level[v]
    // over all edges u -> v.
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    let mut period = 0usize;
    while let Some(u) = queue.pop_front() {
        for v in m.successors(u) {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                let diff = (level[u] + 1).abs_diff(level[v]);
                period = gcd(period, diff);
            }
        }
    }
    Irreducibility {
        irreducible,
        period: Some(period.max(1)),
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn support_graph(entries: &DMatrix<f64>) -> DiGraph<(), ()> {
    let n = entries.nrows();
    let mut graph = DiGraph::with_capacity(n, n * 4);
    for _ in 0..n {
        graph.add_node(());
    }
    for i in 0..n {
        for j in 0..n {
            if entries[(i, j)] > EDGE_THRESHOLD {
                graph.add_edge(NodeIndex::new(i), NodeIndex::new(j), ());
            }
        }
    }
    graph
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(MarkovError::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

fn check_nonnegative(m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let value = m[(i, j)];
            if value < 0.0 || value.is_nan() {
                return Err(MarkovError::NegativeEntry { row: i, col: j, value });
            }
        }
    }
    Ok(())
}

fn check_probabilities(m: &DMatrix<f64>) -> Result<()> {
    check_nonnegative(m)?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let value = m[(i, j)];
            if !(value <= 1.0) {
                return Err(MarkovError::InvalidEntry { row: i, col: j, value });
            }
        }
    }
    Ok(())
}
