#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;
use wncs::config::ConfigFile;
use wncs::markov::{matrix_from_rows, validate_stochastic, StochasticMatrix};
use wncs::model::{ChannelState, L0Policy, NetworkConfig, NetworkParams};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load_config(name: &str) -> ConfigFile {
    ConfigFile::load(&config_path(name)).expect("shipped config loads")
}

/// Network of the shipped 162-state configuration with C-A drop `gamma_bar`.
pub fn paper_network(gamma_bar: f64) -> NetworkConfig {
    load_config("paper_162.cfg")
        .require_network()
        .unwrap()
        .with_ca_drop(gamma_bar)
        .unwrap()
}

pub fn eq35() -> StochasticMatrix {
    validate_stochastic(
        &matrix_from_rows(&[
            vec![0.10, 0.10, 0.10, 0.70],
            vec![0.30, 0.20, 0.10, 0.40],
            vec![0.60, 0.20, 0.10, 0.10],
            vec![0.90, 0.05, 0.02, 0.03],
        ])
        .unwrap(),
    )
    .unwrap()
}

/// Row-normalises `weights`, after adding mass on the ring `i → i+1` so the
/// chain is irreducible, and on the diagonal when `lazy` so it is aperiodic.
pub fn ring_chain(n: usize, weights: &[f64], lazy: bool) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |i, j| weights[i * n + j]);
    for i in 0..n {
        m[(i, (i + 1) % n)] += 0.05;
        if lazy {
            m[(i, i)] += 0.05;
        }
        let s: f64 = m.row(i).sum();
        for j in 0..n {
            m[(i, j)] /= s;
        }
    }
    m
}

/// Irreducible aperiodic chain of 2..=`max_n` states with sparse support.
pub fn irreducible_chain(max_n: usize) -> impl Strategy<Value = StochasticMatrix> {
    (2..=max_n)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec(prop_oneof![2 => Just(0.0), 3 => 0.0..1.0f64], n * n),
            )
        })
        .prop_map(|(n, w)| validate_stochastic(&ring_chain(n, &w, true)).unwrap())
}

/// Chain together with a nonempty proper subset of its states.
pub fn chain_with_split(max_n: usize) -> impl Strategy<Value = (StochasticMatrix, Vec<usize>)> {
    irreducible_chain(max_n).prop_flat_map(|m| {
        let n = m.dim();
        (Just(m), prop::collection::vec(any::<bool>(), n)).prop_map(move |(m, mut mask)| {
            if mask.iter().all(|&b| b) {
                mask[n - 1] = false;
            }
            if mask.iter().all(|&b| !b) {
                mask[0] = true;
            }
            let s0 = (0..n).filter(|&i| mask[i]).collect();
            (m, s0)
        })
    })
}

/// Irreducible `n × n` transition matrix, as the channel and compute chains
/// are assumed ergodic.
fn ergodic_rows(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop_oneof![1 => Just(0.0), 3 => 0.01..1.0f64], n * n)
        .prop_map(move |w| ring_chain(n, &w, false))
}

/// Small random network: buffers, capacities, levels and probabilities.
pub fn random_network() -> impl Strategy<Value = NetworkConfig> {
    (1usize..=3, 0usize..=2, 1usize..=2)
        .prop_flat_map(|(lc, bbar, levels)| {
            let joint = (bbar + 1) * levels;
            (
                Just((lc, bbar, levels)),
                1..=lc,
                1..=lc,
                ergodic_rows(joint),
                0.01..0.99f64,
                prop::collection::vec(0.0..1.0f64, levels),
                any::<bool>(),
            )
        })
        .prop_flat_map(|((lc, bbar, levels), la, nbar, joint, ca, sc, forced)| {
            (
                Just((lc, bbar, levels, la, nbar, joint, ca, sc, forced)),
                ergodic_rows(nbar + 1),
                0..=bbar,
                1..=levels,
                0..=nbar,
            )
        })
        .prop_map(
            |((lc, _bbar, _levels, la, _nbar, joint, ca, sc, forced), compute, b, bp, n)| {
                NetworkConfig::new(NetworkParams {
                    joint_channel: joint,
                    compute,
                    ca_drop: ca,
                    sc_drop: sc,
                    buf_controller: lc,
                    buf_actuator: la,
                    initial: ChannelState { b, bp, n },
                    l0_policy: if forced {
                        L0Policy::ForcedDrop
                    } else {
                        L0Policy::Literal
                    },
                })
                .expect("generated network is valid")
            },
        )
}

/// Characteristic polynomial coefficients `c` of `m` (monic, `c[0] = 1`,
/// `det(λI − m) = Σ c[k] λ^{n−k}`) by Faddeev–LeVerrier.
pub fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut c = vec![1.0];
    let mut mk = DMatrix::<f64>::zeros(n, n);
    let id = DMatrix::<f64>::identity(n, n);
    for k in 1..=n {
        mk = m * (&mk + &id * c[k - 1]);
        c.push(-mk.trace() / k as f64);
    }
    c
}

/// All roots of a monic polynomial by Durand–Kerner iteration.
pub fn poly_roots(c: &[f64]) -> Vec<Complex<f64>> {
    let n = c.len() - 1;
    let eval = |z: Complex<f64>| c.iter().fold(Complex::new(0.0, 0.0), |acc, &a| acc * z + a);
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..n).map(|k| seed.powu(k as u32)).collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 {
            break;
        }
    }
    roots
}

pub fn spectral_radius_oracle(m: &DMatrix<f64>) -> f64 {
    poly_roots(&char_poly(m))
        .iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max)
}
