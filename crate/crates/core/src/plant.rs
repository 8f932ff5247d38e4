//! Plant models, the anytime command-sequence generator and a sampling check
//! of the contraction/expansion margins.

use crate::stability::PlantMargins;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Discrete-time plant with a stabilising policy and a Lyapunov function.
///
/// Implementations must be pure: the same arguments always give the same
/// result, so one instance can be shared by concurrent simulations.
pub trait PlantModel: Send + Sync + fmt::Debug {
    /// `(state dimension, input dimension)`.
    fn dims(&self) -> (usize, usize);
    /// `x⁺ = f(x, u) + w`.
    fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64>;
    /// The policy `κ(x)`.
    fn policy(&self, x: &[f64]) -> Vec<f64>;
    /// `V(x) ≥ 0` with `V(0) = 0`.
    fn lyapunov(&self, x: &[f64]) -> f64;
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Clamp to `[-10, 10]`.
pub fn sat(mu: f64) -> f64 {
    mu.clamp(-10.0, 10.0)
}

/// Open-loop unstable constrained plant
/// `x⁺ = (x₂ + u₁, −sat(x₁ + x₂) + u₂) + w` with policy
/// `κ(x) = (−x₂, 0.505·sat(x₁ + x₂))` and `V(x) = |x|`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SaturatedPlant;

impl PlantModel for SaturatedPlant {
    fn dims(&self) -> (usize, usize) {
        (2, 2)
    }

    fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        vec![x[1] + u[0] + w[0], -sat(x[0] + x[1]) + u[1] + w[1]]
    }

    fn policy(&self, x: &[f64]) -> Vec<f64> {
        vec![-x[1], 0.505 * sat(x[0] + x[1])]
    }

    fn lyapunov(&self, x: &[f64]) -> f64 {
        norm(x)
    }
}

/// Scalar plant `x⁺ = a·x + b·u + w` with `κ(x) = −k·x` and `V(x) = |x|`.
///
/// Its margins are exact: `ρ = |a − b·k|`, `α = |a|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearPlant {
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

impl Default for LinearPlant {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 1.0,
            k: 1.5,
        }
    }
}

impl LinearPlant {
    pub fn rho(&self) -> f64 {
        (self.a - self.b * self.k).abs()
    }

    pub fn alpha(&self) -> f64 {
        self.a.abs()
    }
}

impl PlantModel for LinearPlant {
    fn dims(&self) -> (usize, usize) {
        (1, 1)
    }

    fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Vec<f64> {
        vec![self.a * x[0] + self.b * u[0] + w[0]]
    }

    fn policy(&self, x: &[f64]) -> Vec<f64> {
        vec![-self.k * x[0]]
    }

    fn lyapunov(&self, x: &[f64]) -> f64 {
        x[0].abs()
    }
}

/// Process noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Independent zero-mean Gaussian per coordinate.
    GaussianIid { variance: f64 },
}

impl NoiseSpec {
    pub fn gaussian(variance: f64) -> Result<Self, String> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(format!("noise variance {variance} must be finite and >= 0"));
        }
        Ok(NoiseSpec::GaussianIid { variance })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, NoiseSpec::None)
    }
}

/// Anytime command sequence: `u₁ = κ(x)` and `uᵢ = κ(x′ᵢ)` along the
/// noise-free rollout `x′ᵢ = f(x′ᵢ₋₁, uᵢ₋₁, 0)`.
pub fn generate_sequence(model: &dyn PlantModel, x: &[f64], n: usize) -> Vec<Vec<f64>> {
    let zero = vec![0.0; model.dims().0];
    let mut out = Vec::with_capacity(n);
    let mut state = x.to_vec();
    for i in 0..n {
        let u = model.policy(&state);
        if i + 1 < n {
            state = model.step(&state, &u, &zero);
        }
        out.push(u);
    }
    out
}

/// Largest sampled ratios `V(f(x, κ(x)))/V(x)` and `V(f(x, 0))/V(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginCheck {
    pub samples_used: usize,
    pub ratio_closed: f64,
    pub ratio_open: f64,
    pub rho_violated: bool,
    pub alpha_violated: bool,
}

/// Falsification check of the supplied margins on `samples` uniform draws
/// from `bounds` (one `(lo, hi)` per state coordinate).
///
/// States with `V(x) < 1e-12` are skipped. A ratio above the supplied margin
/// is flagged (up to a relative round-off slack of `1e-12`); passing is
/// evidence, not proof.
pub fn check_margins(
    model: &dyn PlantModel,
    margins: PlantMargins,
    samples: usize,
    bounds: &[(f64, f64)],
    seed: u64,
) -> MarginCheck {
    let (ls, lu) = model.dims();
    assert_eq!(bounds.len(), ls, "one sampling interval per state coordinate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero_w = vec![0.0; ls];
    let zero_u = vec![0.0; lu];
    let mut check = MarginCheck {
        samples_used: 0,
        ratio_closed: 0.0,
        ratio_open: 0.0,
        rho_violated: false,
        alpha_violated: false,
    };
    for _ in 0..samples {
        let x: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        let v = model.lyapunov(&x);
        if v < 1e-12 {
            continue;
        }
        check.samples_used += 1;
        let closed = model.lyapunov(&model.step(&x, &model.policy(&x), &zero_w)) / v;
        let open = model.lyapunov(&model.step(&x, &zero_u, &zero_w)) / v;
        check.ratio_closed = check.ratio_closed.max(closed);
        check.ratio_open = check.ratio_open.max(open);
    }
    // Relative slack so that exact margins are not flagged over round-off.
    check.rho_violated = check.ratio_closed > margins.rho() * (1.0 + 1e-12);
    check.alpha_violated = check.ratio_open > margins.alpha() * (1.0 + 1e-12);
    check
}

/// Plants addressable by name from configuration files.
#[derive(Debug, Clone)]
pub struct PlantRegistry {
    plants: BTreeMap<String, Arc<dyn PlantModel>>,
}

impl Default for PlantRegistry {
    fn default() -> Self {
        let mut registry = Self {
            plants: BTreeMap::new(),
        };
        registry.register("saturated2d", Arc::new(SaturatedPlant));
        registry.register("linear1d", Arc::new(LinearPlant::default()));
        registry
    }
}

impl PlantRegistry {
    /// Adds or replaces a plant.
    pub fn register(&mut self, name: &str, plant: Arc<dyn PlantModel>) {
        self.plants.insert(name.to_string(), plant);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn PlantModel>> {
        self.plants.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.plants.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_sequences() {
        let p = SaturatedPlant;
        assert_eq!(generate_sequence(&p, &[0.0, 0.0], 3), vec![vec![0.0, 0.0]; 3]);
        let one = generate_sequence(&p, &[1.0, 1.0], 1);
        assert_eq!(one, vec![vec![-1.0, 1.01]]);
        let two = generate_sequence(&p, &[1.0, 1.0], 2);
        // x′₂ = (1 − 1, −2 + 1.01) = (0, −0.99)
        let expected = [0.99, 0.505 * -0.99];
        assert!((two[1][0] - expected[0]).abs() < 1e-15);
        assert!((two[1][1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn sat_clamps() {
        assert_eq!(sat(12.0), 10.0);
        assert_eq!(sat(-10.5), -10.0);
        assert_eq!(sat(3.25), 3.25);
        assert_eq!(sat(sat(42.0)), sat(42.0));
    }

    #[test]
    fn linear_margins_are_exact() {
        let p = LinearPlant::default();
        let m = PlantMargins::new(0.5, 2.0).unwrap();
        let c = check_margins(&p, m, 1000, &[(-5.0, 5.0)], 3);
        assert!((c.ratio_closed - 0.5).abs() < 1e-12);
        assert!((c.ratio_open - 2.0).abs() < 1e-12);
        assert!(!c.rho_violated && !c.alpha_violated);
        let tight = PlantMargins::new(0.4, 2.0).unwrap();
        assert!(check_margins(&p, tight, 100, &[(-5.0, 5.0)], 3).rho_violated);
    }

    #[test]
    fn zero_state_is_skipped() {
        let p = LinearPlant::default();
        let m = PlantMargins::new(0.5, 2.0).unwrap();
        let c = check_margins(&p, m, 10, &[(0.0, 0.0)], 1);
        assert_eq!(c.samples_used, 0);
        assert_eq!(c.ratio_closed, 0.0);
    }

    #[test]
    fn registry_has_builtins() {
        let r = PlantRegistry::default();
        assert_eq!(r.names().collect::<Vec<_>>(), ["linear1d", "saturated2d"]);
        assert_eq!(r.get("saturated2d").unwrap().dims(), (2, 2));
        assert!(r.get("pendulum").is_none());
    }
}
