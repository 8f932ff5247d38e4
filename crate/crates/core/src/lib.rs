//! Stochastic stability analysis of anytime control over lossy links with
//! buffers at both the controller and the actuator.
//!
//! The protocol state is aggregated into a finite Markov chain ([`model`]),
//! closed-loop cycles between returns to the closed-loop set are summarised
//! by a return chain and conditional contraction factors, and two
//! sufficient certificates are computed from them ([`stability`]). The
//! [`simulator`] runs the same protocol against a plant so the analysis can
//! be checked empirically ([`validation`]).
//!
//! ```
//! use wncs::markov::{matrix_from_rows, validate_stochastic};
//! use wncs::stability::{certify, PlantMargins};
//!
//! let v = validate_stochastic(&matrix_from_rows(&[
//!     vec![0.10, 0.10, 0.10, 0.70],
//!     vec![0.30, 0.20, 0.10, 0.40],
//!     vec![0.60, 0.20, 0.10, 0.10],
//!     vec![0.90, 0.05, 0.02, 0.03],
//! ])?)?;
//! let report = certify(&v, &[0, 1], PlantMargins::new(0.8, 0.8)?)?;
//! assert!((report.omega - 0.3731).abs() < 1e-3);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod cli;
pub mod config;
pub mod markov;
pub mod model;
pub mod plant;
pub mod simulator;
pub mod stability;
pub mod validation;

pub use config::ConfigFile;
pub use markov::StochasticMatrix;
pub use model::{build_z_chain, NetworkConfig, NetworkParams, ZChain, ZState};
pub use simulator::{monte_carlo, simulate, SimConfig, SimTrace};
pub use stability::{certify, PlantMargins, StabilityReport, UForm};
