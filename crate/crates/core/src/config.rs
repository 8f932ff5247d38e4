//! TOML configuration files.
//!
//! ```toml
//! [network]
//! ca_drop = 0.1
//! sc_drop = [0.2, 0.01]
//! buf_controller = 2
//! buf_actuator = 2
//! initial = { b = 0, bp = 1, n = 0 }
//! l0_policy = "literal"
//! joint_channel = { dim = 2, rows = [[0.5, 0.5], [0.5, 0.5]] }
//! compute = { dim = 3, rows = [[0.1, 0.2, 0.7], [0, 0.6, 0.4], [0.1, 0.3, 0.6]] }
//!
//! [margins]
//! rho = 0.8
//! alpha = 0.8
//!
//! [plant]
//! name = "saturated2d"
//! noise = "gaussian-iid"
//! variance = 0.1
//! x0 = [10.0, 10.0]
//!
//! [run]
//! horizon = 800
//! seeds = 20          # or an explicit list, e.g. [3, 5, 8]
//! mode = "dual-buffer"
//! ```
//!
//! A `[raw-chain]` section replaces the generated chain with an explicit one:
//! either `csv = "chain.csv"` (relative to the config file) or `labels` plus
//! `matrix`, and optionally `s0`, the open-loop state indices. Without `s0`
//! the labels must be aggregated-state labels and `S0` is every state with
//! `la0`.

use crate::markov::{MarkovError, StochasticMatrix};
use crate::model::{
    read_chain_csv, ChannelState, L0Policy, ModelError, NetworkConfig, NetworkParams, ZState,
};
use crate::plant::{LinearPlant, NoiseSpec, PlantModel, PlantRegistry};
use crate::simulator::{Mode, SimConfig};
use crate::stability::{PlantMargins, UForm};
use nalgebra::DMatrix;
use serde::Deserialize;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    fn at(section: &str, msg: impl std::fmt::Display) -> Self {
        ConfigError(format!("{section}: {msg}"))
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    network: Option<RawNetwork>,
    margins: Option<RawMargins>,
    plant: Option<RawPlant>,
    run: Option<RawRun>,
    analysis: Option<RawAnalysis>,
    #[serde(rename = "raw-chain")]
    raw_chain: Option<RawChainSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMatrix {
    dim: usize,
    rows: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    b: usize,
    bp: usize,
    n: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    joint_channel: RawMatrix,
    compute: RawMatrix,
    ca_drop: f64,
    sc_drop: Vec<f64>,
    buf_controller: usize,
    buf_actuator: usize,
    initial: RawInitial,
    #[serde(default)]
    l0_policy: L0Policy,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMargins {
    rho: f64,
    alpha: f64,
}

#[derive(Debug, Deserialize, Default, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "kebab-case")]
enum RawNoiseKind {
    #[default]
    None,
    GaussianIid,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    name: String,
    #[serde(default)]
    noise: RawNoiseKind,
    variance: Option<f64>,
    x0: Vec<f64>,
    a: Option<f64>,
    b: Option<f64>,
    k: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawSeeds {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: Option<u64>,
    seeds: Option<RawSeeds>,
    mode: Option<Mode>,
    cycles: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    u_form: Option<UForm>,
    gamma_bar_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChainSection {
    csv: Option<PathBuf>,
    labels: Option<Vec<String>>,
    matrix: Option<RawMatrix>,
    s0: Option<Vec<usize>>,
}

/// Plant selection from `[plant]`.
#[derive(Debug, Clone)]
pub struct PlantSection {
    pub name: String,
    pub model: Arc<dyn PlantModel>,
    pub noise: NoiseSpec,
    pub x0: Vec<f64>,
}

/// `[run]` with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub horizon: u64,
    pub seeds: Vec<u64>,
    pub mode: Mode,
    /// Cycles simulated by the validation suite.
    pub cycles: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 800,
            seeds: vec![1],
            mode: Mode::DualBuffer,
            cycles: 100_000,
        }
    }
}

/// `[analysis]` with defaults filled in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalysisSection {
    pub u_form: UForm,
    pub gamma_bar_sweep: Vec<f64>,
}

/// Explicit chain from `[raw-chain]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChain {
    pub chain: StochasticMatrix,
    pub s0: Vec<usize>,
}

/// A parsed and validated configuration file.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    pub network: Option<NetworkConfig>,
    pub margins: Option<PlantMargins>,
    pub plant: Option<PlantSection>,
    pub run: RunSection,
    pub analysis: AnalysisSection,
    pub raw_chain: Option<RawChain>,
}

/// Seeds `1..=n`.
pub fn seed_range(n: u64) -> Vec<u64> {
    (1..=n).collect()
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with(path, &PlantRegistry::default())
    }

    pub fn load_with(path: &Path, registry: &PlantRegistry) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with(&text, base, registry)
    }

    /// Parses `text`; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        Self::parse_with(text, base, &PlantRegistry::default())
    }

    pub fn parse_with(text: &str, base: &Path, registry: &PlantRegistry) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let network = raw.network.map(network).transpose()?;
        let margins = raw
            .margins
            .map(|m| PlantMargins::new(m.rho, m.alpha).map_err(|e| ConfigError::at("margins", e)))
            .transpose()?;
        let plant = raw.plant.map(|p| plant(p, registry)).transpose()?;
        let run = match raw.run {
            None => RunSection::default(),
            Some(r) => run_section(r)?,
        };
        let analysis = match raw.analysis {
            None => AnalysisSection::default(),
            Some(a) => AnalysisSection {
                u_form: a.u_form.unwrap_or_default(),
                gamma_bar_sweep: a.gamma_bar_sweep.unwrap_or_default(),
            },
        };
        let raw_chain = raw.raw_chain.map(|c| raw_chain(c, base)).transpose()?;
        Ok(Self {
            network,
            margins,
            plant,
            run,
            analysis,
            raw_chain,
        })
    }

    pub fn require_network(&self) -> Result<&NetworkConfig> {
        self.network
            .as_ref()
            .ok_or_else(|| ConfigError("missing [network] section".into()))
    }

    pub fn require_margins(&self) -> Result<PlantMargins> {
        self.margins
            .ok_or_else(|| ConfigError("missing [margins] section".into()))
    }

    /// Simulation settings for one seed.
    pub fn sim_config(&self, seed: u64) -> Result<SimConfig> {
        let network = self.require_network()?.clone();
        let plant = self
            .plant
            .as_ref()
            .ok_or_else(|| ConfigError("missing [plant] section".into()))?;
        let cfg = SimConfig {
            network,
            plant: plant.model.clone(),
            plant_name: plant.name.clone(),
            noise: plant.noise,
            margins: self.margins,
            horizon: self.run.horizon,
            seed,
            mode: self.run.mode,
            x0: plant.x0.clone(),
            spill_path: None,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }
}

fn matrix(section: &str, m: RawMatrix) -> Result<DMatrix<f64>> {
    if m.rows.len() != m.dim {
        return Err(ConfigError::at(
            section,
            format!("declared dim {} but {} rows given", m.dim, m.rows.len()),
        ));
    }
    for (i, row) in m.rows.iter().enumerate() {
        if row.len() != m.dim {
            return Err(ConfigError::at(
                section,
                format!("row {i} has {} entries, expected {}", row.len(), m.dim),
            ));
        }
    }
    Ok(DMatrix::from_fn(m.dim, m.dim, |i, j| m.rows[i][j]))
}

fn network(raw: RawNetwork) -> Result<NetworkConfig> {
    let params = NetworkParams {
        joint_channel: matrix("network.joint_channel", raw.joint_channel)?,
        compute: matrix("network.compute", raw.compute)?,
        ca_drop: raw.ca_drop,
        sc_drop: raw.sc_drop,
        buf_controller: raw.buf_controller,
        buf_actuator: raw.buf_actuator,
        initial: ChannelState {
            b: raw.initial.b,
            bp: raw.initial.bp,
            n: raw.initial.n,
        },
        l0_policy: raw.l0_policy,
    };
    NetworkConfig::new(params).map_err(|e| match e {
        ModelError::Markov(MarkovError::RowSumDeviation { row, sum }) => ConfigError::at(
            "network",
            format!("matrix row {row} sums to {sum}, not 1"),
        ),
        other => ConfigError::at("network", other),
    })
}

fn plant(raw: RawPlant, registry: &PlantRegistry) -> Result<PlantSection> {
    let linear_params = raw.a.is_some() || raw.b.is_some() || raw.k.is_some();
    let model: Arc<dyn PlantModel> = if linear_params {
        if raw.name != "linear1d" {
            return Err(ConfigError::at(
                "plant",
                "a, b, k are only accepted for linear1d",
            ));
        }
        let d = LinearPlant::default();
        Arc::new(LinearPlant {
            a: raw.a.unwrap_or(d.a),
            b: raw.b.unwrap_or(d.b),
            k: raw.k.unwrap_or(d.k),
        })
    } else {
        registry.get(&raw.name).ok_or_else(|| {
            ConfigError::at(
                "plant",
                format!(
                    "unknown plant {:?} (known: {})",
                    raw.name,
                    registry.names().collect::<Vec<_>>().join(", ")
                ),
            )
        })?
    };
    let noise = match (raw.noise, raw.variance) {
        (RawNoiseKind::None, None) => NoiseSpec::None,
        (RawNoiseKind::None, Some(_)) => {
            return Err(ConfigError::at("plant", "variance given without noise"))
        }
        (RawNoiseKind::GaussianIid, v) => {
            NoiseSpec::gaussian(v.unwrap_or(0.0)).map_err(|e| ConfigError::at("plant", e))?
        }
    };
    let (ls, _) = model.dims();
    if raw.x0.len() != ls {
        return Err(ConfigError::at(
            "plant",
            format!("x0 has {} entries, {} expects {ls}", raw.x0.len(), raw.name),
        ));
    }
    Ok(PlantSection {
        name: raw.name,
        model,
        noise,
        x0: raw.x0,
    })
}

fn run_section(raw: RawRun) -> Result<RunSection> {
    let d = RunSection::default();
    let seeds = match raw.seeds {
        None => d.seeds,
        Some(RawSeeds::Count(n)) => seed_range(n),
        Some(RawSeeds::List(v)) => v,
    };
    if seeds.is_empty() {
        return Err(ConfigError::at("run", "at least one seed is required"));
    }
    let horizon = raw.horizon.unwrap_or(d.horizon);
    if horizon == 0 {
        return Err(ConfigError::at("run", "horizon must be at least 1"));
    }
    Ok(RunSection {
        horizon,
        seeds,
        mode: raw.mode.unwrap_or(d.mode),
        cycles: raw.cycles.unwrap_or(d.cycles),
    })
}

fn raw_chain(raw: RawChainSection, base: &Path) -> Result<RawChain> {
    let section = "raw-chain";
    let chain = match (raw.csv, raw.labels, raw.matrix) {
        (Some(csv), None, None) => {
            let path = base.join(csv);
            let file = fs::File::open(&path)
                .map_err(|e| ConfigError::at(section, format!("{}: {e}", path.display())))?;
            read_chain_csv(BufReader::new(file)).map_err(|e| ConfigError::at(section, e))?
        }
        (None, labels, Some(m)) => {
            let entries = matrix(section, m)?;
            let labels =
                labels.unwrap_or_else(|| (0..entries.nrows()).map(|i| format!("s{i}")).collect());
            StochasticMatrix::with_labels(labels, entries).map_err(|e| match e {
                MarkovError::RowSumDeviation { row, sum } => {
                    ConfigError::at(section, format!("matrix row {row} sums to {sum}, not 1"))
                }
                other => ConfigError::at(section, other),
            })?
        }
        _ => {
            return Err(ConfigError::at(
                section,
                "give either csv or matrix (with optional labels)",
            ))
        }
    };
    let s0 = match raw.s0 {
        Some(s0) => {
            if let Some(&i) = s0.iter().find(|&&i| i >= chain.dim()) {
                return Err(ConfigError::at(
                    section,
                    format!("s0 index {i} out of range for {} states", chain.dim()),
                ));
            }
            s0
        }
        None => {
            let states = chain
                .labels()
                .iter()
                .map(|l| l.parse::<ZState>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| {
                    ConfigError::at(section, format!("s0 omitted and labels are not Z states: {e}"))
                })?;
            crate::model::split_s0(&states).0
        }
    };
    Ok(RawChain { chain, s0 })
}
