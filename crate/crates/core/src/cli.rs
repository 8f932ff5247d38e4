//! Command-line front end.
//!
//! Exit codes: 0 success (whatever the verdict), 1 validation failure,
//! 2 configuration or usage error, 3 analysis error.

use crate::config::{seed_range, ConfigError, ConfigFile};
use crate::markov::StochasticMatrix;
use crate::model::{build_z_chain, write_chain_csv, L0Policy, NetworkConfig};
use crate::simulator::{monte_carlo, simulate, thread_pool, Mode, MonteCarloReport, SimError};
use crate::stability::{certify_with, StabilityReport, UForm};
use crate::validation::{validate, PathSource, ValidationError, ValidationOptions};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "wncs",
    version,
    about = "Stability certificates and Monte-Carlo validation for dual-buffer anytime control"
)]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Suppress the report on stdout; files are still written.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the chain and certify stability.
    Analyze {
        /// Write the text report here and a key=value dump next to it (`.kv`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write the full aggregated chain as CSV.
        #[arg(long)]
        dump_chain: Option<PathBuf>,
        /// Comma-separated C-A drop probabilities; one report each.
        #[arg(long, value_delimiter = ',')]
        gamma_bar_sweep: Option<Vec<f64>>,
        /// Treatment of slots that carry no commands.
        #[arg(long)]
        l0_policy: Option<L0Policy>,
        /// Matrix F used to build U.
        #[arg(long)]
        u_form: Option<UForm>,
    },
    /// Simulate the closed loop over one or more seeds.
    Simulate {
        /// Write per-step CSV traces (suffixed per seed and mode when several).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also run the single-buffer baseline on the same seeds.
        #[arg(long)]
        baseline: bool,
        /// Use seeds 1..=N instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        l0_policy: Option<L0Policy>,
    },
    /// Cross-check the analysis against simulation.
    Validate {
        /// Cycles to simulate (default from [run] cycles).
        #[arg(long)]
        cycles: Option<u64>,
        /// Seed of the sample path (default: first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        l0_policy: Option<L0Policy>,
    },
}

/// Error routed to an exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(msg: impl ToString) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: msg.to_string(),
        }
    }

    fn analysis(msg: impl ToString) -> Self {
        Self {
            code: EXIT_ANALYSIS,
            message: msg.to_string(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::config(format!("cannot write {}: {e}", path.display()))
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => Failure::config(e),
            _ => Failure::analysis(e),
        }
    }
}

/// Parses `args` and runs the command, writing to the given streams.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = (|| {
        let path = cli
            .config
            .as_ref()
            .ok_or_else(|| Failure::config("--config <path> is required"))?;
        let cfg = ConfigFile::load(path)?;
        match &cli.command {
            Command::Analyze {
                report,
                dump_chain,
                gamma_bar_sweep,
                l0_policy,
                u_form,
            } => analyze(
                cli,
                &cfg,
                AnalyzeArgs {
                    report: report.as_deref(),
                    dump_chain: dump_chain.as_deref(),
                    sweep: gamma_bar_sweep.clone(),
                    l0_policy: *l0_policy,
                    u_form: *u_form,
                },
                out,
            ),
            Command::Simulate {
                trace,
                baseline,
                seeds,
                l0_policy,
            } => simulate_cmd(cli, &cfg, trace.as_deref(), *baseline, *seeds, *l0_policy, out),
            Command::Validate {
                cycles,
                seed,
                l0_policy,
            } => validate_cmd(cli, &cfg, *cycles, *seed, *l0_policy, out),
        }
    })();
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// `base` with `_tag` inserted before the extension.
fn tagged_path(base: &Path, tag: &str) -> PathBuf {
    let stem = base
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{tag}"),
    };
    base.with_file_name(name)
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::io(path, e))
}

struct AnalyzeArgs<'a> {
    report: Option<&'a Path>,
    dump_chain: Option<&'a Path>,
    sweep: Option<Vec<f64>>,
    l0_policy: Option<L0Policy>,
    u_form: Option<UForm>,
}

#[derive(Serialize)]
struct AnalyzeCase {
    source: &'static str,
    gamma_bar: Option<f64>,
    l0_policy: Option<L0Policy>,
    report: StabilityReport,
}

impl AnalyzeCase {
    fn header(&self) -> Vec<(String, String)> {
        vec![
            ("source".into(), self.source.into()),
            (
                "gamma_bar".into(),
                self.gamma_bar.map_or("n/a".into(), |g| g.to_string()),
            ),
            (
                "l0_policy".into(),
                self.l0_policy.map_or("n/a".into(), |p| p.as_str().into()),
            ),
        ]
    }

    fn text(&self) -> String {
        let mut s: String = self
            .header()
            .into_iter()
            .map(|(k, v)| format!("{k:<14}{v}\n"))
            .collect();
        s.push_str(&self.report.to_string());
        s
    }

    fn key_values(&self) -> String {
        let mut s: String = self
            .header()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        s.push_str(&self.report.to_key_values());
        s
    }
}

fn analyze(
    cli: &Cli,
    cfg: &ConfigFile,
    args: AnalyzeArgs<'_>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let margins = cfg.require_margins()?;
    let form = args.u_form.unwrap_or(cfg.analysis.u_form);
    let sweep = args
        .sweep
        .unwrap_or_else(|| cfg.analysis.gamma_bar_sweep.clone());
    // (tag, source, γ̄, policy, chain, S0)
    let mut cases: Vec<(Option<String>, &'static str, Option<f64>, Option<L0Policy>, StochasticMatrix, Vec<usize>)> =
        Vec::new();
    if let Some(raw) = &cfg.raw_chain {
        if !sweep.is_empty() {
            return Err(Failure::config("a gamma-bar sweep needs [network], not [raw-chain]"));
        }
        cases.push((None, "raw-chain", None, None, raw.chain.clone(), raw.s0.clone()));
    } else {
        let mut net = cfg.require_network()?.clone();
        if let Some(p) = args.l0_policy {
            net = net.with_l0_policy(p);
        }
        let gammas = if sweep.is_empty() {
            vec![net.ca_drop()]
        } else {
            sweep.clone()
        };
        let nets = gammas
            .iter()
            .map(|&g| {
                let n = net.with_ca_drop(g).map_err(Failure::config)?;
                n.check_analyzable().map_err(Failure::config)?;
                Ok(n)
            })
            .collect::<Result<Vec<NetworkConfig>, Failure>>()?;
        let chains: Vec<_> = thread_pool().install(|| {
            nets.par_iter()
                .map(build_z_chain)
                .collect::<Vec<_>>()
        });
        for (n, chain) in nets.iter().zip(chains) {
            let chain = chain.map_err(Failure::analysis)?;
            let (s0, _) = chain.split_s0();
            let tag = (!sweep.is_empty()).then(|| format!("gbar{}", n.ca_drop()));
            cases.push((tag, "network", Some(n.ca_drop()), Some(n.l0_policy()), chain.matrix, s0));
        }
    }
    let reports: Vec<_> = thread_pool().install(|| {
        cases
            .par_iter()
            .map(|(_, _, _, _, chain, s0)| certify_with(chain, s0, margins, form))
            .collect()
    });
    let mut all = Vec::new();
    for ((tag, source, gamma_bar, policy, chain, _), report) in cases.iter().zip(reports) {
        let report = report.map_err(Failure::analysis)?;
        let case = AnalyzeCase {
            source,
            gamma_bar: *gamma_bar,
            l0_policy: *policy,
            report,
        };
        if let Some(path) = args.report {
            let path = tag.as_ref().map_or(path.to_path_buf(), |t| tagged_path(path, t));
            write_file(&path, |w| w.write_all(case.text().as_bytes()))?;
            let mut kv = path.clone().into_os_string();
            kv.push(".kv");
            let kv = PathBuf::from(kv);
            write_file(&kv, |w| w.write_all(case.key_values().as_bytes()))?;
        }
        if let Some(path) = args.dump_chain {
            let path = tag.as_ref().map_or(path.to_path_buf(), |t| tagged_path(path, t));
            write_file(&path, |w| write_chain_csv(chain, w))?;
        }
        all.push(case);
    }
    if !cli.quiet {
        let text = if cli.json {
            serde_json::to_string_pretty(&all).expect("serializable") + "\n"
        } else {
            all.iter()
                .map(AnalyzeCase::text)
                .collect::<Vec<_>>()
                .join("\n")
        };
        out.write_all(text.as_bytes())
            .map_err(|e| Failure::analysis(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

fn simulate_cmd(
    cli: &Cli,
    cfg: &ConfigFile,
    trace: Option<&Path>,
    baseline: bool,
    seeds: Option<u64>,
    l0_policy: Option<L0Policy>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let seeds = match seeds {
        Some(0) => return Err(Failure::config("--seeds must be at least 1")),
        Some(n) => seed_range(n),
        None => cfg.run.seeds.clone(),
    };
    let mut sim = cfg.sim_config(seeds[0])?;
    if let Some(p) = l0_policy {
        sim.network = sim.network.with_l0_policy(p);
    }
    let modes = if baseline {
        vec![Mode::DualBuffer, Mode::SingleBufferBaseline]
    } else {
        vec![sim.mode]
    };
    let mut reports: Vec<(Mode, MonteCarloReport)> = Vec::new();
    for &mode in &modes {
        reports.push((mode, monte_carlo(&sim.with_mode(mode), &seeds)?));
    }
    if let Some(path) = trace {
        let many = modes.len() * seeds.len() > 1;
        let jobs: Vec<(Mode, u64)> = modes
            .iter()
            .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
            .collect();
        let traces: Vec<Result<_, SimError>> = thread_pool().install(|| {
            jobs.par_iter()
                .map(|&(m, s)| simulate(&sim.with_mode(m).with_seed(s)))
                .collect()
        });
        for (&(mode, seed), t) in jobs.iter().zip(traces) {
            let t = t?;
            let p = if many {
                tagged_path(path, &format!("{}_seed{seed}", mode.as_str()))
            } else {
                path.to_path_buf()
            };
            write_file(&p, |w| t.write_csv(w))?;
        }
    }
    if !cli.quiet {
        let text = if cli.json {
            #[derive(Serialize)]
            struct Entry<'a> {
                mode: Mode,
                report: &'a MonteCarloReport,
            }
            let entries: Vec<Entry> = reports
                .iter()
                .map(|(m, r)| Entry { mode: *m, report: r })
                .collect();
            serde_json::to_string_pretty(&entries).expect("serializable") + "\n"
        } else {
            let mut s = format!(
                "plant={}\nhorizon={}\ngamma_bar={}\nl0_policy={}\n",
                sim.plant_name,
                sim.horizon,
                sim.network.ca_drop(),
                sim.network.l0_policy().as_str()
            );
            for (mode, r) in &reports {
                for line in r.to_key_values().lines() {
                    s.push_str(&format!("{}.{line}\n", mode.as_str()));
                }
            }
            if let [(_, dual), (_, base)] = &reports[..] {
                s.push_str(&format!(
                    "comparison.dual_mean_norm_below_baseline={}\n",
                    dual.mean_norm < base.mean_norm
                ));
            }
            s
        };
        out.write_all(text.as_bytes())
            .map_err(|e| Failure::analysis(e.to_string()))?;
    }
    Ok(EXIT_OK)
}

fn validate_cmd(
    cli: &Cli,
    cfg: &ConfigFile,
    cycles: Option<u64>,
    seed: Option<u64>,
    l0_policy: Option<L0Policy>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let net = cfg
        .network
        .as_ref()
        .map(|n| l0_policy.map_or_else(|| n.clone(), |p| n.with_l0_policy(p)));
    let (chain, s0) = match (&cfg.raw_chain, &net) {
        (Some(raw), _) => (raw.chain.clone(), raw.s0.clone()),
        (None, Some(n)) => {
            n.check_analyzable().map_err(Failure::config)?;
            let chain = build_z_chain(n).map_err(Failure::analysis)?;
            let (s0, _) = chain.split_s0();
            (chain.matrix, s0)
        }
        (None, None) => return Err(Failure::config("need [network] or [raw-chain]")),
    };
    let source = net
        .as_ref()
        .map_or(PathSource::ChainWalk, PathSource::Protocol);
    let opts = ValidationOptions {
        cycles: cycles.unwrap_or(cfg.run.cycles),
        seed: seed.unwrap_or(cfg.run.seeds[0]),
        ..ValidationOptions::default()
    };
    let report = validate(&chain, &s0, source, opts).map_err(|e| match e {
        ValidationError::Mismatch(_) => Failure::config(e),
        other => Failure::analysis(other),
    })?;
    if !cli.quiet {
        let text = if cli.json {
            report.to_json() + "\n"
        } else {
            report.to_string()
        };
        out.write_all(text.as_bytes())
            .map_err(|e| Failure::analysis(e.to_string()))?;
    }
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    })
}
