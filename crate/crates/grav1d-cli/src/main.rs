//! `grav1d`: tables, serialized series and the verification suite from the command line.
//!
//! Exit codes: 0 on success, 1 when a verification check fails, 2 on a usage or
//! configuration error. `GRAV1D_THREADS` caps the worker pool.

mod config;
mod output;
mod suites;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grav1d::graphs::{enumerate, Constraints};
use grav1d::icoords::compute_i;
use grav1d::npoint::{cut, genus_part, n_point, LoopSlot};
use grav1d::partition::{closed_form_z, correlator_table, free_energy_full};
use grav1d::series_core::fmt_rational;
use grav1d::spectral::spectral_report;
use grav1d::{par, Report, Series, TruncationSpec};

use config::{ConfigError, Format, Overrides, RunConfig};
use output::{render_named, render_outer, render_report, render_series, render_table, Table};
use suites::{run_suite, Fault, SUITES};

#[derive(Parser, Debug)]
#[command(name = "grav1d", version, about = "Exact-arithmetic topological 1D gravity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Largest coupling index.
    #[arg(long)]
    kmax: Option<usize>,
    /// Largest total degree in the couplings.
    #[arg(long)]
    dmax: Option<u32>,
    /// Largest genus.
    #[arg(long)]
    gmax: Option<u32>,
    /// Output format.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write output to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// A key=value config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Which {
    #[value(name = "Z")]
    Z,
    #[value(name = "F")]
    F,
    #[value(name = "I0")]
    I0,
    #[value(name = "Ik")]
    Ik,
    #[value(name = "W")]
    W,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Every admissible correlator with genus at most gmax.
    Correlators(Common),
    /// The free energy genus by genus.
    FreeEnergy(Common),
    /// Serialize Z, F, I_0, I_k or the one-point function W_1.
    Series {
        #[command(flatten)]
        common: Common,
        /// Which series.
        #[arg(long, value_enum)]
        which: Which,
        /// Index k for `Ik`.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Slot order for `W`.
        #[arg(long, default_value_t = 4)]
        order: i32,
    },
    /// The I-coordinates I_0 .. I_kmax.
    Icoords(Common),
    /// The n-point function W_n, optionally one genus only.
    Npoint {
        #[command(flatten)]
        common: Common,
        /// Number of points.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Slot order: exponents z^-1 .. z^-order.
        #[arg(long, default_value_t = 4)]
        order: i32,
        /// Keep only this genus.
        #[arg(long)]
        genus: Option<u32>,
    },
    /// Feynman graph classes with their automorphism counts.
    Graphs {
        #[command(flatten)]
        common: Common,
        /// Largest number of edges.
        #[arg(long, default_value_t = 3)]
        edges: u32,
        /// Include disconnected graphs.
        #[arg(long)]
        all: bool,
    },
    /// The spectral-curve checks.
    Spectral {
        #[command(flatten)]
        common: Common,
        /// Slot order of the quadratic identity.
        #[arg(long, default_value_t = 8)]
        order: usize,
        /// Largest Virasoro index for the quantized field.
        #[arg(long, default_value_t = 2)]
        mmax: i32,
    },
    /// Run the verification suites; exit 1 on any nonzero residual.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma list of suites (default: all).
        #[arg(long)]
        suite: Option<String>,
        /// Inject a deliberate fault.
        #[arg(long, value_enum)]
        inject: Option<Fault>,
    },
}

enum Failure {
    Usage(String),
    Verification(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<grav1d::Error> for Failure {
    fn from(e: grav1d::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn resolve(common: &Common, suite: Option<String>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    let o = Overrides {
        kmax: common.kmax,
        dmax: common.dmax,
        gmax: common.gmax,
        format: common.format,
        suite,
        out: common.out.clone(),
    };
    cfg.apply_overrides(&o)?;
    Ok(cfg)
}

fn emit(cfg: &RunConfig, text: &str) -> Result<(), Failure> {
    match &cfg.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn free_energy_window(cfg: &RunConfig) -> Result<Series, Failure> {
    let f = free_energy_full(cfg.kmax, cfg.dmax)?;
    let (lo, hi) = cfg.lambda_window();
    Ok(f.retain(|m, _| m.l() >= lo && m.l() <= hi))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Correlators(common) => {
            let cfg = resolve(&common, None)?;
            let f = free_energy_full(cfg.kmax, cfg.dmax)?;
            let mut t = Table::new(&["insertions", "genus", "correlator", "value"]);
            for (key, v) in correlator_table(&f, cfg.gmax) {
                if !key.admissible() {
                    continue;
                }
                let ins: Vec<String> = key.indices.iter().map(|i| i.to_string()).collect();
                t.rows.push(vec![ins.join(" "), key.genus.to_string(), key.to_string(), fmt_rational(&v)]);
            }
            emit(&cfg, &render_table(&t, cfg.format))
        }
        Command::FreeEnergy(common) => {
            let cfg = resolve(&common, None)?;
            let f = free_energy_window(&cfg)?;
            let items: Vec<(String, Series)> =
                (0..=cfg.gmax).map(|g| (format!("F_{g}"), f.slice_l(g as i32 - 1))).collect();
            emit(&cfg, &render_named(&items, cfg.format))
        }
        Command::Series { common, which, k, order } => {
            let cfg = resolve(&common, None)?;
            let text = match which {
                Which::Z => render_series(&closed_form_z(TruncationSpec::z_window(cfg.kmax, cfg.dmax))?, cfg.format),
                Which::F => render_series(&free_energy_window(&cfg)?, cfg.format),
                Which::I0 | Which::Ik => {
                    let idx = if which == Which::I0 { 0 } else { k };
                    if idx > cfg.kmax {
                        return Err(Failure::Usage(format!("I_{idx} needs kmax >= {idx}")));
                    }
                    let b = compute_i(TruncationSpec::new(cfg.kmax, cfg.dmax, 0, 0)?)?;
                    render_series(&b.get(idx), cfg.format)
                }
                Which::W => {
                    let f = free_energy_full(cfg.kmax, cfg.dmax)?;
                    let w = n_point(&f, LoopSlot::z(order), 1)?;
                    render_outer(&cut(&w, cfg.dmax.saturating_sub(1), cfg.gmax as i32), cfg.format)
                }
            };
            emit(&cfg, &text)
        }
        Command::Icoords(common) => {
            let cfg = resolve(&common, None)?;
            let b = compute_i(TruncationSpec::new(cfg.kmax, cfg.dmax, 0, 0)?)?;
            let mut items = vec![("I_-1".to_string(), b.iminus1.clone())];
            items.extend((0..=cfg.kmax).map(|i| (format!("I_{i}"), b.get(i))));
            emit(&cfg, &render_named(&items, cfg.format))
        }
        Command::Npoint { common, n, order, genus } => {
            let cfg = resolve(&common, None)?;
            if n == 0 {
                return Err(Failure::Usage("--n must be at least 1".into()));
            }
            let f = free_energy_full(cfg.kmax, cfg.dmax)?;
            let w = n_point(&f, LoopSlot::z(order), n)?;
            let w = match genus {
                Some(g) => genus_part(&w, g),
                None => cut(&w, u32::MAX, cfg.gmax as i32 + n as i32 - 1),
            };
            emit(&cfg, &render_outer(&cut(&w, cfg.dmax.saturating_sub(n as u32), i32::MAX), cfg.format))
        }
        Command::Graphs { common, edges, all } => {
            let cfg = resolve(&common, None)?;
            let classes = enumerate(edges, &Constraints { connected: !all, ..Default::default() })?;
            let mut t = Table::new(&["code", "vertices", "edges", "loops", "aut", "graph"]);
            let mut sorted: Vec<_> = classes.iter().collect();
            sorted.sort_by(|a, b| (a.nedges(), a.nvertices(), &a.canonical_code).cmp(&(b.nedges(), b.nvertices(), &b.canonical_code)));
            for c in sorted {
                t.rows.push(vec![
                    c.code_hex(),
                    c.nvertices().to_string(),
                    c.nedges().to_string(),
                    c.loops.to_string(),
                    c.aut_order.to_string(),
                    c.to_string(),
                ]);
            }
            emit(&cfg, &render_table(&t, cfg.format))
        }
        Command::Spectral { common, order, mmax } => {
            let cfg = resolve(&common, None)?;
            let r = spectral_report(cfg.kmax, cfg.dmax, order, mmax)?;
            emit(&cfg, &render_report(&r, cfg.format))?;
            finish(&r)
        }
        Command::Verify { common, suite, inject } => {
            let cfg = resolve(&common, suite)?;
            let names: Vec<String> = match &cfg.suite {
                Some(s) => s.clone(),
                None => SUITES.iter().map(|s| s.to_string()).collect(),
            };
            if let Some(bad) = names.iter().find(|n| !SUITES.contains(&n.as_str())) {
                return Err(Failure::Usage(format!("unknown suite {bad:?}; known: {}", SUITES.join(","))));
            }
            let mut r = Report::new();
            for name in &names {
                r.absorb(name, run_suite(name, &cfg, inject)?);
            }
            emit(&cfg, &render_report(&r, cfg.format))?;
            finish(&r)
        }
    }
}

fn finish(r: &Report) -> Result<(), Failure> {
    match r.failures().first() {
        None => Ok(()),
        Some(c) => Err(Failure::Verification(c.to_string())),
    }
}

fn threads_from_env() -> Result<(), Failure> {
    let Ok(v) = std::env::var("GRAV1D_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Failure::Usage(format!("GRAV1D_THREADS={v:?} is not a thread count")))?;
    if n == 0 {
        return Err(Failure::Usage("GRAV1D_THREADS must be at least 1".into()));
    }
    par::configure_threads(n).map_err(Failure::Usage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = threads_from_env().and_then(|_| run(cli));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
