use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use zpotfs::analysis::write_se_csv;
use zpotfs::detect::write_trace_csv;
use zpotfs::harness::{self, CodeSource, RunConfig, RunManifest, TurboSettings};
use zpotfs::turbo::{Feedback, LlrMethod};

/// Zero-padded OTFS link simulator.
#[derive(Parser)]
#[command(name = "zpotfs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Uncoded BER per SNR point.
    Ber(Common),
    /// Per-iteration simulated MSE against the state-evolution bounds.
    Mse(Common),
    /// Per-layer SINR with exact and recycled filters.
    Sinr(Common),
    /// State-evolution recursion alone.
    Se(Common),
    /// Coded BER per turbo iteration.
    Turbo(Common),
    /// Operation-count orders and measured multiply counts.
    Complexity(Common),
    /// Print a preset configuration as JSON.
    Preset {
        #[arg(value_enum)]
        name: Preset,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Allow frames beyond desk scale; selects the full preset without --config.
    #[arg(long)]
    full: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the per-layer detector trace (sinr only).
    #[arg(long)]
    trace: bool,
}

/// Marks failures caused by the configuration rather than the run.
#[derive(Debug)]
struct ConfigFailure(anyhow::Error);

impl std::fmt::Display for ConfigFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigFailure {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<ConfigFailure>().is_some()
                || matches!(e.downcast_ref::<zpotfs::Error>(), Some(zpotfs::Error::Config { .. }));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn load(common: &Common, needs_turbo: bool) -> Result<RunConfig> {
    let inner = || -> Result<RunConfig> {
        let mut cfg = match &common.config {
            Some(path) => {
                RunConfig::from_path(path).with_context(|| format!("reading {}", path.display()))?
            }
            None if common.full => RunConfig::paper(),
            None => RunConfig::desk(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if needs_turbo && cfg.turbo.is_none() {
            cfg.turbo = Some(TurboSettings {
                code: CodeSource::Bundled,
                iterations: 2,
                feedback: Feedback::Intrinsic,
                llr: LlrMethod::Exact,
                bp_iterations: 50,
                min_sum: false,
                interleaver_seed: cfg.seed,
            });
        }
        cfg.validate(common.full)?;
        Ok(cfg)
    };
    inner().map_err(|e| ConfigFailure(e).into())
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn sibling(out: Option<&Path>, suffix: &str) -> PathBuf {
    match out {
        Some(p) => {
            let mut s = p.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("zpotfs{suffix}")),
    }
}

fn write_manifest(out: Option<&Path>, manifest: &RunManifest) -> Result<()> {
    if out.is_some() {
        let path = sibling(out, ".manifest.json");
        manifest.write_json(BufWriter::new(File::create(&path)?))?;
        eprintln!("manifest: {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = match &cli.command {
        Command::Preset { name } => {
            let cfg = match name {
                Preset::Desk => RunConfig::desk(),
                Preset::Paper => RunConfig::paper(),
            };
            println!("{}", cfg.to_json()?);
            return Ok(());
        }
        Command::Ber(c)
        | Command::Mse(c)
        | Command::Sinr(c)
        | Command::Se(c)
        | Command::Turbo(c)
        | Command::Complexity(c) => c,
    };
    if common.trace && !matches!(cli.command, Command::Sinr(_)) {
        eprintln!("note: --trace only applies to sinr");
    }
    let cfg = load(common, matches!(cli.command, Command::Turbo(_)))?;
    let out = common.out.as_deref();
    let mut w = sink(out)?;
    match &cli.command {
        Command::Ber(_) => {
            let run = harness::run_ber(&cfg)?;
            harness::write_csv(&run.rows, &mut w)?;
            for r in &run.rows {
                eprintln!(
                    "snr {:>6.2} dB  ber {:.3e}  [{:.2e}, {:.2e}]  {} frames  {:.1} s",
                    r.snr_db, r.ber, r.ber_ci_low, r.ber_ci_high, r.frame_count, r.wall_time_s
                );
            }
            write_manifest(out, &run.manifest)?;
        }
        Command::Turbo(_) => {
            let run = harness::run_turbo(&cfg)?;
            harness::write_csv(&run.rows, &mut w)?;
            write_manifest(out, &run.manifest)?;
        }
        Command::Mse(_) => harness::write_csv(&harness::run_mse_trace(&cfg)?, &mut w)?,
        Command::Se(_) => write_se_csv(&harness::run_se(&cfg)?, None, &mut w)?,
        Command::Sinr(_) => {
            let trace = harness::run_sinr_trace(&cfg)?;
            harness::write_csv(&trace.rows, &mut w)?;
            if common.trace {
                let path = sibling(out, ".trace.csv");
                write_trace_csv(&trace.trace, BufWriter::new(File::create(&path)?))?;
                eprintln!("trace: {}", path.display());
            }
        }
        Command::Complexity(_) => harness::write_csv(&harness::complexity_report(&cfg)?, &mut w)?,
        Command::Preset { .. } => unreachable!(),
    }
    w.flush()?;
    Ok(())
}
