//! `windpool`: reconcile scenario forecasts, offer as a coalition, share the cost.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use windpool_core::data::SyntheticSpec;
use windpool_core::pipeline::{self, RunConfig};
use windpool_core::reconcile::ReconcilerRegistry;

#[derive(Debug, Parser)]
#[command(name = "windpool", version, about)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset from a spec file.
    Generate {
        /// Synthetic spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        /// Destination directory.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a trainable reconciler and write its checkpoint and training report.
    Train(RunArgs),
    /// Offer, settle, score and audit the test split.
    Run(RunArgs),
    /// Compare finished runs as text and CSV tables.
    Report {
        /// Run directories to compare.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Destination directory for tables and plot data.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check core membership and superadditivity of a saved cooperative run.
    Audit {
        run: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Debug, Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::from_path(&self.config)?;
        if let Some(m) = &self.method {
            cfg.method = m.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        match &self.output_dir {
            Some(d) => cfg.output_dir = d.clone(),
            None => cfg.output_dir = cfg.resolve(&cfg.output_dir.clone()),
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(c) = &self.checkpoint {
            let absolute = std::env::current_dir()?.join(c);
            cfg.checkpoint = Some(absolute);
        }
        Ok(cfg)
    }
}

/// A check that ran to completion but failed.
#[derive(Debug)]
struct ConsistencyFailure(String);

impl std::fmt::Display for ConsistencyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConsistencyFailure {}

fn execute(command: Command) -> anyhow::Result<()> {
    let registry = ReconcilerRegistry::builtin();
    match command {
        Command::Generate { spec, out, seed } => {
            let mut s = SyntheticSpec::from_path(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let manifest = pipeline::generate_dataset(&s, &out)
                .with_context(|| format!("generating into {}", out.display()))?;
            println!(
                "wrote {} days x {} leads x {} scenarios for {} producers to {}",
                s.n_days,
                s.n_leads,
                s.n_scenarios,
                manifest.sites.len(),
                out.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let report = pipeline::with_threads(cfg.threads, || pipeline::train_to_dir(&cfg, &registry))??;
            println!(
                "{}: selected epoch {} of {}, validation AES {:.4} MW (initial {:.4})",
                report.variant,
                report.selected_epoch,
                report.epochs.len() - 1,
                report.selected_val_aes,
                report.initial_val_aes()
            );
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let ev = pipeline::with_threads(cfg.threads, || pipeline::run(&cfg, &registry))??;
            let m = &ev.metrics;
            println!(
                "{}: {} hours, AES {:.4} MW (SE {:.4}), deviation {:.4}",
                m.method, m.n_cases, m.aes, m.aes_se, m.deviation
            );
            for p in &m.producers {
                match p.ap_cooperative {
                    Some(coop) => println!(
                        "  {:<16} AP cooperative {:>10.3}  independent {:>10.3}",
                        p.name, coop, p.ap_independent
                    ),
                    None => println!("  {:<16} AP independent {:>10.3}", p.name, p.ap_independent),
                }
            }
            if !m.budget_balanced {
                bail!(ConsistencyFailure("realized cost shares are not budget balanced".into()));
            }
            if let Some(core) = &m.core {
                if !core.all_in_core {
                    bail!(ConsistencyFailure(format!(
                        "{} of {} hours outside the core (worst violation {})",
                        core.hours - core.hours_in_core,
                        core.hours,
                        core.worst_violation
                    )));
                }
            }
        }
        Command::Report { runs, out } => {
            let text = pipeline::report(&runs, &out)?;
            print!("{text}");
        }
        Command::Audit { run, threads } => {
            let report = pipeline::with_threads(threads, || pipeline::audit_run(&run))??;
            println!(
                "{} hours: core {} (worst violation {:.3e}), superadditivity {}",
                report.hours,
                if report.all_in_core { "ok" } else { "VIOLATED" },
                report.worst_violation,
                if report.all_superadditive { "ok" } else { "VIOLATED" },
            );
            if !report.passed() {
                bail!(ConsistencyFailure("coalition audit failed".into()));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConsistencyFailure>().is_some() {
        return 2;
    }
    match err.downcast_ref::<windpool_core::Error>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
