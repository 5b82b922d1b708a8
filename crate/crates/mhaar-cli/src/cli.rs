//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artifacts::{write_experiment, ArtifactSet};
use crate::config::{Experiment, ExperimentConfig};
use crate::data::{generate, SynthKind};
use crate::run::run_all;
use crate::verify::{run_suite, DEFAULT_TRIALS};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "mhaar", version, about = "Run averaged-acceptance-ratio MCMC experiments")]
pub struct Args {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Worker threads (overrides the configuration).
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-state toy chain.
    Toy,
    /// Averaged exchange algorithm on a finite exponential family.
    Exchange,
    /// Trans-dimensional change-point sampler.
    Changepoint,
    /// Rao-Blackwellised latent-variable kernel.
    Latent,
    /// State-space model kernels.
    Ssm,
    /// Generate a synthetic dataset.
    Synth {
        #[arg(value_enum)]
        kind: SynthArg,
    },
    /// Run the invariant suite.
    Verify {
        /// Simulated transitions per state for the Monte Carlo checks.
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthArg {
    Changepoint,
    Lgssm,
}

fn load_config(args: &Args, default: Experiment) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(default),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &Args, fallback: &str) -> PathBuf {
    args.out.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

/// Execute a parsed command line; returns report lines for stdout.
pub fn execute(args: &Args) -> Result<Vec<String>, CliError> {
    let start = Instant::now();
    let experiment = match &args.command {
        Command::Toy => Experiment::Toy,
        Command::Exchange => Experiment::Exchange,
        Command::Changepoint => Experiment::Changepoint,
        Command::Latent => Experiment::Latent,
        Command::Ssm => Experiment::Ssm,
        Command::Synth { kind } => return synth(args, *kind, start),
        Command::Verify { trials } => return verify(args, *trials, start),
    };
    let cfg = load_config(args, experiment)?;
    if cfg.experiment != experiment {
        return Err(CliError::Config(format!(
            "configuration is for `{}` but the `{}` command was given",
            cfg.experiment.name(),
            experiment.name()
        )));
    }
    run_experiment(&cfg, start)
}

/// Run a configured experiment and write all of its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, start: Instant) -> Result<Vec<String>, CliError> {
    let traces = run_all(cfg)?;
    let mut set = ArtifactSet::new(Path::new(&cfg.output_dir))?;
    write_experiment(&mut set, cfg, &traces)?;
    let files = set.finish(cfg.experiment.name(), Some(cfg), start.elapsed().as_secs_f64())?;
    let mut lines = vec![format!("{} runs of {} iterations written to {}", traces.len(), cfg.chain_length, cfg.output_dir)];
    for (r, t) in traces.iter().enumerate() {
        lines.push(format!("run {r}: acceptance {:.3}", t.acceptance_rate()));
    }
    lines.push(format!("{} files listed in manifest.json", files.len()));
    Ok(lines)
}

fn synth(args: &Args, kind: SynthArg, start: Instant) -> Result<Vec<String>, CliError> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(Experiment::Changepoint),
    };
    let (kind, name, default_seed) = match kind {
        SynthArg::Changepoint => (SynthKind::Changepoint, "changepoint", cfg.changepoint.data_seed),
        SynthArg::Lgssm => (SynthKind::Lgssm, "lgssm", cfg.ssm.data_seed),
    };
    let seed = args.seed.unwrap_or(default_seed);
    let data = generate(kind, &cfg.changepoint, &cfg.ssm, seed)?;
    let dir = out_dir(args, "out");
    let mut set = ArtifactSet::new(&dir)?;
    let file = format!("{name}.csv");
    set.write(&file, &data.to_csv()?)?;
    set.finish(&format!("synth {name}"), None, start.elapsed().as_secs_f64())?;
    Ok(vec![format!("{} records written to {}", data.rows.len(), dir.join(file).display())])
}

#[derive(Serialize)]
struct VerifyRecord {
    name: String,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn verify(args: &Args, trials: usize, start: Instant) -> Result<Vec<String>, CliError> {
    let checks = run_suite(trials)?;
    for c in &checks {
        println!("{}", c.line());
    }
    if let Some(dir) = &args.out {
        let mut set = ArtifactSet::new(dir)?;
        let recs: Vec<VerifyRecord> =
            checks.iter().map(|c| VerifyRecord { name: c.name.clone(), value: c.value, tolerance: c.tolerance, pass: c.pass }).collect();
        set.write_json("verify.json", &recs)?;
        set.finish("verify", None, start.elapsed().as_secs_f64())?;
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        return Err(CliError::Verify(failed));
    }
    Ok(vec![format!("all {} checks passed", checks.len())])
}
