//! Output files: chain CSVs, summaries and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mhaar_core::diagnostics::{batch_means_iac, ensemble_average, iac, mean_and_se, ChainTrace};
use serde::Serialize;

use crate::config::{sha256_hex, Experiment, ExperimentConfig};
use crate::CliError;

/// Batches per chain used for the batch-means IAC interval.
pub const BATCHES_PER_CHAIN: usize = 20;

/// Files written so far, in write order, with their SHA-256.
#[derive(Debug, Default)]
pub struct ArtifactSet {
    pub dir: PathBuf,
    pub files: Vec<FileEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

impl ArtifactSet {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(ArtifactSet { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, content: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(FileEntry { name: name.into(), bytes: content.len(), sha256: sha256_hex(content) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Write `manifest.json`, listing every file written before it.
    pub fn finish(mut self, command: &str, config: Option<&ExperimentConfig>, wall_seconds: f64) -> Result<Vec<FileEntry>, CliError> {
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.map(|c| c.hash()),
            seed: config.map(|c| c.seed),
            threads: config.map(|c| c.threads),
            created_unix: std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_seconds,
            files: self.files.clone(),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(self.files)
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_hash: Option<String>,
    seed: Option<u64>,
    threads: Option<usize>,
    created_unix: u64,
    wall_seconds: f64,
    files: Vec<FileEntry>,
}

pub fn chain_file_name(run: usize) -> String {
    format!("chain_{run:03}.csv")
}

/// Columns: iteration, recorded value, acceptance flag, coin (empty if none).
pub fn chain_csv(trace: &ChainTrace) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["iter", "value", "accepted", "coin"]).map_err(io)?;
    for i in 0..trace.len() {
        let coin = trace.coins[i].map(|c| c.to_string()).unwrap_or_default();
        w.write_record([(i + 1).to_string(), trace.samples[i].to_string(), (trace.accept_flags[i] as u8).to_string(), coin]).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn ensemble_csv(traces: &[ChainTrace]) -> Result<Vec<u8>, CliError> {
    let runs: Vec<&[f64]> = traces.iter().map(|t| t.samples.as_slice()).collect();
    let avg = ensemble_average(&runs, |x| x)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["iter", "mean", "se"]).map_err(io)?;
    for (i, (m, se)) in avg.iter().enumerate() {
        w.write_record([(i + 1).to_string(), m.to_string(), se.to_string()]).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run: usize,
    pub acceptance_rate: f64,
    pub mean: f64,
    pub iac: Option<f64>,
    pub iac_window: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct BatchMeansSummary {
    pub tau: f64,
    pub lower: f64,
    pub upper: f64,
    pub batches: usize,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub kernel: String,
    pub config_hash: String,
    pub chain_length: usize,
    pub burn_in: f64,
    pub runs: Vec<RunSummary>,
    pub iac_mean: Option<f64>,
    pub iac_se: Option<f64>,
    pub batch_means: Option<BatchMeansSummary>,
}

pub fn summarise(cfg: &ExperimentConfig, traces: &[ChainTrace]) -> Summary {
    let skip = (cfg.burn_in * cfg.chain_length as f64).floor() as usize;
    let runs: Vec<RunSummary> = traces
        .iter()
        .enumerate()
        .map(|(run, t)| {
            let est = iac(&t.samples, cfg.burn_in).ok();
            let kept = &t.samples[skip.min(t.len())..];
            RunSummary {
                run,
                acceptance_rate: t.acceptance_rate(),
                mean: mean_and_se(kept).0,
                iac: est.map(|e| e.tau),
                iac_window: est.map(|e| e.window),
            }
        })
        .collect();
    let taus: Vec<f64> = runs.iter().filter_map(|r| r.iac).collect();
    let (iac_mean, iac_se) = if taus.len() == runs.len() && !taus.is_empty() {
        let (m, se) = mean_and_se(&taus);
        (Some(m), Some(se))
    } else {
        (None, None)
    };
    let refs: Vec<&[f64]> = traces.iter().map(|t| t.samples.as_slice()).collect();
    let batch_means = batch_means_iac(&refs, cfg.burn_in, BATCHES_PER_CHAIN).ok().map(|b| BatchMeansSummary {
        tau: b.tau,
        lower: b.lower,
        upper: b.upper,
        batches: b.batches,
    });
    Summary {
        experiment: cfg.experiment.name().into(),
        kernel: traces.first().map(|t| t.meta.kernel.clone()).unwrap_or_default(),
        config_hash: cfg.hash(),
        chain_length: cfg.chain_length,
        burn_in: cfg.burn_in,
        runs,
        iac_mean,
        iac_se,
        batch_means,
    }
}

/// Posterior of the number of segments, pooled over runs after burn-in.
#[derive(Debug, Serialize)]
pub struct SegmentPosterior {
    pub m: Vec<usize>,
    pub probability: Vec<f64>,
    pub count: Vec<usize>,
    pub total: usize,
}

pub fn segment_posterior(cfg: &ExperimentConfig, traces: &[ChainTrace]) -> SegmentPosterior {
    let skip = (cfg.burn_in * cfg.chain_length as f64).floor() as usize;
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in traces {
        for &v in &t.samples[skip.min(t.len())..] {
            *counts.entry(v as usize).or_default() += 1;
        }
    }
    let total: usize = counts.values().sum();
    SegmentPosterior {
        m: counts.keys().copied().collect(),
        probability: counts.values().map(|&c| c as f64 / total as f64).collect(),
        count: counts.values().copied().collect(),
        total,
    }
}

/// Write chain CSVs, the ensemble average and summaries for a finished experiment.
pub fn write_experiment(set: &mut ArtifactSet, cfg: &ExperimentConfig, traces: &[ChainTrace]) -> Result<(), CliError> {
    set.write("config.toml", cfg.render().as_bytes())?;
    for (r, t) in traces.iter().enumerate() {
        set.write(&chain_file_name(r), &chain_csv(t)?)?;
    }
    if traces.len() >= 2 && cfg.chain_length > 0 {
        set.write("ensemble.csv", &ensemble_csv(traces)?)?;
    }
    set.write_json("summary.json", &summarise(cfg, traces))?;
    if cfg.experiment == Experiment::Changepoint {
        set.write_json("posterior_m.json", &segment_posterior(cfg, traces))?;
    }
    Ok(())
}
