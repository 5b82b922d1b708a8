//! Experiment configuration, stored as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Toy,
    Exchange,
    Changepoint,
    Latent,
    Ssm,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Toy => "toy",
            Experiment::Exchange => "exchange",
            Experiment::Changepoint => "changepoint",
            Experiment::Latent => "latent",
            Experiment::Ssm => "ssm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_seed", with = "seed_repr")]
    pub seed: u64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default = "default_chain_length")]
    pub chain_length: usize,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default = "default_output")]
    pub output_dir: String,
    /// Fraction of each chain discarded before computing summaries.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub exchange: ExchangeConfig,
    #[serde(default)]
    pub changepoint: ChangepointConfig,
    #[serde(default)]
    pub latent: LatentConfig,
    #[serde(default)]
    pub ssm: SsmConfig,
}

/// TOML integers are signed 64-bit; seeds above `i64::MAX` are stored as
/// decimal strings and either form is accepted on input.
mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(i) => u64::try_from(i).map_err(|_| de::Error::custom("seed must be non-negative")),
            Repr::Text(t) => t.parse().map_err(|_| de::Error::custom(format!("invalid seed `{t}`"))),
        }
    }
}

fn default_seed() -> u64 {
    1
}
fn default_threads() -> usize {
    1
}
fn default_chain_length() -> usize {
    1000
}
fn default_runs() -> usize {
    1
}
fn default_output() -> String {
    "out".into()
}
fn default_burn_in() -> f64 {
    mhaar_core::diagnostics::DEFAULT_BURN_IN
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub a: f64,
    /// Probability that the proposal keeps the current sign.
    pub alpha: f64,
    pub n: usize,
    pub init: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig { a: 2.0, alpha: 0.0, n: 1, init: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticKind {
    Sum,
    Agreement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExchangeConfig {
    pub alphabet: usize,
    pub statistic: StatisticKind,
    pub data: Vec<u8>,
    pub prior_sd: f64,
    pub proposal_sd: f64,
    pub n: usize,
    pub init: f64,
    pub parallel: bool,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        ExchangeConfig {
            alphabet: 2,
            statistic: StatisticKind::Agreement,
            data: vec![0, 0, 1, 1, 1, 0, 0, 0, 1, 1],
            prior_sd: 2.0,
            proposal_sd: 0.5,
            n: 1,
            init: 0.0,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoinMode {
    Even,
    BirthAverages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangepointConfig {
    /// CSV of event times; when absent a synthetic dataset is generated from
    /// `boundaries` and `heights` with `data_seed`.
    pub events_file: Option<String>,
    pub length: f64,
    pub n: usize,
    pub coin: CoinMode,
    pub lambda: f64,
    pub m_max: usize,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    /// Within-model sweeps after every birth/death move.
    pub sweeps: usize,
    pub parallel: bool,
    pub boundaries: Vec<f64>,
    pub heights: Vec<f64>,
    #[serde(with = "seed_repr")]
    pub data_seed: u64,
}

impl Default for ChangepointConfig {
    fn default() -> Self {
        ChangepointConfig {
            events_file: None,
            length: 100.0,
            n: 1,
            coin: CoinMode::Even,
            lambda: 3.0,
            m_max: 20,
            gamma_shape: 1.0,
            gamma_rate: 1.0,
            sweeps: 1,
            parallel: false,
            boundaries: vec![0.0, 40.0, 70.0, 100.0],
            heights: vec![1.0, 2.5, 0.6],
            data_seed: 2024,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentKernel {
    Rb,
    Ais,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    Source,
    Midpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshMode {
    Off,
    Simple,
    DelayedRejection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentConfig {
    pub kernel: LatentKernel,
    pub m: usize,
    pub bridge: BridgeMode,
    pub refresh: RefreshMode,
    pub t: usize,
    pub obs_var: f64,
    pub prior_var: f64,
    pub theta_star: f64,
    #[serde(with = "seed_repr")]
    pub data_seed: u64,
    pub proposal_sd: f64,
    pub init: f64,
    pub parallel: bool,
}

impl Default for LatentConfig {
    fn default() -> Self {
        LatentConfig {
            kernel: LatentKernel::Rb,
            m: 10,
            bridge: BridgeMode::Source,
            refresh: RefreshMode::Off,
            t: 10,
            obs_var: 9.0,
            prior_var: 100.0,
            theta_star: 1.0,
            data_seed: 11,
            proposal_sd: 1.5,
            init: 1.0,
            parallel: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsmKernel {
    Rb,
    Subsample,
    Mwpg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaMode {
    Current,
    Midpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmConfig {
    pub kernel: SsmKernel,
    pub m: usize,
    pub n: usize,
    pub zeta: ZetaMode,
    pub refresh: bool,
    pub swap_refresh: bool,
    pub parallel: bool,
    /// Observation CSV; when absent the series is simulated with `data_seed`.
    pub data_file: Option<String>,
    pub phi: f64,
    pub a: f64,
    pub var_z: f64,
    pub var_y: f64,
    pub prior_var: f64,
    pub theta_star: f64,
    pub t: usize,
    #[serde(with = "seed_repr")]
    pub data_seed: u64,
    pub proposal_sd: f64,
    pub init: f64,
}

impl Default for SsmConfig {
    fn default() -> Self {
        SsmConfig {
            kernel: SsmKernel::Rb,
            m: 10,
            n: 10,
            zeta: ZetaMode::Current,
            refresh: false,
            swap_refresh: false,
            parallel: false,
            data_file: None,
            phi: 0.95,
            a: 1.0,
            var_z: 1.0,
            var_y: 0.1,
            prior_var: 1e4,
            theta_star: 1.0,
            t: 50,
            data_seed: 7,
            proposal_sd: 0.3,
            init: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            seed: default_seed(),
            threads: default_threads(),
            chain_length: default_chain_length(),
            n_runs: default_runs(),
            output_dir: default_output(),
            burn_in: default_burn_in(),
            toy: ToyConfig::default(),
            exchange: ExchangeConfig::default(),
            changepoint: ChangepointConfig::default(),
            latent: LatentConfig::default(),
            ssm: SsmConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// SHA-256 of the rendered config, hex encoded. Thread count and output
    /// directory do not affect results and are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 1;
        c.output_dir.clear();
        sha256_hex(c.render().as_bytes())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return bad("burn_in must lie in [0, 1)");
        }
        match self.experiment {
            Experiment::Toy => {
                let t = &self.toy;
                if t.init.abs() != 1.0 {
                    return bad("toy.init must be 1 or -1");
                }
                mhaar_core::toy::ToyParams::new(t.a, t.alpha, t.n).map_err(|e| CliError::Config(e.to_string()))?;
            }
            Experiment::Exchange => {
                if self.exchange.n == 0 || !(self.exchange.proposal_sd > 0.0) {
                    return bad("exchange needs n ≥ 1 and a positive proposal_sd");
                }
            }
            Experiment::Changepoint => {
                let c = &self.changepoint;
                if c.n == 0 || c.heights.len() + 1 != c.boundaries.len() {
                    return bad("changepoint needs n ≥ 1 and one more boundary than heights");
                }
            }
            Experiment::Latent => {
                let l = &self.latent;
                if l.m == 0 || l.t == 0 || !(l.proposal_sd > 0.0) {
                    return bad("latent needs m ≥ 1, t ≥ 1 and a positive proposal_sd");
                }
                if l.kernel == LatentKernel::Ais && l.refresh != RefreshMode::Off {
                    return bad("latent.refresh applies to the rb kernel only");
                }
            }
            Experiment::Ssm => {
                let s = &self.ssm;
                if s.m == 0 || s.n == 0 || !(s.proposal_sd > 0.0) {
                    return bad("ssm needs m ≥ 1, n ≥ 1 and a positive proposal_sd");
                }
                if s.refresh && s.zeta == ZetaMode::Midpoint {
                    return bad("ssm.refresh requires zeta = \"current\"");
                }
            }
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_defaults() {
        for e in [Experiment::Toy, Experiment::Exchange, Experiment::Changepoint, Experiment::Latent, Experiment::Ssm] {
            let cfg = ExperimentConfig::new(e);
            assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
        }
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::parse("experiment = \"toy\"\nchain_length = 10\n").unwrap();
        assert_eq!(cfg.chain_length, 10);
        assert_eq!(cfg.toy, ToyConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::parse("experiment = \"toy\"\nthreads = 0\n").is_err());
        assert!(ExperimentConfig::parse("experiment = \"nope\"\n").is_err());
        assert!(ExperimentConfig::parse("experiment = \"toy\"\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::parse("experiment = \"ssm\"\n[ssm]\nrefresh = true\nzeta = \"midpoint\"\n").is_err());
    }
}
