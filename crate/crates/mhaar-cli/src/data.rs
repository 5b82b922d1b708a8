//! Dataset files: synthetic generation and CSV ingestion.
//!
//! Dataset CSVs start with `#` lines describing how they were generated,
//! followed by a header row and one record per line.

use std::io::Write;
use std::path::Path;

use mhaar_core::rjmcmc::simulate_events;
use mhaar_core::ssm::LinearGaussianModel;
use mhaar_core::{McRng, StreamKey};
use serde::Serialize;

use crate::config::{ChangepointConfig, SsmConfig};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    Changepoint,
    Lgssm,
}

/// A generated dataset: comment lines, header and records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut buf = Vec::new();
        for c in &self.comments {
            writeln!(buf, "# {c}").expect("write to memory");
        }
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(&self.header).map_err(io_err)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let i = self.header.iter().position(|h| h == name).ok_or_else(|| CliError::Config(format!("dataset has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

fn io_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(e.to_string())
}

#[derive(Serialize)]
struct ChangepointParams<'a> {
    length: f64,
    boundaries: &'a [f64],
    heights: &'a [f64],
}

#[derive(Serialize)]
struct LgssmParams {
    theta_star: f64,
    phi: f64,
    a: f64,
    var_z: f64,
    var_y: f64,
    t: usize,
}

fn manifest_lines(kind: &str, seed: u64, params: String) -> Vec<String> {
    vec![format!("generator: mhaar {} {kind}", env!("CARGO_PKG_VERSION")), format!("seed: {seed}"), format!("params: {params}")]
}

/// Event times of a Poisson process with the configured step intensity.
pub fn synth_changepoint(cfg: &ChangepointConfig, seed: u64) -> Result<Dataset, CliError> {
    if cfg.boundaries.last() != Some(&cfg.length) {
        return Err(CliError::Config("the last boundary must equal the window length".into()));
    }
    let mut rng = StreamKey::new(seed).rng();
    let mut events = simulate_events(&cfg.boundaries, &cfg.heights, &mut rng)?;
    events.sort_by(f64::total_cmp);
    let params = ChangepointParams { length: cfg.length, boundaries: &cfg.boundaries, heights: &cfg.heights };
    Ok(Dataset {
        comments: manifest_lines("changepoint", seed, serde_json::to_string(&params).expect("plain data")),
        header: vec!["event".into()],
        rows: events.into_iter().map(|e| vec![e]).collect(),
    })
}

/// Observations of the linear-Gaussian model at `theta_star`.
pub fn synth_lgssm(cfg: &SsmConfig, seed: u64) -> Result<Dataset, CliError> {
    let mut rng = StreamKey::new(seed).rng();
    let (model, _) = simulate_lgssm(cfg, &mut rng)?;
    let params = LgssmParams { theta_star: cfg.theta_star, phi: cfg.phi, a: cfg.a, var_z: cfg.var_z, var_y: cfg.var_y, t: cfg.t };
    Ok(Dataset {
        comments: manifest_lines("lgssm", seed, serde_json::to_string(&params).expect("plain data")),
        header: vec!["t".into(), "y".into()],
        rows: model.y.iter().enumerate().map(|(t, &y)| vec![(t + 1) as f64, y]).collect(),
    })
}

pub fn simulate_lgssm(cfg: &SsmConfig, rng: &mut McRng) -> Result<(LinearGaussianModel, Vec<f64>), CliError> {
    Ok(LinearGaussianModel::simulate(cfg.phi, cfg.a, cfg.var_z, cfg.var_y, cfg.prior_var, cfg.theta_star, cfg.t, rng)?)
}

pub fn generate(kind: SynthKind, changepoint: &ChangepointConfig, ssm: &SsmConfig, seed: u64) -> Result<Dataset, CliError> {
    match kind {
        SynthKind::Changepoint => synth_changepoint(changepoint, seed),
        SynthKind::Lgssm => synth_lgssm(ssm, seed),
    }
}

/// Read a dataset CSV, skipping `#` comment lines.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}

pub fn parse_dataset(text: &str) -> Result<Dataset, CliError> {
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in text.lines() {
        match line.strip_prefix('#') {
            Some(c) => comments.push(c.trim().to_string()),
            None => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(|e| CliError::Config(e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| CliError::Config(format!("bad number `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(Dataset { comments, header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_lgssm_has_header() {
        let cfg = SsmConfig { t: 0, ..SsmConfig::default() };
        let d = synth_lgssm(&cfg, 3).unwrap();
        let text = String::from_utf8(d.to_csv().unwrap()).unwrap();
        assert!(text.lines().any(|l| l == "t,y"));
        assert!(d.rows.is_empty());
        let back = parse_dataset(&text).unwrap();
        assert_eq!(back.header, vec!["t", "y"]);
        assert!(back.rows.is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let d = synth_changepoint(&ChangepointConfig::default(), 5).unwrap();
        let back = parse_dataset(&String::from_utf8(d.to_csv().unwrap()).unwrap()).unwrap();
        assert_eq!(back, d);
    }
}
