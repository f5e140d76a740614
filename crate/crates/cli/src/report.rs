//! JSON run report.
//!
//! The layout is described by `schemas/run_report.schema.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use fsar_core::basis::{evaluate_function, Basis, BasisKind};
use fsar_core::estimate::{Method, RhoUpdate, SarFit};
use fsar_core::inference::TestResult;
use fsar_core::sim::MonteCarloSummary;
use fsar_core::spatial::RhoInterval;
use fsar_core::{FsarError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

pub fn digest(role: &str, path: &Path) -> Result<InputDigest> {
    let io = |source| FsarError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(InputDigest {
        role: role.to_owned(),
        path: path.display().to_string(),
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Estimates of one fit, with `beta_hat` evaluated on the grid.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub method: Method,
    pub rho_update: Option<RhoUpdate>,
    pub basis: BasisKind,
    pub k: usize,
    pub n: usize,
    pub rho_hat: f64,
    pub sigma2_hat: f64,
    pub b_hat: Vec<f64>,
    pub b_se: Vec<f64>,
    pub grid: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub interval: RhoInterval,
    pub iterations: usize,
    pub converged: bool,
    pub effective_params: f64,
    pub objective_trace: Vec<f64>,
}

impl FitSummary {
    pub fn new(fit: &SarFit, basis: &Basis, n: usize) -> Result<Self> {
        Ok(FitSummary {
            method: fit.method,
            rho_update: fit.rho_update,
            basis: basis.kind(),
            k: basis.size(),
            n,
            rho_hat: fit.rho_hat,
            sigma2_hat: fit.sigma2_hat,
            b_hat: fit.b_hat.iter().copied().collect(),
            b_se: fit.coef_cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect(),
            grid: basis.grid().points().to_vec(),
            beta_hat: evaluate_function(fit.b_hat.as_slice(), basis)?,
            interval: fit.interval,
            iterations: fit.iterations,
            converged: fit.converged,
            effective_params: fit.effective_params,
            objective_trace: fit.objective_trace.clone(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BandRef {
    pub level: f64,
    pub csv: String,
    pub svg: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub inputs: Vec<InputDigest>,
    pub settings: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<BandRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<Vec<MonteCarloSummary>>,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str) -> Self {
        RunReport {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            inputs: Vec::new(),
            settings: BTreeMap::new(),
            fit: None,
            test: None,
            band: None,
            simulation: None,
            outputs: Vec::new(),
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.settings.insert(key.to_owned(), v);
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(digest(role, path)?);
        Ok(())
    }

    /// Run `f`, recording its wall time under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        *self.timings_ms.entry(phase.to_owned()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }

    /// Append warnings, skipping exact duplicates.
    pub fn warn_all<I: IntoIterator<Item = String>>(&mut self, warnings: I) {
        for w in warnings {
            if !self.warnings.contains(&w) {
                self.warnings.push(w);
            }
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| FsarError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::to_writer_pretty(file, self)
            .map_err(|e| FsarError::invalid(format!("{}: cannot write report: {e}", path.display())))
    }
}
