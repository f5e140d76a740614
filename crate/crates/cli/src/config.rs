//! Study configuration files (`.cfg`, TOML syntax).
//!
//! ```text
//! rho_values = [0.1, 0.3, 0.5, 0.7, 0.9]
//!
//! [scenario]
//! n_areas = 117
//! replicates = 100
//! seed = 20240601
//! ```
//!
//! Omitted keys take their defaults; unknown keys are errors.

use std::path::Path;

use fsar_core::sim::StudyConfig;
use fsar_core::{FsarError, Result};

use crate::io::parse_error;

pub fn parse_study(path: &Path, text: &str) -> Result<StudyConfig> {
    let cfg: StudyConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(1, |s| text[..s.start].matches('\n').count() + 1);
        parse_error(path, line, e.message().trim())
    })?;
    if cfg.rho_values.is_empty() {
        return Err(parse_error(path, 1, "rho_values is empty"));
    }
    for s in cfg.scenarios() {
        s.validate()?;
    }
    Ok(cfg)
}

pub fn load_study(path: &Path) -> Result<StudyConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| FsarError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_study(path, &text)
}
