use std::path::{Path, PathBuf};

use serde::Deserialize;
use soco::sim::{ExperimentConfig, SearchOptions};

pub const EXAMPLE: &str = include_str!("../config/example.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub certificate_points: usize,
    pub certificate_tol: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let d = SearchOptions::default();
        SearchConfig {
            restarts: d.restarts,
            max_iterations: d.max_iterations,
            certificate_points: d.certificate_points,
            certificate_tol: d.certificate_tol,
        }
    }
}

impl SearchConfig {
    pub fn options(&self) -> SearchOptions {
        SearchOptions {
            restarts: self.restarts,
            max_iterations: self.max_iterations,
            certificate_points: self.certificate_points,
            certificate_tol: self.certificate_tol,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("soco-output"), svg: true }
    }
}

pub fn parse(text: &str) -> Result<RunConfig, String> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
    cfg.experiment.validate().map_err(|e| format!("experiment: {e}"))?;
    if cfg.search.restarts == 0 || cfg.search.max_iterations == 0 {
        return Err("search: restarts and max_iterations must be at least 1".into());
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse(&text)
}
