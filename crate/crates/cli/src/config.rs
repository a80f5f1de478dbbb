//! TOML run configuration; keys mirror the long command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

/// A number list given as a TOML number, array or CSV string.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NumList {
    One(f64),
    Many(Vec<f64>),
    Text(String),
}

impl NumList {
    pub fn to_csv(&self) -> String {
        match self {
            NumList::One(x) => x.to_string(),
            NumList::Many(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            NumList::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub plant: Option<PathBuf>,
    pub pendulum: Option<String>,
    pub nn: Option<PathBuf>,
    pub kxi: Option<NumList>,
    pub out: Option<PathBuf>,
    pub theorem: Option<String>,
    #[serde(alias = "rnom", alias = "rdes")]
    pub r: Option<NumList>,
    pub d: Option<NumList>,
    pub gamma: Option<f64>,
    pub sectors: Option<String>,
    pub solver: Option<String>,
    pub tol: Option<f64>,
    pub x0: Option<NumList>,
    pub schedule: Option<PathBuf>,
    pub steps: Option<usize>,
    pub governor: Option<bool>,
    pub governor_mode: Option<String>,
    pub report: Option<PathBuf>,
}

impl FileConfig {
    /// Relative paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.plant, &mut cfg.nn, &mut cfg.out, &mut cfg.schedule, &mut cfg.report].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
