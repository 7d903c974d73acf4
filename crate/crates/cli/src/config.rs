//! Optional TOML run file. Every key mirrors a command-line flag; flags win.
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use onetox::Year;
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Period label to embedding file.
    pub models: BTreeMap<String, PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_count: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stoplist: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclude_locations: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_vocab: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.rebase(base);
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.models.values_mut().for_each(fix);
        for p in [&mut self.relations, &mut self.counts_dir, &mut self.output, &mut self.stoplist]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn model_paths(&self) -> Result<BTreeMap<Year, PathBuf>> {
        self.models
            .iter()
            .map(|(year, path)| {
                let year: Year = year
                    .trim()
                    .parse()
                    .with_context(|| format!("config: model period '{year}' is not a year"))?;
                Ok((year, path.clone()))
            })
            .collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses `YEAR=PATH`.
pub fn parse_model_arg(s: &str) -> std::result::Result<(Year, PathBuf), String> {
    let (year, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected YEAR=PATH, got '{s}'"))?;
    let year = year
        .trim()
        .parse::<Year>()
        .map_err(|_| format!("'{year}' is not a year"))?;
    if path.is_empty() {
        return Err(format!("empty path for {year}"));
    }
    Ok((year, PathBuf::from(path)))
}
