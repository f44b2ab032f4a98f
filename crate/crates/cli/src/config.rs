use std::path::{Path, PathBuf};

use plexity::corpus::{InputFormat, SourceSpec, SourceTag, DEFAULT_RATING_STD};
use plexity::evalmetrics::Setting;
use plexity::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_format() -> InputFormat {
    InputFormat::PlainLines
}

fn default_rating_std() -> f64 {
    DEFAULT_RATING_STD
}

fn default_setting() -> Setting {
    Setting::EnsembleMean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub source: SourceTag,
    #[serde(default = "default_format")]
    pub format: InputFormat,
}

/// The run configuration. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpora: Vec<CorpusEntry>,
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default = "default_rating_std")]
    pub default_rating_std: f64,
    #[serde(default = "default_setting")]
    pub setting: Setting,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

/// A validated configuration with absolute paths and the raw bytes it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read(path).map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig =
            serde_json::from_slice(&raw).map_err(|e| CliError::Validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &mut PathBuf| {
            let joined = if p.is_relative() { base.join(&*p) } else { p.clone() };
            *p = std::path::absolute(&joined).unwrap_or(joined);
        };
        for c in &mut config.corpora {
            resolve(&mut c.path);
        }
        resolve(&mut config.train);
        if let Some(t) = &mut config.test {
            resolve(t);
        }
        resolve(&mut config.output_dir);
        validate(&config)?;
        Ok(LoadedConfig {
            config,
            raw,
            path: path.to_path_buf(),
        })
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    pub fn source_specs(&self) -> Vec<SourceSpec> {
        self.config
            .corpora
            .iter()
            .map(|c| SourceSpec {
                path: c.path.clone(),
                source: c.source.clone(),
                format: c.format,
            })
            .collect()
    }
}

fn validate(c: &RunConfig) -> CliResult<()> {
    c.pipeline.validate()?;
    if c.corpora.is_empty() {
        return Err(CliError::Validation("config lists no corpora".into()));
    }
    let mut paths: Vec<&Path> = c.corpora.iter().map(|e| e.path.as_path()).collect();
    paths.push(&c.train);
    if let Some(t) = &c.test {
        paths.push(t);
    }
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(CliError::Validation(format!("input file {} does not exist", missing.display())));
    }
    if !(c.default_rating_std.is_finite() && c.default_rating_std >= 0.0) {
        return Err(CliError::Validation(format!("default_rating_std {} must be finite and >= 0", c.default_rating_std)));
    }
    Ok(())
}
