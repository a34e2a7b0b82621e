//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use radar_core::engine::EngineConfig;

/// Environment variable naming the config file when `--config` is absent.
pub const CONFIG_ENV: &str = "RADAR_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Tweet stream, one JSON record per line.
    pub stream: Option<PathBuf>,
    /// Older tweets fed to the graph, embedding and timeline before detection.
    pub history: Option<PathBuf>,
    /// Stopword list, one word per line. The built-in list is used otherwise.
    pub stopwords: Option<PathBuf>,
    /// Classifier weights written by `radar train`.
    pub classifier: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
    pub listen: String,
    /// Directory of static files served under `/`.
    pub static_dir: Option<PathBuf>,
    pub engine: EngineConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            stream: None,
            history: None,
            stopwords: None,
            classifier: None,
            state_dir: None,
            listen: "127.0.0.1:8080".into(),
            static_dir: None,
            engine: EngineConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("invalid config file")?;
        config.engine.validate().context("invalid engine settings")?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Reads `explicit`, else the file named by `RADAR_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(path) = explicit {
            return Self::from_file(path);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(path) if !path.is_empty() => Self::from_file(Path::new(&path)),
            _ => Ok(Self::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::from_toml("stream = \"s.jsonl\"\n[engine]\nstep_s = 300\n").unwrap();
        assert_eq!(c.stream.as_deref(), Some(Path::new("s.jsonl")));
        assert_eq!(c.engine.step_s, 300);
        assert_eq!(c.engine.window_s, EngineConfig::default().window_s);
        assert_eq!(c.listen, "127.0.0.1:8080");
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(Config::from_toml("strem = \"x\"").is_err());
        assert!(Config::from_toml("[engine]\nstep_s = 0\n").is_err());
    }
}
