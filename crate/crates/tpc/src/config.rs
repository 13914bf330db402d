//! Run configuration: an optional JSON file named by `TPC_CONFIG`, with
//! command-line flags taking precedence over anything it sets.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use tpc_core::ingest::WindowConfig;
use tpc_core::roadnet::DEFAULT_NUM_WINDOWS;
use tpc_core::routing::SpeedFactors;
use tpc_core::tuning::GridSpec;
use tpc_core::ClassTaxonomy;

pub const CONFIG_ENV: &str = "TPC_CONFIG";
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub csv: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub test_dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub stm_store: Option<PathBuf>,
    pub route_db: Option<PathBuf>,
    pub grid: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub taxonomy: ClassTaxonomy,
    pub grid: Option<GridSpec>,
    pub window: WindowConfig,
    pub num_windows: usize,
    pub speed_factors: SpeedFactors,
    pub feedback_alpha: f64,
    pub bind: SocketAddr,
    pub k: usize,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            paths: Paths::default(),
            taxonomy: ClassTaxonomy::default(),
            grid: None,
            window: WindowConfig::default(),
            num_windows: DEFAULT_NUM_WINDOWS,
            speed_factors: SpeedFactors::default(),
            feedback_alpha: DEFAULT_ALPHA,
            bind: DEFAULT_BIND.parse().expect("default bind address parses"),
            k: DEFAULT_K,
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {msg}")]
    Load { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let load = |msg: String| ConfigError::Load { path: path.to_path_buf(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
        let cfg: Config = serde_json::from_str(&text).map_err(|e| load(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The file named by `TPC_CONFIG`, or defaults when it is unset.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Config::from_file(Path::new(&p)),
            _ => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        self.taxonomy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.speed_factors.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.speed_factors.as_slice().len() != self.taxonomy.num_classes() {
            return bad("speed_factors needs one factor per class");
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.window.length == 0 || self.window.horizon == 0 {
            return bad("window length and horizon must be at least 1");
        }
        if self.num_windows == 0 {
            return bad("num_windows must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.feedback_alpha) {
            return bad("feedback_alpha must lie in [0, 1]");
        }
        if self.k < 2 {
            return bad("k must be at least 2");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        let p = &self.paths;
        let all = [&p.csv, &p.dataset, &p.test_dataset, &p.model, &p.report, &p.graph, &p.events, &p.stm_store, &p.route_db, &p.grid];
        let set: Vec<&PathBuf> = all.iter().filter_map(|x| x.as_ref()).collect();
        if set.iter().collect::<BTreeSet<_>>().len() != set.len() {
            return bad("configured paths must be distinct");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
        let cfg: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = Config::default();
        c.paths.model = Some("a".into());
        c.paths.dataset = Some("a".into());
        assert!(c.validate().is_err());
        let c = Config { feedback_alpha: 2.0, ..Config::default() };
        assert!(c.validate().is_err());
        let c = Config { speed_factors: SpeedFactors::new(vec![1.0, 0.5]).unwrap(), ..Config::default() };
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<Config>(r#"{"nope":1}"#).is_err());
    }

    #[test]
    fn partial_file() {
        let cfg: Config = serde_json::from_str(r#"{"k":3,"paths":{"model":"m.tpcm"},"window":{"length":6,"horizon":2,"time_features":true}}"#).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.window.length, 6);
        assert_eq!(cfg.paths.model.as_deref(), Some(Path::new("m.tpcm")));
        assert_eq!(cfg.feedback_alpha, DEFAULT_ALPHA);
    }
}
