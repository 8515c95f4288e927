//! Run configuration: one TOML file shared by every subcommand.

use std::path::{Path, PathBuf};

use newsrec_core::scorer::{DEFAULT_SIGMA, DEFAULT_T_TDF, DEFAULT_T_UTDF};
use newsrec_core::{DecayConfig, DecayMode, WeightParams};
use serde::{Deserialize, Serialize};

use crate::ab::AbParams;
use crate::datagen::WorldSpec;
use crate::eval::EvalParams;
use crate::service::ServiceConfig;

/// Names the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "RECS_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Embedding dimension.
    pub d: usize,
    /// Click-history length per user.
    #[serde(rename = "N")]
    pub n: usize,
    /// Number of clusters.
    #[serde(rename = "K")]
    pub k: usize,
    pub weight_exponent: f64,
    pub eps: f64,
    /// `none`, `tdf` or `utdf`.
    pub decay_mode: String,
    pub t_tdf: i64,
    pub t_utdf: i64,
    pub sigma: f64,
    /// CTR window length in seconds.
    pub window_len: i64,
    /// Closed windows merged into a CTR snapshot.
    pub merge_windows: usize,
    pub candidate_horizon: i64,
    pub ctr_refresh: i64,
    pub model_refresh: i64,
    pub listen: String,
    /// Default list length for requests that omit `m`.
    pub m: usize,
    pub world: WorldSpec,
    pub eval: EvalParams,
    pub ab: AbParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d: 64,
            n: 50,
            k: 50,
            weight_exponent: 10.0,
            eps: 1e-6,
            decay_mode: "utdf".into(),
            t_tdf: DEFAULT_T_TDF,
            t_utdf: DEFAULT_T_UTDF,
            sigma: DEFAULT_SIGMA,
            window_len: 3600,
            merge_windows: 4,
            candidate_horizon: 48 * 3600,
            ctr_refresh: 600,
            model_refresh: 86_400,
            listen: "127.0.0.1:8080".into(),
            m: 10,
            world: WorldSpec::default(),
            eval: EvalParams::default(),
            ab: AbParams::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `explicit`, else the file named by `RECS_CONFIG`, else the defaults.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        let Some(path) = explicit.map(Path::to_path_buf).or(from_env) else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Read {
            path: path.clone(),
            source,
        })?;
        Self::parse(&text, &path)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if DecayMode::parse(&self.decay_mode).is_none() {
            return bad("decay_mode must be none, tdf or utdf");
        }
        if self.d == 0 || self.n == 0 || self.k == 0 || self.m == 0 {
            return bad("d, N, K and m must be positive");
        }
        if !(self.eps > 0.0 && self.weight_exponent >= 0.0 && self.sigma > 0.0) {
            return bad("eps and sigma must be positive, weight_exponent non-negative");
        }
        if self.window_len <= 0 || self.merge_windows == 0 || self.candidate_horizon <= 0 {
            return bad("window_len, merge_windows and candidate_horizon must be positive");
        }
        if self.ctr_refresh <= 0 || self.model_refresh <= 0 {
            return bad("refresh cadences must be positive");
        }
        if self.t_tdf < 0 || self.t_utdf < 0 {
            return bad("decay thresholds must be non-negative");
        }
        if !(self.eval.ctr_prior_weight >= 0.0 && self.eval.ctr_prior_weight.is_finite()) {
            return bad("eval.ctr_prior_weight must be a non-negative number");
        }
        self.world.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn weight_params(&self) -> WeightParams {
        WeightParams {
            exponent: self.weight_exponent,
            eps: self.eps,
            nmf_soft: false,
        }
    }

    pub fn decay(&self) -> DecayConfig {
        let mode = DecayMode::parse(&self.decay_mode).unwrap_or(DecayMode::None);
        DecayConfig {
            mode,
            threshold_seconds: if mode == DecayMode::Utdf { self.t_utdf } else { self.t_tdf },
            sigma: self.sigma,
        }
    }

    pub fn service(&self) -> ServiceConfig {
        ServiceConfig {
            decay: self.decay(),
            fallback_decay: DecayConfig {
                threshold_seconds: self.t_tdf,
                sigma: self.sigma,
                ..DecayConfig::tdf()
            },
            weights: self.weight_params(),
            candidate_horizon: self.candidate_horizon,
            ..ServiceConfig::default()
        }
    }

    /// Every effective key, for the startup banner.
    pub fn banner(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        format!("# effective configuration\n{body}")
    }
}
