//! Experiment configuration files.

use std::path::{Path, PathBuf};

use gridmarket_core::auction::Mechanism;
use gridmarket_core::env::{EpisodeConfig, PriceConfig};
use gridmarket_core::microgrid::MicrogridParams;
use gridmarket_marl::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub train: u64,
    pub eval: u64,
    /// Seed of the synthetic profile library.
    pub profiles: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            train: 7,
            eval: 11,
            profiles: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub mechanism: Mechanism,
    pub prices: PriceConfig,
}

/// Episode shape; the market section supplies mechanism and prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub horizon: usize,
    pub delta1: usize,
    pub delta2: usize,
    pub forecast_sigma: f64,
    pub dt: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = EpisodeConfig::default();
        Self {
            horizon: d.horizon,
            delta1: d.delta1,
            delta2: d.delta2,
            forecast_sigma: d.forecast_sigma,
            dt: d.dt,
        }
    }
}

/// Where load and PV profiles come from, and how many start days are held
/// out for evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSource {
    /// Profile CSV; when absent a synthetic library is generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Days in the synthetic library.
    pub days: usize,
    /// Trailing start days reserved for evaluation.
    pub test_days: usize,
}

impl Default for ProfileSource {
    fn default() -> Self {
        Self {
            path: None,
            days: 330,
            test_days: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    pub market: MarketConfig,
    pub env: EnvSection,
    pub profiles: ProfileSource,
    pub train: TrainConfig,
    pub grids: Vec<MicrogridParams>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mmappo,
            output_dir: PathBuf::from("runs"),
            seeds: Seeds::default(),
            market: MarketConfig::default(),
            env: EnvSection::default(),
            profiles: ProfileSource::default(),
            train: TrainConfig::default(),
            grids: MicrogridParams::four_grid_community(),
        }
    }
}

fn config_error(path: impl Into<String>, message: impl ToString) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Errors name the offending key path.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("<document>", e.message()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(path, e.inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_error(path.display().to_string(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(p) = &cfg.profiles.path {
            if p.is_relative() {
                cfg.profiles.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            horizon: self.env.horizon,
            delta1: self.env.delta1,
            delta2: self.env.delta2,
            forecast_sigma: self.env.forecast_sigma,
            dt: self.env.dt,
            mechanism: self.market.mechanism,
            prices: self.market.prices.clone(),
        }
    }

    pub fn with_mechanism(&self, mechanism: Mechanism) -> Self {
        let mut c = self.clone();
        c.market.mechanism = mechanism;
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.grids.is_empty() {
            return Err(config_error("grids", "at least one microgrid is required"));
        }
        for (i, g) in self.grids.iter().enumerate() {
            g.validate().map_err(|e| config_error(format!("grids[{i}]"), e))?;
        }
        self.market
            .prices
            .validate()
            .map_err(|e| config_error("market.prices", e))?;
        let mut env = self.episode_config();
        env.prices = PriceConfig::default();
        env.validate().map_err(|e| config_error("env", e))?;
        self.train.validate().map_err(|e| match e {
            gridmarket_marl::MarlError::Config { field, reason } => config_error(format!("train.{field}"), reason),
            other => config_error("train", other),
        })?;
        if self.profiles.path.is_none() && self.profiles.days < self.env.horizon / 24 {
            return Err(config_error("profiles.days", "library shorter than one episode"));
        }
        Ok(())
    }
}
