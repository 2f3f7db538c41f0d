//! Experiment configuration file (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::ChannelConfig;
use crate::error::{Error, Result};
use crate::keyrate::SecurityParams;
use crate::linksim::{DetectorBank, LinkConfig, SourceConfig, StabilityConfig};
use crate::stabilizer::PllConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Analytic,
    Montecarlo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Analytic => "analytic",
            Mode::Montecarlo => "montecarlo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub mode: Mode,
    /// Pulse budget of Monte Carlo sessions.
    pub pulses: u64,
    pub channel: ChannelConfig,
    pub source: SourceConfig,
    pub detectors: DetectorBank,
    pub pll: PllConfig,
    pub security: SecurityParams,
    pub stability: StabilityConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            mode: Mode::Analytic,
            pulses: 10_000_000,
            channel: ChannelConfig::default(),
            source: SourceConfig::default(),
            detectors: DetectorBank::default(),
            pll: PllConfig::default(),
            security: SecurityParams::default(),
            stability: StabilityConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.link().validate()?;
        self.security.validate()?;
        self.stability.validate()?;
        if self.pulses == 0 {
            return Err(Error::Config("pulses must be > 0".into()));
        }
        Ok(())
    }

    /// Physical link; its dimension is the one the key is computed for.
    pub fn link(&self) -> LinkConfig {
        LinkConfig {
            channel: self.channel.clone(),
            source: self.source.clone(),
            detectors: self.detectors.clone(),
            pll: self.pll.clone(),
            dimension: self.security.d,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
