//! The 2 km seven-core fiber link: loss budget, inter-core cross-talk, and
//! per-core random phase drift.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::states::{wrap_phase, CoreIndex, InterferometerPair};

/// Residual modulation depth seen by a signal polarized orthogonally to the
/// phase-modulator axis.
pub const DEFAULT_PM_EXTINCTION: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Loss of the (lossiest) core including fan-in/fan-out, dB.
    pub core_loss_db: f64,
    /// Inter-core cross-talk, dB. `-inf` disables it.
    pub crosstalk_db: f64,
    /// Added attenuation emulating a longer link, dB.
    pub extra_attenuation_db: f64,
    /// Variance rate of each core's phase random walk, rad²/s.
    pub drift_rate: f64,
    /// Receiver insertion loss on the quantum channel, dB.
    pub receiver_loss_db: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            core_loss_db: 5.8,
            crosstalk_db: -46.0,
            extra_attenuation_db: 0.0,
            drift_rate: 0.05,
            receiver_loss_db: 2.4,
        }
    }
}

impl ChannelConfig {
    /// Config whose total channel loss (core + added attenuation) is
    /// `channel_loss_db`.
    pub fn with_channel_loss(mut self, channel_loss_db: f64) -> Result<Self> {
        if channel_loss_db < self.core_loss_db {
            return invalid(format!(
                "channel loss {channel_loss_db} dB is below the fiber loss {} dB",
                self.core_loss_db
            ));
        }
        self.extra_attenuation_db = channel_loss_db - self.core_loss_db;
        Ok(self)
    }

    pub fn channel_loss_db(&self) -> f64 {
        self.core_loss_db + self.extra_attenuation_db
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("core_loss_db", self.core_loss_db),
            ("extra_attenuation_db", self.extra_attenuation_db),
            ("receiver_loss_db", self.receiver_loss_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("channel.{name} must be a finite value >= 0 dB, got {v}"));
            }
        }
        if self.crosstalk_db.is_nan() || self.crosstalk_db > -40.0 {
            return invalid(format!(
                "channel.crosstalk_db must be <= -40 dB, got {}",
                self.crosstalk_db
            ));
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return invalid(format!("channel.drift_rate must be >= 0, got {}", self.drift_rate));
        }
        Ok(())
    }
}

/// End-to-end survival probability of a photon up to the detectors
/// (detector efficiency excluded).
pub fn transmittance(config: &ChannelConfig) -> f64 {
    let total_db = config.core_loss_db + config.extra_attenuation_db + config.receiver_loss_db;
    10f64.powf(-total_db / 10.0)
}

/// Probability that a transmitted photon shows up in a core other than the
/// one it was launched into.
pub fn crosstalk_leak_probability(config: &ChannelConfig) -> f64 {
    if config.crosstalk_db == f64::NEG_INFINITY {
        return 0.0;
    }
    10f64.powf(config.crosstalk_db / 10.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolarizationMode {
    Aligned,
    Orthogonal,
}

impl PolarizationMode {
    pub fn name(self) -> &'static str {
        match self {
            PolarizationMode::Aligned => "aligned",
            PolarizationMode::Orthogonal => "orthogonal",
        }
    }
}

/// Phase actually imprinted by the phase-modulation loop on a signal of the
/// given polarization when the modulator is driven to `command_phase`.
pub fn pml_phase(command_phase: f64, pol: PolarizationMode, extinction: f64) -> f64 {
    match pol {
        PolarizationMode::Aligned => command_phase,
        PolarizationMode::Orthogonal => extinction * command_phase,
    }
}

/// Accumulated fiber phase of each used core.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelState {
    phases: [f64; 4],
    time: f64,
}

impl ChannelState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Unwrapped accumulated phase.
    pub fn raw_phase(&self, core: CoreIndex) -> f64 {
        self.phases[core.slot()]
    }

    pub fn phase(&self, core: CoreIndex) -> f64 {
        wrap_phase(self.phases[core.slot()])
    }

    /// Phase of `pair.second` relative to `pair.first`, unwrapped.
    pub fn pair_phase(&self, pair: &InterferometerPair) -> f64 {
        self.raw_phase(pair.second) - self.raw_phase(pair.first)
    }

    /// Adds a step to one core's phase (environmental disturbance).
    pub fn kick(&mut self, core: CoreIndex, jump: f64) {
        self.phases[core.slot()] += jump;
    }

    /// Advances every core by an independent Gaussian increment of variance
    /// `drift_rate * dt`.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, drift_rate: f64, rng: &mut R) -> Result<()> {
        if !(dt > 0.0) {
            return invalid(format!("time step must be positive, got {dt}"));
        }
        if drift_rate > 0.0 {
            let sigma = (drift_rate * dt).sqrt();
            let normal = Normal::new(0.0, sigma).expect("finite sigma");
            for p in &mut self.phases {
                *p += normal.sample(rng);
            }
        }
        self.time += dt;
        Ok(())
    }
}
