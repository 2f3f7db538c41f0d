//! QKD session simulation: the transmitter's weak coherent pulses, channel,
//! stabilized receiver and detectors, in both event-level Monte Carlo and
//! closed-form expectation modes.

mod analytic;
mod calibration;
mod link;
mod prbs;
mod session;
mod stability;
mod tally;

pub use analytic::{expected_rates, CellRates, ExpectedRates, PhaseStatistics};
pub use calibration::{calibrate_noise_and_phase, max_qber_deviation, Calibration, CalibrationGrid};
pub use link::{Kick, StabilizedLink};
pub use prbs::{prbs_sequence, Prbs};
pub use session::{run_pulses, run_session, run_sessions, PllTelemetry, SessionOutput};
pub use stability::{stability_trace, stability_trace_with_telemetry, DisturbanceEvent, StabilityConfig, StabilityTrace, StabilityWindow};
pub use tally::{Tally, TallyCell};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::error::{invalid, Result};
use crate::reference::ReferencePoint;
use crate::stabilizer::PllConfig;
use crate::states::Dimension;

/// Fraction of uncorrelated noise clicks accepted by the detection gate.
/// Fitted once against the published QBER-versus-loss table together with
/// [`DEFAULT_MODULATION_PHASE_ERROR`]; see [`calibrate_noise_and_phase`].
pub const DEFAULT_GATE_FRACTION: f64 = 0.205;

/// Static phase error of the transmitter's phase modulators, rad.
pub const DEFAULT_MODULATION_PHASE_ERROR: f64 = 0.3425;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Intensity {
    /// μ1, the signal level.
    Signal,
    /// μ2, the decoy level.
    Decoy,
}

impl Intensity {
    pub const BOTH: [Intensity; 2] = [Intensity::Signal, Intensity::Decoy];

    pub fn slot(self) -> usize {
        match self {
            Intensity::Signal => 0,
            Intensity::Decoy => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Intensity::Signal => "mu1",
            Intensity::Decoy => "mu2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "mu1" => Ok(Intensity::Signal),
            "mu2" => Ok(Intensity::Decoy),
            other => invalid(format!("unknown intensity {other:?}, expected mu1 or mu2")),
        }
    }
}

/// The transmitter settings tuned per channel loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
    pub p_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    pub rep_rate: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
    pub p_z_alice: f64,
    pub p_z_bob: f64,
    /// Probability that the optical switch routes a pulse into the wrong
    /// output of its pair.
    pub switch_error: f64,
    pub prbs_order: u32,
    pub modulation_phase_error: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            rep_rate: 5.95e8,
            mu1: 0.19,
            mu2: 0.15,
            p_mu1: 0.62,
            p_z_alice: 0.90,
            p_z_bob: 0.90,
            switch_error: 0.021,
            prbs_order: 12,
            modulation_phase_error: DEFAULT_MODULATION_PHASE_ERROR,
        }
    }
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate > 0.0 && self.rep_rate.is_finite()) {
            return invalid("source.rep_rate must be > 0");
        }
        if !(self.mu2 > 0.0 && self.mu2 < self.mu1 && self.mu1.is_finite()) {
            return invalid(format!(
                "source intensities must satisfy 0 < mu2 < mu1, got mu1 = {}, mu2 = {}",
                self.mu1, self.mu2
            ));
        }
        for (name, p) in [
            ("p_mu1", self.p_mu1),
            ("p_z_alice", self.p_z_alice),
            ("p_z_bob", self.p_z_bob),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return invalid(format!("source.{name} must be in (0, 1), got {p}"));
            }
        }
        if !(0.0..0.5).contains(&self.switch_error) {
            return invalid("source.switch_error must be in [0, 0.5)");
        }
        if !(2..=32).contains(&self.prbs_order) {
            return invalid("source.prbs_order must be in 2..=32");
        }
        if !self.modulation_phase_error.is_finite() {
            return invalid("source.modulation_phase_error must be finite");
        }
        Ok(())
    }

    pub fn mu(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.mu1,
            Intensity::Decoy => self.mu2,
        }
    }

    pub fn p_intensity(&self, k: Intensity) -> f64 {
        match k {
            Intensity::Signal => self.p_mu1,
            Intensity::Decoy => 1.0 - self.p_mu1,
        }
    }

    pub fn p_basis_alice(&self, b: crate::states::Basis) -> f64 {
        match b {
            crate::states::Basis::Z => self.p_z_alice,
            crate::states::Basis::X => 1.0 - self.p_z_alice,
        }
    }

    pub fn p_basis_bob(&self, b: crate::states::Basis) -> f64 {
        match b {
            crate::states::Basis::Z => self.p_z_bob,
            crate::states::Basis::X => 1.0 - self.p_z_bob,
        }
    }

    pub fn operating_point(&self) -> OperatingPoint {
        OperatingPoint {
            mu1: self.mu1,
            mu2: self.mu2,
            p_mu1: self.p_mu1,
            p_z: self.p_z_alice,
        }
    }

    /// Same source with the tunable settings replaced; both parties use `p_z`.
    pub fn with_operating_point(&self, op: OperatingPoint) -> Self {
        Self {
            mu1: op.mu1,
            mu2: op.mu2,
            p_mu1: op.p_mu1,
            p_z_alice: op.p_z,
            p_z_bob: op.p_z,
            ..self.clone()
        }
    }

    /// Probability that both parties pick the same basis.
    pub fn sifting_fraction(&self) -> f64 {
        self.p_z_alice * self.p_z_bob + (1.0 - self.p_z_alice) * (1.0 - self.p_z_bob)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorBank {
    pub efficiency: f64,
    /// Per detector, Hz.
    pub dark_rate: f64,
    /// Stabilization-light leakage summed over the quantum detectors, Hz.
    pub leakage_rate: f64,
    pub gate_fraction: f64,
}

impl Default for DetectorBank {
    fn default() -> Self {
        Self {
            efficiency: 0.85,
            dark_rate: 100.0,
            leakage_rate: 3.5e4,
            gate_fraction: DEFAULT_GATE_FRACTION,
        }
    }
}

impl DetectorBank {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return invalid("detectors.efficiency must be in (0, 1]");
        }
        if !(self.dark_rate >= 0.0 && self.leakage_rate >= 0.0) {
            return invalid("detector noise rates must be >= 0");
        }
        if !(self.gate_fraction > 0.0 && self.gate_fraction <= 1.0) {
            return invalid("detectors.gate_fraction must be in (0, 1]");
        }
        Ok(())
    }

    /// Gated noise click probability of one detector in one pulse slot.
    pub fn noise_probability_per_detector(&self, rep_rate: f64) -> f64 {
        (self.dark_rate + self.leakage_rate / 4.0) * self.gate_fraction / rep_rate
    }
}

/// Everything that determines the physical link.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LinkConfig {
    pub channel: ChannelConfig,
    pub source: SourceConfig,
    pub detectors: DetectorBank,
    pub pll: PllConfig,
    pub dimension: Dimension,
}

impl LinkConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.source.validate()?;
        self.detectors.validate()?;
        self.pll.validate()
    }

    /// Link at a published operating point: its channel loss and source
    /// settings, everything else unchanged.
    pub fn at_reference(&self, point: &ReferencePoint) -> Result<Self> {
        Ok(Self {
            channel: self.channel.clone().with_channel_loss(point.loss_db)?,
            source: self.source.with_operating_point(point.operating_point()),
            ..self.clone()
        })
    }

    /// Detectors Bob reads out in one basis configuration.
    pub fn detectors_used(&self) -> usize {
        self.dimension.value()
    }

    /// Switch errors only occur when the switch selects between two core
    /// pairs, i.e. in the four-dimensional protocol.
    pub fn effective_switch_error(&self) -> f64 {
        match self.dimension {
            Dimension::Four => self.source.switch_error,
            Dimension::Two => 0.0,
        }
    }
}
