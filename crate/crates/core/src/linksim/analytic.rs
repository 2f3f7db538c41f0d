//! Closed-form expected detection rates and QBERs.
//!
//! Photons reaching Bob are Poisson distributed, so after routing each
//! detector receives an independent Poisson stream and clicks with
//! probability `1 - exp(-k η q_j)`, where `q_j` is the share of light sent to
//! detector `j`. On top of that a slot carries at most one gated noise click
//! on a uniformly chosen detector. Slots with clicks on more than one
//! detector are discarded. These are exactly the rules of the Monte Carlo
//! session, so the two modes agree up to sampling noise.

use super::{Intensity, LinkConfig};
use crate::channel::{crosstalk_leak_probability, transmittance};
use crate::error::{invalid, Result};
use crate::stabilizer::{residual_qber_contribution, stationary_stats};
use crate::states::Basis;

/// Mean sin²(δ/2) of the quantum-channel interferometer residual, per basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseStatistics {
    pub mean_sin2: [f64; 2],
}

impl PhaseStatistics {
    pub fn uniform(mean_sin2: f64) -> Self {
        Self {
            mean_sin2: [mean_sin2; 2],
        }
    }

    /// Steady-state value of the stabilized receiver for this link.
    pub fn stationary(config: &LinkConfig) -> Self {
        let stats = stationary_stats(&config.pll, 2.0 * config.channel.drift_rate);
        Self::uniform(stats.mean_phase_error(config.source.modulation_phase_error))
    }

    /// From recorded quantum-channel residuals.
    pub fn from_trace(residuals: &[f64]) -> Result<Self> {
        Ok(Self::uniform(residual_qber_contribution(residuals)?))
    }

    pub fn for_basis(&self, b: Basis) -> f64 {
        self.mean_sin2[b.slot()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellRates {
    /// Probability that a pulse falls in this sifted cell (both bases equal).
    pub pulse_fraction: f64,
    /// Single-click probability per pulse of this cell.
    pub detection_probability: f64,
    pub qber: f64,
    /// Sifted detections per second.
    pub sifted_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedRates {
    cells: [[CellRates; 2]; 2],
    /// Total per-pulse transmission including detector efficiency.
    pub eta: f64,
    pub noise_click_probability: f64,
    pub phase: PhaseStatistics,
}

impl ExpectedRates {
    pub fn cell(&self, b: Basis, k: Intensity) -> &CellRates {
        &self.cells[b.slot()][k.slot()]
    }

    pub fn sifted_rate(&self, b: Basis) -> f64 {
        Intensity::BOTH.iter().map(|&k| self.cell(b, k).sifted_rate).sum()
    }

    /// Detection-weighted QBER of a basis.
    pub fn qber(&self, b: Basis) -> f64 {
        let total = self.sifted_rate(b);
        Intensity::BOTH
            .iter()
            .map(|&k| {
                let c = self.cell(b, k);
                c.qber * c.sifted_rate
            })
            .sum::<f64>()
            / total
    }
}

/// Per-pulse click probabilities for one matched-basis pulse.
pub(crate) struct ClickModel {
    pub eta: f64,
    pub crosstalk: f64,
    pub noise_any: f64,
    pub used: usize,
    pub switch_error: f64,
}

impl ClickModel {
    pub fn new(config: &LinkConfig) -> Self {
        let used = config.detectors_used();
        let p_det = config
            .detectors
            .noise_probability_per_detector(config.source.rep_rate);
        Self {
            eta: transmittance(&config.channel) * config.detectors.efficiency,
            crosstalk: crosstalk_leak_probability(&config.channel),
            noise_any: 1.0 - (1.0 - p_det).powi(used as i32),
            used,
            switch_error: config.effective_switch_error(),
        }
    }

    /// `(P(single click), P(single click on a wrong detector))` for a pulse
    /// of mean photon number `mu` whose light would go to the correct
    /// detector with probability `1 - phase_error` and to its partner
    /// otherwise.
    pub fn matched(&self, mu: f64, phase_error: f64) -> (f64, f64) {
        let direct = self.routing(mu, 1.0 - phase_error, phase_error);
        let flipped = self.routing(mu, phase_error, 1.0 - phase_error);
        let s = self.switch_error;
        (
            (1.0 - s) * direct.0 + s * flipped.0,
            (1.0 - s) * direct.1 + s * flipped.1,
        )
    }

    fn routing(&self, mu: f64, correct: f64, partner: f64) -> (f64, f64) {
        let spread = self.crosstalk / self.used as f64;
        let mut q = vec![spread; self.used];
        q[0] += (1.0 - self.crosstalk) * correct;
        q[1] += (1.0 - self.crosstalk) * partner;
        let mean = mu * self.eta;
        let none = (-mean * q.iter().sum::<f64>()).exp();
        let per_noise = self.noise_any / self.used as f64;
        let mut total = 0.0;
        let mut wrong = 0.0;
        for (j, &qj) in q.iter().enumerate() {
            let signal_only = none * ((mean * qj).exp() - 1.0);
            let p = (1.0 - self.noise_any) * signal_only + per_noise * (signal_only + none);
            total += p;
            if j != 0 {
                wrong += p;
            }
        }
        (total, wrong)
    }
}

pub fn expected_rates(config: &LinkConfig, phase: PhaseStatistics) -> ExpectedRates {
    let model = ClickModel::new(config);
    let src = &config.source;
    let mut cells = [[CellRates {
        pulse_fraction: 0.0,
        detection_probability: 0.0,
        qber: 0.0,
        sifted_rate: 0.0,
    }; 2]; 2];
    for b in Basis::BOTH {
        for k in Intensity::BOTH {
            let (det, wrong) = model.matched(src.mu(k), phase.for_basis(b));
            let fraction = src.p_basis_alice(b) * src.p_basis_bob(b) * src.p_intensity(k);
            cells[b.slot()][k.slot()] = CellRates {
                pulse_fraction: fraction,
                detection_probability: det,
                qber: wrong / det,
                sifted_rate: src.rep_rate * fraction * det,
            };
        }
    }
    ExpectedRates {
        cells,
        eta: model.eta,
        noise_click_probability: model.noise_any,
        phase,
    }
}

/// Expected single-click probability and QBER for a pulse train sent
/// entirely in one basis at one intensity, with the given phase error.
pub(crate) fn single_configuration(config: &LinkConfig, mu: f64, phase_error: f64) -> Result<(f64, f64)> {
    if !(mu > 0.0) {
        return invalid("intensity must be positive");
    }
    let (det, wrong) = ClickModel::new(config).matched(mu, phase_error);
    Ok((det, wrong / det))
}
