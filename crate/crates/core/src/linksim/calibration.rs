//! One-time fit of the two free noise parameters to the published
//! QBER-versus-loss table.
//!
//! The gate fraction sets how fast the QBER rises at high loss, the static
//! modulation phase error sets the low-loss floor. Both are scanned on a
//! grid and the pair minimizing the largest deviation over all 24 measured
//! QBERs is kept.

use super::analytic::{expected_rates, PhaseStatistics};
use super::{Intensity, LinkConfig};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::reference::REFERENCE_POINTS;
use crate::stabilizer::stationary_stats;
use crate::states::Basis;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CalibrationGrid {
    pub gate_fraction: (f64, f64),
    pub gate_steps: usize,
    pub modulation_phase_error: (f64, f64),
    pub phase_steps: usize,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            gate_fraction: (0.05, 0.40),
            gate_steps: 71,
            modulation_phase_error: (0.20, 0.45),
            phase_steps: 101,
        }
    }
}

fn linspace((lo, hi): (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub gate_fraction: f64,
    pub modulation_phase_error: f64,
    /// Largest |model − measured| QBER over the table.
    pub max_deviation: f64,
}

impl Calibration {
    pub fn apply(&self, config: &LinkConfig) -> LinkConfig {
        let mut c = config.clone();
        c.detectors.gate_fraction = self.gate_fraction;
        c.source.modulation_phase_error = self.modulation_phase_error;
        c
    }
}

/// Largest QBER deviation from the reference table for a fully specified
/// link, using the stationary phase statistics of its loops.
pub fn max_qber_deviation(config: &LinkConfig) -> Result<f64> {
    let stats = stationary_stats(&config.pll, 2.0 * config.channel.drift_rate);
    let phase = PhaseStatistics::uniform(stats.mean_phase_error(config.source.modulation_phase_error));
    deviation(config, phase)
}

fn deviation(config: &LinkConfig, phase: PhaseStatistics) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for point in &REFERENCE_POINTS {
        let c = config.at_reference(point)?;
        let r = expected_rates(&c, phase);
        for b in Basis::BOTH {
            for k in Intensity::BOTH {
                worst = worst.max((r.cell(b, k).qber - point.qber(b, k)).abs());
            }
        }
    }
    Ok(worst)
}

pub fn calibrate_noise_and_phase(base: &LinkConfig, grid: &CalibrationGrid, exec: Execution) -> Result<Calibration> {
    base.validate()?;
    if grid.gate_steps == 0 || grid.phase_steps == 0 {
        return invalid("calibration grid is empty");
    }
    let stats = stationary_stats(&base.pll, 2.0 * base.channel.drift_rate);
    let gates = linspace(grid.gate_fraction, grid.gate_steps);
    let phases = linspace(grid.modulation_phase_error, grid.phase_steps);

    let rows = exec.map(&gates, |&g| -> Result<Calibration> {
        let mut best: Option<Calibration> = None;
        for &m in &phases {
            let mut c = base.clone();
            c.detectors.gate_fraction = g;
            c.source.modulation_phase_error = m;
            let dev = deviation(&c, PhaseStatistics::uniform(stats.mean_phase_error(m)))?;
            if best.is_none_or(|b| dev < b.max_deviation) {
                best = Some(Calibration {
                    gate_fraction: g,
                    modulation_phase_error: m,
                    max_deviation: dev,
                });
            }
        }
        Ok(best.expect("non-empty grid"))
    });
    let mut best: Option<Calibration> = None;
    for row in rows {
        let row = row?;
        if best.is_none_or(|b| row.max_deviation < b.max_deviation) {
            best = Some(row);
        }
    }
    Ok(best.expect("non-empty grid"))
}
