//! Phase-locked-loop stabilization of the receiver interferometers.
//!
//! A co-propagating reference at a second wavelength produces interference
//! fringes on an InGaAs detector behind each receiver beam splitter. A
//! discrete-time proportional controller holds each fringe at half height on
//! its falling slope by driving a phase shifter. When the normalized count
//! error leaves the lock window the controller sweeps the actuator over one
//! full period, fits the fringe, and relocks.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::channel::{pml_phase, ChannelState, PolarizationMode, DEFAULT_PM_EXTINCTION};
use crate::error::{invalid, Result};
use crate::states::{wrap_phase, InterferometerPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PllConfig {
    /// Reference count rate at the top of a fringe before dead-time loss, Hz.
    /// Detector efficiency is already folded in.
    pub max_fringe_rate: f64,
    pub background_rate: f64,
    /// Controller period, s.
    pub update_interval: f64,
    pub gain: f64,
    /// Target fringe level as a fraction of the fringe height.
    pub setpoint: f64,
    /// Normalized count error beyond which lock is declared lost.
    pub lock_threshold: f64,
    pub detector_efficiency: f64,
    /// Non-paralyzable dead time of the reference detector, s.
    pub dead_time: f64,
    /// Actuator positions visited by a reacquisition sweep.
    pub scan_steps: usize,
    /// Longest acceptable time from a disturbance to a restored lock, s.
    pub reacquire_timeout: f64,
    /// Mean rate of environmental phase jumps, events/s.
    pub disturbance_rate: f64,
    /// Size of each injected jump, rad.
    pub disturbance_jump: f64,
    /// Polarization of the reference relative to the phase-modulator axis.
    pub polarization: PolarizationMode,
    pub pml_extinction: f64,
}

impl Default for PllConfig {
    fn default() -> Self {
        Self {
            max_fringe_rate: 1.8e5,
            background_rate: 0.0,
            update_interval: 0.01,
            gain: 0.3,
            setpoint: 0.5,
            lock_threshold: 0.4,
            detector_efficiency: 0.15,
            dead_time: 5e-6,
            scan_steps: 64,
            reacquire_timeout: 2.0,
            disturbance_rate: 2.0 / 3600.0,
            disturbance_jump: PI,
            polarization: PolarizationMode::Orthogonal,
            pml_extinction: DEFAULT_PM_EXTINCTION,
        }
    }
}

impl PllConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_fringe_rate", self.max_fringe_rate),
            ("background_rate", self.background_rate),
            ("dead_time", self.dead_time),
            ("disturbance_rate", self.disturbance_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return invalid(format!("pll.{name} must be >= 0, got {v}"));
            }
        }
        if !(self.update_interval > 0.0) {
            return invalid("pll.update_interval must be > 0");
        }
        if !(self.gain > 0.0) {
            return invalid("pll.gain must be > 0");
        }
        // the slope vanishes at the fringe extrema
        if !(self.setpoint > 0.0 && self.setpoint < 1.0) {
            return invalid("pll.setpoint must lie strictly between 0 and 1");
        }
        if !(self.lock_threshold > 0.0) {
            return invalid("pll.lock_threshold must be > 0");
        }
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return invalid("pll.detector_efficiency must be in (0, 1]");
        }
        if self.scan_steps < 8 {
            return invalid("pll.scan_steps must be at least 8");
        }
        if !(self.reacquire_timeout > 0.0) {
            return invalid("pll.reacquire_timeout must be > 0");
        }
        if !(0.0..=1.0).contains(&self.pml_extinction) {
            return invalid("pll.pml_extinction must be in [0, 1]");
        }
        Ok(())
    }
}

fn raw_rate(pair_phase: f64, config: &PllConfig) -> f64 {
    let c = (pair_phase / 2.0).cos();
    config.max_fringe_rate * c * c + config.background_rate
}

fn dead_time_corrected(rate: f64, config: &PllConfig) -> f64 {
    rate / (1.0 + rate * config.dead_time)
}

/// Observed reference count rate at the given interferometer phase.
pub fn fringe_rate(pair_phase: f64, config: &PllConfig) -> f64 {
    dead_time_corrected(raw_rate(pair_phase, config), config)
}

/// Observed rate while the phase modulator is driven with random {0, π}
/// symbols. The symbol rate is far above the detector bandwidth, so the
/// detector sees the symbol-averaged intensity.
pub fn modulated_fringe_rate(pair_phase: f64, config: &PllConfig, modulator_on: bool) -> f64 {
    if !modulator_on {
        return fringe_rate(pair_phase, config);
    }
    let shift = pml_phase(PI, config.polarization, config.pml_extinction);
    let mean = 0.5 * (raw_rate(pair_phase, config) + raw_rate(pair_phase + shift, config));
    dead_time_corrected(mean, config)
}

/// Interferometer phase at which the fringe sits at the setpoint level on
/// its falling slope.
pub fn setpoint_phase(config: &PllConfig) -> f64 {
    2.0 * config.setpoint.sqrt().acos()
}

/// Counts per update interval the controller expects when locked.
pub fn expected_setpoint_counts(config: &PllConfig) -> f64 {
    fringe_rate(setpoint_phase(config), config) * config.update_interval
}

/// Sign of the fringe slope at the setpoint. The setpoint lies on the
/// falling edge, so this is always −1.
fn slope_sign(config: &PllConfig) -> f64 {
    -setpoint_phase(config).sin().signum()
}

#[derive(Clone, Debug, PartialEq)]
pub enum LoopMode {
    Tracking,
    Scanning { step: usize, sum_re: f64, sum_im: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PllState {
    pub actuator_phase: f64,
    pub locked: bool,
    pub last_error: f64,
    pub lock_loss_count: u64,
    pub mode: LoopMode,
}

impl PllState {
    pub fn locked_at(actuator_phase: f64) -> Self {
        Self {
            actuator_phase: wrap_phase(actuator_phase),
            locked: true,
            last_error: 0.0,
            lock_loss_count: 0,
            mode: LoopMode::Tracking,
        }
    }

    pub fn is_scanning(&self) -> bool {
        matches!(self.mode, LoopMode::Scanning { .. })
    }

    /// Feeds the counts observed during the last interval (taken at the
    /// current actuator position) and updates the actuator.
    pub fn step(&mut self, observed_counts: u64, config: &PllConfig) {
        let counts = observed_counts as f64;
        match self.mode {
            LoopMode::Tracking => {
                let expected = expected_setpoint_counts(config);
                let error = (counts - expected) / expected;
                self.last_error = error;
                if error.abs() > config.lock_threshold {
                    self.locked = false;
                    self.lock_loss_count += 1;
                    self.mode = LoopMode::Scanning {
                        step: 0,
                        sum_re: 0.0,
                        sum_im: 0.0,
                    };
                    return;
                }
                self.actuator_phase =
                    wrap_phase(self.actuator_phase - config.gain * error * slope_sign(config));
            }
            LoopMode::Scanning {
                step,
                sum_re,
                sum_im,
            } => {
                let sum_re = sum_re + counts * self.actuator_phase.cos();
                let sum_im = sum_im + counts * self.actuator_phase.sin();
                let step = step + 1;
                if step >= config.scan_steps {
                    // fundamental of the swept fringe peaks where the actuator
                    // cancels the fiber phase
                    let peak = sum_im.atan2(sum_re);
                    self.actuator_phase = wrap_phase(peak + setpoint_phase(config));
                    self.locked = true;
                    self.last_error = 0.0;
                    self.mode = LoopMode::Tracking;
                } else {
                    self.actuator_phase =
                        wrap_phase(self.actuator_phase + 2.0 * PI / config.scan_steps as f64);
                    self.mode = LoopMode::Scanning {
                        step,
                        sum_re,
                        sum_im,
                    };
                }
            }
        }
    }
}

/// Mean of sin²(δ/2) over a residual phase trace.
pub fn residual_qber_contribution(residual_phase_trace: &[f64]) -> Result<f64> {
    if residual_phase_trace.is_empty() {
        return invalid("residual phase trace is empty");
    }
    let sum: f64 = residual_phase_trace
        .iter()
        .map(|d| (d / 2.0).sin().powi(2))
        .sum();
    Ok(sum / residual_phase_trace.len() as f64)
}

/// Linearized steady state of one closed loop under random-walk drift and
/// shot noise on the reference counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryStats {
    /// Offset of the actual lock point from the nominal setpoint phase, rad.
    pub lock_bias: f64,
    /// Fraction of a residual corrected per update.
    pub loop_gain: f64,
    /// Variance of the loop residual around the lock point, rad².
    pub residual_variance: f64,
}

impl StationaryStats {
    /// Mean sin²(δ/2) of the quantum-channel residual when the pulses also
    /// carry a static phase offset.
    pub fn mean_phase_error(&self, static_offset: f64) -> f64 {
        let b = self.lock_bias + static_offset;
        0.5 * (1.0 - b.cos() * (-self.residual_variance / 2.0).exp())
    }
}

/// `pair_drift_rate` is the variance rate of the phase difference of the
/// two cores, i.e. twice the per-core rate.
pub fn stationary_stats(config: &PllConfig, pair_drift_rate: f64) -> StationaryStats {
    let target = fringe_rate(setpoint_phase(config), config);
    let level = |theta: f64| modulated_fringe_rate(theta, config, true) - target;

    // falling edge: level decreases with phase on (set - 1, set + 1)
    let set = setpoint_phase(config);
    let (mut lo, mut hi) = (set - 1.0, set + 1.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if level(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lock = 0.5 * (lo + hi);
    let h = 1e-6;
    let ln_rate = |t: f64| modulated_fringe_rate(t, config, true).ln();
    let log_slope = ((ln_rate(lock + h) - ln_rate(lock - h)) / (2.0 * h)).abs();
    let loop_gain = config.gain * log_slope;
    let counts = target * config.update_interval;
    let decay = 1.0 - loop_gain;
    // drift accrues before the correction that partly cancels it
    let per_step = config.gain * config.gain / counts + decay * decay * pair_drift_rate * config.update_interval;
    StationaryStats {
        lock_bias: lock - set,
        loop_gain,
        residual_variance: per_step / (1.0 - decay * decay),
    }
}

/// One receiver interferometer with its stabilization loop.
#[derive(Clone, Debug)]
pub struct PairLoop {
    pub pair: InterferometerPair,
    pub pll: PllState,
}

impl PairLoop {
    /// Loop locked at the setpoint for the current channel phase.
    pub fn locked(pair: InterferometerPair, channel: &ChannelState, config: &PllConfig) -> Self {
        let actuator = setpoint_phase(config) - channel.pair_phase(&pair);
        Self {
            pair,
            pll: PllState::locked_at(actuator),
        }
    }

    /// Reference phase seen by the fringe detector.
    pub fn fringe_phase(&self, channel: &ChannelState) -> f64 {
        channel.pair_phase(&self.pair) + self.pll.actuator_phase
    }

    /// Deviation of the interferometer from its nominal setpoint, wrapped.
    /// Zero means the quantum outputs interfere perfectly.
    pub fn residual(&self, channel: &ChannelState, config: &PllConfig) -> f64 {
        wrap_phase(self.fringe_phase(channel) - setpoint_phase(config))
    }

    /// Counts one update interval of reference photons and runs the
    /// controller; returns the counts.
    pub fn update<R: Rng + ?Sized>(&mut self, channel: &ChannelState, config: &PllConfig, rng: &mut R) -> u64 {
        let mean = modulated_fringe_rate(self.fringe_phase(channel), config, true) * config.update_interval;
        let counts = sample_poisson(mean, rng);
        self.pll.step(counts, config);
        counts
    }
}

/// One bin of a stabilization-channel count record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FringeSample {
    pub time_s: f64,
    pub modulator_on: bool,
    pub phase_rad: f64,
    pub counts: u64,
}

/// Counts of the free-running stabilization channel while the interferometer
/// phase ramps at `ramp_rate` rad/s. The modulator is driven for the first
/// half of `duration` and idle for the second.
pub fn fringe_trace<R: Rng + ?Sized>(
    config: &PllConfig,
    duration: f64,
    ramp_rate: f64,
    bin: f64,
    rng: &mut R,
) -> Result<Vec<FringeSample>> {
    if !(duration > 0.0 && bin > 0.0 && bin <= duration) {
        return invalid("fringe trace needs 0 < bin <= duration");
    }
    let bins = (duration / bin).round() as usize;
    Ok((0..bins)
        .map(|i| {
            let t = (i as f64 + 0.5) * bin;
            let on = 2 * i < bins;
            let phase = ramp_rate * t;
            let mean = modulated_fringe_rate(phase, config, on) * bin;
            FringeSample {
                time_s: t,
                modulator_on: on,
                phase_rad: wrap_phase(phase),
                counts: sample_poisson(mean, rng),
            }
        })
        .collect())
}

/// Visibility `(max - min) / (max + min)` of the phase-binned mean counts
/// of the samples with the given modulator state.
pub fn fringe_visibility(samples: &[FringeSample], modulator_on: bool, phase_bins: usize) -> Result<f64> {
    if phase_bins < 2 {
        return invalid("need at least two phase bins");
    }
    let mut sum = vec![0.0; phase_bins];
    let mut n = vec![0usize; phase_bins];
    for s in samples.iter().filter(|s| s.modulator_on == modulator_on) {
        let x = (s.phase_rad + PI) / (2.0 * PI);
        let b = ((x * phase_bins as f64) as usize).min(phase_bins - 1);
        sum[b] += s.counts as f64;
        n[b] += 1;
    }
    let means: Vec<f64> = sum.iter().zip(&n).filter(|(_, &k)| k > 0).map(|(s, &k)| s / k as f64).collect();
    if means.len() < 2 {
        return invalid("too few samples to resolve the fringe");
    }
    let max = means.iter().cloned().fold(f64::MIN, f64::max);
    let min = means.iter().cloned().fold(f64::MAX, f64::min);
    if max + min == 0.0 {
        return Ok(0.0);
    }
    Ok((max - min) / (max + min))
}

pub(crate) fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}
