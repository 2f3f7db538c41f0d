//! Long continuous runs in a single basis configuration.
//!
//! The receiver loops are simulated at every controller interval. Photon
//! counting inside an interval uses the analytic click probabilities for the
//! phase error of that interval, so an hour of operation costs a few hundred
//! thousand draws instead of 10^12 pulses.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::analytic::single_configuration;
use super::link::StabilizedLink;
use super::session::PllTelemetry;
use super::LinkConfig;
use crate::error::{invalid, Result};
use crate::stabilizer::sample_poisson;
use crate::states::{Basis, CoreIndex, Dimension};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    pub duration: f64,
    /// Width of one output window, s.
    pub window: f64,
    /// Mean photon number of every pulse.
    pub intensity: f64,
    pub basis: Basis,
    /// Relative growth of the phase-error contribution per hour, for slow
    /// polarization drift.
    pub degradation_per_hour: f64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            duration: 3600.0,
            window: 1.0,
            intensity: 0.24,
            basis: Basis::X,
            degradation_per_hour: 0.0,
        }
    }
}

impl StabilityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= 60.0 && self.duration.is_finite()) {
            return invalid(format!("stability duration must be >= 60 s, got {}", self.duration));
        }
        if !(self.window > 0.0 && self.window <= self.duration) {
            return invalid("stability.window must be in (0, duration]");
        }
        if !(self.intensity > 0.0 && self.intensity.is_finite()) {
            return invalid("stability.intensity must be > 0");
        }
        if !(self.degradation_per_hour >= 0.0 && self.degradation_per_hour.is_finite()) {
            return invalid("stability.degradation_per_hour must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityWindow {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub detections: u64,
    pub qber: f64,
    /// QBER from the phase error alone.
    pub phase_qber: f64,
    /// QBER from switch errors alone.
    pub switch_qber: f64,
    /// A loop of the measured basis was unlocked at some point in the window.
    pub lock_lost: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceEvent {
    pub time: f64,
    pub core: CoreIndex,
    /// When the measured basis was locked again within 0.1 rad.
    pub recovered_at: Option<f64>,
}

impl DisturbanceEvent {
    pub fn recovery_time(&self) -> Option<f64> {
        self.recovered_at.map(|t| t - self.time)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityTrace {
    pub windows: Vec<StabilityWindow>,
    pub disturbances: Vec<DisturbanceEvent>,
    /// Lock losses of the loops serving the measured basis.
    pub lock_losses: u64,
    pub mean_qber: f64,
    pub mean_phase_qber: f64,
    pub mean_switch_qber: f64,
    /// Per-interval loop records, only kept on request.
    pub telemetry: Vec<PllTelemetry>,
}

impl StabilityTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.windows {
            w.serialize(row).map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whether every disturbance recovered within `timeout` seconds.
    pub fn all_recovered_within(&self, timeout: f64) -> bool {
        self.disturbances
            .iter()
            .all(|d| d.recovery_time().is_some_and(|t| t <= timeout))
    }
}

const RECOVERED_RESIDUAL: f64 = 0.1;

fn binomial<R: rand::Rng>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    Binomial::new(n, p.min(1.0)).expect("valid binomial").sample(rng)
}

pub fn stability_trace(config: &LinkConfig, stab: &StabilityConfig, seed: u64) -> Result<StabilityTrace> {
    run(config, stab, seed, false)
}

/// As [`stability_trace`], also keeping every loop update.
pub fn stability_trace_with_telemetry(config: &LinkConfig, stab: &StabilityConfig, seed: u64) -> Result<StabilityTrace> {
    run(config, stab, seed, true)
}

fn run(config: &LinkConfig, stab: &StabilityConfig, seed: u64, record: bool) -> Result<StabilityTrace> {
    config.validate()?;
    stab.validate()?;
    let dt = config.pll.update_interval;
    let ticks = (stab.duration / dt).round() as u64;
    let per_window = ((stab.window / dt).round() as u64).max(1);
    let pairs: &[usize] = match config.dimension {
        Dimension::Four => &[0, 1],
        Dimension::Two => &[0],
    };
    let first_loop = 2 * stab.basis.slot();
    let pulses_per_pair = config.source.rep_rate * dt / pairs.len() as f64;
    let switch_error = config.effective_switch_error();
    let modulation = config.source.modulation_phase_error;

    let mut link = StabilizedLink::new(config, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.rotate_left(17) ^ 0x5AB1_E5EE_D000_0001);
    let mut windows = Vec::new();
    let mut disturbances: Vec<DisturbanceEvent> = Vec::new();
    let losses_before = |link: &StabilizedLink| -> u64 {
        pairs.iter().map(|&p| link.loops[first_loop + p].pll.lock_loss_count).sum()
    };
    let initial_losses = losses_before(&link);

    let (mut tot_n, mut tot_e, mut tot_p, mut tot_s) = (0u64, 0u64, 0u64, 0u64);
    let (mut n, mut e, mut ph, mut sw) = (0u64, 0u64, 0u64, 0u64);
    let mut window_start = 0.0;
    let mut lock_lost = false;
    let mut telemetry = Vec::new();

    for tick in 1..=ticks {
        if let Some(kick) = link.tick()? {
            disturbances.push(DisturbanceEvent {
                time: kick.time,
                core: kick.core,
                recovered_at: None,
            });
        }
        let residuals = link.residuals();
        if record {
            for (i, l) in link.loops.iter().enumerate() {
                telemetry.push(PllTelemetry {
                    time_s: link.time(),
                    pair: l.pair.label(),
                    residual_rad: residuals[i],
                    locked: l.pll.locked,
                    counts: link.last_counts[i],
                });
            }
        }
        let locked = pairs.iter().all(|&p| link.loops[first_loop + p].pll.locked);
        lock_lost |= !locked;
        let settled = locked
            && pairs
                .iter()
                .all(|&p| residuals[first_loop + p].abs() < RECOVERED_RESIDUAL);
        if settled {
            for d in disturbances.iter_mut().filter(|d| d.recovered_at.is_none()) {
                if link.time() > d.time {
                    d.recovered_at = Some(link.time());
                }
            }
        }

        let degradation = 1.0 + stab.degradation_per_hour * link.time() / 3600.0;
        for &p in pairs {
            let delta = residuals[first_loop + p] + modulation;
            let phase_error = ((delta / 2.0).sin().powi(2) * degradation).min(1.0);
            let (det, qber) = single_configuration(config, stab.intensity, phase_error)?;
            let detections = sample_poisson(pulses_per_pair * det, &mut rng);
            n += detections;
            e += binomial(detections, qber, &mut rng);
            ph += binomial(detections, phase_error, &mut rng);
            sw += binomial(detections, switch_error, &mut rng);
        }

        if tick % per_window == 0 || tick == ticks {
            let ratio = |x: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
            windows.push(StabilityWindow {
                t_start_s: window_start,
                t_end_s: link.time(),
                detections: n,
                qber: ratio(e),
                phase_qber: ratio(ph),
                switch_qber: ratio(sw),
                lock_lost,
            });
            tot_n += n;
            tot_e += e;
            tot_p += ph;
            tot_s += sw;
            (n, e, ph, sw) = (0, 0, 0, 0);
            window_start = link.time();
            lock_lost = false;
        }
    }

    let mean = |x: u64| if tot_n == 0 { 0.0 } else { x as f64 / tot_n as f64 };
    Ok(StabilityTrace {
        windows,
        disturbances,
        lock_losses: losses_before(&link) - initial_losses,
        mean_qber: mean(tot_e),
        mean_phase_qber: mean(tot_p),
        mean_switch_qber: mean(tot_s),
        telemetry,
    })
}
