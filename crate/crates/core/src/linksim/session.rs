//! Event-level Monte Carlo of a QKD session.
//!
//! Basis and intensity choices are biased, so they come from the seeded
//! ChaCha stream. The state index within a basis is read from the PRBS
//! (two bits per pulse for d = 4, one for d = 2), as in the transmitter.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::analytic::PhaseStatistics;
use super::link::StabilizedLink;
use super::prbs::Prbs;
use super::tally::Tally;
use super::{Intensity, LinkConfig};
use crate::channel::{crosstalk_leak_probability, transmittance};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::states::{detection_distribution, state_vector, Basis, Dimension, PhaseError};

/// One controller update of one interferometer loop.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PllTelemetry {
    pub time_s: f64,
    pub pair: String,
    pub residual_rad: f64,
    pub locked: bool,
    pub counts: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionOutput {
    pub seed: u64,
    pub tally: Tally,
    pub telemetry: Vec<PllTelemetry>,
    /// Pulse-weighted phase error the quantum signal actually experienced.
    pub phase: PhaseStatistics,
}

impl SessionOutput {
    pub fn write_telemetry_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.telemetry {
            w.serialize(row)
                .map_err(std::io::Error::other)?;
        }
        w.flush()?;
        Ok(())
    }
}

const MAX_PHOTONS: usize = 40;

fn poisson_cdf(mu: f64) -> [f64; MAX_PHOTONS] {
    let mut cdf = [1.0; MAX_PHOTONS];
    let mut term = (-mu).exp();
    let mut acc = 0.0;
    for (n, c) in cdf.iter_mut().enumerate().take(MAX_PHOTONS - 1) {
        acc += term;
        *c = acc;
        term *= mu / (n + 1) as f64;
    }
    cdf
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cumulative detector distributions indexed by
/// `[alice basis][state index][bob basis]`.
type RoutingTable = [[[[f64; 4]; 2]; 4]; 2];

fn routing_table(err: &PhaseError) -> RoutingTable {
    let mut t = [[[[0.0; 4]; 2]; 4]; 2];
    for a in Basis::BOTH {
        for (idx, row) in t[a.slot()].iter_mut().enumerate() {
            let state = state_vector(a, idx).expect("index in range");
            for b in Basis::BOTH {
                let p = detection_distribution(&state, b, err);
                let mut acc = 0.0;
                for j in 0..4 {
                    acc += p[j];
                    row[b.slot()][j] = acc;
                }
            }
        }
    }
    t
}

fn mean_sin2(err: &PhaseError, basis: Basis, dimension: Dimension) -> f64 {
    let d = err.for_basis(basis);
    let s = |x: f64| (x / 2.0).sin().powi(2);
    match dimension {
        Dimension::Four => 0.5 * (s(d[0]) + s(d[1])),
        Dimension::Two => s(d[0]),
    }
}

/// Simulates `pulses` consecutive pulse slots.
pub fn run_pulses(config: &LinkConfig, pulses: u64, seed: u64) -> Result<SessionOutput> {
    config.validate()?;
    if pulses == 0 {
        return invalid("a session needs at least one pulse");
    }
    let src = &config.source;
    let used = config.detectors_used();
    let eta = transmittance(&config.channel) * config.detectors.efficiency;
    let crosstalk = crosstalk_leak_probability(&config.channel);
    let p_det = config.detectors.noise_probability_per_detector(src.rep_rate);
    let noise_any = 1.0 - (1.0 - p_det).powi(used as i32);
    let switch_error = config.effective_switch_error();
    let cdf = [poisson_cdf(src.mu1), poisson_cdf(src.mu2)];
    let index_bits = match config.dimension {
        Dimension::Four => 2,
        Dimension::Two => 1,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut link = StabilizedLink::new(config, splitmix64(seed));
    let prbs_seed = (splitmix64(seed ^ 0x5052_4253) as u32) | 1;
    let mut prbs = Prbs::new(src.prbs_order, prbs_seed)?;

    let per_tick = ((config.pll.update_interval * src.rep_rate).round() as u64).max(1);
    let mut tally = Tally::new();
    let mut telemetry = Vec::new();
    let mut phase_sum = [0.0; 2];
    let mut done = 0u64;

    while done < pulses {
        let block = per_tick.min(pulses - done);
        let err = link.quantum_phase_error();
        let table = routing_table(&err);
        for b in Basis::BOTH {
            phase_sum[b.slot()] += block as f64 * mean_sin2(&err, b, config.dimension);
        }

        for _ in 0..block {
            let alice = if rng.random::<f64>() < src.p_z_alice { Basis::Z } else { Basis::X };
            let k = if rng.random::<f64>() < src.p_mu1 {
                Intensity::Signal
            } else {
                Intensity::Decoy
            };
            let bob = if rng.random::<f64>() < src.p_z_bob { Basis::Z } else { Basis::X };
            let idx = prbs.next_bits(index_bits) as usize;

            let u: f64 = rng.random();
            let photons = cdf[k.slot()].iter().position(|&c| u < c).unwrap_or(MAX_PHOTONS - 1);

            let mut clicks = 0u8;
            if photons > 0 {
                let flip = switch_error > 0.0 && rng.random::<f64>() < switch_error;
                let route = &table[alice.slot()][idx][bob.slot()];
                for _ in 0..photons {
                    if rng.random::<f64>() >= eta {
                        continue;
                    }
                    let det = if crosstalk > 0.0 && rng.random::<f64>() < crosstalk {
                        rng.random_range(0..used)
                    } else {
                        let v: f64 = rng.random();
                        route.iter().position(|&c| v < c).unwrap_or(3)
                    };
                    if det >= used {
                        continue;
                    }
                    clicks |= 1 << (det ^ flip as usize);
                }
            }
            if rng.random::<f64>() < noise_any {
                clicks |= 1 << rng.random_range(0..used);
            }

            let cell = tally.cell_mut(alice, k);
            cell.n_sent += 1;
            match clicks.count_ones() {
                0 => {}
                1 if alice == bob => {
                    cell.n_detected += 1;
                    if clicks.trailing_zeros() as usize != idx {
                        cell.m_errors += 1;
                    }
                    cell.detected_by_photons[photons.min(2)] += 1;
                }
                1 => cell.n_unsifted += 1,
                _ => tally.double_clicks += 1,
            }
        }
        done += block;

        link.tick()?;
        let residuals = link.residuals();
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

    tally.elapsed = pulses as f64 / src.rep_rate;
    let n = pulses as f64;
    Ok(SessionOutput {
        seed,
        tally,
        telemetry,
        phase: PhaseStatistics {
            mean_sin2: [phase_sum[0] / n, phase_sum[1] / n],
        },
    })
}

/// Simulates `duration` seconds of pulses.
pub fn run_session(config: &LinkConfig, duration: f64, seed: u64) -> Result<SessionOutput> {
    if !(duration > 0.0 && duration.is_finite()) {
        return invalid(format!("session duration must be positive, got {duration}"));
    }
    let pulses = (duration * config.source.rep_rate).round().max(1.0) as u64;
    run_pulses(config, pulses, seed)
}

/// Independent sessions, one per seed, returned in seed order.
pub fn run_sessions(
    config: &LinkConfig,
    pulses: u64,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<SessionOutput>> {
    exec.map(seeds, |&s| run_pulses(config, pulses, s))
        .into_iter()
        .collect()
}
