use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LinkConfig;
use crate::channel::ChannelState;
use crate::error::Result;
use crate::stabilizer::PairLoop;
use crate::states::{Basis, CoreIndex, InterferometerPair, PhaseError};

/// Fiber channel plus the four receiver interferometers and their loops,
/// advanced together one controller interval at a time.
#[derive(Clone, Debug)]
pub struct StabilizedLink {
    pub channel: ChannelState,
    pub loops: [PairLoop; 4],
    /// Reference counts of each loop in the last interval.
    pub last_counts: [u64; 4],
    ticks: u64,
    rng: ChaCha8Rng,
    config: LinkConfig,
}

/// Phase jump applied to one core by the disturbance process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kick {
    pub time: f64,
    pub core: CoreIndex,
}

impl StabilizedLink {
    /// All loops start locked on a fresh channel.
    pub fn new(config: &LinkConfig, seed: u64) -> Self {
        let channel = ChannelState::new();
        let loops = InterferometerPair::all().map(|p| PairLoop::locked(p, &channel, &config.pll));
        Self {
            channel,
            loops,
            last_counts: [0; 4],
            ticks: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            config: config.clone(),
        }
    }

    /// Elapsed time, counted in whole controller intervals.
    pub fn time(&self) -> f64 {
        self.ticks as f64 * self.config.pll.update_interval
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    /// Loop residuals, rad, ordered as [`InterferometerPair::all`].
    pub fn residuals(&self) -> [f64; 4] {
        let pll = &self.config.pll;
        [0, 1, 2, 3].map(|i| self.loops[i].residual(&self.channel, pll))
    }

    /// Phase error seen by the quantum signal on each pair.
    pub fn quantum_phase_error(&self) -> PhaseError {
        let r = self.residuals();
        let m = self.config.source.modulation_phase_error;
        PhaseError::new([r[0] + m, r[1] + m], [r[2] + m, r[3] + m])
    }

    /// Whether every loop serving `basis` is tracking.
    pub fn basis_locked(&self, basis: Basis) -> bool {
        let first = 2 * basis.slot();
        self.loops[first..first + 2].iter().all(|l| l.pll.locked)
    }

    pub fn lock_losses(&self) -> u64 {
        self.loops.iter().map(|l| l.pll.lock_loss_count).sum()
    }

    /// Applies a phase step to one core.
    pub fn inject(&mut self, core: CoreIndex, jump: f64) {
        self.channel.kick(core, jump);
    }

    /// Advances one controller interval: drift, an optional random
    /// disturbance, then one update of every loop.
    pub fn tick(&mut self) -> Result<Option<Kick>> {
        let pll = &self.config.pll;
        let dt = pll.update_interval;
        self.channel
            .advance(dt, self.config.channel.drift_rate, &mut self.rng)?;
        self.ticks += 1;
        let mut kick = None;
        if pll.disturbance_rate > 0.0 {
            let p = 1.0 - (-pll.disturbance_rate * dt).exp();
            if self.rng.random::<f64>() < p {
                let core = CoreIndex::ALL[self.rng.random_range(0..4)];
                self.channel.kick(core, pll.disturbance_jump);
                kick = Some(Kick {
                    time: self.time(),
                    core,
                });
            }
        }
        for (i, l) in self.loops.iter_mut().enumerate() {
            self.last_counts[i] = l.update(&self.channel, pll, &mut self.rng);
        }
        Ok(kick)
    }
}
