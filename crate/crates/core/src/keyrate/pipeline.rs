use serde::Serialize;

use super::{decoy_bounds, secret_key_length, BasisCounts, DecoySource, KeyRateResult, SecurityParams};
use crate::error::{invalid, Result};
use crate::linksim::{ExpectedRates, Intensity, LinkConfig, SourceConfig, Tally};
use crate::states::Basis;

/// Counts accumulated over one privacy-amplification block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BlockCounts {
    pub z: BasisCounts,
    pub x: BasisCounts,
    pub block_time: f64,
}

impl BlockCounts {
    pub fn basis(&self, b: Basis) -> &BasisCounts {
        match b {
            Basis::Z => &self.z,
            Basis::X => &self.x,
        }
    }

    pub fn from_tally(tally: &Tally) -> Self {
        let counts = |b: Basis| BasisCounts {
            detections: Intensity::BOTH.map(|k| tally.cell(b, k).n_detected as f64),
            errors: Intensity::BOTH.map(|k| tally.cell(b, k).m_errors as f64),
        };
        Self {
            z: counts(Basis::Z),
            x: counts(Basis::X),
            block_time: tally.elapsed,
        }
    }

    pub fn key_rate(&self, src: &DecoySource, params: &SecurityParams) -> Result<KeyRateResult> {
        let bounds = decoy_bounds(&self.z, &self.x, src, params)?;
        secret_key_length(
            &bounds,
            self.z.qber(params.qber_mode),
            self.z.total_detections(),
            params,
            self.block_time,
        )
    }
}

fn decoy_source(src: &SourceConfig) -> DecoySource {
    DecoySource {
        mu1: src.mu1,
        mu2: src.mu2,
        p_mu1: src.p_mu1,
    }
}

/// Expected counts of a block of `n_z_block` sifted Z detections. `qber`
/// replaces the modelled error rates when given, ordered Z/mu1, Z/mu2,
/// X/mu1, X/mu2.
pub fn block_counts_from_rates(rates: &ExpectedRates, qber: Option<[f64; 4]>, params: &SecurityParams) -> BlockCounts {
    let block_time = params.n_z_block / rates.sifted_rate(Basis::Z);
    let counts = |b: Basis| {
        let detections = Intensity::BOTH.map(|k| rates.cell(b, k).sifted_rate * block_time);
        let q = Intensity::BOTH.map(|k| match qber {
            Some(q) => q[2 * b.slot() + k.slot()],
            None => rates.cell(b, k).qber,
        });
        BasisCounts {
            detections,
            errors: [detections[0] * q[0], detections[1] * q[1]],
        }
    };
    BlockCounts {
        z: counts(Basis::Z),
        x: counts(Basis::X),
        block_time,
    }
}

fn check_dimension(link: &LinkConfig, params: &SecurityParams) -> Result<()> {
    if link.dimension != params.d {
        return invalid(format!(
            "link dimension {} differs from security dimension {}",
            link.dimension.value(),
            params.d.value()
        ));
    }
    Ok(())
}

pub fn key_rate_from_rates(link: &LinkConfig, rates: &ExpectedRates, params: &SecurityParams) -> Result<KeyRateResult> {
    check_dimension(link, params)?;
    block_counts_from_rates(rates, None, params).key_rate(&decoy_source(&link.source), params)
}

/// Modelled detection counts combined with measured QBERs.
pub fn key_rate_with_measured_qber(
    link: &LinkConfig,
    rates: &ExpectedRates,
    qber: [f64; 4],
    params: &SecurityParams,
) -> Result<KeyRateResult> {
    check_dimension(link, params)?;
    block_counts_from_rates(rates, Some(qber), params).key_rate(&decoy_source(&link.source), params)
}

/// Treats the whole tally as one block.
pub fn key_rate_from_tally(tally: &Tally, src: &SourceConfig, params: &SecurityParams) -> Result<KeyRateResult> {
    if tally.detected(Basis::Z) == 0 || tally.elapsed <= 0.0 {
        return invalid("tally has no Z detections or no elapsed time");
    }
    BlockCounts::from_tally(tally).key_rate(&decoy_source(src), params)
}
