//! Finite-key secret key length with one decoy intensity.
//!
//! Observed counts are turned into confidence intervals with Hoeffding's
//! inequality, the vacuum and single-photon contributions of the Z basis are
//! bounded from the two intensities, and the single-photon phase error is
//! extrapolated from the X basis with a random-sampling correction.

mod optimize;
mod pipeline;

pub use optimize::{evaluate_point, optimize_params, Optimum, SearchBounds};
pub use pipeline::{
    block_counts_from_rates, key_rate_from_rates, key_rate_from_tally, key_rate_with_measured_qber, BlockCounts,
};

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::states::Dimension;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QberMode {
    /// Detection-weighted mean of the two Z intensities.
    #[default]
    DetectionWeighted,
    /// The larger of the two Z QBERs.
    WorstCase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecurityParams {
    /// Sifted Z detections per privacy-amplification block.
    pub n_z_block: f64,
    pub eps_sec: f64,
    pub eps_cor: f64,
    /// Error-correction leakage relative to the Shannon limit.
    pub f_ec: f64,
    pub d: Dimension,
    pub qber_mode: QberMode,
    /// Drops all statistical fluctuation terms.
    pub asymptotic: bool,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            n_z_block: 1e9,
            eps_sec: 1e-15,
            eps_cor: 1e-15,
            f_ec: 1.15,
            d: Dimension::Four,
            qber_mode: QberMode::DetectionWeighted,
            asymptotic: false,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        for (name, e) in [("eps_sec", self.eps_sec), ("eps_cor", self.eps_cor)] {
            if !(e > 0.0 && e < 1.0) {
                return invalid(format!("security.{name} must be in (0, 1), got {e}"));
            }
        }
        if !(self.n_z_block >= 1e4 && self.n_z_block.is_finite()) {
            return invalid(format!("security.n_z_block must be >= 1e4, got {}", self.n_z_block));
        }
        if !(self.f_ec >= 1.0 && self.f_ec.is_finite()) {
            return invalid(format!("security.f_ec must be >= 1, got {}", self.f_ec));
        }
        Ok(())
    }

    /// Bits spent on the security parameters alone.
    pub fn epsilon_cost(&self) -> f64 {
        6.0 * (19.0 / self.eps_sec).log2() + (2.0 / self.eps_cor).log2()
    }
}

/// Probability that a pulse of the two-intensity mixture carries `n` photons.
pub fn tau_n(n: u32, mu1: f64, mu2: f64, p_mu1: f64) -> f64 {
    let log_fact: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
    [(mu1, p_mu1), (mu2, 1.0 - p_mu1)]
        .iter()
        .map(|&(k, p)| {
            if k == 0.0 {
                if n == 0 {
                    p
                } else {
                    0.0
                }
            } else {
                p * (-k + n as f64 * k.ln() - log_fact).exp()
            }
        })
        .sum()
}

/// High-dimensional entropy `H_d(x)`, bits. Defined on `[0, 1 - 1/d]`.
pub fn entropy_hd(x: f64, d: Dimension) -> Result<f64> {
    let dd = d.value() as f64;
    let top = 1.0 - 1.0 / dd;
    if !(0.0..=top + 1e-12).contains(&x) {
        return invalid(format!("entropy argument {x} outside [0, {top}]"));
    }
    let x = x.min(top);
    let a = if x > 0.0 { -x * (x / (dd - 1.0)).log2() } else { 0.0 };
    let b = if x < 1.0 { -(1.0 - x) * (1.0 - x).log2() } else { 0.0 };
    Ok(a + b)
}

/// Hoeffding half-width for `n_total` trials at failure probability
/// `eps_sec / 19`.
pub fn hoeffding_deviation(n_total: f64, eps_sec: f64) -> f64 {
    (n_total / 2.0 * (19.0 / eps_sec).ln()).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaledCounts {
    pub lower: f64,
    pub upper: f64,
}

/// Counts of one intensity rescaled to the full mixture, with their
/// finite-size interval.
pub fn finite_size_counts(n_observed: f64, k: f64, p_k: f64, n_total: f64, params: &SecurityParams) -> ScaledCounts {
    let dev = if params.asymptotic {
        0.0
    } else {
        hoeffding_deviation(n_total, params.eps_sec)
    };
    let scale = k.exp() / p_k;
    ScaledCounts {
        lower: (scale * (n_observed - dev)).max(0.0),
        upper: scale * (n_observed + dev),
    }
}

/// Fluctuation correction for estimating the single-photon error rate of
/// one basis from a sample taken in the other.
pub fn gamma(eps: f64, lambda: f64, c: f64, d: f64) -> f64 {
    if !(lambda > 0.0 && lambda < 1.0 && c > 0.0 && d > 0.0) {
        return 0.0;
    }
    let v = (1.0 - lambda) * lambda;
    let arg = (c + d) / (c * d * v) * (19.0 * 19.0) / (eps * eps);
    ((c + d) * v / (c * d * LN_2) * arg.log2()).max(0.0).sqrt()
}

/// Detections and errors per intensity in one basis, ordered mu1, mu2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BasisCounts {
    pub detections: [f64; 2],
    pub errors: [f64; 2],
}

impl BasisCounts {
    pub fn total_detections(&self) -> f64 {
        self.detections.iter().sum()
    }

    pub fn total_errors(&self) -> f64 {
        self.errors.iter().sum()
    }

    pub fn qber(&self, mode: QberMode) -> f64 {
        match mode {
            QberMode::DetectionWeighted => {
                let n = self.total_detections();
                if n > 0.0 {
                    self.total_errors() / n
                } else {
                    0.0
                }
            }
            QberMode::WorstCase => (0..2)
                .map(|i| {
                    if self.detections[i] > 0.0 {
                        self.errors[i] / self.detections[i]
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max),
        }
    }
}

/// Vacuum and single-photon bounds of one basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhotonBounds {
    pub vacuum_lower: f64,
    pub vacuum_upper: f64,
    pub single_lower: f64,
    /// Upper bound on single-photon errors.
    pub single_errors_upper: f64,
    /// Some bound had to be clamped at zero.
    pub clamped: bool,
}

/// Decoy intensities and their mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecoySource {
    pub mu1: f64,
    pub mu2: f64,
    pub p_mu1: f64,
}

impl DecoySource {
    fn validate(&self) -> Result<()> {
        if !(self.mu2 > 0.0 && self.mu1 > self.mu2) {
            return invalid(format!("decoy bounds need mu1 > mu2 > 0, got {} and {}", self.mu1, self.mu2));
        }
        if !(self.p_mu1 > 0.0 && self.p_mu1 < 1.0) {
            return invalid("p_mu1 must be in (0, 1)");
        }
        Ok(())
    }
}

pub fn photon_bounds(counts: &BasisCounts, src: &DecoySource, params: &SecurityParams) -> Result<PhotonBounds> {
    src.validate()?;
    let (m1, m2) = (src.mu1, src.mu2);
    let p = [src.p_mu1, 1.0 - src.p_mu1];
    let n_tot = counts.total_detections();
    let m_tot = counts.total_errors();
    let n1 = finite_size_counts(counts.detections[0], m1, p[0], n_tot, params);
    let n2 = finite_size_counts(counts.detections[1], m2, p[1], n_tot, params);
    let e1 = finite_size_counts(counts.errors[0], m1, p[0], m_tot, params);
    let e2 = finite_size_counts(counts.errors[1], m2, p[1], m_tot, params);
    let t0 = tau_n(0, m1, m2, src.p_mu1);
    let t1 = tau_n(1, m1, m2, src.p_mu1);

    // vacuum detections are wrong at least half of the time
    let vacuum_upper = 2.0 * t0 * e2.upper;
    let raw_vacuum = t0 * (m1 * n2.lower - m2 * n1.upper) / (m1 - m2);
    let raw_single = t1 * m1 * (n2.lower - (m2 * m2 / (m1 * m1)) * n1.upper - ((m1 * m1 - m2 * m2) / (m1 * m1)) * vacuum_upper / t0)
        / (m2 * (m1 - m2));
    let raw_errors = t1 * (e1.upper - e2.lower) / (m1 - m2);
    Ok(PhotonBounds {
        vacuum_lower: raw_vacuum.max(0.0),
        vacuum_upper,
        single_lower: raw_single.max(0.0),
        single_errors_upper: raw_errors.max(0.0),
        clamped: raw_vacuum < 0.0 || raw_single < 0.0 || raw_errors < 0.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecoyBounds {
    /// Lower bound on vacuum events in the Z basis.
    pub d0_z: f64,
    /// Lower bound on single-photon events in the Z basis.
    pub d1_z: f64,
    /// Upper bound on the single-photon phase error.
    pub phi_z: f64,
    pub tau0: f64,
    pub tau1: f64,
    /// Lower bound on single-photon events in the X basis.
    pub s1_x: f64,
    /// Upper bound on single-photon errors in the X basis.
    pub v1_x: f64,
    pub clamped: bool,
}

pub fn decoy_bounds(z: &BasisCounts, x: &BasisCounts, src: &DecoySource, params: &SecurityParams) -> Result<DecoyBounds> {
    params.validate()?;
    let bz = photon_bounds(z, src, params)?;
    let bx = photon_bounds(x, src, params)?;
    let top = 1.0 - 1.0 / params.d.value() as f64;
    let (phi, phi_clamped) = if bx.single_lower > 0.0 {
        let ratio = bx.single_errors_upper / bx.single_lower;
        let correction = if params.asymptotic {
            0.0
        } else {
            gamma(params.eps_sec, ratio, bz.single_lower, bx.single_lower)
        };
        let phi = ratio + correction;
        (phi.min(top), phi > top)
    } else {
        (top, true)
    };
    Ok(DecoyBounds {
        d0_z: bz.vacuum_lower,
        d1_z: bz.single_lower,
        phi_z: phi,
        tau0: tau_n(0, src.mu1, src.mu2, src.p_mu1),
        tau1: tau_n(1, src.mu1, src.mu2, src.p_mu1),
        s1_x: bx.single_lower,
        v1_x: bx.single_errors_upper,
        clamped: bz.clamped || bx.clamped || phi_clamped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeyRateResult {
    /// Secret bits per block.
    pub ell: f64,
    /// Secret key rate, bit/s.
    pub r_sk: f64,
    pub lambda_ec: f64,
    pub block_time: f64,
    pub qber_z: f64,
    pub bounds: DecoyBounds,
}

/// `n_z` is the number of sifted Z detections in the block, which take
/// `block_time` seconds to collect.
pub fn secret_key_length(
    bounds: &DecoyBounds,
    qber_z: f64,
    n_z: f64,
    params: &SecurityParams,
    block_time: f64,
) -> Result<KeyRateResult> {
    let top = 1.0 - 1.0 / params.d.value() as f64;
    if !(0.0..=top).contains(&qber_z) {
        return invalid(format!("QBER {qber_z} outside [0, {top}]"));
    }
    if !(block_time > 0.0) {
        return invalid("block time must be positive");
    }
    let bits = params.d.bits();
    let lambda_ec = params.f_ec * n_z * entropy_hd(qber_z, params.d)?;
    let phase_entropy = entropy_hd(bounds.phi_z.clamp(0.0, top), params.d)?;
    let ell = bits * bounds.d0_z + bounds.d1_z * (bits - phase_entropy) - lambda_ec - params.epsilon_cost();
    let ell = ell.max(0.0);
    Ok(KeyRateResult {
        ell,
        r_sk: ell / block_time,
        lambda_ec,
        block_time,
        qber_z,
        bounds: *bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn tau_values() {
        assert_relative_eq!(
            tau_n(0, 0.19, 0.15, 0.62),
            0.62 * (-0.19f64).exp() + 0.38 * (-0.15f64).exp(),
            max_relative = 1e-14
        );
        assert_abs_diff_eq!(tau_n(0, 0.19, 0.15, 0.62), 0.839784, epsilon = 1e-6);
        assert_eq!(tau_n(0, 0.0, 0.1, 1.0), 1.0);
        assert_eq!(tau_n(3, 0.0, 0.1, 1.0), 0.0);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_hd(0.0, Dimension::Four).unwrap(), 0.0);
        assert_eq!(entropy_hd(0.75, Dimension::Four).unwrap(), 2.0);
        assert_eq!(entropy_hd(0.5, Dimension::Two).unwrap(), 1.0);
        assert!(entropy_hd(0.8, Dimension::Four).is_err());
        assert!(entropy_hd(-0.1, Dimension::Two).is_err());
    }

    #[test]
    fn deviation_at_default_block() {
        let dev = hoeffding_deviation(1e9, 1e-15);
        assert_relative_eq!(dev, 1.37e5, max_relative = 5e-3);
    }

    #[test]
    fn finite_counts_clamp_and_asymptote() {
        let p = SecurityParams::default();
        let c = finite_size_counts(0.0, 0.2, 0.5, 1e6, &p);
        assert_eq!(c.lower, 0.0);
        let asym = SecurityParams {
            asymptotic: true,
            ..Default::default()
        };
        let c = finite_size_counts(100.0, 0.2, 0.5, 1e6, &asym);
        assert_relative_eq!(c.lower, 0.2f64.exp() / 0.5 * 100.0);
        assert_eq!(c.lower, c.upper);
    }

    #[test]
    fn epsilon_cost_value() {
        // 6 * 54.076808 + 50.828921
        assert_abs_diff_eq!(SecurityParams::default().epsilon_cost(), 375.2898, epsilon = 1e-3);
    }

    #[test]
    fn maximal_phase_error_leaves_no_key() {
        let b = DecoyBounds {
            d0_z: 0.0,
            d1_z: 1e8,
            phi_z: 0.75,
            tau0: 0.8,
            tau1: 0.15,
            s1_x: 1e6,
            v1_x: 1e6,
            clamped: false,
        };
        let r = secret_key_length(&b, 0.0, 1e9, &SecurityParams::default(), 1.0).unwrap();
        assert_eq!(r.ell, 0.0);
        assert_eq!(r.r_sk, 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let z = BasisCounts {
            detections: [10.0, 10.0],
            errors: [0.0, 0.0],
        };
        let src = DecoySource {
            mu1: 0.1,
            mu2: 0.2,
            p_mu1: 0.5,
        };
        assert!(decoy_bounds(&z, &z, &src, &SecurityParams::default()).is_err());
        let b = decoy_bounds(
            &z,
            &z,
            &DecoySource {
                mu1: 0.2,
                mu2: 0.1,
                p_mu1: 0.5,
            },
            &SecurityParams::default(),
        )
        .unwrap();
        assert!(b.clamped);
        assert!(secret_key_length(&b, 0.8, 1e9, &SecurityParams::default(), 1.0).is_err());
    }
}
