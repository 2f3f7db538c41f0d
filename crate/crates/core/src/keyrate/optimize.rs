use serde::Serialize;

use super::{key_rate_from_rates, KeyRateResult, SecurityParams};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::linksim::{expected_rates, LinkConfig, OperatingPoint, PhaseStatistics};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SearchBounds {
    pub mu1: (f64, f64),
    pub mu2: (f64, f64),
    pub p_mu1: (f64, f64),
    pub p_z: (f64, f64),
    /// Coarse grid points per parameter, in the order above.
    pub grid: [usize; 4],
    /// Refinement stops once every step is below this.
    pub tolerance: f64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            mu1: (0.02, 0.9),
            mu2: (0.01, 0.89),
            p_mu1: (0.5, 0.99),
            p_z: (0.5, 0.99),
            grid: [12, 12, 10, 10],
            tolerance: 1e-4,
        }
    }
}

impl SearchBounds {
    fn ranges(&self) -> [(f64, f64); 4] {
        [self.mu1, self.mu2, self.p_mu1, self.p_z]
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.mu1, self.mu2] {
            if !(lo > 0.0 && lo < hi && hi < 1.0) {
                return invalid(format!("intensity search range ({lo}, {hi}) must lie inside (0, 1)"));
            }
        }
        for (lo, hi) in [self.p_mu1, self.p_z] {
            if !(lo > 0.0 && lo < hi && hi < 1.0) {
                return invalid(format!("probability search range ({lo}, {hi}) must lie inside (0, 1)"));
            }
        }
        if self.grid.iter().any(|&n| n < 2) {
            return invalid("search grid needs at least two points per parameter");
        }
        if !(self.tolerance > 0.0) {
            return invalid("search tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Optimum {
    Key {
        point: OperatingPoint,
        result: KeyRateResult,
        /// Step sizes of the last refinement sweep, none of which improved.
        final_step: [f64; 4],
    },
    /// No setting inside the bounds yields a positive key.
    NoKey,
}

impl Optimum {
    pub fn rate(&self) -> f64 {
        match self {
            Optimum::Key { result, .. } => result.r_sk,
            Optimum::NoKey => 0.0,
        }
    }
}

fn from_array(a: [f64; 4]) -> OperatingPoint {
    OperatingPoint {
        mu1: a[0],
        mu2: a[1],
        p_mu1: a[2],
        p_z: a[3],
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    x: [f64; 4],
    result: Option<KeyRateResult>,
}

impl Candidate {
    fn rate(&self) -> f64 {
        self.result.map_or(0.0, |r| r.r_sk)
    }

    /// Higher rate wins; equal rates go to the lexicographically smaller
    /// parameter tuple so the answer does not depend on evaluation order.
    fn beats(&self, other: &Candidate) -> bool {
        let (a, b) = (self.rate(), other.rate());
        a > b || (a == b && self.x.partial_cmp(&other.x) == Some(std::cmp::Ordering::Less))
    }
}

/// Secret key rate of `link` with its source replaced by `point`, using the
/// stationary phase statistics `phase`.
pub fn evaluate_point(
    link: &LinkConfig,
    params: &SecurityParams,
    phase: PhaseStatistics,
    point: OperatingPoint,
) -> Option<KeyRateResult> {
    if !(point.mu2 > 0.0 && point.mu2 < point.mu1) {
        return None;
    }
    let mut cfg = link.clone();
    cfg.source = cfg.source.with_operating_point(point);
    let rates = expected_rates(&cfg, phase);
    key_rate_from_rates(&cfg, &rates, params)
        .ok()
        .filter(|r| r.r_sk > 0.0)
}

fn best_of(cands: &[Candidate]) -> Candidate {
    let mut best = cands[0];
    for c in &cands[1..] {
        if c.beats(&best) {
            best = *c;
        }
    }
    best
}

/// Coarse grid search followed by a compass-pattern refinement.
pub fn optimize_params(
    link: &LinkConfig,
    params: &SecurityParams,
    bounds: &SearchBounds,
    exec: Execution,
) -> Result<Optimum> {
    link.validate()?;
    params.validate()?;
    bounds.validate()?;
    let phase = PhaseStatistics::stationary(link);
    let ranges = bounds.ranges();
    let axes: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let (lo, hi) = ranges[i];
            let n = bounds.grid[i];
            (0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64).collect()
        })
        .collect();

    let mut grid = Vec::new();
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &d in &axes[3] {
                    grid.push([a, b, c, d]);
                }
            }
        }
    }
    let eval = |x: &[f64; 4]| Candidate {
        x: *x,
        result: evaluate_point(link, params, phase, from_array(*x)),
    };
    let coarse = exec.map(&grid, eval);
    let mut current = best_of(&coarse);
    if current.result.is_none() {
        return Ok(Optimum::NoKey);
    }

    let mut step: [f64; 4] = std::array::from_fn(|i| (ranges[i].1 - ranges[i].0) / (bounds.grid[i] - 1) as f64 / 2.0);
    let last_step = loop {
        let mut moves = Vec::with_capacity(8);
        for i in 0..4 {
            for sign in [1.0, -1.0] {
                let mut x = current.x;
                x[i] = (x[i] + sign * step[i]).clamp(ranges[i].0, ranges[i].1);
                if x != current.x {
                    moves.push(x);
                }
            }
        }
        let tried = exec.map(&moves, eval);
        let best = if tried.is_empty() { current } else { best_of(&tried) };
        if best.beats(&current) {
            current = best;
            continue;
        }
        if step.iter().all(|&s| s < bounds.tolerance) {
            break step;
        }
        step = step.map(|s| s / 2.0);
    };

    Ok(Optimum::Key {
        point: from_array(current.x),
        result: current.result.expect("grid optimum has a key"),
        final_step: last_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beats_breaks_ties_lexicographically() {
        let a = Candidate {
            x: [0.1, 0.05, 0.6, 0.9],
            result: None,
        };
        let b = Candidate {
            x: [0.2, 0.05, 0.6, 0.9],
            result: None,
        };
        assert!(a.beats(&b));
        assert!(!b.beats(&a));
    }

    #[test]
    fn no_key_far_away() {
        let mut link = LinkConfig::default();
        link.channel.extra_attenuation_db = 60.0;
        let bounds = SearchBounds {
            grid: [4, 4, 3, 3],
            ..Default::default()
        };
        let o = optimize_params(&link, &SecurityParams::default(), &bounds, Execution::Sequential).unwrap();
        assert_eq!(o, Optimum::NoKey);
    }
}
