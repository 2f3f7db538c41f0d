//! Path-encoded ququart states over four fiber cores and the receiver's
//! interferometric measurement.
//!
//! The two bases are built from superpositions of two cores with a relative
//! phase of 0 or π:
//!
//! ```text
//! Z: |1>+|5>, |1>-|5>, |7>+|2>, |7>-|2>
//! X: |1>+|7>, |1>-|7>, |5>+|2>, |5>-|2>
//! ```
//!
//! Bob measures a basis with two beam splitters, one per core pair. Detector
//! `2p` is the `+` output of pair `p` and detector `2p + 1` the `-` output, so
//! detector `i` is the one that fires for state index `i`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One of the four fiber cores carrying the qudit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CoreIndex(u8);

impl CoreIndex {
    pub const C1: CoreIndex = CoreIndex(1);
    pub const C2: CoreIndex = CoreIndex(2);
    pub const C5: CoreIndex = CoreIndex(5);
    pub const C7: CoreIndex = CoreIndex(7);

    /// All used cores in ascending label order. This is also the storage
    /// order of amplitude arrays.
    pub const ALL: [CoreIndex; 4] = [Self::C1, Self::C2, Self::C5, Self::C7];

    pub fn new(label: u8) -> Result<Self> {
        match label {
            1 | 2 | 5 | 7 => Ok(CoreIndex(label)),
            _ => invalid(format!("core {label} is not one of the used cores 1, 2, 5, 7")),
        }
    }

    pub fn label(self) -> u8 {
        self.0
    }

    /// Position of this core in [`CoreIndex::ALL`].
    pub fn slot(self) -> usize {
        match self.0 {
            1 => 0,
            2 => 1,
            5 => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for CoreIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const BOTH: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn slot(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Basis::Z => "Z",
            Basis::X => "X",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            other => invalid(format!("unknown basis {other:?}")),
        }
    }

    /// The two interferometer core pairs used to prepare and measure this
    /// basis, as `(first, second)` in row order.
    pub fn pairs(self) -> [InterferometerPair; 2] {
        match self {
            Basis::Z => [
                InterferometerPair::new(CoreIndex::C1, CoreIndex::C5),
                InterferometerPair::new(CoreIndex::C7, CoreIndex::C2),
            ],
            Basis::X => [
                InterferometerPair::new(CoreIndex::C1, CoreIndex::C7),
                InterferometerPair::new(CoreIndex::C5, CoreIndex::C2),
            ],
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Qudit dimension of the protocol.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Dimension {
    Two,
    #[default]
    Four,
}

impl Dimension {
    pub fn value(self) -> usize {
        match self {
            Dimension::Two => 2,
            Dimension::Four => 4,
        }
    }

    pub fn bits(self) -> f64 {
        (self.value() as f64).log2()
    }

    /// Probability that an uncorrelated click lands on a wrong outcome.
    pub fn noise_error_fraction(self) -> f64 {
        let d = self.value() as f64;
        (d - 1.0) / d
    }
}

impl TryFrom<u8> for Dimension {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            2 => Ok(Dimension::Two),
            4 => Ok(Dimension::Four),
            other => Err(format!("dimension must be 2 or 4, got {other}")),
        }
    }
}

impl From<Dimension> for u8 {
    fn from(d: Dimension) -> u8 {
        d.value() as u8
    }
}

/// Two cores combined on one receiver beam splitter. The residual phase of
/// the pair is applied to the `second` core.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InterferometerPair {
    pub first: CoreIndex,
    pub second: CoreIndex,
}

impl InterferometerPair {
    pub const fn new(first: CoreIndex, second: CoreIndex) -> Self {
        Self { first, second }
    }

    /// All four interferometer pairs, Z pairs first.
    pub fn all() -> [InterferometerPair; 4] {
        let [z0, z1] = Basis::Z.pairs();
        let [x0, x1] = Basis::X.pairs();
        [z0, z1, x0, x1]
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.first, self.second)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuditState {
    basis: Basis,
    index: usize,
    amplitudes: [Complex64; 4],
}

impl QuditState {
    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn amplitude(&self, core: CoreIndex) -> Complex64 {
        self.amplitudes[core.slot()]
    }

    /// Amplitudes in [`CoreIndex::ALL`] order.
    pub fn amplitudes(&self) -> &[Complex64; 4] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_phase(phase: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = phase.rem_euclid(two_pi);
    if w > PI {
        w -= two_pi;
    }
    w
}

/// Residual interferometer phases at the receiver.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PhaseError {
    z: [f64; 2],
    x: [f64; 2],
}

impl PhaseError {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Builds from per-pair phases in [`Basis::pairs`] order; all values are
    /// wrapped to (−π, π].
    pub fn new(z: [f64; 2], x: [f64; 2]) -> Self {
        Self {
            z: z.map(wrap_phase),
            x: x.map(wrap_phase),
        }
    }

    /// Same residual on every pair.
    pub fn uniform(delta: f64) -> Self {
        Self::new([delta; 2], [delta; 2])
    }

    pub fn for_basis(&self, basis: Basis) -> [f64; 2] {
        match basis {
            Basis::Z => self.z,
            Basis::X => self.x,
        }
    }

    pub fn set(&mut self, basis: Basis, pair: usize, delta: f64) {
        let slot = match basis {
            Basis::Z => &mut self.z[pair],
            Basis::X => &mut self.x[pair],
        };
        *slot = wrap_phase(delta);
    }
}

/// Returns the row `index` of `basis`, with the global phase fixed so the
/// lowest-labelled populated core has a positive real amplitude.
pub fn state_vector(basis: Basis, index: usize) -> Result<QuditState> {
    if index > 3 {
        return invalid(format!("state index {index} outside 0..=3"));
    }
    let pair = basis.pairs()[index / 2];
    let sign = if index.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut amplitudes = [Complex64::new(0.0, 0.0); 4];
    amplitudes[pair.first.slot()] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    amplitudes[pair.second.slot()] = Complex64::new(sign * FRAC_1_SQRT_2, 0.0);
    let lead = if pair.first < pair.second { pair.first } else { pair.second };
    if amplitudes[lead.slot()].re < 0.0 {
        for a in &mut amplitudes {
            *a = -*a;
        }
    }
    Ok(QuditState {
        basis,
        index,
        amplitudes,
    })
}

/// Inner product ⟨a|b⟩.
pub fn overlap(a: &QuditState, b: &QuditState) -> Complex64 {
    a.amplitudes
        .iter()
        .zip(b.amplitudes.iter())
        .map(|(x, y)| x.conj() * y)
        .sum()
}

/// Outcome probabilities of measuring `state` in `measured` with residual
/// phases `err` on the receiver interferometers.
pub fn detection_distribution(state: &QuditState, measured: Basis, err: &PhaseError) -> [f64; 4] {
    let deltas = err.for_basis(measured);
    let mut probs = [0.0; 4];
    for (p, pair) in measured.pairs().iter().enumerate() {
        let a = state.amplitude(pair.first);
        let b = state.amplitude(pair.second) * Complex64::from_polar(1.0, deltas[p]);
        probs[2 * p] = ((a + b) * FRAC_1_SQRT_2).norm_sqr();
        probs[2 * p + 1] = ((a - b) * FRAC_1_SQRT_2).norm_sqr();
    }
    probs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rows_match_table() {
        let z0 = state_vector(Basis::Z, 0).unwrap();
        assert_abs_diff_eq!(z0.amplitude(CoreIndex::C1).re, FRAC_1_SQRT_2);
        assert_abs_diff_eq!(z0.amplitude(CoreIndex::C5).re, FRAC_1_SQRT_2);
        assert_eq!(z0.amplitude(CoreIndex::C2), Complex64::new(0.0, 0.0));

        let x1 = state_vector(Basis::X, 1).unwrap();
        assert_abs_diff_eq!(x1.amplitude(CoreIndex::C1).re, FRAC_1_SQRT_2);
        assert_abs_diff_eq!(x1.amplitude(CoreIndex::C7).re, -FRAC_1_SQRT_2);
    }

    #[test]
    fn canonical_global_phase() {
        // |7>-|2> is stored as |2>-|7>
        let z3 = state_vector(Basis::Z, 3).unwrap();
        assert!(z3.amplitude(CoreIndex::C2).re > 0.0);
        assert!(z3.amplitude(CoreIndex::C7).re < 0.0);
    }

    #[test]
    fn index_out_of_range() {
        assert!(state_vector(Basis::X, 4).is_err());
    }

    #[test]
    fn core_labels() {
        assert!(CoreIndex::new(3).is_err());
        assert_eq!(CoreIndex::new(7).unwrap(), CoreIndex::C7);
    }

    #[test]
    fn two_populated_cores_with_real_relative_phase() {
        for b in Basis::BOTH {
            for i in 0..4 {
                let s = state_vector(b, i).unwrap();
                assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);
                let populated: Vec<_> = s.amplitudes().iter().filter(|a| a.norm() > 0.0).collect();
                assert_eq!(populated.len(), 2);
                for a in &populated {
                    assert_abs_diff_eq!(a.norm(), FRAC_1_SQRT_2, epsilon = 1e-15);
                    assert_eq!(a.im, 0.0);
                }
            }
        }
    }

    #[test]
    fn overlaps() {
        let z0 = state_vector(Basis::Z, 0).unwrap();
        let z1 = state_vector(Basis::Z, 1).unwrap();
        let x0 = state_vector(Basis::X, 0).unwrap();
        assert_abs_diff_eq!(overlap(&z0, &z0).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(overlap(&z0, &z1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(overlap(&z0, &x0).norm_sqr(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn matched_basis_detection() {
        let z0 = state_vector(Basis::Z, 0).unwrap();
        let p = detection_distribution(&z0, Basis::Z, &PhaseError::zero());
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);

        let flipped = PhaseError::new([PI, 0.0], [0.0, 0.0]);
        let p = detection_distribution(&z0, Basis::Z, &flipped);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-15);

        let z3 = state_vector(Basis::Z, 3).unwrap();
        let p = detection_distribution(&z3, Basis::Z, &PhaseError::zero());
        assert_abs_diff_eq!(p[3], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mismatched_basis_is_uniform() {
        let x0 = state_vector(Basis::X, 0).unwrap();
        let p = detection_distribution(&x0, Basis::Z, &PhaseError::zero());
        for v in p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn wrap_range() {
        assert_abs_diff_eq!(wrap_phase(PI), PI);
        assert_abs_diff_eq!(wrap_phase(-PI), PI);
        assert_abs_diff_eq!(wrap_phase(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_phase(0.1), 0.1);
    }
}
