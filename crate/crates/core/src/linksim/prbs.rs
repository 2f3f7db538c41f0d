//! Maximal-length linear feedback shift registers.

use crate::error::{invalid, Result};

/// Feedback taps giving a maximal-length sequence for register lengths 2
/// through 32. Stage `n` of an `n`-bit register is the output stage.
const TAPS: [&[u32]; 31] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
    &[11, 9],
    &[12, 6, 4, 1],
    &[13, 4, 3, 1],
    &[14, 5, 3, 1],
    &[15, 14],
    &[16, 15, 13, 4],
    &[17, 14],
    &[18, 11],
    &[19, 6, 2, 1],
    &[20, 17],
    &[21, 19],
    &[22, 21],
    &[23, 18],
    &[24, 23, 22, 17],
    &[25, 22],
    &[26, 6, 2, 1],
    &[27, 5, 2, 1],
    &[28, 25],
    &[29, 27],
    &[30, 6, 4, 1],
    &[31, 28],
    &[32, 22, 2, 1],
];

/// Fibonacci LFSR emitting one bit per clock.
#[derive(Clone, Debug)]
pub struct Prbs {
    state: u32,
    mask: u32,
    taps: u32,
    order: u32,
}

impl Prbs {
    pub fn new(order: u32, seed: u32) -> Result<Self> {
        if !(2..=32).contains(&order) {
            return invalid(format!("PRBS order must be in 2..=32, got {order}"));
        }
        let mask = if order == 32 { u32::MAX } else { (1u32 << order) - 1 };
        let state = seed & mask;
        if state == 0 {
            return invalid("PRBS seed must be nonzero");
        }
        let taps = TAPS[(order - 2) as usize]
            .iter()
            .fold(0u32, |acc, &t| acc | (1 << (order - t)));
        Ok(Self {
            state,
            mask,
            taps,
            order,
        })
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn period(&self) -> u64 {
        (1u64 << self.order) - 1
    }

    pub fn next_bit(&mut self) -> bool {
        let out = self.state & 1 == 1;
        let feedback = (self.state & self.taps).count_ones() & 1;
        self.state = ((self.state >> 1) | (feedback << (self.order - 1))) & self.mask;
        out
    }

    /// Next `n` bits packed most-significant first.
    pub fn next_bits(&mut self, n: u32) -> u32 {
        (0..n).fold(0, |acc, _| (acc << 1) | self.next_bit() as u32)
    }
}

impl Iterator for Prbs {
    type Item = bool;

    fn next(&mut self) -> Option<bool> {
        Some(self.next_bit())
    }
}

pub fn prbs_sequence(order: u32, seed: u32, length: usize) -> Result<Vec<bool>> {
    Ok(Prbs::new(order, seed)?.take(length).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Steps the register until the state repeats.
    fn cycle_length(order: u32, seed: u32) -> u64 {
        let mut p = Prbs::new(order, seed).unwrap();
        let start = p.state;
        let mut n = 0u64;
        loop {
            p.next_bit();
            n += 1;
            if p.state == start {
                return n;
            }
        }
    }

    #[test]
    fn smallest_register() {
        assert_eq!(cycle_length(2, 0b11), 3);
        let s = prbs_sequence(2, 0b11, 6).unwrap();
        assert_eq!(&s[..3], &s[3..]);
    }

    #[test]
    fn maximal_periods() {
        for order in 2..=20 {
            assert_eq!(cycle_length(order, 1), (1u64 << order) - 1, "order {order}");
        }
    }

    #[test]
    fn order_12_repeats_after_4095() {
        let s = prbs_sequence(12, 0xACE, 8190).unwrap();
        assert_eq!(&s[..4095], &s[4095..]);
        for shift in [1usize, 3, 63, 1365, 4094] {
            assert_ne!(&s[..4095], &s[shift..shift + 4095], "shift {shift}");
        }
    }

    #[test]
    fn balance() {
        for order in [5u32, 12] {
            let n = (1usize << order) - 1;
            let s = prbs_sequence(order, 1, n).unwrap();
            let ones = s.iter().filter(|b| **b).count() as i64;
            let zeros = n as i64 - ones;
            assert_eq!(ones - zeros, 1);
        }
    }

    #[test]
    fn zero_seed_rejected() {
        assert!(Prbs::new(12, 0).is_err());
        assert!(Prbs::new(12, 1 << 12).is_err());
        assert!(Prbs::new(1, 1).is_err());
    }
}
