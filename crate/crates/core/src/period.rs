//! Stream period classes.
//!
//! Periods are restricted to the 1-2-5 progression (1, 2, 5, 10, 20, 50, ...)
//! measured in tiles. Any subset of the progression has an lcm of at most
//! twice its largest member, which keeps data superframes short.

use std::fmt;

use crate::error::PeriodError;

/// A stream period, as a multiple of the tile duration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeriodClass(u32);

impl PeriodClass {
    pub fn new(multiplier: u32) -> Result<Self, PeriodError> {
        if is_progression_member(multiplier) {
            Ok(PeriodClass(multiplier))
        } else {
            Err(PeriodError::NotInProgression(multiplier))
        }
    }

    pub fn tiles(self) -> u32 {
        self.0
    }

    /// Progression members in increasing order, up to and including `limit`.
    pub fn progression(limit: u32) -> impl Iterator<Item = PeriodClass> {
        let mut decade: u64 = 1;
        let mut step = 0usize;
        std::iter::from_fn(move || {
            let v = decade * [1, 2, 5][step];
            if v > limit as u64 {
                return None;
            }
            step += 1;
            if step == 3 {
                step = 0;
                decade *= 10;
            }
            Some(PeriodClass(v as u32))
        })
    }
}

impl fmt::Display for PeriodClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn is_progression_member(mut m: u32) -> bool {
    if m == 0 {
        return false;
    }
    while m.is_multiple_of(10) {
        m /= 10;
    }
    matches!(m, 1 | 2 | 5)
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn lcm(a: u64, b: u64) -> u64 {
    if a == 0 || b == 0 {
        return 0;
    }
    a / gcd(a, b) * b
}

/// Least common multiple of the period multipliers, in tiles.
pub fn hyperperiod<I: IntoIterator<Item = PeriodClass>>(periods: I) -> Option<u64> {
    periods.into_iter().map(|p| p.0 as u64).reduce(lcm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn progression_prefix() {
        let v: Vec<u32> = PeriodClass::progression(1000).map(|p| p.tiles()).collect();
        assert_eq!(v, vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000]);
    }

    #[test]
    fn rejects_non_members() {
        for m in [0, 3, 4, 7, 15, 25, 30, 250] {
            assert!(PeriodClass::new(m).is_err(), "{m}");
        }
        for m in [1, 2, 5, 10, 50, 20000] {
            assert!(PeriodClass::new(m).is_ok(), "{m}");
        }
    }

    #[test]
    fn lcm_examples() {
        assert_eq!(hyperperiod([PeriodClass(2), PeriodClass(5)]), Some(10));
        assert_eq!(hyperperiod([PeriodClass(20), PeriodClass(50)]), Some(100));
        assert_eq!(hyperperiod(std::iter::empty()), None);
    }
}
