//! Communication schedules: the set of steps at which clients upload.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Smallest accepted exponential base.
pub const MIN_BASE: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    /// Every step `n >= 1`.
    EveryStep,
    /// `{ceil(base^t) : t >= 0}`, deduplicated.
    Exponential { base: f64 },
    /// `{offset, offset + period, offset + 2 period, ...}`.
    Periodic { period: u64, offset: u64 },
    /// `{2^(2^t) : t >= 0}`, plus step 1 when `include_first` is set.
    SuperExponential { include_first: bool },
}

impl Schedule {
    pub fn exponential(base: f64) -> Result<Self> {
        if !base.is_finite() || base < MIN_BASE {
            return Err(Error::Schedule(format!(
                "exponential base must be >= {MIN_BASE} (use 'every' for base 1), got {base}"
            )));
        }
        Ok(Schedule::Exponential { base })
    }

    pub fn periodic(period: u64, offset: u64) -> Result<Self> {
        if period == 0 || offset == 0 {
            return Err(Error::Schedule(format!(
                "period and offset must be positive, got {period}:{offset}"
            )));
        }
        Ok(Schedule::Periodic { period, offset })
    }

    pub fn super_exponential() -> Self {
        Schedule::SuperExponential { include_first: true }
    }

    /// Whether clients communicate at step `n` (`n >= 1`).
    pub fn is_comm_step(&self, n: u64) -> bool {
        if n == 0 {
            return false;
        }
        match *self {
            Schedule::EveryStep => true,
            Schedule::Exponential { base } => exp_step(base, first_exp_index_at_least(base, n)) == n,
            Schedule::Periodic { period, offset } => n >= offset && (n - offset).is_multiple_of(period),
            Schedule::SuperExponential { include_first } => {
                if n == 1 {
                    return include_first;
                }
                n.is_power_of_two() && n.trailing_zeros().is_power_of_two()
            }
        }
    }

    /// Smallest schedule step strictly greater than `n`; saturates at `u64::MAX`.
    pub fn next_comm_step(&self, n: u64) -> u64 {
        let Some(target) = n.checked_add(1) else {
            return u64::MAX;
        };
        match *self {
            Schedule::EveryStep => target,
            Schedule::Exponential { base } => exp_step(base, first_exp_index_at_least(base, target)),
            Schedule::Periodic { period, offset } => {
                if target <= offset {
                    offset
                } else {
                    let k = (target - offset).div_ceil(period);
                    k.checked_mul(period)
                        .and_then(|d| d.checked_add(offset))
                        .unwrap_or(u64::MAX)
                }
            }
            Schedule::SuperExponential { include_first } => {
                if target == 1 && include_first {
                    return 1;
                }
                // Exponents 1, 2, 4, 8, 16, 32; 2^64 does not fit.
                let mut exp = 1u32;
                while exp < 64 {
                    let step = 1u64 << exp;
                    if step >= target {
                        return step;
                    }
                    exp *= 2;
                }
                u64::MAX
            }
        }
    }

    /// All schedule steps in `[1, horizon]`, ascending.
    pub fn enumerate(&self, horizon: u64) -> Vec<u64> {
        let mut steps = Vec::new();
        let mut n = 0;
        loop {
            let next = self.next_comm_step(n);
            if next > horizon || next == u64::MAX {
                break;
            }
            steps.push(next);
            n = next;
        }
        steps
    }
}

fn exp_step(base: f64, t: u64) -> u64 {
    let v = base.powf(t as f64).ceil();
    if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

/// Smallest `t` with `ceil(base^t) >= n`. `exp_step` is nondecreasing in `t`,
/// so a float estimate followed by a local correction is exact.
fn first_exp_index_at_least(base: f64, n: u64) -> u64 {
    if n <= 1 {
        return 0;
    }
    let guess = ((n - 1) as f64).ln() / base.ln();
    let mut t = guess.floor().max(0.0) as u64;
    while t > 0 && exp_step(base, t - 1) >= n {
        t -= 1;
    }
    while exp_step(base, t) < n {
        t += 1;
    }
    t
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Schedule::EveryStep => f.write_str("every"),
            Schedule::Exponential { base } => write!(f, "exp:{base}"),
            Schedule::Periodic { period, offset: 1 } => write!(f, "periodic:{period}"),
            Schedule::Periodic { period, offset } => write!(f, "periodic:{period}:{offset}"),
            Schedule::SuperExponential { include_first: true } => f.write_str("superexp"),
            Schedule::SuperExponential { include_first: false } => f.write_str("superexp:nofirst"),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    /// Parses `every`, `exp:<base>`, `periodic:<H>[:<offset>]`, `superexp`,
    /// or `superexp:nofirst`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Schedule(format!("cannot parse schedule '{s}'"));
        match parts.as_slice() {
            ["every"] => Ok(Schedule::EveryStep),
            ["exp", base] => Schedule::exponential(base.parse().map_err(|_| bad())?),
            ["periodic", h] => Schedule::periodic(h.parse().map_err(|_| bad())?, 1),
            ["periodic", h, off] => {
                Schedule::periodic(h.parse().map_err(|_| bad())?, off.parse().map_err(|_| bad())?)
            }
            ["superexp"] => Ok(Schedule::super_exponential()),
            ["superexp", "nofirst"] => Ok(Schedule::SuperExponential { include_first: false }),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Schedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exponential_base_two() {
        let s = Schedule::exponential(2.0).unwrap();
        assert!(s.is_comm_step(8));
        assert!(!s.is_comm_step(6));
        assert!(!s.is_comm_step(3));
        assert_eq!(s.next_comm_step(5), 8);
        assert_eq!(s.enumerate(10), vec![1, 2, 4, 8]);
    }

    #[test]
    fn exponential_fractional_base() {
        let s = Schedule::exponential(1.5).unwrap();
        assert_eq!(s.enumerate(12), vec![1, 2, 3, 4, 6, 8, 12]);
        assert_eq!(s.next_comm_step(4), 6);
    }

    #[test]
    fn exponential_small_base_deduplicates() {
        let s = Schedule::exponential(1.1).unwrap();
        let steps = s.enumerate(20);
        // Brute force: ceil(1.1^t) for all t, deduplicated.
        let mut brute: Vec<u64> = (0..100).map(|t| 1.1f64.powf(t as f64).ceil() as u64).collect();
        brute.dedup();
        brute.retain(|&v| v <= 20);
        assert_eq!(steps, brute);
    }

    #[test]
    fn periodic_steps() {
        let s = Schedule::periodic(5, 1).unwrap();
        for n in [1, 6, 11] {
            assert!(s.is_comm_step(n));
        }
        assert!(!s.is_comm_step(5));
        assert_eq!(Schedule::periodic(3, 3).unwrap().enumerate(10), vec![3, 6, 9]);
    }

    #[test]
    fn super_exponential_steps() {
        let s = Schedule::SuperExponential { include_first: false };
        for n in [2, 4, 16, 256, 65536] {
            assert!(s.is_comm_step(n), "{n}");
        }
        for n in [1, 8, 32, 512] {
            assert!(!s.is_comm_step(n), "{n}");
        }
        assert_eq!(s.enumerate(300), vec![2, 4, 16, 256]);
        assert_eq!(Schedule::super_exponential().enumerate(300), vec![1, 2, 4, 16, 256]);
        assert_eq!(s.next_comm_step(1 << 32), u64::MAX);
    }

    #[test]
    fn every_step() {
        assert_eq!(Schedule::EveryStep.next_comm_step(41), 42);
        assert_eq!(Schedule::EveryStep.enumerate(3), vec![1, 2, 3]);
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(Schedule::exponential(1.0).is_err());
        assert!(Schedule::exponential(0.5).is_err());
        assert!(Schedule::periodic(0, 1).is_err());
        assert!(Schedule::periodic(3, 0).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        for text in ["every", "exp:2", "exp:1.5", "periodic:10", "periodic:3:3", "superexp", "superexp:nofirst"] {
            let s: Schedule = text.parse().unwrap();
            assert_eq!(s.to_string(), text);
        }
        assert!("periodic".parse::<Schedule>().is_err());
        assert!("exp:abc".parse::<Schedule>().is_err());
    }

    fn any_schedule() -> impl Strategy<Value = Schedule> {
        prop_oneof![
            Just(Schedule::EveryStep),
            (1.000_01f64..4.0).prop_map(|b| Schedule::exponential(b).unwrap()),
            (1u64..50, 1u64..50).prop_map(|(h, o)| Schedule::periodic(h, o).unwrap()),
            any::<bool>().prop_map(|f| Schedule::SuperExponential { include_first: f }),
        ]
    }

    proptest! {
        #[test]
        fn membership_matches_enumeration(s in any_schedule(), n in 1u64..3000) {
            prop_assert_eq!(s.is_comm_step(n), s.enumerate(n).last() == Some(&n));
        }

        #[test]
        fn next_step_is_a_later_member(s in any_schedule(), n in 0u64..100_000) {
            let next = s.next_comm_step(n);
            prop_assert!(next > n);
            prop_assert!(s.is_comm_step(next));
            // nothing skipped in between
            if next - n < 2000 {
                for k in n + 1..next {
                    prop_assert!(!s.is_comm_step(k));
                }
            }
        }

        #[test]
        fn exponential_steps_grow_boundedly(base in 1.000_01f64..4.0) {
            let steps = Schedule::exponential(base).unwrap().enumerate(100_000);
            for w in steps.windows(2) {
                prop_assert!(w[1] > w[0]);
                prop_assert!(w[1] as f64 / w[0] as f64 <= base + 1.0);
            }
        }
    }
}
