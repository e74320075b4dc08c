//! Virtual time.
//!
//! Time is kept as an integer count of microseconds so that every timestamp in
//! the event log has an exact, platform-independent textual form. One time
//! unit is one second.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

const MICROS_PER_SEC: u64 = 1_000_000;

/// A point in (or span of) virtual time, in microseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * MICROS_PER_SEC)
    }

    /// Rounds to the nearest microsecond. Negative and non-finite inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !s.is_finite() || s <= 0.0 {
            return SimTime::ZERO;
        }
        SimTime((s * MICROS_PER_SEC as f64).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SEC as f64
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.0 / MICROS_PER_SEC, self.0 % MICROS_PER_SEC)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid virtual time literal {0:?}")]
pub struct ParseTimeError(pub String);

impl FromStr for SimTime {
    type Err = ParseTimeError;

    /// Accepts the canonical `secs.micros` form written by `Display`, as well
    /// as bare integer seconds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTimeError(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if frac.len() > 6 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let secs: u64 = whole.parse().map_err(|_| err())?;
        let mut micros = 0u64;
        if !frac.is_empty() {
            micros = frac.parse::<u64>().map_err(|_| err())? * 10u64.pow(6 - frac.len() as u32);
        }
        secs.checked_mul(MICROS_PER_SEC)
            .and_then(|v| v.checked_add(micros))
            .map(SimTime)
            .ok_or_else(err)
    }
}

/// Serialized as fractional seconds, which is how every config file spells time.
impl Serialize for SimTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_secs_f64())
    }
}

impl<'de> Deserialize<'de> for SimTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let secs = f64::deserialize(deserializer)?;
        if !secs.is_finite() || secs < 0.0 {
            return Err(serde::de::Error::custom("time must be a non-negative number of seconds"));
        }
        Ok(SimTime::from_secs_f64(secs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_parse_roundtrip() {
        for us in [0, 1, 999_999, 1_000_000, 2_140_000, 123_456_789_012] {
            let t = SimTime::from_micros(us);
            assert_eq!(t.to_string().parse::<SimTime>().unwrap(), t);
        }
        assert_eq!("12".parse::<SimTime>().unwrap(), SimTime::from_secs(12));
        assert_eq!("0.14".parse::<SimTime>().unwrap(), SimTime::from_micros(140_000));
        assert!("-1.0".parse::<SimTime>().is_err());
        assert!("1.1234567".parse::<SimTime>().is_err());
    }

    #[test]
    fn float_conversion_rounds() {
        assert_eq!(SimTime::from_secs_f64(0.14).as_micros(), 140_000);
        assert_eq!(SimTime::from_secs_f64(-3.0), SimTime::ZERO);
        assert_eq!(SimTime::from_secs_f64(2.0).to_string(), "2.000000");
    }
}
