//! Fixed-point `seconds.fraction` timestamps as found in chat exports.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const MAX_FRACTION_DIGITS: u8 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid timestamp {0:?}: expected `seconds[.fraction]` with at most 9 fraction digits")]
pub struct TimestampError(pub String);

/// An export timestamp such as `"1683702597.263009"`.
///
/// Kept as integers so that parsing and printing round-trip exactly; the
/// number of fraction digits is part of the value so `"1.50"` prints back
/// as `"1.50"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Timestamp {
    secs: u64,
    frac: u32,
    digits: u8,
}

impl Timestamp {
    pub fn new(secs: u64, micros: u32) -> Self {
        assert!(micros < 1_000_000, "microseconds out of range");
        Self { secs, frac: micros, digits: 6 }
    }

    pub fn secs(&self) -> u64 {
        self.secs
    }

    /// Fraction scaled to nanoseconds.
    pub fn subsec_nanos(&self) -> u32 {
        self.frac * 10u32.pow(u32::from(MAX_FRACTION_DIGITS - self.digits))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.secs, self.subsec_nanos(), self.digits).cmp(&(other.secs, other.subsec_nanos(), other.digits))
    }
}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TimestampError(s.to_string());
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (s, None),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let secs = int.parse::<u64>().map_err(|_| err())?;
        let (frac, digits) = match frac {
            None => (0, 0),
            Some(f) => {
                if f.is_empty() || f.len() > usize::from(MAX_FRACTION_DIGITS) || !f.bytes().all(|b| b.is_ascii_digit())
                {
                    return Err(err());
                }
                (f.parse::<u32>().map_err(|_| err())?, f.len() as u8)
            }
        };
        Ok(Self { secs, frac, digits })
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.digits == 0 {
            write!(f, "{}", self.secs)
        } else {
            write!(f, "{}.{:0width$}", self.secs, self.frac, width = usize::from(self.digits))
        }
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
