use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-shard Byzantine tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FModel {
    /// Honest majority: safe while fewer than half the members are Byzantine.
    OneHalf,
    /// `3f + 1`: safe while at most `floor((r - 1) / 3)` members are Byzantine.
    OneThird,
}

impl FModel {
    /// Smallest Byzantine count that compromises a shard of size `r`.
    pub fn threshold(self, r: usize) -> usize {
        match self {
            FModel::OneHalf => r.div_ceil(2),
            FModel::OneThird => r.saturating_sub(1) / 3 + 1,
        }
    }

    /// The tolerated Byzantine fraction as `(num, den)`.
    pub fn tolerance(self) -> (u64, u64) {
        match self {
            FModel::OneHalf => (1, 2),
            FModel::OneThird => (1, 3),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FModel::OneHalf => "1/2",
            FModel::OneThird => "1/3",
        }
    }
}

impl fmt::Display for FModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse `{0}`")]
pub struct ParseError(pub String);

impl FromStr for FModel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "1/2" | "half" | "one-half" | "0.5" => Ok(FModel::OneHalf),
            "1/3" | "third" | "one-third" => Ok(FModel::OneThird),
            other => Err(ParseError(other.to_string())),
        }
    }
}

/// Whether a shard holding `byzantine_members` Byzantine nodes out of `r`
/// has lost its tolerance.
pub fn is_compromised_count(byzantine_members: usize, r: usize, model: FModel) -> bool {
    byzantine_members >= model.threshold(r)
}

/// Set form: `shard` lists node indices, `byzantine[i]` marks node `i`.
pub fn is_compromised(shard: &[u32], byzantine: &[bool], model: FModel) -> bool {
    let hits = shard.iter().filter(|n| byzantine[**n as usize]).count();
    is_compromised_count(hits, shard.len(), model)
}

/// Non-negative fraction kept exact, written `a/b` or as a decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Option<Fraction> {
        if den == 0 {
            return None;
        }
        let g = gcd(num, den).max(1);
        Some(Fraction {
            num: num / g,
            den: den / g,
        })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self * n` when it is a whole number.
    pub fn of(&self, n: u64) -> Option<u64> {
        let prod = self.num as u128 * n as u128;
        (prod % self.den as u128 == 0).then(|| (prod / self.den as u128) as u64)
    }

    pub fn at_least(&self, num: u64, den: u64) -> bool {
        self.num as u128 * den as u128 >= num as u128 * self.den as u128
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Fraction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseError(s.to_string());
        let s = s.trim();
        if let Some((a, b)) = s.split_once('/') {
            let a = a.trim().parse().map_err(|_| err())?;
            let b = b.trim().parse().map_err(|_| err())?;
            return Fraction::new(a, b).ok_or_else(err);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 15 || !frac.bytes().all(|c| c.is_ascii_digit()) {
            return Err(err());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|_| err())?
        };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| err())?
        };
        int.checked_mul(den)
            .and_then(|v| v.checked_add(frac))
            .and_then(|num| Fraction::new(num, den))
            .ok_or_else(err)
    }
}

impl Serialize for Fraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
